use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use ogcp_core::io::{
    format_ktensor, generate, read_ktensor, read_tns, stream_slices, write_ktensor, write_tns, SyntheticKind,
    SyntheticSpec, TnsOptions, DEFAULT_MAX_ENTRIES,
};
use ogcp_core::metrics::{congruence, global_loss, local_loss_exact, MetricsWriter, SliceMetrics};
use ogcp_core::solvers::solve_static;
use ogcp_core::streaming::StreamState;
use ogcp_core::{GcpError, RngStreams, SparseTensor};

use crate::args::{GenArgs, GenKind, ScoreArgs};
use crate::config::{Exec, StaticRun, StreamRun};

type Result<T> = std::result::Result<T, GcpError>;

fn setup_threads(exec: &Exec) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(exec.threads)
        .build_global()
        .map_err(|e| GcpError::Precondition(format!("thread pool: {e}")))
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> GcpError + '_ {
    move |e| GcpError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_at(path))
}

fn show<T: serde::Serialize>(cfg: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(cfg).map_err(|e| GcpError::Contract(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn load_input(path: &Path, merge: bool, binarize: bool) -> Result<SparseTensor> {
    let x = read_tns(path, TnsOptions { merge_duplicates: merge })?;
    Ok(if binarize { x.binarized() } else { x })
}

fn record(metrics: &mut MetricsWriter<BufWriter<File>>, row: &mut SliceMetrics, exec: &Exec) -> Result<()> {
    if exec.deterministic {
        row.wall_ms = 0;
    }
    metrics.write(row)
}

pub fn stream(run: &StreamRun, show_config: bool) -> Result<()> {
    if show_config {
        return show(run);
    }
    setup_threads(&run.exec)?;
    let x = load_input(&run.input, run.merge_duplicates, run.binarize)?;
    if x.ndims() < 2 {
        return Err(GcpError::Shape("streaming needs a tensor with at least two modes".into()));
    }
    let d = x.ndims() - 1;
    let total = x.dims()[d];
    let slice_dims = &x.dims()[..d];
    let reference = run.score_against.as_deref().map(read_ktensor).transpose()?;
    fs::create_dir_all(&run.out_dir).map_err(io_at(&run.out_dir))?;

    let mut state = match &run.resume {
        Some(path) => {
            let st = StreamState::load(path)?;
            if st.dims != slice_dims || st.config.rank != run.stream.rank || st.seed != run.exec.seed {
                return Err(GcpError::Checkpoint(
                    "checkpoint does not match the input dims, rank or seed".into(),
                ));
            }
            st
        }
        None => {
            let mut st = StreamState::new(slice_dims, run.stream, run.loss, run.exec.seed)?;
            let warm = run.stream.warm_slices.min(total);
            if warm > 0 {
                st.warm_start(&x.leading_slices(warm)?)?;
            }
            st
        }
    };
    let warm_done = run.stream.warm_slices.min(total);
    let end = match run.slices {
        Some(n) => (warm_done + n).min(total),
        None => total,
    };

    let metrics_path = run.out_dir.join("metrics.csv");
    let file = File::create(&metrics_path).map_err(io_at(&metrics_path))?;
    let mut metrics = MetricsWriter::new(BufWriter::new(file))?;
    for row in state.metrics.iter_mut() {
        record(&mut metrics, row, &run.exec)?;
    }
    if run.plot_script {
        write_file(&run.out_dir.join("plot_metrics.py"), PLOT_SCRIPT)?;
    }

    let mut since_checkpoint = 0;
    let mut scored_at = None;
    for (i, slice) in stream_slices(&x)?.enumerate().skip(state.t).take(end.saturating_sub(state.t)) {
        let mut out = state.process_slice(&slice)?;
        record(&mut metrics, &mut out.metrics, &run.exec)?;
        if run.exec.deterministic {
            if let Some(last) = state.metrics.last_mut() {
                last.wall_ms = 0;
            }
        }
        since_checkpoint += 1;
        if run.checkpoint_every > 0 && since_checkpoint == run.checkpoint_every {
            state.save(&run.checkpoint)?;
            since_checkpoint = 0;
        }
        if let Some(r) = &reference {
            if run.score_every > 0 && (i + 1 - warm_done) % run.score_every == 0 {
                println!("congruence,{},{}", i + 1, state.score_against(r)?);
                scored_at = Some(i + 1);
            }
        }
    }
    drop(metrics);

    if state.t > 0 {
        write_file(&run.out_dir.join("model.ktns"), &format_ktensor(&state.stream_model()?))?;
        let done = state.t;
        let slices = stream_slices(&x)?.take(done).map(Ok);
        match global_loss(slices, &state.factors, &state.weights_log, &state.loss) {
            Ok(g) => println!("global_loss,{}", g.value),
            Err(GcpError::Precondition(_)) => println!("global_loss,nan"),
            Err(e) => return Err(e),
        }
        if let Some(r) = reference.as_ref().filter(|_| scored_at != Some(done)) {
            println!("congruence,{},{}", done, state.score_against(r)?);
        }
    }
    Ok(())
}

pub fn static_fit(run: &StaticRun, show_config: bool) -> Result<()> {
    if show_config {
        return show(run);
    }
    setup_threads(&run.exec)?;
    let x = load_input(&run.input, run.merge_duplicates, run.binarize)?;
    let init = run.init.as_deref().map(read_ktensor).transpose()?;
    let fit = solve_static(&x, run.rank, &run.loss, &run.fit, &RngStreams::new(run.exec.seed), init)?;
    write_ktensor(&fit.model, &run.out)?;
    println!("objective,{}", fit.report.final_objective());
    println!("epochs,{}", fit.report.epochs);
    let local = local_loss_exact(&x, &fit.model.weights, &fit.model.factors, &run.loss)?;
    println!("local_loss,{}", local.value);
    if let Some(path) = &run.score_against {
        println!("congruence,{}", congruence(&fit.model, &read_ktensor(path)?)?);
    }
    Ok(())
}

pub fn gen(a: &GenArgs) -> Result<()> {
    let spec = SyntheticSpec {
        kind: match a.kind {
            GenKind::Gaussian => SyntheticKind::Gaussian,
            GenKind::Poisson => SyntheticKind::Poisson,
        },
        dims: a.dims.clone(),
        rank: a.rank,
        noise: a.noise,
        fraction: a.sparsity,
        seed: a.seed,
        max_entries: a.max_entries.unwrap_or(DEFAULT_MAX_ENTRIES),
    };
    let syn = generate(&spec)?;
    write_tns(&syn.tensor, &a.out)?;
    if let Some(path) = &a.truth {
        write_ktensor(&syn.truth, path)?;
    }
    println!("nnz,{}", syn.tensor.nnz());
    println!("density,{}", syn.tensor.nnz() as f64 / syn.tensor.numel() as f64);
    Ok(())
}

pub fn score(a: &ScoreArgs) -> Result<()> {
    let s = congruence(&read_ktensor(&a.first)?, &read_ktensor(&a.second)?)?;
    println!("{s}");
    Ok(())
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plot local loss per slice from metrics.csv (needs matplotlib)."""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "metrics.csv"
t, sampled, exact = [], [], []
with open(path, newline="") as f:
    for row in csv.DictReader(f):
        t.append(int(row["t"]))
        sampled.append(float(row["local_loss_sampled"]))
        exact.append(float(row["local_loss_exact"]) if row["local_loss_exact"] else None)

plt.plot(t, sampled, label="local loss (sampled)")
if any(v is not None for v in exact):
    plt.plot([a for a, b in zip(t, exact) if b is not None], [b for b in exact if b is not None], label="local loss (exact)")
plt.xlabel("time step")
plt.ylabel("normalized loss")
plt.yscale("log")
plt.legend()
plt.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150)
"#;
