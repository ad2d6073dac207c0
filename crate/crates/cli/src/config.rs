//! Flag resolution: preset, then explicit flags, then validation.

use std::path::PathBuf;

use ogcp_core::adam::AdamConfig;
use ogcp_core::loss::{LossFunction, LossKind, DEFAULT_EPS};
use ogcp_core::sampling::SamplerConfig;
use ogcp_core::solvers::{StaticConfig, SolverConfig};
use ogcp_core::streaming::StreamConfig;
use ogcp_core::GcpError;
use serde::Serialize;

use crate::args::{AdamArgs, ExecArgs, LossArgs, LowerBound, SampleArgs, StaticArgs, StreamArgs};
use crate::presets::{self, Preset};

/// Warm-start fits run this many epochs unless overridden.
const WARM_EPOCHS: usize = 50;

fn warm_rate(loss: LossKind) -> f64 {
    match loss {
        LossKind::Gaussian => 0.1,
        LossKind::Poisson | LossKind::Bernoulli => 1e-2,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Exec {
    pub seed: u64,
    pub threads: usize,
    pub deterministic: bool,
}

impl Exec {
    fn resolve(args: &ExecArgs) -> Self {
        let threads = if args.deterministic { 1 } else { args.threads.unwrap_or(0) };
        Self {
            seed: args.seed,
            threads,
            deterministic: args.deterministic,
        }
    }
}

/// Everything a `stream` run needs, fully resolved.
#[derive(Clone, Debug, Serialize)]
pub struct StreamRun {
    pub preset: Option<String>,
    pub input: PathBuf,
    pub merge_duplicates: bool,
    pub binarize: bool,
    pub loss: LossFunction,
    pub stream: StreamConfig,
    pub slices: Option<usize>,
    pub exec: Exec,
    pub out_dir: PathBuf,
    pub score_against: Option<PathBuf>,
    pub score_every: usize,
    pub checkpoint_every: usize,
    pub checkpoint: PathBuf,
    pub resume: Option<PathBuf>,
    pub plot_script: bool,
}

/// Everything a `static` run needs, fully resolved.
#[derive(Clone, Debug, Serialize)]
pub struct StaticRun {
    pub input: PathBuf,
    pub merge_duplicates: bool,
    pub binarize: bool,
    pub rank: usize,
    pub loss: LossFunction,
    pub fit: StaticConfig,
    pub init: Option<PathBuf>,
    pub exec: Exec,
    pub out: PathBuf,
    pub score_against: Option<PathBuf>,
}

fn usage(msg: String) -> GcpError {
    GcpError::Precondition(msg)
}

fn resolve_loss(args: &LossArgs, default: LossKind) -> Result<(LossFunction, Option<f64>), GcpError> {
    let kind = args.loss.unwrap_or(default);
    let loss = LossFunction::new(kind, args.eps.unwrap_or(DEFAULT_EPS))?;
    let bound = match args.lower_bound {
        Some(LowerBound::Zero) => Some(0.0),
        Some(LowerBound::NegInf) => None,
        None if loss.lower_bound().is_finite() => Some(loss.lower_bound()),
        None => None,
    };
    Ok((loss, bound))
}

fn resolve_adam(rate: f64, args: &AdamArgs, bound: Option<f64>) -> Result<AdamConfig, GcpError> {
    let base = AdamConfig::default();
    let cfg = AdamConfig {
        rate,
        beta1: args.adam_beta1.unwrap_or(base.beta1),
        beta2: args.adam_beta2.unwrap_or(base.beta2),
        eps: args.adam_eps.unwrap_or(base.eps),
        rate_decay: args.rate_decay.unwrap_or(base.rate_decay),
        lower_bound: bound,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_samples(args: &SampleArgs, p: &Preset) -> SamplerConfig {
    SamplerConfig {
        objective_nonzeros: args.fsamp_nz.unwrap_or(p.fsamp_nz),
        objective_zeros: args.fsamp_z.unwrap_or(p.fsamp_z),
        gradient_nonzeros: args.gsamp_nz.unwrap_or(p.gsamp_nz),
        gradient_zeros: args.gsamp_z.unwrap_or(p.gsamp_z),
        max_rejects: args.max_rejects,
    }
}

pub fn resolve_stream(a: &StreamArgs) -> Result<StreamRun, GcpError> {
    let preset = match &a.preset {
        Some(name) => presets::find(name).ok_or_else(|| {
            usage(format!("unknown preset '{name}' (known: {})", presets::names().join(", ")))
        })?,
        None => &presets::DEFAULT,
    };
    let (loss, bound) = resolve_loss(&a.loss, preset.loss)?;
    let sampler = resolve_samples(&a.samples, preset);
    let defaults = SolverConfig::default();
    let solver = SolverConfig {
        tol_weights: a.tol_w.unwrap_or(defaults.tol_weights),
        tol_factors: a.tol_f.unwrap_or(defaults.tol_factors),
        epochs_weights: a.epochs_w.unwrap_or(preset.epochs_w),
        epochs_factors: a.epochs_f.unwrap_or(preset.epochs_f),
        iters_weights: a.iters_w.unwrap_or(defaults.iters_weights),
        iters_factors: a.iters_f.unwrap_or(defaults.iters_factors),
        lambda: a.reg_factors.unwrap_or(0.0),
        mu: a.reg_weights.unwrap_or(0.0),
        history_weight: a.hist_weight.unwrap_or(preset.hist_weight),
        history_decay: a.hist_decay.unwrap_or(1.0),
        temporal_mode: a.temporal_solver.unwrap_or(defaults.temporal_mode),
        gradient_mode: a.gradient.unwrap_or(defaults.gradient_mode),
        weights_regularizer: defaults.weights_regularizer,
        warm_weights: a.warm_weights.unwrap_or(preset.warm_weights),
        adam_weights: resolve_adam(a.rate_w.unwrap_or(preset.rate_w), &a.adam, bound)?,
        adam_factors: resolve_adam(a.rate_f.unwrap_or(preset.rate_f), &a.adam, bound)?,
        sampler,
    };
    let warm_start = StaticConfig {
        epochs: a.warm_epochs.unwrap_or(WARM_EPOCHS),
        iters: a.warm_iters.unwrap_or(defaults.iters_factors),
        tol: f64::NEG_INFINITY,
        lambda: solver.lambda,
        mu: solver.mu,
        adam: resolve_adam(a.warm_rate.unwrap_or(warm_rate(loss.kind())), &a.adam, bound)?,
        sampler,
    };
    let stream = StreamConfig {
        rank: a.rank.unwrap_or(preset.rank),
        window: a.window.unwrap_or(preset.window),
        warm_slices: a.warm_slices.unwrap_or(preset.warm_slices),
        solver,
        warm_start,
        exact_local_loss: a.exact_loss,
    };
    stream.validate(&loss)?;
    if warm_start.epochs == 0 || warm_start.iters == 0 {
        return Err(usage("warm-start epochs and iterations must be at least 1".into()));
    }
    let checkpoint = a.checkpoint.clone().unwrap_or_else(|| a.out_dir.join("checkpoint.json"));
    Ok(StreamRun {
        preset: a.preset.clone(),
        input: a.input.input.clone(),
        merge_duplicates: a.input.merge_duplicates,
        binarize: a.input.binarize,
        loss,
        stream,
        slices: a.slices,
        exec: Exec::resolve(&a.exec),
        out_dir: a.out_dir.clone(),
        score_against: a.score_against.clone(),
        score_every: a.score_every,
        checkpoint_every: a.checkpoint_every,
        checkpoint,
        resume: a.resume.clone(),
        plot_script: a.plot_script,
    })
}

pub fn resolve_static(a: &StaticArgs) -> Result<StaticRun, GcpError> {
    let (loss, bound) = resolve_loss(&a.loss, LossKind::Gaussian)?;
    if a.rank == 0 {
        return Err(usage("rank must be at least 1".into()));
    }
    if a.epochs == 0 || a.iters == 0 {
        return Err(usage("epochs and iterations must be at least 1".into()));
    }
    let fit = StaticConfig {
        epochs: a.epochs,
        iters: a.iters,
        tol: a.tol.unwrap_or(f64::NEG_INFINITY),
        lambda: a.reg_factors,
        mu: a.reg_weights,
        adam: resolve_adam(a.rate, &a.adam, bound)?,
        sampler: resolve_samples(&a.samples, &presets::DEFAULT),
    };
    Ok(StaticRun {
        input: a.input.input.clone(),
        merge_duplicates: a.input.merge_duplicates,
        binarize: a.input.binarize,
        rank: a.rank,
        loss,
        fit,
        init: a.init.clone(),
        exec: Exec::resolve(&a.exec),
        out: a.out.clone(),
        score_against: a.score_against.clone(),
    })
}
