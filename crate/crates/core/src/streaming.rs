//! The streaming driver.
//!
//! For each slice `X_t` the driver solves for the temporal weights `s_t`
//! with the factors fixed, updates the factors against the slice and the
//! history window, then records `s_t` in the window by reservoir sampling.

use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::error::{GcpError, Result};
use crate::io::with_path;
use crate::kernels::HistoryEntry;
use crate::loss::{LossFunction, LossKind};
use crate::metrics::{congruence, local_loss_exact, local_loss_sampled, SliceMetrics};
use crate::rng::{Phase, RngStreams};
use crate::solvers::{
    solve_factors, solve_static, solve_weights, solve_weights_least_squares, FactorProblem, SliceContext,
    SolveReport, SolverConfig, StaticConfig, TemporalMode,
};
use crate::tensor::{KTensor, SparseTensor};

/// Bumped whenever the checkpoint layout changes.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Bounded set of past steps kept by reservoir sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryWindow {
    capacity: usize,
    entries: Vec<HistoryEntry>,
}

impl HistoryWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Step ids currently held, in slot order.
    pub fn steps(&self) -> Vec<usize> {
        self.entries.iter().map(|h| h.step).collect()
    }

    /// Offer the just-processed step `t` (1-based). Below capacity it is
    /// appended; otherwise slot `j` is overwritten when a uniform draw
    /// `j ∈ {1, …, t}` lands in `1..=H`.
    pub fn update<R: Rng + ?Sized>(&mut self, t: usize, weights: &Array1<f64>, rng: &mut R) {
        debug_assert!(self.entries.iter().all(|h| h.step < t));
        let entry = HistoryEntry {
            step: t,
            weights: weights.clone(),
        };
        if self.entries.len() < self.capacity {
            self.entries.push(entry);
        } else if self.capacity > 0 {
            let j = rng.gen_range(1..=t);
            if j <= self.capacity {
                self.entries[j - 1] = entry;
            }
        }
    }
}

/// Everything that shapes a stream besides the data and the seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub rank: usize,
    /// History window capacity `H`.
    pub window: usize,
    /// Slices used for the warm start.
    pub warm_slices: usize,
    pub solver: SolverConfig,
    pub warm_start: StaticConfig,
    /// Also compute the exact local loss of every slice.
    pub exact_local_loss: bool,
}

impl StreamConfig {
    pub fn validate(&self, loss: &LossFunction) -> Result<()> {
        if self.rank == 0 {
            return Err(GcpError::Precondition("rank must be at least 1".into()));
        }
        if self.solver.temporal_mode == TemporalMode::LeastSquares && loss.kind() != LossKind::Gaussian {
            return Err(GcpError::Precondition(format!(
                "least-squares temporal solve requires gaussian loss, got {}",
                loss.kind()
            )));
        }
        self.solver.validate()?;
        self.warm_start.adam.validate()
    }
}

/// Result of one slice.
#[derive(Clone, Debug)]
pub struct SliceOutcome {
    pub weights: Array1<f64>,
    /// `None` under the least-squares temporal solve.
    pub weights_report: Option<SolveReport>,
    pub factors_report: SolveReport,
    pub metrics: SliceMetrics,
}

/// Full driver state; serializable between slices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamState {
    pub version: u32,
    pub seed: u64,
    pub loss: LossFunction,
    pub config: StreamConfig,
    /// Dims of one slice.
    pub dims: Vec<usize>,
    /// Slices processed so far (warm start included).
    pub t: usize,
    /// Current factors. Between slices these are also the previous-step
    /// factors used as the history anchor.
    pub factors: Vec<Array2<f64>>,
    pub window: HistoryWindow,
    pub adam: AdamState<Vec<Array2<f64>>>,
    /// Global factor-step counter.
    pub iter: u64,
    /// `s_t` for every processed slice.
    pub weights_log: Vec<Array1<f64>>,
    pub metrics: Vec<SliceMetrics>,
}

impl StreamState {
    /// Fresh state with uniform(0, 1) factors.
    pub fn new(dims: &[usize], config: StreamConfig, loss: LossFunction, seed: u64) -> Result<Self> {
        config.validate(&loss)?;
        if dims.is_empty() || dims.contains(&0) {
            return Err(GcpError::Shape(format!("invalid slice dims {dims:?}")));
        }
        let streams = RngStreams::new(seed);
        let mut rng = streams.stream(0, Phase::StaticInit, 1, 0);
        let factors: Vec<Array2<f64>> = dims
            .iter()
            .map(|&n| Array2::from_shape_fn((n, config.rank), |_| rng.gen::<f64>()))
            .collect();
        let adam = AdamState::init(config.solver.adam_factors, &factors);
        Ok(Self {
            version: CHECKPOINT_VERSION,
            seed,
            loss,
            config,
            dims: dims.to_vec(),
            t: 0,
            factors,
            window: HistoryWindow::new(config.window),
            adam,
            iter: 0,
            weights_log: Vec::new(),
            metrics: Vec::new(),
        })
    }

    pub fn streams(&self) -> RngStreams {
        RngStreams::new(self.seed)
    }

    /// The model of step `t` (1-based) under the current factors.
    pub fn model_at(&self, t: usize) -> Result<KTensor> {
        let s = t
            .checked_sub(1)
            .and_then(|i| self.weights_log.get(i))
            .ok_or_else(|| GcpError::Contract(format!("no temporal weights for step {t}")))?;
        KTensor::new(s.clone(), self.factors.clone())
    }

    /// The latest model, or unit weights before any slice.
    pub fn model(&self) -> Result<KTensor> {
        match self.t {
            0 => KTensor::from_factors(self.factors.clone()),
            t => self.model_at(t),
        }
    }

    /// The whole stream as one model: the current factors plus a trailing
    /// temporal factor whose rows are the logged `s_t`, with unit weights.
    pub fn stream_model(&self) -> Result<KTensor> {
        let r = self.config.rank;
        let mut temporal = Array2::zeros((self.weights_log.len(), r));
        for (mut row, s) in temporal.rows_mut().into_iter().zip(&self.weights_log) {
            row.assign(s);
        }
        let mut factors = self.factors.clone();
        factors.push(temporal);
        KTensor::new(Array1::ones(r), factors)
    }

    /// Congruence of the stream so far with a reference model. A reference
    /// with a trailing time mode is cut to the processed steps and compared
    /// with [`stream_model`](Self::stream_model); otherwise only the factors
    /// are compared.
    pub fn score_against(&self, reference: &KTensor) -> Result<f64> {
        let d = self.dims.len();
        if reference.ndims() != d + 1 {
            return congruence(&KTensor::from_factors(self.factors.clone())?, reference);
        }
        let steps = self.weights_log.len();
        let rows = reference.factors[d].nrows();
        if steps > rows {
            return Err(GcpError::Shape(format!("reference covers {rows} steps, stream has {steps}")));
        }
        let mut r = reference.clone();
        r.factors[d] = r.factors[d].slice(s![0..steps, ..]).to_owned();
        congruence(&self.stream_model()?, &r)
    }

    fn check_slice(&self, x: &SparseTensor) -> Result<()> {
        if x.dims() != self.dims.as_slice() {
            return Err(GcpError::Shape(format!(
                "slice dims {:?} differ from stream dims {:?}",
                x.dims(),
                self.dims
            )));
        }
        Ok(())
    }

    fn slice_metrics(&self, x: &SparseTensor, t: usize, s: &Array1<f64>) -> Result<(f64, Option<f64>)> {
        let streams = self.streams();
        let mut rng = streams.stream(t as u64, Phase::LocalLoss, 0, 0);
        let sampled = local_loss_sampled(x, s, &self.factors, &self.loss, &self.config.solver.sampler, &mut rng)?;
        let exact = if self.config.exact_local_loss {
            Some(local_loss_exact(x, s, &self.factors, &self.loss)?.value)
        } else {
            None
        };
        Ok((sampled.value, exact))
    }

    /// Fit the first slices jointly and seed the factors, weights and window.
    ///
    /// `block` stacks the warm-start slices along a trailing mode. The static
    /// weights are folded into the temporal rows, so `s_h = λ ⊛ T[h, :]`.
    pub fn warm_start(&mut self, block: &SparseTensor) -> Result<Vec<SliceMetrics>> {
        if self.t != 0 {
            return Err(GcpError::Contract("warm start must precede all slices".into()));
        }
        let d = self.dims.len();
        if block.ndims() != d + 1 || block.dims()[..d] != self.dims[..] {
            return Err(GcpError::Shape(format!(
                "warm-start block dims {:?} do not extend slice dims {:?}",
                block.dims(),
                self.dims
            )));
        }
        let count = block.dims()[d];
        let start = Instant::now();
        let mut static_cfg = self.config.warm_start;
        if let Some(l) = self.config.solver.adam_factors.lower_bound {
            static_cfg.adam.lower_bound.get_or_insert(l);
        }
        let fit = solve_static(block, self.config.rank, &self.loss, &static_cfg, &self.streams(), None)
            .map_err(|e| e.at_slice(1))?;
        let wall = start.elapsed().as_millis() as u64 / count as u64;
        let mut factors = fit.model.factors;
        let temporal = factors.pop().expect("block has a trailing mode");
        self.factors = factors;
        self.adam = AdamState::init(self.config.solver.adam_factors, &self.factors);
        self.iter = 0;

        let streams = self.streams();
        let mut rows = Vec::with_capacity(count);
        for (h, row) in temporal.axis_iter(Axis(0)).enumerate() {
            let t = h + 1;
            let s = &row * &fit.model.weights;
            let x = block.slice(h)?;
            let (sampled, exact) = self.slice_metrics(&x, t, &s).map_err(|e| e.at_slice(t))?;
            let m = SliceMetrics {
                t,
                local_loss_sampled: sampled,
                local_loss_exact: exact,
                epochs_w: 0,
                epochs_f: fit.report.epochs,
                wall_ms: wall,
            };
            let mut rng = streams.stream(t as u64, Phase::Window, 0, 0);
            self.window.update(t, &s, &mut rng);
            self.weights_log.push(s);
            self.metrics.push(m.clone());
            self.t = t;
            rows.push(m);
        }
        Ok(rows)
    }

    /// Process the next slice. On error the state is left unchanged.
    pub fn process_slice(&mut self, x: &SparseTensor) -> Result<SliceOutcome> {
        let t = self.t + 1;
        self.step(x, t).map_err(|e| e.at_slice(t))
    }

    fn step(&mut self, x: &SparseTensor, t: usize) -> Result<SliceOutcome> {
        self.check_slice(x)?;
        let start = Instant::now();
        let streams = self.streams();
        let cfg = &self.config.solver;
        let ctx = SliceContext {
            x,
            loss: &self.loss,
            streams: &streams,
            slice: t,
        };
        let old = &self.factors;
        let (weights, weights_report) = match cfg.temporal_mode {
            TemporalMode::Sgd => {
                let (s, r) = solve_weights(&ctx, old, cfg, self.weights_log.last())?;
                (s, Some(r))
            }
            TemporalMode::LeastSquares => (solve_weights_least_squares(x, old, cfg.mu)?, None),
        };
        let mut factors = old.clone();
        let mut adam = self.adam.clone();
        let mut iter = self.iter;
        let problem = FactorProblem {
            weights: &weights,
            old_factors: old,
            window: self.window.entries(),
        };
        let factors_report = solve_factors(&ctx, &mut factors, &problem, cfg, &mut adam, &mut iter)?;

        // commit
        self.factors = factors;
        self.adam = adam;
        self.iter = iter;
        let mut rng = streams.stream(t as u64, Phase::Window, 0, 0);
        self.window.update(t, &weights, &mut rng);
        self.weights_log.push(weights.clone());
        self.t = t;

        let (sampled, exact) = self.slice_metrics(x, t, &weights)?;
        let metrics = SliceMetrics {
            t,
            local_loss_sampled: sampled,
            local_loss_exact: exact,
            epochs_w: weights_report.as_ref().map_or(0, |r| r.epochs),
            epochs_f: factors_report.epochs,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        self.metrics.push(metrics.clone());
        Ok(SliceOutcome {
            weights,
            weights_report,
            factors_report,
            metrics,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| GcpError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            version: u32,
        }
        let v: Version = serde_json::from_str(text).map_err(|e| GcpError::Checkpoint(e.to_string()))?;
        if v.version != CHECKPOINT_VERSION {
            return Err(GcpError::Checkpoint(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                v.version
            )));
        }
        serde_json::from_str(text).map_err(|e| GcpError::Checkpoint(e.to_string()))
    }

    /// Write atomically: a temporary sibling is renamed over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json()?).map_err(with_path(&tmp))?;
        std::fs::rename(&tmp, path).map_err(with_path(path))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(with_path(path))?)
    }
}
