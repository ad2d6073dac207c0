//! GCP-SGD subsolvers.
//!
//! Each solver runs epochs of `τ` ADAM steps. The objective is re-estimated
//! after every epoch on a sample set drawn once per solver call; an epoch
//! that raises the estimate is rolled back and the learning rate decays.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState, AdamVars, WeightsAndFactors};
use crate::error::{GcpError, Result};
use crate::kernels::{
    dense_gaussian_mttkrp_gradient, dense_gaussian_weights_gradient, full_gram, sampled_mttkrp,
    weights_mttkrp, GramCache, HistoryEntry, HistoryTerms,
};
use crate::loss::{LossFunction, LossKind};
use crate::rng::{Phase, RngStreams};
use crate::sampling::{draw_samples, estimate_objective, gradient_from_samples, Penalties, SamplerConfig, SampleSet};
use crate::tensor::{check_factors, CooEntries, KTensor, SparseTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalMode {
    Sgd,
    LeastSquares,
}

impl FromStr for TemporalMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(TemporalMode::Sgd),
            "ls" | "least-squares" => Ok(TemporalMode::LeastSquares),
            other => Err(format!("unknown temporal solver '{other}'")),
        }
    }
}

impl fmt::Display for TemporalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemporalMode::Sgd => "sgd",
            TemporalMode::LeastSquares => "ls",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    Sampled,
    DenseGaussian,
}

impl FromStr for GradientMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sampled" => Ok(GradientMode::Sampled),
            "dense-gaussian" | "dense" => Ok(GradientMode::DenseGaussian),
            other => Err(format!("unknown gradient mode '{other}'")),
        }
    }
}

impl fmt::Display for GradientMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradientMode::Sampled => "sampled",
            GradientMode::DenseGaussian => "dense-gaussian",
        })
    }
}

/// Which multiplier regularizes the temporal-weight gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightsRegularizer {
    Mu,
    Lambda,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(with = "crate::serde_float")]
    pub tol_weights: f64,
    #[serde(with = "crate::serde_float")]
    pub tol_factors: f64,
    pub epochs_weights: usize,
    pub epochs_factors: usize,
    pub iters_weights: usize,
    pub iters_factors: usize,
    /// Factor regularization `λ`.
    pub lambda: f64,
    /// Temporal-weight regularization `μ`.
    pub mu: f64,
    /// History multiplier `w`.
    pub history_weight: f64,
    /// History decay `θ`.
    pub history_decay: f64,
    pub temporal_mode: TemporalMode,
    pub gradient_mode: GradientMode,
    pub weights_regularizer: WeightsRegularizer,
    /// Start the temporal solve from the previous slice's weights instead of zero.
    pub warm_weights: bool,
    pub adam_weights: AdamConfig,
    pub adam_factors: AdamConfig,
    pub sampler: SamplerConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_weights: f64::NEG_INFINITY,
            tol_factors: f64::NEG_INFINITY,
            epochs_weights: 20,
            epochs_factors: 5,
            iters_weights: 100,
            iters_factors: 100,
            lambda: 0.0,
            mu: 0.0,
            history_weight: 1.0,
            history_decay: 1.0,
            temporal_mode: TemporalMode::Sgd,
            gradient_mode: GradientMode::Sampled,
            weights_regularizer: WeightsRegularizer::Mu,
            warm_weights: false,
            adam_weights: AdamConfig::with_rate(1.0),
            adam_factors: AdamConfig::with_rate(1e-3),
            sampler: SamplerConfig::default(),
        }
    }
}

impl SolverConfig {
    /// Apply the loss's natural lower bound to both steppers.
    pub fn with_loss_bounds(mut self, loss: &LossFunction) -> Self {
        let l = loss.lower_bound();
        let bound = if l.is_finite() { Some(l) } else { None };
        self.adam_weights.lower_bound = bound;
        self.adam_factors.lower_bound = bound;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GcpError::Precondition(m));
        if self.tol_weights.is_nan() || self.tol_factors.is_nan() {
            return bad("tolerances must not be NaN".into());
        }
        if self.epochs_weights == 0 || self.epochs_factors == 0 {
            return bad("epoch limits must be at least 1".into());
        }
        if self.iters_weights == 0 || self.iters_factors == 0 {
            return bad("iterations per epoch must be at least 1".into());
        }
        if !(self.history_decay > 0.0 && self.history_decay <= 1.0) {
            return bad(format!("history decay must lie in (0, 1], got {}", self.history_decay));
        }
        for (name, v) in [("lambda", self.lambda), ("mu", self.mu), ("history weight", self.history_weight)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite nonnegative number, got {v}"));
            }
        }
        self.adam_weights.validate()?;
        self.adam_factors.validate()
    }

    fn weights_reg(&self) -> f64 {
        match self.weights_regularizer {
            WeightsRegularizer::Mu => self.mu,
            WeightsRegularizer::Lambda => self.lambda,
        }
    }
}

/// Inputs shared by the solvers for one slice.
#[derive(Clone, Copy, Debug)]
pub struct SliceContext<'a> {
    pub x: &'a SparseTensor,
    pub loss: &'a LossFunction,
    pub streams: &'a RngStreams,
    /// 1-based step id used for history weights and random stream keys.
    pub slice: usize,
}

/// What happened inside one solver call.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub epochs: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Objective estimate before the first epoch and after each epoch's
    /// accept/reject decision.
    pub objective_trace: Vec<f64>,
}

impl SolveReport {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }

    /// True when the recorded estimates never increase.
    pub fn is_monotone(&self) -> bool {
        self.objective_trace.windows(2).all(|w| w[1] <= w[0])
    }
}

struct EpochPlan {
    epochs: usize,
    iters: usize,
    tol: f64,
    slice: usize,
}

/// Shared epoch loop with objective-gated accept/rollback.
fn run_epochs<V: AdamVars>(
    vars: &mut V,
    adam: &mut AdamState<V>,
    iter: &mut u64,
    plan: EpochPlan,
    mut objective: impl FnMut(&V) -> Result<f64>,
    mut gradient: impl FnMut(&V, u64, u64) -> Result<V>,
) -> Result<SolveReport> {
    let check = |f: f64, epoch: usize| -> Result<f64> {
        if f.is_finite() {
            Ok(f)
        } else {
            Err(GcpError::Divergence {
                slice: plan.slice,
                detail: format!("objective estimate {f} after epoch {epoch}"),
            })
        }
    };
    // snapshot the starting point so a first-epoch rejection returns here
    adam.update(vars, true)?;
    let mut fest = check(objective(vars)?, 0)?;
    let mut report = SolveReport {
        objective_trace: vec![fest],
        ..SolveReport::default()
    };
    while fest > plan.tol && report.epochs < plan.epochs {
        let epoch = report.epochs as u64;
        let fest_old = fest;
        for it in 0..plan.iters as u64 {
            let g = gradient(vars, epoch, it)?;
            *iter += 1;
            adam.step(vars, &g, *iter)?;
        }
        fest = check(objective(vars)?, report.epochs + 1)?;
        if fest > fest_old {
            adam.update(vars, false)?;
            fest = fest_old;
            *iter -= plan.iters as u64;
            report.rejected += 1;
        } else {
            adam.update(vars, true)?;
            report.accepted += 1;
        }
        report.epochs += 1;
        report.objective_trace.push(fest);
    }
    Ok(report)
}

fn draw_objective_samples(ctx: &SliceContext<'_>, sampler: &SamplerConfig, phase: Phase) -> Result<SampleSet> {
    let (p, q) = sampler.objective_counts(ctx.x);
    let mut rng = ctx.streams.stream(ctx.slice as u64, phase, 0, 0);
    draw_samples(ctx.x, p, q, &mut rng, sampler.max_rejects)
}

fn draw_gradient_samples<R: Rng>(x: &SparseTensor, sampler: &SamplerConfig, rng: &mut R) -> Result<SampleSet> {
    let (p, q) = sampler.gradient_counts(x);
    draw_samples(x, p, q, rng, sampler.max_rejects)
}

fn check_dense_gaussian(loss: &LossFunction, mode: GradientMode) -> Result<()> {
    if mode == GradientMode::DenseGaussian && loss.kind() != LossKind::Gaussian {
        return Err(GcpError::Precondition(format!(
            "dense gradients require gaussian loss, got {}",
            loss.kind()
        )));
    }
    Ok(())
}

fn check_slice(x: &SparseTensor, factors: &[Array2<f64>]) -> Result<usize> {
    let rank = factors.first().map_or(0, |a| a.ncols());
    check_factors(factors, rank)?;
    let dims: Vec<usize> = factors.iter().map(|a| a.nrows()).collect();
    if dims != x.dims() {
        return Err(GcpError::Shape(format!(
            "slice dims {:?} do not match factor rows {dims:?}",
            x.dims()
        )));
    }
    Ok(rank)
}

/// Temporal weights for one slice by GCP-SGD with the factors held fixed.
pub fn solve_weights(
    ctx: &SliceContext<'_>,
    factors: &[Array2<f64>],
    cfg: &SolverConfig,
    start: Option<&Array1<f64>>,
) -> Result<(Array1<f64>, SolveReport)> {
    let rank = check_slice(ctx.x, factors)?;
    check_dense_gaussian(ctx.loss, cfg.gradient_mode)?;
    let mut s = match start {
        Some(s0) if cfg.warm_weights => s0.clone(),
        _ => Array1::zeros(rank),
    };
    let mut adam = AdamState::init(cfg.adam_weights, &s);
    let obj_samples = draw_objective_samples(ctx, &cfg.sampler, Phase::WeightsObjective)?;
    let penalties = Penalties {
        mu: cfg.mu,
        ..Penalties::none()
    };
    let reg = cfg.weights_reg();
    let mut iter = 0u64;
    let plan = EpochPlan {
        epochs: cfg.epochs_weights,
        iters: cfg.iters_weights,
        tol: cfg.tol_weights,
        slice: ctx.slice,
    };
    let report = run_epochs(
        &mut s,
        &mut adam,
        &mut iter,
        plan,
        |s| estimate_objective(ctx.x, s, factors, ctx.loss, &obj_samples, &penalties),
        |s, epoch, it| {
            let mut g = match cfg.gradient_mode {
                GradientMode::Sampled => {
                    let mut rng = ctx.streams.stream(ctx.slice as u64, Phase::WeightsGradient, epoch, it);
                    let samples = draw_gradient_samples(ctx.x, &cfg.sampler, &mut rng)?;
                    let y = gradient_from_samples(ctx.x, s, factors, ctx.loss, &samples)?;
                    weights_mttkrp(&y, factors)?
                }
                GradientMode::DenseGaussian => dense_gaussian_weights_gradient(ctx.x, factors, s)?,
            };
            if reg != 0.0 {
                g.scaled_add(reg, s);
            }
            Ok(g)
        },
    )?;
    Ok((s, report))
}

/// Gaussian temporal weights from the normal equations
/// `(⊛_k A(k)ᵀA(k) + μI) s = Zᵀ x`.
pub fn solve_weights_least_squares(x: &SparseTensor, factors: &[Array2<f64>], mu: f64) -> Result<Array1<f64>> {
    let rank = check_slice(x, factors)?;
    let g = full_gram(factors, None)?;
    let b = weights_mttkrp(x, factors)?;
    let mut m = DMatrix::from_fn(rank, rank, |i, j| g[[i, j]]);
    for i in 0..rank {
        m[(i, i)] += mu;
    }
    let rhs = DVector::from_iterator(rank, b.iter().copied());
    let sol = m
        .cholesky()
        .ok_or_else(|| GcpError::LinearSolve("temporal normal equations are not positive definite".into()))?
        .solve(&rhs);
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(GcpError::LinearSolve("temporal normal equations gave non-finite weights".into()));
    }
    Ok(Array1::from_iter(sol.iter().copied()))
}

/// History terms with the weighted outer product `Σ_h c_h s_h s_hᵀ` precomputed.
pub struct PreparedHistory<'a> {
    pub terms: HistoryTerms<'a>,
    outer: Array2<f64>,
}

impl<'a> PreparedHistory<'a> {
    pub fn new(terms: HistoryTerms<'a>, rank: usize) -> Self {
        let outer = terms.weighted_outer(rank);
        Self { terms, outer }
    }
}

/// Where the loss part of the factor gradient comes from.
pub enum GradientSource<'a> {
    /// A (sampled or dense) gradient tensor `Ỹ`.
    Tensor(&'a dyn CooEntries),
    /// The exact Gaussian gradient computed from the data tensor.
    DenseGaussian(&'a SparseTensor),
}

/// Assembled `∂F/∂A(k)` for every mode.
#[derive(Clone, Debug)]
pub struct FactorGradient {
    pub grads: Vec<Array2<f64>>,
    /// Window entries whose terms entered the gradient.
    pub history_terms: usize,
}

/// `Ỹ_(k) Z_k diag(s) + λA(k) + Σ_h c_h (A(k) diag(s_h) Z_kᵀZ_k diag(s_h) − A_old(k) diag(s_h) Z_old,kᵀZ_k diag(s_h))`.
pub fn assemble_factor_gradient(
    source: GradientSource<'_>,
    factors: &[Array2<f64>],
    weights: &Array1<f64>,
    lambda: f64,
    history: Option<&PreparedHistory<'_>>,
) -> Result<FactorGradient> {
    let mut grads = Vec::with_capacity(factors.len());
    for k in 0..factors.len() {
        let mut g = match source {
            GradientSource::Tensor(y) => sampled_mttkrp(y, factors, k)? * weights,
            GradientSource::DenseGaussian(x) => dense_gaussian_mttkrp_gradient(x, factors, weights, k)?,
        };
        if lambda != 0.0 {
            g.scaled_add(lambda, &factors[k]);
        }
        grads.push(g);
    }
    let mut history_terms = 0;
    if let Some(h) = history.filter(|h| h.terms.is_active()) {
        let cache = GramCache::new(factors, h.terms.old_factors)?;
        for (g, hg) in grads.iter_mut().zip(h.terms.gradient(factors, &cache, &h.outer)) {
            *g += &hg;
        }
        history_terms = h.terms.entries.len();
    }
    Ok(FactorGradient { grads, history_terms })
}

/// Inputs to the factor solver beyond the slice itself.
pub struct FactorProblem<'a> {
    pub weights: &'a Array1<f64>,
    pub old_factors: &'a [Array2<f64>],
    pub window: &'a [HistoryEntry],
}

/// Factor matrices for one slice by GCP-SGD with the temporal weights fixed.
///
/// `adam` and `iter` persist across slices.
pub fn solve_factors(
    ctx: &SliceContext<'_>,
    factors: &mut Vec<Array2<f64>>,
    problem: &FactorProblem<'_>,
    cfg: &SolverConfig,
    adam: &mut AdamState<Vec<Array2<f64>>>,
    iter: &mut u64,
) -> Result<SolveReport> {
    let rank = check_slice(ctx.x, factors)?;
    check_dense_gaussian(ctx.loss, cfg.gradient_mode)?;
    if problem.weights.len() != rank {
        return Err(GcpError::Shape(format!(
            "{} temporal weights for rank {rank}",
            problem.weights.len()
        )));
    }
    if problem.old_factors.len() != factors.len()
        || problem.old_factors.iter().zip(factors.iter()).any(|(a, b)| a.dim() != b.dim())
    {
        return Err(GcpError::Shape("previous factors differ in shape from current factors".into()));
    }
    if let Some(h) = problem.window.iter().find(|h| h.weights.len() != rank) {
        return Err(GcpError::Shape(format!("history step {} has wrong weight length", h.step)));
    }
    let terms = HistoryTerms {
        old_factors: problem.old_factors,
        entries: problem.window,
        weight: cfg.history_weight,
        decay: cfg.history_decay,
        t: ctx.slice,
    };
    let history = PreparedHistory::new(terms, rank);
    let obj_samples = draw_objective_samples(ctx, &cfg.sampler, Phase::FactorsObjective)?;
    let penalties = Penalties {
        history: Some(terms),
        lambda: cfg.lambda,
        mu: 0.0,
    };
    let s = problem.weights;
    let plan = EpochPlan {
        epochs: cfg.epochs_factors,
        iters: cfg.iters_factors,
        tol: cfg.tol_factors,
        slice: ctx.slice,
    };
    run_epochs(
        factors,
        adam,
        iter,
        plan,
        |a| estimate_objective(ctx.x, s, a, ctx.loss, &obj_samples, &penalties),
        |a, epoch, it| {
            let fg = match cfg.gradient_mode {
                GradientMode::Sampled => {
                    let mut rng = ctx.streams.stream(ctx.slice as u64, Phase::FactorsGradient, epoch, it);
                    let samples = draw_gradient_samples(ctx.x, &cfg.sampler, &mut rng)?;
                    let y = gradient_from_samples(ctx.x, s, a, ctx.loss, &samples)?;
                    assemble_factor_gradient(GradientSource::Tensor(&y), a, s, cfg.lambda, Some(&history))?
                }
                GradientMode::DenseGaussian => {
                    assemble_factor_gradient(GradientSource::DenseGaussian(ctx.x), a, s, cfg.lambda, Some(&history))?
                }
            };
            Ok(fg.grads)
        },
    )
}

/// Settings for a whole-tensor fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticConfig {
    pub epochs: usize,
    pub iters: usize,
    #[serde(with = "crate::serde_float")]
    pub tol: f64,
    pub lambda: f64,
    pub mu: f64,
    pub adam: AdamConfig,
    pub sampler: SamplerConfig,
}

impl Default for StaticConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            iters: 100,
            tol: f64::NEG_INFINITY,
            lambda: 0.0,
            mu: 0.0,
            adam: AdamConfig::with_rate(1e-2),
            sampler: SamplerConfig::default(),
        }
    }
}

/// Result of a whole-tensor fit.
#[derive(Clone, Debug)]
pub struct StaticFit {
    pub model: KTensor,
    pub report: SolveReport,
}

/// Fit every mode and the weights jointly by GCP-SGD.
///
/// Without `init`, factors start uniform on (0, 1) and weights at one.
pub fn solve_static(
    x: &SparseTensor,
    rank: usize,
    loss: &LossFunction,
    cfg: &StaticConfig,
    streams: &RngStreams,
    init: Option<KTensor>,
) -> Result<StaticFit> {
    if rank == 0 {
        return Err(GcpError::Precondition("rank must be at least 1".into()));
    }
    cfg.adam.validate()?;
    let mut vars = match init {
        Some(m) => {
            if m.dims() != x.dims() || m.rank() != rank {
                return Err(GcpError::Shape(format!(
                    "initial model is {:?} rank {}, data is {:?} rank {rank}",
                    m.dims(),
                    m.rank(),
                    x.dims()
                )));
            }
            WeightsAndFactors {
                weights: m.weights,
                factors: m.factors,
            }
        }
        None => {
            let mut rng = streams.stream(0, Phase::StaticInit, 0, 0);
            WeightsAndFactors {
                weights: Array1::ones(rank),
                factors: x
                    .dims()
                    .iter()
                    .map(|&n| Array2::from_shape_fn((n, rank), |_| rng.gen::<f64>()))
                    .collect(),
            }
        }
    };
    let obj_samples = {
        let (p, q) = cfg.sampler.objective_counts(x);
        let mut rng = streams.stream(0, Phase::StaticObjective, 0, 0);
        draw_samples(x, p, q, &mut rng, cfg.sampler.max_rejects)?
    };
    let penalties = Penalties {
        history: None,
        lambda: cfg.lambda,
        mu: cfg.mu,
    };
    let mut adam = AdamState::init(cfg.adam, &vars);
    let mut iter = 0u64;
    let plan = EpochPlan {
        epochs: cfg.epochs,
        iters: cfg.iters,
        tol: cfg.tol,
        slice: 0,
    };
    let report = run_epochs(
        &mut vars,
        &mut adam,
        &mut iter,
        plan,
        |v| estimate_objective(x, &v.weights, &v.factors, loss, &obj_samples, &penalties),
        |v, epoch, it| {
            let mut rng = streams.stream(0, Phase::StaticGradient, epoch, it);
            let samples = draw_gradient_samples(x, &cfg.sampler, &mut rng)?;
            let y = gradient_from_samples(x, &v.weights, &v.factors, loss, &samples)?;
            let mut gw = weights_mttkrp(&y, &v.factors)?;
            if cfg.mu != 0.0 {
                gw.scaled_add(cfg.mu, &v.weights);
            }
            let fg = assemble_factor_gradient(GradientSource::Tensor(&y), &v.factors, &v.weights, cfg.lambda, None)?;
            Ok(WeightsAndFactors {
                weights: gw,
                factors: fg.grads,
            })
        },
    )?;
    let model = KTensor::new(vars.weights, vars.factors)?;
    Ok(StaticFit { model, report })
}
