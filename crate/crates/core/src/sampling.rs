//! Stratified sampling of nonzeros and zeros.
//!
//! Nonzeros are drawn uniformly with replacement from the stored entries.
//! Zeros are drawn uniformly from the whole index box and redrawn whenever
//! the candidate turns out to be stored. Each stratum is reweighted by its
//! population over its draw count, which makes both the objective estimate
//! and the gradient tensor unbiased.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GcpError, Result};
use crate::kernels::HistoryTerms;
use crate::loss::LossFunction;
use crate::tensor::{model_value, CooEntries, GradientTensor, SparseTensor};

/// Number of nonzero draws: a fixed count or one per stored entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleCount {
    All,
    Fixed(usize),
}

impl SampleCount {
    pub fn resolve(self, nnz: usize) -> usize {
        match self {
            SampleCount::All => nnz,
            SampleCount::Fixed(n) => n,
        }
    }
}

impl fmt::Display for SampleCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleCount::All => f.write_str("all"),
            SampleCount::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for SampleCount {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(SampleCount::All);
        }
        s.parse::<usize>()
            .map(SampleCount::Fixed)
            .map_err(|_| format!("expected a count or 'all', got '{s}'"))
    }
}

/// Draw counts for the objective estimate (`p'`, `q'`) and the gradient (`p`, `q`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub objective_nonzeros: SampleCount,
    pub objective_zeros: usize,
    pub gradient_nonzeros: SampleCount,
    pub gradient_zeros: usize,
    /// Rejection budget for zero draws; `None` means `1000 * q`.
    pub max_rejects: Option<u64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            objective_nonzeros: SampleCount::Fixed(100_000),
            objective_zeros: 100_000,
            gradient_nonzeros: SampleCount::Fixed(1_000),
            gradient_zeros: 1_000,
            max_rejects: None,
        }
    }
}

/// A stratum with no members gets no draws, so empty and fully dense
/// slices still sample.
fn clip_counts(x: &SparseTensor, p: SampleCount, q: usize) -> (usize, usize) {
    let p = if x.nnz() == 0 { 0 } else { p.resolve(x.nnz()) };
    let q = if x.num_zeros() == 0 { 0 } else { q };
    (p, q)
}

impl SamplerConfig {
    pub fn objective_counts(&self, x: &SparseTensor) -> (usize, usize) {
        clip_counts(x, self.objective_nonzeros, self.objective_zeros)
    }

    pub fn gradient_counts(&self, x: &SparseTensor) -> (usize, usize) {
        clip_counts(x, self.gradient_nonzeros, self.gradient_zeros)
    }
}

/// The outcome of one stratified draw.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    ndims: usize,
    /// Entry ordinals of the nonzero draws, repeats allowed.
    pub nz_draws: Vec<usize>,
    /// Flat coordinates of the zero draws (`q * d` values).
    pub zero_draws: Vec<usize>,
    /// `η / p`, or 0 when `p = 0`.
    pub nz_scale: f64,
    /// `(ω − η) / q`, or 0 when `q = 0`.
    pub zero_scale: f64,
    /// Zero candidates that hit a nonzero and were redrawn.
    pub rejections: u64,
}

impl SampleSet {
    pub fn p(&self) -> usize {
        self.nz_draws.len()
    }

    pub fn q(&self) -> usize {
        self.zero_draws.len() / self.ndims.max(1)
    }

    pub fn zero_coords(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.zero_draws.chunks_exact(self.ndims)
    }
}

/// Draw `p` nonzeros and `q` zeros of `x`, uniformly with replacement.
pub fn draw_samples<R: Rng + ?Sized>(
    x: &SparseTensor,
    p: usize,
    q: usize,
    rng: &mut R,
    max_rejects: Option<u64>,
) -> Result<SampleSet> {
    let eta = x.nnz();
    let zeros = x.num_zeros();
    if p > 0 && eta == 0 {
        return Err(GcpError::Precondition(format!(
            "cannot draw {p} nonzeros from a tensor without nonzeros"
        )));
    }
    if q > 0 && zeros == 0 {
        return Err(GcpError::Precondition(format!(
            "cannot draw {q} zeros from a fully dense tensor"
        )));
    }
    let d = x.ndims();
    let nz_draws: Vec<usize> = (0..p).map(|_| rng.gen_range(0..eta)).collect();

    let budget = max_rejects.unwrap_or(1000 * q as u64);
    let mut zero_draws = Vec::with_capacity(q * d);
    let mut cand = vec![0usize; d];
    let mut rejections = 0u64;
    let mut drawn = 0;
    while drawn < q {
        for (c, &n) in cand.iter_mut().zip(x.dims()) {
            *c = rng.gen_range(0..n);
        }
        if x.contains_unchecked(&cand) {
            rejections += 1;
            if rejections > budget {
                return Err(GcpError::Sampling {
                    rejects: rejections,
                    density: eta as f64 / x.numel() as f64,
                });
            }
            continue;
        }
        zero_draws.extend_from_slice(&cand);
        drawn += 1;
    }

    Ok(SampleSet {
        ndims: d,
        nz_draws,
        zero_draws,
        nz_scale: if p > 0 { eta as f64 / p as f64 } else { 0.0 },
        zero_scale: if q > 0 { zeros as f64 / q as f64 } else { 0.0 },
        rejections,
    })
}

/// Non-data terms of the streaming objective.
#[derive(Clone, Copy, Debug, Default)]
pub struct Penalties<'a> {
    pub history: Option<HistoryTerms<'a>>,
    /// Factor regularization `λ`.
    pub lambda: f64,
    /// Temporal weight regularization `μ`.
    pub mu: f64,
}

impl<'a> Penalties<'a> {
    pub fn none() -> Self {
        Self::default()
    }

    /// Exact value of the history and ridge terms.
    pub fn value(&self, weights: &Array1<f64>, factors: &[Array2<f64>]) -> Result<f64> {
        let mut total = 0.0;
        if let Some(h) = &self.history {
            total += h.penalty(factors)?;
        }
        if self.lambda != 0.0 {
            let sq: f64 = factors.iter().map(|a| a.iter().map(|v| v * v).sum::<f64>()).sum();
            total += 0.5 * self.lambda * sq;
        }
        if self.mu != 0.0 {
            total += 0.5 * self.mu * weights.dot(weights);
        }
        Ok(total)
    }
}

/// Sampled data term plus exact penalties.
pub fn estimate_objective(
    x: &SparseTensor,
    weights: &Array1<f64>,
    factors: &[Array2<f64>],
    loss: &LossFunction,
    samples: &SampleSet,
    penalties: &Penalties<'_>,
) -> Result<f64> {
    Ok(estimate_data_term(x, weights, factors, loss, samples)? + penalties.value(weights, factors)?)
}

/// The sampled loss sum alone.
pub fn estimate_data_term(
    x: &SparseTensor,
    weights: &Array1<f64>,
    factors: &[Array2<f64>],
    loss: &LossFunction,
    samples: &SampleSet,
) -> Result<f64> {
    let mut nz_sum = 0.0;
    for &e in &samples.nz_draws {
        let m = model_value(weights, factors, x.coord(e));
        nz_sum += loss.value(x.value(e), m)?;
    }
    let mut zero_sum = 0.0;
    for c in samples.zero_coords() {
        let m = model_value(weights, factors, c);
        zero_sum += loss.value(0.0, m)?;
    }
    Ok(samples.nz_scale * nz_sum + samples.zero_scale * zero_sum)
}

/// Scaled loss derivatives at every drawn coordinate, repeats merged.
pub fn gradient_from_samples(
    x: &SparseTensor,
    weights: &Array1<f64>,
    factors: &[Array2<f64>],
    loss: &LossFunction,
    samples: &SampleSet,
) -> Result<GradientTensor> {
    let mut y = GradientTensor::with_capacity(x.dims(), samples.p() + samples.q())?;
    for &e in &samples.nz_draws {
        let c = x.coord(e);
        let m = model_value(weights, factors, c);
        y.accumulate(c, samples.nz_scale * loss.deriv(x.value(e), m)?);
    }
    for c in samples.zero_coords() {
        let m = model_value(weights, factors, c);
        y.accumulate(c, samples.zero_scale * loss.deriv(0.0, m)?);
    }
    Ok(y)
}

/// Draw a fresh stratified sample and return the sparse gradient tensor `Ỹ`.
#[allow(clippy::too_many_arguments)]
pub fn sampled_gradient_tensor<R: Rng + ?Sized>(
    x: &SparseTensor,
    weights: &Array1<f64>,
    factors: &[Array2<f64>],
    loss: &LossFunction,
    p: usize,
    q: usize,
    rng: &mut R,
    max_rejects: Option<u64>,
) -> Result<GradientTensor> {
    let samples = draw_samples(x, p, q, rng, max_rejects)?;
    gradient_from_samples(x, weights, factors, loss, &samples)
}

/// Exact gradient tensor over every cell of the index box.
pub fn dense_gradient_tensor(
    x: &SparseTensor,
    weights: &Array1<f64>,
    factors: &[Array2<f64>],
    loss: &LossFunction,
) -> Result<GradientTensor> {
    let lin = x.linearizer();
    let n = usize::try_from(lin.numel())
        .map_err(|_| GcpError::Precondition("index box too large for a dense gradient".into()))?;
    let mut y = GradientTensor::with_capacity(x.dims(), n)?;
    let mut c = vec![0; x.ndims()];
    for key in 0..lin.numel() {
        lin.delinearize(key, &mut c);
        let m = model_value(weights, factors, &c);
        y.accumulate(&c, loss.deriv(x.get(&c)?, m)?);
    }
    Ok(y)
}
