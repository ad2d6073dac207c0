//! Fit quality: local and global loss, and congruence against a reference model.

use std::io::Write;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GcpError, Result};
use crate::kernels::full_gram;
use crate::loss::{LossFunction, LossKind};
use crate::sampling::{draw_samples, estimate_data_term, SamplerConfig};
use crate::tensor::{check_factors, model_value, KTensor, SparseTensor};

/// Cells per work unit for dense sums. Partial sums are added in chunk
/// order, so the total does not depend on the thread count.
const DENSE_CHUNK: u64 = 1 << 16;

fn check_model(x: &SparseTensor, weights: &Array1<f64>, factors: &[Array2<f64>]) -> Result<()> {
    check_factors(factors, weights.len())?;
    let dims: Vec<usize> = factors.iter().map(|a| a.nrows()).collect();
    if dims != x.dims() {
        return Err(GcpError::Shape(format!(
            "tensor dims {:?} do not match model dims {dims:?}",
            x.dims()
        )));
    }
    Ok(())
}

fn nonzero_sum(
    x: &SparseTensor,
    weights: &Array1<f64>,
    factors: &[Array2<f64>],
    f: impl Fn(f64, f64) -> Result<f64>,
) -> Result<f64> {
    let mut total = 0.0;
    for (c, v) in x.iter() {
        total += f(v, model_value(weights, factors, c))?;
    }
    Ok(total)
}

/// `Σ f(x_i, m_i)` over every cell of the index box.
///
/// Gaussian and Poisson use closed forms for the zero cells; Bernoulli
/// enumerates the box.
pub fn exact_loss_sum(
    x: &SparseTensor,
    weights: &Array1<f64>,
    factors: &[Array2<f64>],
    loss: &LossFunction,
) -> Result<f64> {
    check_model(x, weights, factors)?;
    match loss.kind() {
        LossKind::Gaussian => {
            // ‖X‖² − 2⟨X, M⟩ + ‖M‖²
            let inner = nonzero_sum(x, weights, factors, |v, m| Ok(v * m))?;
            let g = full_gram(factors, None)?;
            let model_sq = weights.dot(&g.dot(weights));
            Ok((x.norm_sq() - 2.0 * inner + model_sq).max(0.0))
        }
        LossKind::Poisson => {
            // Σ_all m − Σ_nz x log(m + ε)
            let mut col = weights.clone();
            for a in factors {
                col *= &a.sum_axis(Axis(0));
            }
            let eps = loss.eps();
            let logs = nonzero_sum(x, weights, factors, |v, m| {
                loss.value(v, m)?;
                Ok(v * (m + eps).ln())
            })?;
            Ok(col.sum() - logs)
        }
        LossKind::Bernoulli => {
            let lin = x.linearizer();
            let n = lin.numel();
            let chunks = n.div_ceil(DENSE_CHUNK);
            let d = x.ndims();
            let partials: Vec<Result<f64>> = (0..chunks)
                .into_par_iter()
                .map(|chunk| {
                    let mut c = vec![0; d];
                    let mut sum = 0.0;
                    for key in chunk * DENSE_CHUNK..((chunk + 1) * DENSE_CHUNK).min(n) {
                        lin.delinearize(key, &mut c);
                        let m = model_value(weights, factors, &c);
                        sum += loss.value(0.0, m)?;
                    }
                    Ok(sum)
                })
                .collect();
            let mut zeros_and_nz = 0.0;
            for p in partials {
                zeros_and_nz += p?;
            }
            // swap the f(0, m) counted at each nonzero for f(x, m)
            let correction = nonzero_sum(x, weights, factors, |v, m| Ok(loss.value(v, m)? - loss.value(0.0, m)?))?;
            Ok(zeros_and_nz + correction)
        }
    }
}

/// A loss sum divided by `‖X‖²`, or left raw when the slice is empty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalLoss {
    pub value: f64,
    pub normalized: bool,
}

fn normalize(x: &SparseTensor, sum: f64) -> LocalLoss {
    let norm = x.norm_sq();
    if norm > 0.0 {
        LocalLoss {
            value: sum / norm,
            normalized: true,
        }
    } else {
        LocalLoss {
            value: sum,
            normalized: false,
        }
    }
}

pub fn local_loss_exact(
    x: &SparseTensor,
    weights: &Array1<f64>,
    factors: &[Array2<f64>],
    loss: &LossFunction,
) -> Result<LocalLoss> {
    Ok(normalize(x, exact_loss_sum(x, weights, factors, loss)?))
}

/// Local loss from a fresh stratified sample with the objective counts of `sampler`.
pub fn local_loss_sampled<R: Rng + ?Sized>(
    x: &SparseTensor,
    weights: &Array1<f64>,
    factors: &[Array2<f64>],
    loss: &LossFunction,
    sampler: &SamplerConfig,
    rng: &mut R,
) -> Result<LocalLoss> {
    check_model(x, weights, factors)?;
    let (p, q) = sampler.objective_counts(x);
    let samples = draw_samples(x, p, q, rng, sampler.max_rejects)?;
    Ok(normalize(x, estimate_data_term(x, weights, factors, loss, &samples)?))
}

/// Average exact local loss of a stream under one set of factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalLoss {
    pub value: f64,
    /// Slices that entered the average.
    pub slices: usize,
    /// Empty slices left out because they cannot be normalized.
    pub skipped: usize,
}

/// Averages `local_loss_exact(X_t, s_t, A)` over the slices in order.
pub fn global_loss<I>(slices: I, factors: &[Array2<f64>], weights: &[Array1<f64>], loss: &LossFunction) -> Result<GlobalLoss>
where
    I: IntoIterator<Item = Result<SparseTensor>>,
{
    let mut total = 0.0;
    let mut used = 0;
    let mut skipped = 0;
    let mut seen = 0;
    for (t, x) in slices.into_iter().enumerate() {
        let x = x?;
        let s = weights
            .get(t)
            .ok_or_else(|| GcpError::Contract(format!("no temporal weights for slice {}", t + 1)))?;
        let l = local_loss_exact(&x, s, factors, loss).map_err(|e| e.at_slice(t + 1))?;
        if l.normalized {
            total += l.value;
            used += 1;
        } else {
            skipped += 1;
        }
        seen += 1;
    }
    if seen != weights.len() {
        return Err(GcpError::Contract(format!(
            "{} slices but {} temporal weight vectors",
            seen,
            weights.len()
        )));
    }
    if used == 0 {
        return Err(GcpError::Precondition("global loss needs at least one nonempty slice".into()));
    }
    Ok(GlobalLoss {
        value: total / used as f64,
        slices: used,
        skipped,
    })
}

/// Global loss of a model of the whole stream: the last mode is time, and
/// `s_t` is row `t` of its factor scaled by the model weights.
pub fn global_loss_of_model(x: &SparseTensor, model: &KTensor, loss: &LossFunction) -> Result<GlobalLoss> {
    let d = model.ndims();
    if d < 2 || model.dims() != x.dims() {
        return Err(GcpError::Shape(format!(
            "model dims {:?} do not match tensor dims {:?}",
            model.dims(),
            x.dims()
        )));
    }
    let weights: Vec<Array1<f64>> = model.factors[d - 1]
        .rows()
        .into_iter()
        .map(|row| &row * &model.weights)
        .collect();
    let slices = crate::io::stream_slices(x)?.map(Ok);
    global_loss(slices, &model.factors[..d - 1], &weights, loss)
}

/// Unit-norm columns with the norms folded into the weights.
fn normalized(m: &KTensor) -> (Array1<f64>, Vec<Array2<f64>>) {
    let mut w = m.weights.clone();
    let mut out = Vec::with_capacity(m.factors.len());
    for a in &m.factors {
        let mut a = a.clone();
        for (j, mut col) in a.axis_iter_mut(Axis(1)).enumerate() {
            let n = col.dot(&col).sqrt();
            w[j] *= n;
            if n > 0.0 {
                col /= n;
            }
        }
        out.push(a);
    }
    (w, out)
}

/// Congruence between two Kruskal tensors, in `[-1, 1]`, with 1 for a
/// perfect match up to component order and column scaling.
///
/// Components are paired greedily by the signed product of mode-wise column
/// cosines. A pair scores `(1 − ||λ₁| − |λ₂|| / max(|λ₁|, |λ₂|))` times that
/// product, with the weight signs folded into the product. The total is
/// divided by the larger rank, so unmatched components count as zero.
pub fn congruence(a: &KTensor, b: &KTensor) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(GcpError::Shape(format!(
            "cannot compare models of dims {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (wa, fa) = normalized(a);
    let (wb, fb) = normalized(b);
    let (ra, rb) = (a.rank(), b.rank());
    let mut cos = Array2::<f64>::from_elem((ra, rb), 1.0);
    for (x, y) in fa.iter().zip(&fb) {
        cos *= &x.t().dot(y);
    }
    let mut pairs = Vec::with_capacity(ra * rb);
    for i in 0..ra {
        for j in 0..rb {
            let sign = (wa[i] * wb[j]).signum();
            let sign = if wa[i] * wb[j] == 0.0 { 0.0 } else { sign };
            pairs.push((sign * cos[[i, j]], i, j));
        }
    }
    // descending by product, ties by position
    pairs.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
    let mut used_a = vec![false; ra];
    let mut used_b = vec![false; rb];
    let mut total = 0.0;
    for (c, i, j) in pairs {
        if used_a[i] || used_b[j] {
            continue;
        }
        used_a[i] = true;
        used_b[j] = true;
        let (la, lb) = (wa[i].abs(), wb[j].abs());
        let big = la.max(lb);
        if big > 0.0 {
            total += (1.0 - (la - lb).abs() / big) * c;
        }
    }
    Ok(total / ra.max(rb) as f64)
}

/// One row of the per-slice metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub t: usize,
    pub local_loss_sampled: f64,
    pub local_loss_exact: Option<f64>,
    pub epochs_w: usize,
    pub epochs_f: usize,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "t,local_loss_sampled,local_loss_exact,epochs_w,epochs_f,wall_ms";

/// CSV sink for [`SliceMetrics`]; floats use the shortest round-trip form.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(Self { out })
    }

    /// Continue an existing file without repeating the header.
    pub fn append(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, m: &SliceMetrics) -> Result<()> {
        let exact = m.local_loss_exact.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(
            self.out,
            "{},{:e},{},{},{},{}",
            m.t, m.local_loss_sampled, exact, m.epochs_w, m.epochs_f, m.wall_ms
        )?;
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
