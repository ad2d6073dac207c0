//! Multilinear kernels: sparse MTTKRP, Hadamard-of-Grams identities,
//! K-tensor inner products and the Frobenius history penalty.
//!
//! Khatri-Rao products are never formed. Every `Z_Bᵀ Z_A` quantity is the
//! elementwise product of the per-mode `B(m)ᵀ A(m)` matrices.

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{GcpError, Result};
use crate::tensor::{CooEntries, KTensor, SparseTensor};

fn check_coo_against<Y: CooEntries + ?Sized>(y: &Y, factors: &[Array2<f64>]) -> Result<usize> {
    if y.ndims() != factors.len() {
        return Err(GcpError::Shape(format!(
            "tensor has {} modes but {} factors were given",
            y.ndims(),
            factors.len()
        )));
    }
    let rank = factors.first().map_or(0, |a| a.ncols());
    for (k, (a, &n)) in factors.iter().zip(y.dims()).enumerate() {
        if a.nrows() != n || a.ncols() != rank {
            return Err(GcpError::Shape(format!(
                "factor {k} is {}x{}, expected {n}x{rank}",
                a.nrows(),
                a.ncols()
            )));
        }
    }
    Ok(rank)
}

fn check_pair(a: &[Array2<f64>], b: &[Array2<f64>]) -> Result<()> {
    if a.len() != b.len() {
        return Err(GcpError::Shape(format!(
            "factor lists have {} and {} modes",
            a.len(),
            b.len()
        )));
    }
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        if x.dim() != y.dim() {
            return Err(GcpError::Shape(format!(
                "mode {k} factors have shapes {:?} and {:?}",
                x.dim(),
                y.dim()
            )));
        }
    }
    Ok(())
}

/// Same modes and row counts; ranks may differ between the two lists but
/// not within one.
fn check_rows(a: &[Array2<f64>], b: &[Array2<f64>]) -> Result<()> {
    if a.len() != b.len() {
        return Err(GcpError::Shape(format!(
            "factor lists have {} and {} modes",
            a.len(),
            b.len()
        )));
    }
    for list in [a, b] {
        let r = list.first().map_or(0, |m| m.ncols());
        if list.iter().any(|m| m.ncols() != r) {
            return Err(GcpError::Shape("factor matrices disagree on rank".into()));
        }
    }
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        if x.nrows() != y.nrows() {
            return Err(GcpError::Shape(format!(
                "mode {k} factors have {} and {} rows",
                x.nrows(),
                y.nrows()
            )));
        }
    }
    Ok(())
}

/// `Y_(k) Z_k`: for each stored entry, add `y * prod_{m != k} A(m)[i_m, :]`
/// into row `i_k`.
pub fn sampled_mttkrp<Y: CooEntries + ?Sized>(
    y: &Y,
    factors: &[Array2<f64>],
    k: usize,
) -> Result<Array2<f64>> {
    let rank = check_coo_against(y, factors)?;
    if k >= factors.len() {
        return Err(GcpError::Shape(format!("mode {k} out of range")));
    }
    let mut out = Array2::zeros((factors[k].nrows(), rank));
    let mut row = vec![0.0; rank];
    for e in 0..y.len() {
        let c = y.coord(e);
        row.fill(y.value(e));
        for (m, a) in factors.iter().enumerate() {
            if m == k {
                continue;
            }
            let ar = a.row(c[m]);
            for (r, &v) in row.iter_mut().zip(ar.iter()) {
                *r *= v;
            }
        }
        let mut orow = out.row_mut(c[k]);
        for (o, &r) in orow.iter_mut().zip(&row) {
            *o += r;
        }
    }
    Ok(out)
}

/// `Zᵀ vec(Y)`: the MTTKRP against a virtual trailing mode of size one.
pub fn weights_mttkrp<Y: CooEntries + ?Sized>(y: &Y, factors: &[Array2<f64>]) -> Result<Array1<f64>> {
    let rank = check_coo_against(y, factors)?;
    let mut out = Array1::zeros(rank);
    let mut row = vec![0.0; rank];
    for e in 0..y.len() {
        let c = y.coord(e);
        row.fill(y.value(e));
        for (a, &i) in factors.iter().zip(c) {
            for (r, &v) in row.iter_mut().zip(a.row(i).iter()) {
                *r *= v;
            }
        }
        for (o, &r) in out.iter_mut().zip(&row) {
            *o += r;
        }
    }
    Ok(out)
}

/// `⊛_{m != skip} B(m)ᵀ A(m)`, with `B = other` when given, else `A`.
fn hadamard_gram(
    factors: &[Array2<f64>],
    other: Option<&[Array2<f64>]>,
    skip: Option<usize>,
) -> Result<Array2<f64>> {
    let b = other.unwrap_or(factors);
    check_rows(factors, b)?;
    let rank = factors.first().map_or(0, |a| a.ncols());
    let rank_b = b.first().map_or(0, |a| a.ncols());
    let mut g = Array2::from_elem((rank_b, rank), 1.0);
    for (m, (a, bm)) in factors.iter().zip(b).enumerate() {
        if Some(m) == skip {
            continue;
        }
        g *= &bm.t().dot(a);
    }
    Ok(g)
}

/// `Z_B,kᵀ Z_A,k = ⊛_{m != k} B(m)ᵀ A(m)`.
pub fn gram(factors: &[Array2<f64>], k: usize, other: Option<&[Array2<f64>]>) -> Result<Array2<f64>> {
    if k >= factors.len() {
        return Err(GcpError::Shape(format!("mode {k} out of range")));
    }
    hadamard_gram(factors, other, Some(k))
}

/// `Zᵀ Z` across all modes (`B = other` when given).
pub fn full_gram(factors: &[Array2<f64>], other: Option<&[Array2<f64>]>) -> Result<Array2<f64>> {
    hadamard_gram(factors, other, None)
}

/// Frobenius inner product of two K-tensors, `s1ᵀ (⊛_k A1(k)ᵀ A2(k)) s2`.
pub fn ktensor_inner(m1: &KTensor, m2: &KTensor) -> Result<f64> {
    let g = full_gram(&m2.factors, Some(&m1.factors))?;
    if m1.weights.len() != g.nrows() || m2.weights.len() != g.ncols() {
        return Err(GcpError::Shape("weight length differs from rank".into()));
    }
    Ok(m1.weights.dot(&g.dot(&m2.weights)))
}

/// `‖M_old − M‖_F²`, clamped below at zero.
pub fn history_penalty(old: &KTensor, cur: &KTensor) -> Result<f64> {
    let v = ktensor_inner(old, old)? - 2.0 * ktensor_inner(old, cur)? + ktensor_inner(cur, cur)?;
    Ok(v.max(0.0))
}

/// Exact Gaussian GCP gradient for mode `k` from the data alone:
/// `2 (A(k) diag(s) G_k diag(s) − X_(k) Z_k diag(s))`.
pub fn dense_gaussian_mttkrp_gradient(
    x: &SparseTensor,
    factors: &[Array2<f64>],
    weights: &Array1<f64>,
    k: usize,
) -> Result<Array2<f64>> {
    let xz = sampled_mttkrp(x, factors, k)?;
    if weights.len() != xz.ncols() {
        return Err(GcpError::Shape("weight length differs from rank".into()));
    }
    let g = gram(factors, k, None)?;
    let ss = outer(weights, weights);
    let model_term = factors[k].dot(&(g * ss));
    let data_term = xz * weights;
    Ok((model_term - data_term) * 2.0)
}

/// Exact Gaussian temporal-weight gradient `2 ((⊛_k G_k) s − Zᵀ x)`.
pub fn dense_gaussian_weights_gradient(
    x: &SparseTensor,
    factors: &[Array2<f64>],
    weights: &Array1<f64>,
) -> Result<Array1<f64>> {
    let b = weights_mttkrp(x, factors)?;
    let g = full_gram(factors, None)?;
    Ok((g.dot(weights) - b) * 2.0)
}

pub(crate) fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    Zip::indexed(&mut out).for_each(|(i, j), o| *o = a[i] * b[j]);
    out
}

/// Per-mode `A(k)ᵀA(k)` and `A_old(k)ᵀA(k)` with validity tracking.
#[derive(Clone, Debug)]
pub struct GramCache {
    grams: Vec<Array2<f64>>,
    cross: Vec<Array2<f64>>,
    valid: Vec<bool>,
}

impl GramCache {
    pub fn new(factors: &[Array2<f64>], old: &[Array2<f64>]) -> Result<Self> {
        check_pair(factors, old)?;
        let d = factors.len();
        let rank = factors[0].ncols();
        let mut cache = Self {
            grams: vec![Array2::zeros((rank, rank)); d],
            cross: vec![Array2::zeros((rank, rank)); d],
            valid: vec![false; d],
        };
        cache.refresh(factors, old);
        Ok(cache)
    }

    pub fn invalidate_all(&mut self) {
        self.valid.iter_mut().for_each(|v| *v = false);
    }

    pub fn invalidate(&mut self, k: usize) {
        self.valid[k] = false;
    }

    /// Recompute any mode flagged invalid.
    pub fn refresh(&mut self, factors: &[Array2<f64>], old: &[Array2<f64>]) {
        for k in 0..factors.len() {
            if !self.valid[k] {
                self.grams[k] = factors[k].t().dot(&factors[k]);
                self.cross[k] = old[k].t().dot(&factors[k]);
                self.valid[k] = true;
            }
        }
    }

    fn product(mats: &[Array2<f64>], skip: Option<usize>) -> Array2<f64> {
        let r = mats[0].nrows();
        let mut g = Array2::from_elem((r, r), 1.0);
        for (m, x) in mats.iter().enumerate() {
            if Some(m) != skip {
                g *= x;
            }
        }
        g
    }

    /// `Z_kᵀ Z_k`.
    pub fn gram(&self, k: usize) -> Array2<f64> {
        Self::product(&self.grams, Some(k))
    }

    /// `Z_old,kᵀ Z_k`.
    pub fn cross_gram(&self, k: usize) -> Array2<f64> {
        Self::product(&self.cross, Some(k))
    }

    pub fn full(&self) -> Array2<f64> {
        Self::product(&self.grams, None)
    }

    pub fn full_cross(&self) -> Array2<f64> {
        Self::product(&self.cross, None)
    }
}

/// One retained past step: its id and frozen temporal weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub weights: Array1<f64>,
}

/// The history anchor `(w/2) Σ_h θ^{t−h} ‖⟦s_h; A_old⟧ − ⟦s_h; A⟧‖²`.
#[derive(Clone, Copy, Debug)]
pub struct HistoryTerms<'a> {
    pub old_factors: &'a [Array2<f64>],
    pub entries: &'a [HistoryEntry],
    pub weight: f64,
    pub decay: f64,
    pub t: usize,
}

impl<'a> HistoryTerms<'a> {
    pub fn is_active(&self) -> bool {
        self.weight != 0.0 && !self.entries.is_empty()
    }

    pub fn coefficient(&self, step: usize) -> f64 {
        self.weight * self.decay.powi(self.t.saturating_sub(step) as i32)
    }

    /// `S = Σ_h c_h s_h s_hᵀ`, so that `Σ_h c_h diag(s_h) G diag(s_h) = G ⊛ S`.
    pub fn weighted_outer(&self, rank: usize) -> Array2<f64> {
        let mut s = Array2::zeros((rank, rank));
        for h in self.entries {
            s.scaled_add(self.coefficient(h.step), &outer(&h.weights, &h.weights));
        }
        s
    }

    /// The full penalty including the leading 1/2, each term clamped at 0.
    pub fn penalty(&self, factors: &[Array2<f64>]) -> Result<f64> {
        if !self.is_active() {
            return Ok(0.0);
        }
        let g_new = full_gram(factors, None)?;
        let g_old = full_gram(self.old_factors, None)?;
        let g_cross = full_gram(factors, Some(self.old_factors))?;
        let mut total = 0.0;
        for h in self.entries {
            let s = &h.weights;
            if s.len() != g_new.nrows() {
                return Err(GcpError::Shape(format!(
                    "history step {} has {} weights, rank is {}",
                    h.step,
                    s.len(),
                    g_new.nrows()
                )));
            }
            let diff = s.dot(&g_old.dot(s)) - 2.0 * s.dot(&g_cross.dot(s)) + s.dot(&g_new.dot(s));
            total += self.coefficient(h.step) * diff.max(0.0);
        }
        Ok(0.5 * total)
    }

    /// History contribution to `∂F/∂A(k)` for every mode:
    /// `A(k) (G_k ⊛ S) − A_old(k) (Ĝ_k ⊛ S)`.
    pub fn gradient(&self, factors: &[Array2<f64>], cache: &GramCache, outer_s: &Array2<f64>) -> Vec<Array2<f64>> {
        factors
            .iter()
            .zip(self.old_factors)
            .enumerate()
            .map(|(k, (a, a_old))| {
                let b = cache.gram(k) * outer_s;
                let c = cache.cross_gram(k) * outer_s;
                a.dot(&b) - a_old.dot(&c)
            })
            .collect()
    }
}
