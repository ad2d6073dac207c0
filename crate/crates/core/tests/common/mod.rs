//! Dense brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use ogcp_core::SparseTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Every coordinate of the box, last mode slowest.
pub fn all_coords(dims: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &n in dims {
        let mut next = Vec::with_capacity(out.len() * n);
        for i in 0..n {
            for c in &out {
                let mut c = c.clone();
                c.push(i);
                next.push(c);
            }
        }
        out = next;
    }
    out
}

pub fn rand_factors(dims: &[usize], rank: usize, lo: f64, hi: f64, r: &mut impl Rng) -> Vec<Array2<f64>> {
    dims.iter()
        .map(|&n| Array2::from_shape_fn((n, rank), |_| r.gen_range(lo..hi)))
        .collect()
}

pub fn rand_weights(rank: usize, lo: f64, hi: f64, r: &mut impl Rng) -> Array1<f64> {
    Array1::from_shape_fn(rank, |_| r.gen_range(lo..hi))
}

pub fn gaussian_tensor(dims: &[usize], density: f64, seed: u64) -> SparseTensor {
    let mut r = rng(seed);
    let mut entries = Vec::new();
    for c in all_coords(dims) {
        if r.gen::<f64>() < density {
            entries.push((c, r.gen_range(-2.0..2.0)));
        }
    }
    SparseTensor::from_entries(dims, &entries).unwrap()
}

pub fn count_tensor(dims: &[usize], density: f64, seed: u64) -> SparseTensor {
    let mut r = rng(seed);
    let mut entries = Vec::new();
    for c in all_coords(dims) {
        if r.gen::<f64>() < density {
            entries.push((c, r.gen_range(1..5) as f64));
        }
    }
    SparseTensor::from_entries(dims, &entries).unwrap()
}

pub fn binary_tensor(dims: &[usize], density: f64, seed: u64) -> SparseTensor {
    let mut r = rng(seed);
    let mut entries = Vec::new();
    for c in all_coords(dims) {
        if r.gen::<f64>() < density {
            entries.push((c, 1.0));
        }
    }
    SparseTensor::from_entries(dims, &entries).unwrap()
}

pub fn entry(weights: &Array1<f64>, factors: &[Array2<f64>], c: &[usize]) -> f64 {
    (0..weights.len())
        .map(|j| weights[j] * c.iter().enumerate().map(|(k, &i)| factors[k][[i, j]]).product::<f64>())
        .sum()
}

pub fn data_at(x: &SparseTensor, c: &[usize]) -> f64 {
    x.get(c).unwrap()
}

/// Explicit Khatri-Rao product of every factor but `skip`, rows ordered with
/// the lowest remaining mode fastest.
pub fn khatri_rao(factors: &[Array2<f64>], skip: Option<usize>) -> Array2<f64> {
    let r = factors[0].ncols();
    let modes: Vec<usize> = (0..factors.len()).filter(|&m| Some(m) != skip).collect();
    let sub: Vec<usize> = modes.iter().map(|&m| factors[m].nrows()).collect();
    let rows = all_coords(&sub);
    let mut z = Array2::zeros((rows.len(), r));
    for (row, c) in rows.iter().enumerate() {
        for j in 0..r {
            z[[row, j]] = modes.iter().zip(c).map(|(&m, &i)| factors[m][[i, j]]).product();
        }
    }
    z
}

/// Mode-`k` unfolding of a sparse tensor with columns matching [`khatri_rao`].
pub fn unfold(x: &SparseTensor, k: usize) -> Array2<f64> {
    let dims = x.dims().to_vec();
    let sub: Vec<usize> = (0..dims.len()).filter(|&m| m != k).map(|m| dims[m]).collect();
    let cols = all_coords(&sub);
    let mut out = Array2::zeros((dims[k], cols.len()));
    for (col, rest) in cols.iter().enumerate() {
        for i in 0..dims[k] {
            let mut c = rest.clone();
            c.insert(k, i);
            out[[i, col]] = data_at(x, &c);
        }
    }
    out
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

pub fn flat(ms: &[Array2<f64>]) -> Vec<f64> {
    ms.iter().flat_map(|a| a.iter().copied()).collect()
}
