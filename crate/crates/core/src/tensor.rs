//! Sparse coordinate tensors and Kruskal (CP) tensors.
//!
//! Coordinates are 0-based throughout the library. The `.tns` reader and
//! writer translate to and from the 1-based file convention.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{GcpError, Result};

/// Read access to a list of coordinate/value pairs over a fixed index box.
pub trait CooEntries {
    fn dims(&self) -> &[usize];
    fn len(&self) -> usize;
    fn coord(&self, e: usize) -> &[usize];
    fn value(&self, e: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn ndims(&self) -> usize {
        self.dims().len()
    }
}

/// Mixed-radix linearization of coordinates within `dims`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linearizer {
    dims: Vec<usize>,
    strides: Vec<u64>,
    numel: u64,
}

impl Linearizer {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(GcpError::InvalidTensor("tensor needs at least one mode".into()));
        }
        if let Some(k) = dims.iter().position(|&n| n == 0) {
            return Err(GcpError::InvalidTensor(format!("mode {k} has size 0")));
        }
        let mut strides = vec![0u64; dims.len()];
        let mut acc: u64 = 1;
        for (k, &n) in dims.iter().enumerate() {
            strides[k] = acc;
            acc = acc
                .checked_mul(n as u64)
                .filter(|&v| v <= i64::MAX as u64)
                .ok_or_else(|| {
                    GcpError::InvalidTensor(format!(
                        "index box {dims:?} exceeds 2^63-1 elements"
                    ))
                })?;
        }
        Ok(Self {
            dims: dims.to_vec(),
            strides,
            numel: acc,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn numel(&self) -> u64 {
        self.numel
    }

    pub fn check(&self, coord: &[usize]) -> Result<()> {
        if coord.len() != self.dims.len() {
            return Err(GcpError::Index(format!(
                "coordinate has {} modes, tensor has {}",
                coord.len(),
                self.dims.len()
            )));
        }
        for (k, (&i, &n)) in coord.iter().zip(&self.dims).enumerate() {
            if i >= n {
                return Err(GcpError::Index(format!(
                    "coordinate {i} out of range for mode {k} of size {n}"
                )));
            }
        }
        Ok(())
    }

    pub fn linearize(&self, coord: &[usize]) -> Result<u64> {
        self.check(coord)?;
        Ok(self.linearize_unchecked(coord))
    }

    #[inline]
    pub fn linearize_unchecked(&self, coord: &[usize]) -> u64 {
        coord
            .iter()
            .zip(&self.strides)
            .map(|(&i, &s)| i as u64 * s)
            .sum()
    }

    pub fn delinearize(&self, mut key: u64, out: &mut [usize]) {
        for (o, &n) in out.iter_mut().zip(&self.dims) {
            *o = (key % n as u64) as usize;
            key /= n as u64;
        }
    }
}

/// A d-way sparse tensor in coordinate format with a hash membership index.
///
/// Stored values are finite and nonzero; every coordinate not stored is an
/// implicit zero.
#[derive(Clone, Debug)]
pub struct SparseTensor {
    lin: Linearizer,
    coords: Vec<usize>,
    values: Vec<f64>,
    index: HashMap<u64, usize>,
}

impl SparseTensor {
    /// Tensor with no stored entries.
    pub fn empty(dims: &[usize]) -> Result<Self> {
        Ok(Self {
            lin: Linearizer::new(dims)?,
            coords: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        })
    }

    /// Build from a flat coordinate buffer (`values.len() * dims.len()` entries).
    pub fn from_flat(dims: &[usize], coords: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let lin = Linearizer::new(dims)?;
        let d = dims.len();
        if coords.len() != values.len() * d {
            return Err(GcpError::Shape(format!(
                "{} coordinates given for {} values of a {d}-way tensor",
                coords.len(),
                values.len()
            )));
        }
        let mut index = HashMap::with_capacity(values.len());
        for (e, (c, &v)) in coords.chunks_exact(d).zip(&values).enumerate() {
            let key = lin.linearize(c)?;
            if !v.is_finite() {
                return Err(GcpError::InvalidTensor(format!("non-finite value {v} at {c:?}")));
            }
            if v == 0.0 {
                return Err(GcpError::InvalidTensor(format!("explicit zero stored at {c:?}")));
            }
            if index.insert(key, e).is_some() {
                return Err(GcpError::InvalidTensor(format!("duplicate coordinate {c:?}")));
            }
        }
        Ok(Self {
            lin,
            coords,
            values,
            index,
        })
    }

    pub fn from_entries<C: AsRef<[usize]>>(dims: &[usize], entries: &[(C, f64)]) -> Result<Self> {
        let mut coords = Vec::with_capacity(entries.len() * dims.len());
        let mut values = Vec::with_capacity(entries.len());
        for (c, v) in entries {
            coords.extend_from_slice(c.as_ref());
            values.push(*v);
        }
        Self::from_flat(dims, coords, values)
    }

    pub fn dims(&self) -> &[usize] {
        self.lin.dims()
    }

    pub fn ndims(&self) -> usize {
        self.lin.dims().len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Total number of cells in the index box.
    pub fn numel(&self) -> u64 {
        self.lin.numel()
    }

    /// Number of implicit zeros.
    pub fn num_zeros(&self) -> u64 {
        self.numel() - self.nnz() as u64
    }

    pub fn linearizer(&self) -> &Linearizer {
        &self.lin
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        self.coords
            .chunks_exact(self.lin.dims().len())
            .zip(self.values.iter().copied())
    }

    /// Entry ordinal stored at `coord`, if any.
    pub fn lookup(&self, coord: &[usize]) -> Result<Option<usize>> {
        let key = self.lin.linearize(coord)?;
        Ok(self.index.get(&key).copied())
    }

    /// Membership test for an in-bounds coordinate.
    #[inline]
    pub fn contains_unchecked(&self, coord: &[usize]) -> bool {
        self.index.contains_key(&self.lin.linearize_unchecked(coord))
    }

    /// Value at `coord`, zero when not stored.
    pub fn get(&self, coord: &[usize]) -> Result<f64> {
        Ok(self.lookup(coord)?.map_or(0.0, |e| self.values[e]))
    }

    /// Sum of squared stored values.
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// The hyperslice at position `t` of the last mode, with that mode dropped.
    pub fn slice(&self, t: usize) -> Result<SparseTensor> {
        let d = self.ndims();
        if d < 2 {
            return Err(GcpError::Shape("slicing needs at least two modes".into()));
        }
        let last = self.lin.dims()[d - 1];
        if t >= last {
            return Err(GcpError::Index(format!(
                "slice {t} out of range for last mode of size {last}"
            )));
        }
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for (c, v) in self.iter() {
            if c[d - 1] == t {
                coords.extend_from_slice(&c[..d - 1]);
                values.push(v);
            }
        }
        SparseTensor::from_flat(&self.lin.dims()[..d - 1], coords, values)
    }

    /// Sub-tensor made of the first `count` slices along the last mode.
    pub fn leading_slices(&self, count: usize) -> Result<SparseTensor> {
        let d = self.ndims();
        let last = self.lin.dims()[d - 1];
        if count == 0 || count > last {
            return Err(GcpError::Index(format!(
                "cannot take {count} leading slices of a last mode of size {last}"
            )));
        }
        let mut dims = self.lin.dims().to_vec();
        dims[d - 1] = count;
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for (c, v) in self.iter() {
            if c[d - 1] < count {
                coords.extend_from_slice(c);
                values.push(v);
            }
        }
        SparseTensor::from_flat(&dims, coords, values)
    }

    /// Stack equally shaped slices along a new trailing mode.
    pub fn stack(slices: &[SparseTensor]) -> Result<SparseTensor> {
        let first = slices
            .first()
            .ok_or_else(|| GcpError::Shape("cannot stack zero slices".into()))?;
        let mut dims = first.dims().to_vec();
        dims.push(slices.len());
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for (t, s) in slices.iter().enumerate() {
            if s.dims() != first.dims() {
                return Err(GcpError::Shape(format!(
                    "slice {t} has dims {:?}, expected {:?}",
                    s.dims(),
                    first.dims()
                )));
            }
            for (c, v) in s.iter() {
                coords.extend_from_slice(c);
                coords.push(t);
                values.push(v);
            }
        }
        SparseTensor::from_flat(&dims, coords, values)
    }

    /// Replace every stored value by 1.
    pub fn binarized(&self) -> SparseTensor {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = 1.0);
        out
    }
}

impl CooEntries for SparseTensor {
    fn dims(&self) -> &[usize] {
        self.lin.dims()
    }

    fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    fn coord(&self, e: usize) -> &[usize] {
        let d = self.lin.dims().len();
        &self.coords[e * d..(e + 1) * d]
    }

    #[inline]
    fn value(&self, e: usize) -> f64 {
        self.values[e]
    }
}

/// Sparse accumulation buffer for sampled gradient tensors.
///
/// Unlike [`SparseTensor`] it may store exact zeros, and repeated
/// coordinates are merged by summation in first-seen order.
#[derive(Clone, Debug)]
pub struct GradientTensor {
    lin: Linearizer,
    coords: Vec<usize>,
    values: Vec<f64>,
    index: HashMap<u64, usize>,
}

impl GradientTensor {
    pub fn new(dims: &[usize]) -> Result<Self> {
        Ok(Self {
            lin: Linearizer::new(dims)?,
            coords: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn with_capacity(dims: &[usize], cap: usize) -> Result<Self> {
        let mut g = Self::new(dims)?;
        g.coords.reserve(cap * dims.len());
        g.values.reserve(cap);
        g.index.reserve(cap);
        Ok(g)
    }

    /// Add `v` at an in-bounds coordinate.
    pub fn accumulate(&mut self, coord: &[usize], v: f64) {
        let key = self.lin.linearize_unchecked(coord);
        match self.index.get(&key) {
            Some(&e) => self.values[e] += v,
            None => {
                self.index.insert(key, self.values.len());
                self.coords.extend_from_slice(coord);
                self.values.push(v);
            }
        }
    }

    pub fn get(&self, coord: &[usize]) -> Result<f64> {
        let key = self.lin.linearize(coord)?;
        Ok(self.index.get(&key).map_or(0.0, |&e| self.values[e]))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

impl CooEntries for GradientTensor {
    fn dims(&self) -> &[usize] {
        self.lin.dims()
    }

    fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    fn coord(&self, e: usize) -> &[usize] {
        let d = self.lin.dims().len();
        &self.coords[e * d..(e + 1) * d]
    }

    #[inline]
    fn value(&self, e: usize) -> f64 {
        self.values[e]
    }
}

/// Model value `sum_j s_j prod_k A(k)[i_k, j]` at an in-bounds coordinate.
#[inline]
pub fn model_value(weights: &Array1<f64>, factors: &[Array2<f64>], coord: &[usize]) -> f64 {
    let mut m = 0.0;
    for (j, &s) in weights.iter().enumerate() {
        let mut prod = s;
        for (a, &i) in factors.iter().zip(coord) {
            prod *= a[[i, j]];
        }
        m += prod;
    }
    m
}

/// Weight vector plus one factor matrix per mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KTensor {
    pub weights: Array1<f64>,
    pub factors: Vec<Array2<f64>>,
}

impl KTensor {
    pub fn new(weights: Array1<f64>, factors: Vec<Array2<f64>>) -> Result<Self> {
        check_factors(&factors, weights.len())?;
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(GcpError::InvalidTensor("non-finite K-tensor weight".into()));
        }
        Ok(Self { weights, factors })
    }

    /// Unit weights over the given factors.
    pub fn from_factors(factors: Vec<Array2<f64>>) -> Result<Self> {
        let r = factors.first().map_or(0, |a| a.ncols());
        Self::new(Array1::ones(r), factors)
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn ndims(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|a| a.nrows()).collect()
    }

    pub fn entry(&self, coord: &[usize]) -> Result<f64> {
        Linearizer::new(&self.dims())?.check(coord)?;
        Ok(model_value(&self.weights, &self.factors, coord))
    }

    /// Every cell of the model in mixed-radix order (mode 0 fastest).
    pub fn full(&self) -> Result<Vec<f64>> {
        let lin = Linearizer::new(&self.dims())?;
        let mut coord = vec![0; self.ndims()];
        Ok((0..lin.numel())
            .map(|key| {
                lin.delinearize(key, &mut coord);
                model_value(&self.weights, &self.factors, &coord)
            })
            .collect())
    }

    /// Check every entry is at least `bound`.
    pub fn respects_lower_bound(&self, bound: f64) -> bool {
        self.weights.iter().all(|&v| v >= bound)
            && self.factors.iter().all(|a| a.iter().all(|&v| v >= bound))
    }
}

pub(crate) fn check_factors(factors: &[Array2<f64>], rank: usize) -> Result<()> {
    if factors.is_empty() {
        return Err(GcpError::Shape("K-tensor needs at least one factor".into()));
    }
    for (k, a) in factors.iter().enumerate() {
        if a.ncols() != rank {
            return Err(GcpError::Shape(format!(
                "factor {k} has {} columns, expected rank {rank}",
                a.ncols()
            )));
        }
        if a.nrows() == 0 {
            return Err(GcpError::Shape(format!("factor {k} has no rows")));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(GcpError::InvalidTensor(format!("non-finite entry in factor {k}")));
        }
    }
    Ok(())
}
