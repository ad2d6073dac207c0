mod common;

use common::*;
use ndarray::{Array1, Array2};
use ogcp_core::kernels::{
    dense_gaussian_mttkrp_gradient, dense_gaussian_weights_gradient, weights_mttkrp, HistoryEntry, HistoryTerms,
};
use ogcp_core::loss::{LossFunction, LossKind};
use ogcp_core::sampling::dense_gradient_tensor;
use ogcp_core::solvers::{assemble_factor_gradient, GradientSource, PreparedHistory};
use ogcp_core::SparseTensor;
use proptest::prelude::*;

const KINDS: [LossKind; 3] = [LossKind::Gaussian, LossKind::Poisson, LossKind::Bernoulli];

struct Problem {
    x: SparseTensor,
    loss: LossFunction,
    s: Array1<f64>,
    old: Vec<Array2<f64>>,
    window: Vec<HistoryEntry>,
    w: f64,
    theta: f64,
    t: usize,
    lambda: f64,
    mu: f64,
}

impl Problem {
    fn new(kind: LossKind, dims: &[usize], rank: usize, seed: u64) -> Self {
        let x = match kind {
            LossKind::Gaussian => gaussian_tensor(dims, 0.5, seed),
            LossKind::Poisson => count_tensor(dims, 0.4, seed),
            LossKind::Bernoulli => binary_tensor(dims, 0.4, seed),
        };
        let mut r = rng(seed + 100);
        let old = rand_factors(dims, rank, 0.3, 1.0, &mut r);
        let window = [1usize, 3, 4]
            .iter()
            .map(|&step| HistoryEntry {
                step,
                weights: rand_weights(rank, 0.2, 1.2, &mut r),
            })
            .collect();
        Self {
            x,
            loss: LossFunction::with_default_eps(kind),
            s: rand_weights(rank, 0.5, 1.5, &mut r),
            old,
            window,
            w: 2.5,
            theta: 0.8,
            t: 6,
            lambda: 0.3,
            mu: 0.2,
        }
    }

    fn terms(&self) -> HistoryTerms<'_> {
        HistoryTerms {
            old_factors: &self.old,
            entries: &self.window,
            weight: self.w,
            decay: self.theta,
            t: self.t,
        }
    }

    /// The streaming objective by brute force over every cell.
    fn objective(&self, s: &Array1<f64>, a: &[Array2<f64>]) -> f64 {
        let mut f = 0.0;
        for c in all_coords(self.x.dims()) {
            f += self.loss.value(data_at(&self.x, &c), entry(s, a, &c)).unwrap();
            for h in &self.window {
                let coef = self.w * self.theta.powi((self.t - h.step) as i32);
                f += 0.5 * coef * (entry(&h.weights, &self.old, &c) - entry(&h.weights, a, &c)).powi(2);
            }
        }
        f += 0.5 * self.lambda * a.iter().map(|m| m.iter().map(|v| v * v).sum::<f64>()).sum::<f64>();
        f + 0.5 * self.mu * s.dot(s)
    }

    fn factor_gradient(&self, a: &[Array2<f64>]) -> Vec<Array2<f64>> {
        let y = dense_gradient_tensor(&self.x, &self.s, a, &self.loss).unwrap();
        let hist = PreparedHistory::new(self.terms(), self.s.len());
        assemble_factor_gradient(GradientSource::Tensor(&y), a, &self.s, self.lambda, Some(&hist))
            .unwrap()
            .grads
    }

    fn weights_gradient(&self, a: &[Array2<f64>]) -> Array1<f64> {
        let y = dense_gradient_tensor(&self.x, &self.s, a, &self.loss).unwrap();
        weights_mttkrp(&y, a).unwrap() + &self.s * self.mu
    }
}

fn fd_factors(p: &Problem, a: &[Array2<f64>]) -> Vec<Array2<f64>> {
    let mut out = Vec::new();
    for k in 0..a.len() {
        let mut g = Array2::zeros(a[k].raw_dim());
        for idx in 0..a[k].len() {
            let (i, j) = (idx / a[k].ncols(), idx % a[k].ncols());
            let h = 1e-5 * a[k][[i, j]].abs().max(1.0);
            let mut plus = a.to_vec();
            plus[k][[i, j]] += h;
            let mut minus = a.to_vec();
            minus[k][[i, j]] -= h;
            g[[i, j]] = (p.objective(&p.s, &plus) - p.objective(&p.s, &minus)) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

fn fd_weights(p: &Problem, a: &[Array2<f64>]) -> Array1<f64> {
    Array1::from_shape_fn(p.s.len(), |j| {
        let h = 1e-5 * p.s[j].abs().max(1.0);
        let mut plus = p.s.clone();
        plus[j] += h;
        let mut minus = p.s.clone();
        minus[j] -= h;
        (p.objective(&plus, a) - p.objective(&minus, a)) / (2.0 * h)
    })
}

#[test]
fn factor_gradient_matches_finite_differences() {
    for kind in KINDS {
        for (dims, rank) in [(vec![3, 3, 3], 2), (vec![4, 2, 3], 3), (vec![2, 4, 3, 2], 2)] {
            let p = Problem::new(kind, &dims, rank, 7);
            let a = rand_factors(&dims, rank, 0.3, 1.0, &mut rng(8));
            let got = p.factor_gradient(&a);
            let fd = fd_factors(&p, &a);
            let err = rel_err(&flat(&got), &flat(&fd));
            assert!(err <= 1e-4, "{kind} {dims:?}: relative error {err:e}");
        }
    }
}

#[test]
fn weights_gradient_matches_finite_differences() {
    for kind in KINDS {
        let mut p = Problem::new(kind, &[3, 4, 2], 3, 9);
        p.window.clear();
        let a = rand_factors(&[3, 4, 2], 3, 0.3, 1.0, &mut rng(10));
        let err = rel_err(p.weights_gradient(&a).as_slice().unwrap(), fd_weights(&p, &a).as_slice().unwrap());
        assert!(err <= 1e-4, "{kind}: relative error {err:e}");
    }
}

#[test]
fn dense_gaussian_gradients_match_finite_differences() {
    let mut p = Problem::new(LossKind::Gaussian, &[3, 3, 3], 2, 11);
    p.window.clear();
    p.lambda = 0.0;
    p.mu = 0.0;
    let a = rand_factors(&[3, 3, 3], 2, -1.0, 1.0, &mut rng(12));
    let fd = fd_factors(&p, &a);
    let got: Vec<Array2<f64>> = (0..3)
        .map(|k| dense_gaussian_mttkrp_gradient(&p.x, &a, &p.s, k).unwrap())
        .collect();
    assert!(rel_err(&flat(&got), &flat(&fd)) <= 1e-6);
    let gw = dense_gaussian_weights_gradient(&p.x, &a, &p.s).unwrap();
    assert!(rel_err(gw.as_slice().unwrap(), fd_weights(&p, &a).as_slice().unwrap()) <= 1e-6);
}

#[test]
fn dense_source_equals_dense_gradient_tensor_for_gaussian() {
    let p = Problem::new(LossKind::Gaussian, &[4, 3, 2], 3, 13);
    let a = rand_factors(&[4, 3, 2], 3, -1.0, 1.0, &mut rng(14));
    let hist = PreparedHistory::new(p.terms(), 3);
    let dense = assemble_factor_gradient(GradientSource::DenseGaussian(&p.x), &a, &p.s, p.lambda, Some(&hist)).unwrap();
    let tensor = p.factor_gradient(&a);
    assert_eq!(dense.history_terms, 3);
    assert!(rel_err(&flat(&dense.grads), &flat(&tensor)) <= 1e-12);
}

#[test]
fn inactive_history_adds_nothing() {
    let mut p = Problem::new(LossKind::Gaussian, &[3, 3, 2], 2, 15);
    p.w = 0.0;
    let a = rand_factors(&[3, 3, 2], 2, -1.0, 1.0, &mut rng(16));
    let hist = PreparedHistory::new(p.terms(), 2);
    let with = assemble_factor_gradient(GradientSource::DenseGaussian(&p.x), &a, &p.s, 0.0, Some(&hist)).unwrap();
    let without = assemble_factor_gradient(GradientSource::DenseGaussian(&p.x), &a, &p.s, 0.0, None).unwrap();
    assert_eq!(with.history_terms, 0);
    assert_eq!(with.grads, without.grads);
}

fn valid_x(kind: LossKind) -> BoxedStrategy<f64> {
    match kind {
        LossKind::Gaussian => (-5.0f64..5.0).boxed(),
        LossKind::Poisson => (0u32..20).prop_map(f64::from).boxed(),
        LossKind::Bernoulli => prop_oneof![Just(0.0), Just(1.0)].boxed(),
    }
}

fn valid_m(kind: LossKind) -> BoxedStrategy<f64> {
    match kind {
        LossKind::Gaussian => (-5.0f64..5.0).boxed(),
        _ => (1e-3f64..10.0).boxed(),
    }
}

fn kind_strategy() -> impl Strategy<Value = LossKind> {
    prop_oneof![Just(LossKind::Gaussian), Just(LossKind::Poisson), Just(LossKind::Bernoulli)]
}

proptest! {
    #[test]
    fn deriv_matches_finite_differences((kind, x, m) in kind_strategy().prop_flat_map(|k| (Just(k), valid_x(k), valid_m(k)))) {
        let loss = LossFunction::with_default_eps(kind);
        let h = 1e-6 * m.abs().max(1e-2);
        let fd = (loss.value(x, m + h).unwrap() - loss.value(x, m - h).unwrap()) / (2.0 * h);
        let d = loss.deriv(x, m).unwrap();
        prop_assert!((d - fd).abs() <= 1e-5 * d.abs().max(1.0), "{} x={} m={} d={} fd={}", kind, x, m, d, fd);
    }

    #[test]
    fn grid_minimizer_sits_where_deriv_changes_sign((kind, x) in kind_strategy().prop_flat_map(|k| (Just(k), valid_x(k)))) {
        let loss = LossFunction::with_default_eps(kind);
        let lo = if kind == LossKind::Gaussian { -10.0 } else { loss.lower_bound() + loss.eps() };
        let n = 4001;
        let grid: Vec<f64> = (0..n).map(|i| lo + (10.0 - lo) * i as f64 / (n - 1) as f64).collect();
        let best = (0..n)
            .min_by(|&i, &j| loss.value(x, grid[i]).unwrap().total_cmp(&loss.value(x, grid[j]).unwrap()))
            .unwrap();
        if best > 0 {
            prop_assert!(loss.deriv(x, grid[best - 1]).unwrap() <= 0.0);
        }
        if best + 1 < n {
            prop_assert!(loss.deriv(x, grid[best + 1]).unwrap() >= 0.0);
        }
    }

    #[test]
    fn gaussian_value_is_symmetric(x in -1e3f64..1e3, m in -1e3f64..1e3) {
        let loss = LossFunction::gaussian();
        prop_assert_eq!(loss.value(x, m).unwrap(), loss.value(m, x).unwrap());
    }
}
