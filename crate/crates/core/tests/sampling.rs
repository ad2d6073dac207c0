mod common;

use common::*;
use ndarray::{Array1, Array2};
use ogcp_core::kernels::weights_mttkrp;
use ogcp_core::loss::{LossFunction, LossKind};
use ogcp_core::rng::Phase;
use ogcp_core::sampling::{
    dense_gradient_tensor, draw_samples, estimate_objective, gradient_from_samples, Penalties, SampleCount,
    SamplerConfig,
};
use ogcp_core::tensor::CooEntries;
use ogcp_core::{GcpError, RngStreams, SparseTensor};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn new() -> Self {
        Self { n: 0.0, sum: 0.0, sum_sq: 0.0 }
    }

    fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n
    }

    fn std_err(&self) -> f64 {
        let var = (self.sum_sq - self.sum * self.sum / self.n) / (self.n - 1.0);
        (var.max(0.0) / self.n).sqrt()
    }

    fn within(&self, exact: f64, k: f64) -> bool {
        (self.mean() - exact).abs() <= k * self.std_err() + 1e-12 * exact.abs()
    }
}

fn data(kind: LossKind, seed: u64) -> SparseTensor {
    match kind {
        LossKind::Gaussian => gaussian_tensor(&[5, 5, 5], 0.2, seed),
        LossKind::Poisson => count_tensor(&[5, 5, 5], 0.2, seed),
        LossKind::Bernoulli => binary_tensor(&[5, 5, 5], 0.2, seed),
    }
}

fn dense_objective(x: &SparseTensor, s: &Array1<f64>, a: &[Array2<f64>], loss: &LossFunction) -> f64 {
    all_coords(x.dims())
        .iter()
        .map(|c| loss.value(data_at(x, c), entry(s, a, c)).unwrap())
        .sum()
}

#[test]
fn estimates_are_unbiased() {
    let streams = RngStreams::new(77);
    for kind in [LossKind::Gaussian, LossKind::Poisson, LossKind::Bernoulli] {
        let loss = LossFunction::with_default_eps(kind);
        let x = data(kind, 21);
        let mut r = rng(22);
        let a = rand_factors(x.dims(), 2, 0.2, 1.0, &mut r);
        let s = rand_weights(2, 0.5, 1.5, &mut r);
        let exact_f = dense_objective(&x, &s, &a, &loss);
        let exact_y = dense_gradient_tensor(&x, &s, &a, &loss).unwrap();
        let directions: Vec<Vec<f64>> = (0..3)
            .map(|_| all_coords(x.dims()).iter().map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect();
        let coords = all_coords(x.dims());
        let pair = |y: &dyn Fn(&[usize]) -> f64, d: &[f64]| -> f64 { coords.iter().zip(d).map(|(c, w)| y(c) * w).sum() };
        let exact_pairs: Vec<f64> = directions.iter().map(|d| pair(&|c| exact_y.get(c).unwrap(), d)).collect();
        let exact_w = weights_mttkrp(&exact_y, &a).unwrap();

        let mut f = Moments::new();
        let mut pairs: Vec<Moments> = directions.iter().map(|_| Moments::new()).collect();
        let mut wmom: Vec<Moments> = (0..2).map(|_| Moments::new()).collect();
        for seed in 0..2000u64 {
            let mut g = streams.stream(seed, Phase::FactorsGradient, 0, 0);
            let samples = draw_samples(&x, 6, 12, &mut g, None).unwrap();
            f.push(estimate_objective(&x, &s, &a, &loss, &samples, &Penalties::none()).unwrap());
            let y = gradient_from_samples(&x, &s, &a, &loss, &samples).unwrap();
            for (m, d) in pairs.iter_mut().zip(&directions) {
                m.push(pair(&|c| y.get(c).unwrap(), d));
            }
            for (m, v) in wmom.iter_mut().zip(weights_mttkrp(&y, &a).unwrap()) {
                m.push(v);
            }
        }
        assert!(f.within(exact_f, 3.0), "{kind}: F mean {} exact {exact_f} se {}", f.mean(), f.std_err());
        for (m, e) in pairs.iter().zip(&exact_pairs) {
            assert!(m.within(*e, 3.0), "{kind}: <Y,D> mean {} exact {e} se {}", m.mean(), m.std_err());
        }
        for (m, e) in wmom.iter().zip(&exact_w) {
            assert!(m.within(*e, 3.0), "{kind}: Z'y mean {} exact {e} se {}", m.mean(), m.std_err());
        }
    }
}

fn chi_square_p(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn draws_are_uniform_within_each_stratum() {
    let x = gaussian_tensor(&[4, 3, 5], 0.3, 31);
    let lin_index = |c: &[usize]| c[0] + 4 * (c[1] + 3 * c[2]);
    let mut nz = vec![0u64; x.nnz()];
    let mut zeros = vec![0u64; 60];
    let mut g = RngStreams::new(5).stream(0, Phase::Generator, 0, 0);
    for _ in 0..200 {
        let samples = draw_samples(&x, 200, 200, &mut g, None).unwrap();
        for &e in &samples.nz_draws {
            nz[e] += 1;
        }
        for c in samples.zero_coords() {
            assert_eq!(x.get(c).unwrap(), 0.0);
            zeros[lin_index(c)] += 1;
        }
    }
    let zero_counts: Vec<u64> = all_coords(x.dims())
        .iter()
        .filter(|c| x.get(c).unwrap() == 0.0)
        .map(|c| zeros[lin_index(c)])
        .collect();
    assert_eq!(zero_counts.iter().sum::<u64>(), 200 * 200);
    assert!(chi_square_p(&nz) > 0.001);
    assert!(chi_square_p(&zero_counts) > 0.001);
}

#[test]
fn scale_factors_are_population_ratios() {
    let x = count_tensor(&[5, 4, 3], 0.25, 41);
    let mut g = RngStreams::new(1).stream(0, Phase::Generator, 0, 0);
    let samples = draw_samples(&x, 7, 11, &mut g, None).unwrap();
    assert_eq!((samples.p(), samples.q()), (7, 11));
    assert_eq!(samples.nz_scale, x.nnz() as f64 / 7.0);
    assert_eq!(samples.zero_scale, (60 - x.nnz()) as f64 / 11.0);
}

#[test]
fn same_stream_gives_identical_samples_and_estimates() {
    let x = count_tensor(&[5, 5, 5], 0.2, 51);
    let loss = LossFunction::poisson();
    let a = rand_factors(x.dims(), 2, 0.2, 1.0, &mut rng(52));
    let s = Array1::ones(2);
    let streams = RngStreams::new(3);
    let run = || {
        let mut g = streams.stream(4, Phase::FactorsObjective, 2, 9);
        let samples = draw_samples(&x, 30, 30, &mut g, None).unwrap();
        let f = estimate_objective(&x, &s, &a, &loss, &samples, &Penalties::none()).unwrap();
        let y = gradient_from_samples(&x, &s, &a, &loss, &samples).unwrap();
        (samples, f.to_bits(), y.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
    let mut other = streams.stream(4, Phase::FactorsObjective, 2, 10);
    assert_ne!(draw_samples(&x, 30, 30, &mut other, None).unwrap(), run().0);
}

#[test]
fn rejection_budget_is_enforced() {
    let mut entries = Vec::new();
    for c in all_coords(&[10, 10, 10]) {
        if c != [0, 0, 0] {
            entries.push((c, 1.0));
        }
    }
    let x = SparseTensor::from_entries(&[10, 10, 10], &entries).unwrap();
    let mut g = RngStreams::new(0).stream(0, Phase::Generator, 0, 0);
    let err = draw_samples(&x, 0, 5, &mut g, Some(20)).unwrap_err();
    assert!(matches!(err, GcpError::Sampling { rejects: 21, .. }), "{err:?}");
    let ok = draw_samples(&x, 0, 2, &mut g, None).unwrap();
    assert!(ok.zero_coords().all(|c| c == [0, 0, 0]));
}

#[test]
fn empty_strata_get_no_draws() {
    let cfg = SamplerConfig {
        objective_nonzeros: SampleCount::Fixed(10),
        objective_zeros: 10,
        gradient_nonzeros: SampleCount::All,
        gradient_zeros: 4,
        max_rejects: None,
    };
    let empty = SparseTensor::empty(&[3, 3]).unwrap();
    assert_eq!(cfg.objective_counts(&empty), (0, 10));
    assert_eq!(cfg.gradient_counts(&empty), (0, 4));
    let full = SparseTensor::from_entries(&[2, 2], &[([0, 0], 1.0), ([0, 1], 2.0), ([1, 0], 3.0), ([1, 1], 4.0)]).unwrap();
    assert_eq!(cfg.objective_counts(&full), (10, 0));
    assert_eq!(cfg.gradient_counts(&full), (4, 0));
    let mut g = RngStreams::new(0).stream(0, Phase::Generator, 0, 0);
    assert!(draw_samples(&empty, 1, 0, &mut g, None).is_err());
    assert!(draw_samples(&full, 0, 1, &mut g, None).is_err());
}

#[test]
fn gradient_tensor_merges_repeated_draws() {
    let x = SparseTensor::from_entries(&[2, 2], &[([0, 1], 3.0)]).unwrap();
    let loss = LossFunction::gaussian();
    let a = vec![Array2::ones((2, 1)), Array2::ones((2, 1))];
    let s = Array1::from(vec![0.5]);
    let mut g = RngStreams::new(0).stream(0, Phase::Generator, 0, 0);
    let samples = draw_samples(&x, 5, 0, &mut g, None).unwrap();
    let y = gradient_from_samples(&x, &s, &a, &loss, &samples).unwrap();
    assert_eq!(y.len(), 1);
    // five draws, each scaled by 1/5, of f'(3, 0.5) = -5
    assert!((y.get(&[0, 1]).unwrap() + 5.0).abs() < 1e-12);
}
