use ndarray::Array1;
use ogcp_core::io::{gen_gaussian, stream_slices, SyntheticSpec};
use ogcp_core::loss::LossFunction;
use ogcp_core::rng::Phase;
use ogcp_core::sampling::SampleCount;
use ogcp_core::solvers::StaticConfig;
use ogcp_core::streaming::HistoryWindow;
use ogcp_core::{AdamConfig, RngStreams, SamplerConfig, SolverConfig, SparseTensor, StreamConfig, StreamState};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

proptest! {
    #[test]
    fn window_size_law_and_ids((cap, steps, seed) in (0usize..12, 1usize..80, any::<u64>())) {
        let mut w = HistoryWindow::new(cap);
        let mut g = RngStreams::new(seed).stream(0, Phase::Window, 0, 0);
        for t in 1..=steps {
            // the window seen while processing step t
            prop_assert_eq!(w.len(), (t - 1).min(cap));
            let ids = w.steps();
            prop_assert!(ids.iter().all(|&h| h < t));
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), ids.len());
            w.update(t, &Array1::from_elem(2, t as f64), &mut g);
        }
        prop_assert!(w.entries().iter().all(|h| h.weights[0] == h.step as f64));
    }
}

#[test]
fn reservoir_inclusion_is_uniform() {
    let (cap, offered, trials) = (5usize, 20usize, 100_000u64);
    let mut counts = vec![0u64; offered];
    let streams = RngStreams::new(2024);
    let s = Array1::zeros(1);
    for trial in 0..trials {
        let mut g = streams.stream(trial, Phase::Window, 0, 0);
        let mut w = HistoryWindow::new(cap);
        for t in 1..=offered {
            w.update(t, &s, &mut g);
        }
        for h in w.steps() {
            counts[h - 1] += 1;
        }
    }
    let expected = trials as f64 * cap as f64 / offered as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((offered - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.001, "chi-square p = {p}, counts {counts:?}");
}

fn tiny_config() -> StreamConfig {
    let sampler = SamplerConfig {
        objective_nonzeros: SampleCount::Fixed(200),
        objective_zeros: 0,
        gradient_nonzeros: SampleCount::Fixed(50),
        gradient_zeros: 0,
        max_rejects: None,
    };
    let solver = SolverConfig {
        epochs_weights: 3,
        epochs_factors: 2,
        iters_weights: 10,
        iters_factors: 10,
        adam_weights: AdamConfig::with_rate(0.5),
        adam_factors: AdamConfig::with_rate(1e-3),
        sampler,
        ..SolverConfig::default()
    };
    StreamConfig {
        rank: 2,
        window: 3,
        warm_slices: 2,
        solver,
        warm_start: StaticConfig {
            epochs: 3,
            iters: 10,
            adam: AdamConfig::with_rate(0.05),
            sampler,
            ..StaticConfig::default()
        },
        exact_local_loss: true,
    }
}

fn tiny_data() -> SparseTensor {
    gen_gaussian(&SyntheticSpec::gaussian(&[6, 5, 9], 2, 0.1, 3)).unwrap().tensor
}

fn run_all(seed: u64) -> StreamState {
    let x = tiny_data();
    let cfg = tiny_config();
    let mut st = StreamState::new(&[6, 5], cfg, LossFunction::gaussian(), seed).unwrap();
    st.warm_start(&x.leading_slices(2).unwrap()).unwrap();
    for slice in stream_slices(&x).unwrap().skip(2) {
        st.process_slice(&slice).unwrap();
    }
    st
}

fn without_wall(mut st: StreamState) -> StreamState {
    st.metrics.iter_mut().for_each(|m| m.wall_ms = 0);
    st
}

#[test]
fn stream_is_deterministic_per_seed() {
    let a = without_wall(run_all(1));
    assert_eq!(a.t, 9);
    assert_eq!(a.weights_log.len(), 9);
    assert_eq!(a.window.len(), 3);
    assert_eq!(a, without_wall(run_all(1)));
    assert_ne!(a.factors, run_all(2).factors);
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let x = tiny_data();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    let mut st = StreamState::new(&[6, 5], tiny_config(), LossFunction::gaussian(), 1).unwrap();
    st.warm_start(&x.leading_slices(2).unwrap()).unwrap();
    let mut slices = stream_slices(&x).unwrap().skip(2);
    for slice in slices.by_ref().take(3) {
        st.process_slice(&slice).unwrap();
    }
    st.save(&path).unwrap();
    let mut resumed = StreamState::load(&path).unwrap();
    assert_eq!(resumed, st);
    for slice in slices {
        resumed.process_slice(&slice).unwrap();
    }
    assert_eq!(without_wall(resumed), without_wall(run_all(1)));
}

#[test]
fn failed_slice_leaves_state_untouched() {
    let mut st = run_all(1);
    let before = st.clone();
    let wrong = SparseTensor::empty(&[6, 4]).unwrap();
    let err = st.process_slice(&wrong).unwrap_err();
    assert!(err.to_string().contains("10"), "{err}");
    assert_eq!(st, before);
}

#[test]
fn solver_state_does_not_grow_with_the_stream() {
    let st = run_all(1);
    let sizes = |s: &StreamState| {
        (
            s.factors.iter().map(|a| a.len()).sum::<usize>(),
            s.window.entries().iter().map(|h| h.weights.len()).sum::<usize>(),
            s.adam.u.iter().map(|a| a.len()).sum::<usize>(),
        )
    };
    let mut longer = st.clone();
    let x = tiny_data();
    for t in 0..5 {
        longer.process_slice(&x.slice(t).unwrap()).unwrap();
    }
    assert_eq!(sizes(&st), sizes(&longer));
    assert_eq!(sizes(&st), (22, 6, 22));
}

#[test]
fn stream_model_has_a_temporal_mode() {
    let st = run_all(1);
    let m = st.stream_model().unwrap();
    assert_eq!(m.dims(), vec![6, 5, 9]);
    for (t, s) in st.weights_log.iter().enumerate() {
        assert_eq!(m.factors[2].row(t), s.view());
    }
    assert!((st.score_against(&m).unwrap() - 1.0).abs() < 1e-12);
}
