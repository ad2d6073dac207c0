//! Named hyperparameter sets for the reference experiments.
//!
//! Every preset uses θ = 1, λ = μ = 0 and 100 iterations per epoch.

use ogcp_core::loss::LossKind;
use ogcp_core::sampling::SampleCount;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub rank: usize,
    pub rate_w: f64,
    pub epochs_w: usize,
    pub rate_f: f64,
    pub epochs_f: usize,
    pub hist_weight: f64,
    pub window: usize,
    pub warm_slices: usize,
    pub loss: LossKind,
    pub fsamp_nz: SampleCount,
    pub fsamp_z: usize,
    pub gsamp_nz: SampleCount,
    pub gsamp_z: usize,
    /// Start each temporal solve from the previous weights.
    pub warm_weights: bool,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "synthetic-gaussian",
        rank: 20,
        rate_w: 10.0,
        epochs_w: 20,
        rate_f: 1e-4,
        epochs_f: 5,
        hist_weight: 1.0,
        window: 50,
        warm_slices: 10,
        loss: LossKind::Gaussian,
        fsamp_nz: SampleCount::Fixed(10_000),
        fsamp_z: 0,
        gsamp_nz: SampleCount::Fixed(10_000),
        gsamp_z: 0,
        warm_weights: false,
    },
    Preset {
        name: "synthetic-poisson",
        rank: 20,
        rate_w: 1.0,
        epochs_w: 20,
        rate_f: 1e-4,
        epochs_f: 10,
        hist_weight: 10.0,
        window: 50,
        warm_slices: 10,
        loss: LossKind::Poisson,
        fsamp_nz: SampleCount::All,
        fsamp_z: 50_000,
        gsamp_nz: SampleCount::All,
        gsamp_z: 10_000,
        warm_weights: true,
    },
    Preset {
        name: "taxicab-poisson",
        rank: 50,
        rate_w: 10.0,
        epochs_w: 1,
        rate_f: 1e-3,
        epochs_f: 1,
        hist_weight: 1.0,
        window: 30,
        warm_slices: 20,
        loss: LossKind::Poisson,
        fsamp_nz: SampleCount::Fixed(50_000),
        fsamp_z: 50_000,
        gsamp_nz: SampleCount::Fixed(10_000),
        gsamp_z: 10_000,
        warm_weights: true,
    },
    Preset {
        name: "chicago-binary",
        rank: 50,
        rate_w: 0.1,
        epochs_w: 5,
        rate_f: 1e-3,
        epochs_f: 5,
        hist_weight: 10.0,
        window: 500,
        warm_slices: 20,
        loss: LossKind::Bernoulli,
        fsamp_nz: SampleCount::All,
        fsamp_z: 10_000,
        gsamp_nz: SampleCount::All,
        gsamp_z: 1_000,
        warm_weights: true,
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

/// Baseline when no preset is named.
pub const DEFAULT: Preset = Preset {
    name: "none",
    rank: 10,
    rate_w: 1.0,
    epochs_w: 20,
    rate_f: 1e-3,
    epochs_f: 5,
    hist_weight: 1.0,
    window: 50,
    warm_slices: 10,
    loss: LossKind::Gaussian,
    fsamp_nz: SampleCount::Fixed(100_000),
    fsamp_z: 100_000,
    gsamp_nz: SampleCount::Fixed(1_000),
    gsamp_z: 1_000,
    warm_weights: false,
};
