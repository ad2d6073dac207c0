//! ADAM stepper with epoch snapshots.
//!
//! The stepper keeps the moments and the solution from the last accepted
//! epoch so that a rejected epoch can be undone exactly. Each rejection
//! multiplies the learning rate by `rate_decay`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{GcpError, Result};

/// A set of real variables that can be walked elementwise in a fixed order.
pub trait AdamVars: Clone {
    fn zeros_like(&self) -> Self;

    /// Shape signature; two variable sets are compatible when these agree.
    fn shape(&self) -> Vec<usize>;

    fn values(&self) -> Box<dyn Iterator<Item = &f64> + '_>;

    fn values_mut(&mut self) -> Box<dyn Iterator<Item = &mut f64> + '_>;
}

impl AdamVars for Array1<f64> {
    fn zeros_like(&self) -> Self {
        Array1::zeros(self.len())
    }

    fn shape(&self) -> Vec<usize> {
        vec![self.len()]
    }

    fn values(&self) -> Box<dyn Iterator<Item = &f64> + '_> {
        Box::new(self.iter())
    }

    fn values_mut(&mut self) -> Box<dyn Iterator<Item = &mut f64> + '_> {
        Box::new(self.iter_mut())
    }
}

impl AdamVars for Vec<Array2<f64>> {
    fn zeros_like(&self) -> Self {
        self.iter().map(|a| Array2::zeros(a.raw_dim())).collect()
    }

    fn shape(&self) -> Vec<usize> {
        self.iter().flat_map(|a| [a.nrows(), a.ncols()]).collect()
    }

    fn values(&self) -> Box<dyn Iterator<Item = &f64> + '_> {
        Box::new(self.iter().flat_map(|a| a.iter()))
    }

    fn values_mut(&mut self) -> Box<dyn Iterator<Item = &mut f64> + '_> {
        Box::new(self.iter_mut().flat_map(|a| a.iter_mut()))
    }
}

/// Weights and factors updated together (static fits).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsAndFactors {
    pub weights: Array1<f64>,
    pub factors: Vec<Array2<f64>>,
}

impl AdamVars for WeightsAndFactors {
    fn zeros_like(&self) -> Self {
        Self {
            weights: self.weights.zeros_like(),
            factors: self.factors.zeros_like(),
        }
    }

    fn shape(&self) -> Vec<usize> {
        let mut s = AdamVars::shape(&self.weights);
        s.extend(AdamVars::shape(&self.factors));
        s
    }

    fn values(&self) -> Box<dyn Iterator<Item = &f64> + '_> {
        Box::new(self.weights.values().chain(self.factors.values()))
    }

    fn values_mut(&mut self) -> Box<dyn Iterator<Item = &mut f64> + '_> {
        Box::new(self.weights.iter_mut().chain(self.factors.values_mut()))
    }
}

/// Step parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Factor applied to the rate after a rejected epoch.
    pub rate_decay: f64,
    /// Elementwise lower bound; `None` means unbounded.
    pub lower_bound: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            rate_decay: 0.1,
            lower_bound: None,
        }
    }
}

impl AdamConfig {
    pub fn with_rate(rate: f64) -> Self {
        Self {
            rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.rate_decay > 0.0
            && self.rate_decay < 1.0;
        if ok {
            Ok(())
        } else {
            Err(GcpError::Precondition(format!("invalid ADAM parameters {self:?}")))
        }
    }
}

/// Moments, snapshots and the current learning rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState<V> {
    pub config: AdamConfig,
    /// Current learning rate (starts at `config.rate`, decays on rejection).
    pub rate: f64,
    pub u: V,
    pub v: V,
    pub u_saved: V,
    pub v_saved: V,
    pub a_saved: V,
}

impl<V: AdamVars> AdamState<V> {
    /// Zero moments and snapshots shaped like `like`.
    pub fn init(config: AdamConfig, like: &V) -> Self {
        let z = like.zeros_like();
        Self {
            config,
            rate: config.rate,
            u: z.clone(),
            v: z.clone(),
            u_saved: z.clone(),
            v_saved: z.clone(),
            a_saved: z,
        }
    }

    /// Zero every buffer again and restore the initial rate.
    pub fn reset(&mut self) {
        let z = self.u.zeros_like();
        self.rate = self.config.rate;
        self.u = z.clone();
        self.v = z.clone();
        self.u_saved = z.clone();
        self.v_saved = z.clone();
        self.a_saved = z;
    }

    fn check(&self, other: &V, what: &str) -> Result<()> {
        if other.shape() != self.u.shape() {
            return Err(GcpError::Shape(format!(
                "ADAM {what} shape {:?} differs from state shape {:?}",
                other.shape(),
                self.u.shape()
            )));
        }
        Ok(())
    }

    /// One ADAM update of `a` with gradient `g`. `step` is the 1-based count
    /// of steps taken including this one and sets the bias correction.
    pub fn step(&mut self, a: &mut V, g: &V, step: u64) -> Result<()> {
        self.check(a, "variable")?;
        self.check(g, "gradient")?;
        if step == 0 {
            return Err(GcpError::Precondition("ADAM step count starts at 1".into()));
        }
        let AdamConfig {
            beta1,
            beta2,
            eps,
            lower_bound,
            ..
        } = self.config;
        let n = step.min(i32::MAX as u64) as i32;
        let rate = self.rate * (1.0 - beta2.powi(n)).sqrt() / (1.0 - beta1.powi(n));
        let bound = lower_bound.unwrap_or(f64::NEG_INFINITY);
        for (((x, u), v), &gi) in a
            .values_mut()
            .zip(self.u.values_mut())
            .zip(self.v.values_mut())
            .zip(g.values())
        {
            *u = beta1 * *u + (1.0 - beta1) * gi;
            *v = beta2 * *v + (1.0 - beta2) * gi * gi;
            *x -= rate * *u / (v.sqrt() + eps);
            *x = x.max(bound);
        }
        Ok(())
    }

    /// Close an epoch. Accepted: snapshot `(u, v, a)`. Rejected: restore the
    /// snapshot into `a` and the moments, then decay the rate.
    pub fn update(&mut self, a: &mut V, passed: bool) -> Result<()> {
        self.check(a, "variable")?;
        if passed {
            self.u_saved.clone_from(&self.u);
            self.v_saved.clone_from(&self.v);
            self.a_saved.clone_from(a);
        } else {
            self.u.clone_from(&self.u_saved);
            self.v.clone_from(&self.v_saved);
            a.clone_from(&self.a_saved);
            self.rate *= self.config.rate_decay;
        }
        Ok(())
    }
}
