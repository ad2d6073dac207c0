//! Elementwise GCP losses `f(x, m)` and their derivatives in `m`.
//!
//! | kind      | f(x, m)                     | link ℓ(η)      | lower bound |
//! |-----------|-----------------------------|----------------|-------------|
//! | gaussian  | (x − m)²                    | η              | −∞          |
//! | poisson   | m − x·log(m + ε)            | η              | 0           |
//! | bernoulli | log(m + 1) − x·log(m + ε)   | η / (1 − η)    | 0           |
//!
//! The link function is listed for reference only; fitting works directly in `m`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GcpError, Result};

pub const DEFAULT_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Gaussian,
    Poisson,
    Bernoulli,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Gaussian => "gaussian",
            LossKind::Poisson => "poisson",
            LossKind::Bernoulli => "bernoulli",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(LossKind::Gaussian),
            "poisson" | "count" => Ok(LossKind::Poisson),
            "bernoulli" | "binary" => Ok(LossKind::Bernoulli),
            other => Err(format!("unknown loss '{other}'")),
        }
    }
}

/// A loss kind together with its log shift ε.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossFunction {
    kind: LossKind,
    eps: f64,
}

impl LossFunction {
    pub fn new(kind: LossKind, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(GcpError::Precondition(format!("loss epsilon must be positive, got {eps}")));
        }
        Ok(Self { kind, eps })
    }

    pub fn gaussian() -> Self {
        Self::with_default_eps(LossKind::Gaussian)
    }

    pub fn poisson() -> Self {
        Self::with_default_eps(LossKind::Poisson)
    }

    pub fn bernoulli() -> Self {
        Self::with_default_eps(LossKind::Bernoulli)
    }

    pub fn with_default_eps(kind: LossKind) -> Self {
        Self {
            kind,
            eps: DEFAULT_EPS,
        }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Smallest admissible model value.
    pub fn lower_bound(&self) -> f64 {
        match self.kind {
            LossKind::Gaussian => f64::NEG_INFINITY,
            LossKind::Poisson | LossKind::Bernoulli => 0.0,
        }
    }

    fn check(&self, x: f64, m: f64) -> Result<()> {
        if !x.is_finite() || !m.is_finite() {
            return Err(GcpError::Domain(format!(
                "{} loss at non-finite input (x={x}, m={m})",
                self.kind
            )));
        }
        if m < self.lower_bound() {
            return Err(GcpError::Domain(format!(
                "{} loss needs m >= {}, got m={m}",
                self.kind,
                self.lower_bound()
            )));
        }
        match self.kind {
            LossKind::Poisson if x < 0.0 => Err(GcpError::Domain(format!(
                "poisson loss needs x >= 0, got {x}"
            ))),
            LossKind::Bernoulli if x != 0.0 && x != 1.0 => Err(GcpError::Domain(format!(
                "bernoulli loss needs x in {{0, 1}}, got {x}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn value(&self, x: f64, m: f64) -> Result<f64> {
        self.check(x, m)?;
        Ok(self.value_unchecked(x, m))
    }

    pub fn deriv(&self, x: f64, m: f64) -> Result<f64> {
        self.check(x, m)?;
        Ok(self.deriv_unchecked(x, m))
    }

    #[inline]
    pub fn value_unchecked(&self, x: f64, m: f64) -> f64 {
        match self.kind {
            LossKind::Gaussian => (x - m) * (x - m),
            LossKind::Poisson => m - x * (m + self.eps).ln(),
            LossKind::Bernoulli => (m + 1.0).ln() - x * (m + self.eps).ln(),
        }
    }

    #[inline]
    pub fn deriv_unchecked(&self, x: f64, m: f64) -> f64 {
        match self.kind {
            LossKind::Gaussian => 2.0 * (m - x),
            LossKind::Poisson => 1.0 - x / (m + self.eps),
            LossKind::Bernoulli => 1.0 / (m + 1.0) - x / (m + self.eps),
        }
    }
}
