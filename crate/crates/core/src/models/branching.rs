use serde::{Deserialize, Serialize};

use super::Interval;
use crate::error::{Error, Result};

/// Expected offspring count `m(u)` of a particle born at scaled position `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum BranchingKernel {
    /// `m ≡ 1`: the branching walk is an ordinary random walk.
    Unit,
    Constant {
        m: f64,
    },
    /// `m = max(0, min(1, 1 - u^K))`.
    KsatLike {
        k: u32,
    },
    /// `m = 1 + δ|u|`: rewards positions far from the origin.
    Scatter {
        delta: f64,
    },
    /// `m = 1 / (1 + δ|u|)`: rewards positions near the origin.
    Squeeze {
        delta: f64,
    },
}

impl BranchingKernel {
    pub fn id(&self) -> &'static str {
        match self {
            BranchingKernel::Unit => "unit",
            BranchingKernel::Constant { .. } => "constant",
            BranchingKernel::KsatLike { .. } => "ksat_like",
            BranchingKernel::Scatter { .. } => "scatter",
            BranchingKernel::Squeeze { .. } => "squeeze",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BranchingKernel::Constant { m } if !(m >= 0.0 && m.is_finite()) => Err(Error::config(
                "model.branching.m",
                "must be a finite nonnegative number",
            )),
            BranchingKernel::KsatLike { k: 0 } => Err(Error::config("model.branching.k", "must be at least 1")),
            BranchingKernel::Scatter { delta } | BranchingKernel::Squeeze { delta }
                if !(delta >= 0.0 && delta.is_finite()) =>
            {
                Err(Error::config(
                    "model.branching.delta",
                    "must be a finite nonnegative number",
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn domain(&self) -> Interval {
        Interval::REAL_LINE
    }

    pub fn m(&self, u: f64) -> f64 {
        match *self {
            BranchingKernel::Unit => 1.0,
            BranchingKernel::Constant { m } => m,
            BranchingKernel::KsatLike { k } => (1.0 - u.powi(k as i32)).clamp(0.0, 1.0),
            BranchingKernel::Scatter { delta } => 1.0 + delta * u.abs(),
            BranchingKernel::Squeeze { delta } => 1.0 / (1.0 + delta * u.abs()),
        }
    }

    /// `ln m(u)`; `-inf` where `m` vanishes.
    pub fn ln_m(&self, u: f64) -> f64 {
        match *self {
            BranchingKernel::Unit => 0.0,
            BranchingKernel::Scatter { delta } => (delta * u.abs()).ln_1p(),
            BranchingKernel::Squeeze { delta } => -(delta * u.abs()).ln_1p(),
            _ => self.m(u).ln(),
        }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, BranchingKernel::Unit) || matches!(self, BranchingKernel::Constant { m } if *m == 1.0)
    }

    /// Points where `m` is not differentiable.
    pub fn kinks(&self) -> Vec<f64> {
        match *self {
            BranchingKernel::Scatter { .. } | BranchingKernel::Squeeze { .. } => vec![0.0],
            BranchingKernel::KsatLike { k } if k % 2 == 1 => vec![0.0, 1.0],
            BranchingKernel::KsatLike { .. } => vec![-1.0, 1.0],
            _ => Vec::new(),
        }
    }

    /// Whether `u` is at least `window` away from every kink.
    pub fn smooth_at(&self, u: f64, window: f64) -> bool {
        self.kinks().iter().all(|k| (u - k).abs() >= window)
    }
}
