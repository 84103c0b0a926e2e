//! Displacement kernels `p(x | u)`: the law of the next unscaled increment
//! given the current scaled position.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{DerivativeSource, Interval, KernelDerivatives};
use crate::error::{Error, Result};
use crate::quadrature::normal_expectation;

/// Largest Poisson rate the kernels accept; keeps `e^{-μ}` representable for
/// the inverse-transform sampler.
pub const MAX_POISSON_RATE: f64 = 500.0;

const SERIES_TERM_CAP: usize = 1_000_000;

/// Position-dependent drift used by the Gaussian kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    Zero,
    Constant { value: f64 },
    Linear { kappa: f64 },
    Sine { amplitude: f64 },
    Square { coef: f64 },
}

impl Drift {
    pub fn value(&self, u: f64) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Constant { value } => value,
            Drift::Linear { kappa } => kappa * u,
            Drift::Sine { amplitude } => amplitude * u.sin(),
            Drift::Square { coef } => coef * u * u,
        }
    }

    /// First three derivatives.
    pub fn derivatives(&self, u: f64) -> [f64; 3] {
        match *self {
            Drift::Zero | Drift::Constant { .. } => [0.0; 3],
            Drift::Linear { kappa } => [kappa, 0.0, 0.0],
            Drift::Sine { amplitude: a } => [a * u.cos(), -a * u.sin(), -a * u.cos()],
            Drift::Square { coef } => [2.0 * coef * u, 2.0 * coef, 0.0],
        }
    }
}

/// Conditional law of one increment at a fixed position.
#[derive(Debug, Clone, PartialEq)]
pub enum Law {
    /// Finite support `(value, probability)`.
    Discrete(Vec<(f64, f64)>),
    Normal {
        mean: f64,
        sd: f64,
    },
}

impl Law {
    /// `E[h(X)]`: exact summation for discrete laws, adaptive quadrature otherwise.
    pub fn expect(&self, h: impl Fn(f64) -> f64, rel_tol: f64) -> f64 {
        match self {
            Law::Discrete(atoms) => atoms.iter().map(|&(x, p)| p * h(x)).sum(),
            Law::Normal { mean, sd } => normal_expectation(h, *mean, *sd, rel_tol),
        }
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self, Law::Discrete(_))
    }
}

/// The displacement part of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum DisplacementKernel {
    /// Fair ±1 steps; a martingale-difference walk.
    Rademacher,
    /// ±1 steps with `P(+1) = (1 + κu)/2`, clamped to `[0, 1]`, so `g(u) = κu`.
    BiasedDrift { kappa: f64 },
    /// Poisson count with rate `μ(u) = rate + slope·u`, optionally recentred to mean zero.
    Poisson {
        rate: f64,
        #[serde(default)]
        slope: f64,
        #[serde(default)]
        centered: bool,
    },
    /// `g(u) + σ·Z` with standard normal `Z`.
    Gaussian { drift: Drift, sigma: f64 },
    /// A fixed step, `X ≡ step`.
    Deterministic { step: f64 },
}

impl DisplacementKernel {
    pub fn id(&self) -> &'static str {
        match self {
            DisplacementKernel::Rademacher => "rademacher",
            DisplacementKernel::BiasedDrift { .. } => "biased_drift",
            DisplacementKernel::Poisson { .. } => "poisson",
            DisplacementKernel::Gaussian { .. } => "gaussian",
            DisplacementKernel::Deterministic { .. } => "deterministic",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("model.displacement.{field}"), msg));
        match *self {
            DisplacementKernel::BiasedDrift { kappa } if !kappa.is_finite() => bad("kappa", "must be finite"),
            DisplacementKernel::Poisson { rate, slope, .. } => {
                if !rate.is_finite() || !slope.is_finite() {
                    bad("rate", "rate and slope must be finite")
                } else if slope == 0.0 && !(0.0..=MAX_POISSON_RATE).contains(&rate) {
                    bad("rate", "constant rate must lie in [0, 500]")
                } else {
                    Ok(())
                }
            }
            DisplacementKernel::Gaussian { sigma, .. } if !(sigma >= 0.0 && sigma.is_finite()) => {
                bad("sigma", "must be a finite nonnegative number")
            }
            DisplacementKernel::Deterministic { step } if !step.is_finite() => bad("step", "must be finite"),
            _ => Ok(()),
        }
    }

    /// Positions where the kernel is defined and smooth.
    pub fn domain(&self) -> Interval {
        match *self {
            DisplacementKernel::BiasedDrift { kappa } if kappa != 0.0 => {
                Interval::new(-1.0 / kappa.abs(), 1.0 / kappa.abs())
            }
            DisplacementKernel::Poisson { rate, slope, .. } if slope != 0.0 => {
                let a = -rate / slope;
                let b = (MAX_POISSON_RATE - rate) / slope;
                Interval::new(a.min(b), a.max(b))
            }
            _ => Interval::REAL_LINE,
        }
    }

    fn poisson_rate(rate: f64, slope: f64, u: f64) -> f64 {
        (rate + slope * u).clamp(0.0, MAX_POISSON_RATE)
    }

    fn plus_probability(kappa: f64, u: f64) -> f64 {
        (0.5 * (1.0 + kappa * u)).clamp(0.0, 1.0)
    }

    /// `E[X | u]`, without a domain check.
    pub fn g(&self, u: f64) -> f64 {
        match *self {
            DisplacementKernel::Rademacher => 0.0,
            DisplacementKernel::BiasedDrift { kappa } => 2.0 * Self::plus_probability(kappa, u) - 1.0,
            DisplacementKernel::Poisson { rate, slope, centered } => {
                if centered {
                    0.0
                } else {
                    Self::poisson_rate(rate, slope, u)
                }
            }
            DisplacementKernel::Gaussian { ref drift, .. } => drift.value(u),
            DisplacementKernel::Deterministic { step } => step,
        }
    }

    /// `E[X² | u]`, without a domain check.
    pub fn nu(&self, u: f64) -> f64 {
        match *self {
            DisplacementKernel::Rademacher | DisplacementKernel::BiasedDrift { .. } => 1.0,
            DisplacementKernel::Poisson { rate, slope, centered } => {
                let mu = Self::poisson_rate(rate, slope, u);
                if centered {
                    mu
                } else {
                    mu + mu * mu
                }
            }
            DisplacementKernel::Gaussian { ref drift, sigma } => {
                let g = drift.value(u);
                g * g + sigma * sigma
            }
            DisplacementKernel::Deterministic { step } => step * step,
        }
    }

    /// The conditional law at `u`. Poisson support is truncated once the
    /// remaining mass drops below 1e-17.
    pub fn law(&self, u: f64) -> Law {
        match *self {
            DisplacementKernel::Rademacher => Law::Discrete(vec![(1.0, 0.5), (-1.0, 0.5)]),
            DisplacementKernel::BiasedDrift { kappa } => {
                let p = Self::plus_probability(kappa, u);
                Law::Discrete(vec![(1.0, p), (-1.0, 1.0 - p)])
            }
            DisplacementKernel::Poisson { rate, slope, centered } => {
                let mu = Self::poisson_rate(rate, slope, u);
                let shift = if centered { mu } else { 0.0 };
                let mut atoms = Vec::new();
                let mut p = (-mu).exp();
                let mut cumulative = 0.0;
                let mut k = 0usize;
                loop {
                    atoms.push((k as f64 - shift, p));
                    cumulative += p;
                    k += 1;
                    p *= mu / k as f64;
                    if (k as f64 > mu && 1.0 - cumulative < 1e-17) || p == 0.0 && k as f64 > mu {
                        break;
                    }
                }
                Law::Discrete(atoms)
            }
            DisplacementKernel::Gaussian { ref drift, sigma } => Law::Normal {
                mean: drift.value(u),
                sd: sigma,
            },
            DisplacementKernel::Deterministic { step } => Law::Discrete(vec![(step, 1.0)]),
        }
    }

    /// Draws one increment. Each kernel consumes a fixed pattern of draws that
    /// does not depend on `u`, so two walks fed the same stream are coupled
    /// through common random numbers.
    pub fn sample<R: Rng + ?Sized>(&self, u: f64, rng: &mut R) -> f64 {
        match *self {
            DisplacementKernel::Rademacher => {
                if rng.random::<f64>() < 0.5 {
                    1.0
                } else {
                    -1.0
                }
            }
            DisplacementKernel::BiasedDrift { kappa } => {
                if rng.random::<f64>() < Self::plus_probability(kappa, u) {
                    1.0
                } else {
                    -1.0
                }
            }
            DisplacementKernel::Poisson { rate, slope, centered } => {
                let mu = Self::poisson_rate(rate, slope, u);
                let k = poisson_inverse_cdf(mu, rng.random::<f64>());
                if centered {
                    k as f64 - mu
                } else {
                    k as f64
                }
            }
            DisplacementKernel::Gaussian { ref drift, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                drift.value(u) + sigma * z
            }
            DisplacementKernel::Deterministic { step } => step,
        }
    }

    /// `E[e^{t|X|} | u]` for `t ≥ 0`.
    pub fn exp_abs_moment(&self, u: f64, t: f64) -> Result<f64> {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::invalid(format!("exp_abs_moment needs t >= 0, got {t}")));
        }
        if t == 0.0 {
            return Ok(1.0);
        }
        let value = match *self {
            DisplacementKernel::Rademacher | DisplacementKernel::BiasedDrift { .. } => t.exp(),
            DisplacementKernel::Poisson { rate, slope, centered } => {
                let mu = Self::poisson_rate(rate, slope, u);
                let shift = if centered { mu } else { 0.0 };
                poisson_series(mu, |k| (t * (k - shift).abs()).exp())?
            }
            DisplacementKernel::Gaussian { ref drift, sigma } => folded_normal_mgf(drift.value(u), sigma, t),
            DisplacementKernel::Deterministic { step } => (t * step.abs()).exp(),
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::Divergence(format!("E[e^(t|X|)] overflows at u = {u}, t = {t}")))
        }
    }

    /// `E[e^{tX} | u]`.
    pub fn mgf(&self, u: f64, t: f64) -> Result<f64> {
        self.shifted_mgf(u, t, 0.0)
    }

    /// `E[e^{t(X - g(u))} | u]`, the moment generating function of the centred increment.
    pub fn centered_mgf(&self, u: f64, t: f64) -> Result<f64> {
        self.shifted_mgf(u, t, self.g(u))
    }

    fn shifted_mgf(&self, u: f64, t: f64, shift: f64) -> Result<f64> {
        let value = match *self {
            DisplacementKernel::Rademacher
            | DisplacementKernel::BiasedDrift { .. }
            | DisplacementKernel::Deterministic { .. } => match self.law(u) {
                Law::Discrete(atoms) => atoms.iter().map(|&(x, p)| p * (t * (x - shift)).exp()).sum(),
                Law::Normal { .. } => unreachable!(),
            },
            DisplacementKernel::Poisson { rate, slope, centered } => {
                let mu = Self::poisson_rate(rate, slope, u);
                let base = if centered { mu } else { 0.0 };
                // exp(μ(e^t - 1)) for the raw count
                (mu * t.exp_m1() - t * (base + shift)).exp()
            }
            DisplacementKernel::Gaussian { ref drift, sigma } => {
                let m = drift.value(u) - shift;
                (m * t + 0.5 * sigma * sigma * t * t).exp()
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::Divergence(format!("E[e^(tX)] overflows at u = {u}, t = {t}")))
        }
    }

    /// `E[e^{t|X - g(u)|} | u]`.
    pub fn centered_exp_abs_moment(&self, u: f64, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::invalid(format!("centered_exp_abs_moment needs t >= 0, got {t}")));
        }
        let g = self.g(u);
        let value = match *self {
            DisplacementKernel::Poisson { rate, slope, .. } => {
                let mu = Self::poisson_rate(rate, slope, u);
                poisson_series(mu, |k| (t * (k - mu).abs()).exp())?
            }
            DisplacementKernel::Gaussian { sigma, .. } => folded_normal_mgf(0.0, sigma, t),
            _ => match self.law(u) {
                Law::Discrete(atoms) => atoms.iter().map(|&(x, p)| p * (t * (x - g).abs()).exp()).sum(),
                Law::Normal { .. } => unreachable!(),
            },
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::Divergence(format!(
                "E[e^(t|X-g|)] overflows at u = {u}, t = {t}"
            )))
        }
    }

    /// Closed-form derivatives of `g` and `ν`.
    pub fn analytic_derivatives(&self, u: f64) -> Option<KernelDerivatives> {
        let d = match *self {
            DisplacementKernel::Rademacher | DisplacementKernel::Deterministic { .. } => [0.0; 5],
            DisplacementKernel::BiasedDrift { kappa } => {
                if (kappa * u).abs() >= 1.0 {
                    // clamped region, g is constant
                    [0.0; 5]
                } else {
                    [kappa, 0.0, 0.0, 0.0, 0.0]
                }
            }
            DisplacementKernel::Poisson { rate, slope, centered } => {
                let mu = Self::poisson_rate(rate, slope, u);
                if centered {
                    [0.0, 0.0, 0.0, slope, 0.0]
                } else {
                    [slope, 0.0, 0.0, slope * (1.0 + 2.0 * mu), 2.0 * slope * slope]
                }
            }
            DisplacementKernel::Gaussian { ref drift, .. } => {
                let g = drift.value(u);
                let [g1, g2, g3] = drift.derivatives(u);
                [g1, g2, g3, 2.0 * g * g1, 2.0 * (g1 * g1 + g * g2)]
            }
        };
        Some(KernelDerivatives {
            g1: d[0],
            g2: d[1],
            g3: d[2],
            nu1: d[3],
            nu2: d[4],
            source: DerivativeSource::Analytic,
        })
    }

    /// Points where `g` or `ν` fail to be differentiable.
    pub fn kinks(&self) -> Vec<f64> {
        match *self {
            DisplacementKernel::BiasedDrift { kappa } if kappa != 0.0 => vec![-1.0 / kappa.abs(), 1.0 / kappa.abs()],
            _ => Vec::new(),
        }
    }
}

/// Smallest `k` with `P(Poisson(μ) ≤ k) > v`.
fn poisson_inverse_cdf(mu: f64, v: f64) -> u64 {
    let mut k = 0u64;
    let mut p = (-mu).exp();
    let mut cdf = p;
    while v >= cdf {
        k += 1;
        p *= mu / k as f64;
        cdf += p;
        if p == 0.0 && k as f64 > mu {
            break;
        }
    }
    k
}

/// `Σ_k P(Poisson(μ) = k) h(k)`, summed until the terms are negligible.
fn poisson_series(mu: f64, h: impl Fn(f64) -> f64) -> Result<f64> {
    let mut p = (-mu).exp();
    let mut sum = 0.0;
    for k in 0..SERIES_TERM_CAP {
        let term = p * h(k as f64);
        if !term.is_finite() {
            return Err(Error::Divergence(format!("Poisson series term overflows at k = {k}")));
        }
        sum += term;
        if k as f64 > mu && term <= 1e-18 * sum {
            return Ok(sum);
        }
        p *= mu / (k + 1) as f64;
    }
    Err(Error::Divergence(format!(
        "Poisson series did not converge within {SERIES_TERM_CAP} terms"
    )))
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `E[e^{t|Y|}]` for `Y ~ N(m, σ²)`.
fn folded_normal_mgf(m: f64, sigma: f64, t: f64) -> f64 {
    if sigma == 0.0 {
        return (t * m.abs()).exp();
    }
    let half_var = 0.5 * sigma * sigma * t * t;
    (half_var + m * t).exp() * normal_cdf(m / sigma + sigma * t)
        + (half_var - m * t).exp() * normal_cdf(-m / sigma + sigma * t)
}
