//! Process models: a scale, a displacement kernel `p(x|u)` and a branching
//! kernel `m(u)`, together with the derived quantities the bounds and
//! recurrences consume (`g`, `ν`, `β`, exponential moments, derivatives).

mod branching;
pub mod catalog;
mod displacement;

pub use branching::BranchingKernel;
pub use displacement::{DisplacementKernel, Drift, Law, MAX_POISSON_RATE};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngSpec;

/// Default relative tolerance for quadrature-backed expectations.
pub const QUADRATURE_TOL: f64 = 1e-10;
/// Default number of draws for a Monte Carlo `β`.
pub const BETA_DRAWS: usize = 100_000;

/// Closed real interval; infinite ends are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.lo && u <= self.hi
    }

    pub fn clamp(&self, u: f64) -> f64 {
        u.clamp(self.lo, self.hi)
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }
}

fn default_max_ratio() -> f64 {
    10.0
}

/// `N` (position scale), `n` (steps simulated) and `M` (terminal generation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    /// `N`: positions are scaled as `u = U / N`.
    pub scale_n: u64,
    /// `n`: number of steps simulated.
    pub horizon: usize,
    /// `M`: maximal horizon / terminal generation of the branching walk.
    pub max_horizon: usize,
    /// `C` in the constraint `M ≤ C·N`.
    #[serde(default = "default_max_ratio")]
    pub max_ratio: f64,
}

impl ScaleParams {
    pub fn new(scale_n: u64, horizon: usize, max_horizon: usize) -> Self {
        ScaleParams {
            scale_n,
            horizon,
            max_horizon,
            max_ratio: default_max_ratio(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale_n == 0 {
            return Err(Error::config("scale.scale_n", "N must be a positive integer"));
        }
        if self.horizon == 0 {
            return Err(Error::config("scale.horizon", "n must be a positive integer"));
        }
        if self.horizon > self.max_horizon {
            return Err(Error::config(
                "scale.horizon",
                format!(
                    "n = {} exceeds M = {} (requires 1 <= n <= M)",
                    self.horizon, self.max_horizon
                ),
            ));
        }
        if self.max_horizon as f64 > self.max_ratio * self.scale_n as f64 {
            return Err(Error::config(
                "scale.max_horizon",
                format!(
                    "M = {} exceeds C*N = {}*{} (requires M = O(N))",
                    self.max_horizon, self.max_ratio, self.scale_n
                ),
            ));
        }
        Ok(())
    }

    pub fn n_f64(&self) -> f64 {
        self.scale_n as f64
    }
}

/// Where a set of derivatives came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DerivativeSource {
    Analytic,
    FiniteDifference { h: f64 },
}

/// How derivatives are requested.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DerivativePreference {
    /// Closed form when the kernel has one, central differences otherwise.
    Auto {
        h: f64,
    },
    FiniteDifference {
        h: f64,
    },
}

impl Default for DerivativePreference {
    fn default() -> Self {
        DerivativePreference::Auto { h: 1e-4 }
    }
}

/// `g′, g″, g‴, ν′, ν″` at one position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelDerivatives {
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub source: DerivativeSource,
}

/// How `β(u)` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaMethod {
    /// Exact summation (discrete kernels) or adaptive quadrature (Gaussian).
    Exact,
    MonteCarlo {
        draws: usize,
        rng: RngSpec,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaEstimate {
    pub value: f64,
    /// Standard error, present for Monte Carlo estimates.
    pub se: Option<f64>,
    pub analytic: bool,
}

/// One complete RW/BRW process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub scale: ScaleParams,
    pub displacement: DisplacementKernel,
    #[serde(default = "unit_branching")]
    pub branching: BranchingKernel,
    pub u0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog_id: Option<String>,
}

fn unit_branching() -> BranchingKernel {
    BranchingKernel::Unit
}

impl ModelSpec {
    pub fn new(scale: ScaleParams, displacement: DisplacementKernel, branching: BranchingKernel, u0: f64) -> Self {
        ModelSpec {
            scale,
            displacement,
            branching,
            u0,
            catalog_id: None,
        }
    }

    /// A random-walk model with unit branching.
    pub fn walk(scale: ScaleParams, displacement: DisplacementKernel, u0: f64) -> Self {
        Self::new(scale, displacement, BranchingKernel::Unit, u0)
    }

    pub fn with_branching(&self, branching: BranchingKernel) -> Self {
        ModelSpec {
            branching,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scale.validate()?;
        self.displacement.validate()?;
        self.branching.validate()?;
        if !self.u0.is_finite() || !self.domain().contains(self.u0) {
            let d = self.domain();
            return Err(Error::config(
                "model.u0",
                format!("u0 = {} lies outside the model domain [{}, {}]", self.u0, d.lo, d.hi),
            ));
        }
        Ok(())
    }

    pub fn n_scale(&self) -> f64 {
        self.scale.n_f64()
    }

    /// Intersection of the displacement and branching domains.
    pub fn domain(&self) -> Interval {
        self.displacement.domain().intersect(&self.branching.domain())
    }

    fn check(&self, u: f64, what: &str) -> Result<()> {
        let d = self.domain();
        if d.contains(u) {
            Ok(())
        } else {
            Err(Error::Domain {
                what: what.to_string(),
                u,
                lo: d.lo,
                hi: d.hi,
            })
        }
    }

    /// `g(u) = E[X | u]`.
    pub fn eval_g(&self, u: f64) -> Result<f64> {
        self.check(u, "g")?;
        Ok(self.displacement.g(u))
    }

    /// `ν(u) = E[X² | u]`.
    pub fn eval_nu(&self, u: f64) -> Result<f64> {
        self.check(u, "nu")?;
        Ok(self.displacement.nu(u))
    }

    /// `E[e^{t|X|} | u]`.
    pub fn exp_abs_moment(&self, u: f64, t: f64) -> Result<f64> {
        self.check(u, "exp_abs_moment")?;
        self.displacement.exp_abs_moment(u, t)
    }

    /// `β(u) = E[m(u + X/N) | u]`. Landing points outside the branching
    /// domain are clamped onto it.
    pub fn eval_beta(&self, u: f64, method: BetaMethod) -> Result<BetaEstimate> {
        self.check(u, "beta")?;
        let n = self.n_scale();
        let bdomain = self.branching.domain();
        let m_at = |x: f64| self.branching.m(bdomain.clamp(u + x / n));
        match method {
            BetaMethod::Exact => {
                let law = self.displacement.law(u);
                let analytic = law.is_analytic();
                Ok(BetaEstimate {
                    value: law.expect(m_at, QUADRATURE_TOL),
                    se: None,
                    analytic,
                })
            }
            BetaMethod::MonteCarlo { draws, rng } => {
                if draws < 2 {
                    return Err(Error::invalid("Monte Carlo beta needs at least two draws"));
                }
                let mut r = rng.stream(0);
                let values: Vec<f64> = (0..draws).map(|_| m_at(self.displacement.sample(u, &mut r))).collect();
                let (mean, var) = crate::stats::mean_var(&values);
                Ok(BetaEstimate {
                    value: mean,
                    se: Some((var / draws as f64).sqrt()),
                    analytic: false,
                })
            }
        }
    }

    /// Derivatives of `g` and `ν` at `u`.
    pub fn derivatives(&self, u: f64, pref: DerivativePreference) -> Result<KernelDerivatives> {
        self.check(u, "derivatives")?;
        match pref {
            DerivativePreference::Auto { h } => match self.displacement.analytic_derivatives(u) {
                Some(d) => Ok(d),
                None => self.finite_difference_derivatives(u, h),
            },
            DerivativePreference::FiniteDifference { h } => self.finite_difference_derivatives(u, h),
        }
    }

    /// Central differences: orders 1–3 for `g`, 1–2 for `ν`.
    pub fn finite_difference_derivatives(&self, u: f64, h: f64) -> Result<KernelDerivatives> {
        if !(h > 0.0) {
            return Err(Error::invalid(format!(
                "finite-difference step must be positive, got {h}"
            )));
        }
        let d = self.domain();
        if !d.contains(u - 2.0 * h) || !d.contains(u + 2.0 * h) {
            return Err(Error::Derivative(format!(
                "stencil u ± 2h = [{}, {}] leaves the domain [{}, {}]",
                u - 2.0 * h,
                u + 2.0 * h,
                d.lo,
                d.hi
            )));
        }
        let g = |x: f64| self.displacement.g(x);
        let nu = |x: f64| self.displacement.nu(x);
        let (gm2, gm1, g0, gp1, gp2) = (g(u - 2.0 * h), g(u - h), g(u), g(u + h), g(u + 2.0 * h));
        let (nm1, n0, np1) = (nu(u - h), nu(u), nu(u + h));
        Ok(KernelDerivatives {
            g1: (gp1 - gm1) / (2.0 * h),
            g2: (gp1 - 2.0 * g0 + gm1) / (h * h),
            g3: (gp2 - 2.0 * gp1 + 2.0 * gm1 - gm2) / (2.0 * h * h * h),
            nu1: (np1 - nm1) / (2.0 * h),
            nu2: (np1 - 2.0 * n0 + nm1) / (h * h),
            source: DerivativeSource::FiniteDifference { h },
        })
    }

    /// One step of the walk from scaled position `u`. Positions outside the
    /// domain are clamped onto it before the kernel is evaluated; the flag
    /// reports when that happened.
    #[inline]
    pub fn step<R: Rng + ?Sized>(&self, u: f64, rng: &mut R) -> (f64, bool) {
        let d = self.displacement.domain();
        if d.contains(u) {
            (self.displacement.sample(u, rng), false)
        } else {
            (self.displacement.sample(d.clamp(u), rng), true)
        }
    }

    /// A short stable fingerprint of the model, for manifests.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("model serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scale() -> ScaleParams {
        ScaleParams::new(100, 100, 100)
    }

    #[test]
    fn eval_g_examples() {
        let m = ModelSpec::walk(scale(), DisplacementKernel::Rademacher, 0.0);
        assert_eq!(m.eval_g(0.3).unwrap(), 0.0);
        let m = ModelSpec::walk(scale(), DisplacementKernel::BiasedDrift { kappa: 0.5 }, 0.0);
        assert_relative_eq!(m.eval_g(0.2).unwrap(), 0.1, epsilon = 1e-15);
        let m = ModelSpec::walk(
            scale(),
            DisplacementKernel::Gaussian {
                drift: Drift::Sine { amplitude: 1.0 },
                sigma: 1.0,
            },
            0.0,
        );
        assert_eq!(m.eval_g(0.0).unwrap(), 0.0);
    }

    #[test]
    fn eval_g_outside_domain_is_an_error() {
        let m = ModelSpec::walk(scale(), DisplacementKernel::BiasedDrift { kappa: 2.0 }, 0.0);
        assert!(matches!(m.eval_g(0.7), Err(Error::Domain { .. })));
    }

    #[test]
    fn eval_nu_examples() {
        let m = ModelSpec::walk(scale(), DisplacementKernel::Rademacher, 0.0);
        assert_eq!(m.eval_nu(0.9).unwrap(), 1.0);
        let m = ModelSpec::walk(scale(), DisplacementKernel::BiasedDrift { kappa: 0.3 }, 0.0);
        assert_eq!(m.eval_nu(-0.4).unwrap(), 1.0);
        let m = ModelSpec::walk(
            scale(),
            DisplacementKernel::Poisson {
                rate: 2.0,
                slope: 0.0,
                centered: true,
            },
            0.0,
        );
        assert_eq!(m.eval_nu(7.0).unwrap(), 2.0);
    }

    #[test]
    fn exp_abs_moment_examples() {
        let m = ModelSpec::walk(scale(), DisplacementKernel::Rademacher, 0.0);
        assert_relative_eq!(
            m.exp_abs_moment(0.1, 1.0).unwrap(),
            std::f64::consts::E,
            epsilon = 1e-15
        );
        let m = ModelSpec::walk(
            scale(),
            DisplacementKernel::Poisson {
                rate: 1.0,
                slope: 0.0,
                centered: false,
            },
            0.0,
        );
        let expected = (std::f64::consts::E - 1.0).exp();
        assert_relative_eq!(m.exp_abs_moment(0.0, 1.0).unwrap(), expected, epsilon = 1e-13);
        assert!((expected - 5.5749).abs() < 1e-4);
        assert_eq!(m.exp_abs_moment(0.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn beta_examples() {
        let unit = ModelSpec::walk(scale(), DisplacementKernel::Rademacher, 0.5);
        assert_eq!(unit.eval_beta(0.2, BetaMethod::Exact).unwrap().value, 1.0);

        let ksat = BranchingKernel::KsatLike { k: 2 };
        let still = ModelSpec::new(
            scale(),
            DisplacementKernel::Deterministic { step: 0.0 },
            ksat.clone(),
            0.5,
        );
        assert_eq!(still.eval_beta(0.5, BetaMethod::Exact).unwrap().value, 0.75);

        // E[(0.5 + X/100)^2] = 0.25 + 1/100^2 for fair ±1 steps
        let coin = ModelSpec::new(scale(), DisplacementKernel::Rademacher, ksat, 0.5);
        let b = coin.eval_beta(0.5, BetaMethod::Exact).unwrap();
        assert_relative_eq!(b.value, 0.7499, epsilon = 1e-14);
        assert!(b.analytic);

        let mc = coin
            .eval_beta(
                0.5,
                BetaMethod::MonteCarlo {
                    draws: BETA_DRAWS,
                    rng: RngSpec::new(1),
                },
            )
            .unwrap();
        assert!((mc.value - 0.7499).abs() < 4.0 * mc.se.unwrap().max(1e-12));
    }

    #[test]
    fn beta_by_quadrature_for_gaussian_kernel() {
        // m = 1 + |u|, u = 0, X ~ N(0, 1), N = 100: β = 1 + E|X|/100
        let model = ModelSpec::new(
            scale(),
            DisplacementKernel::Gaussian {
                drift: Drift::Zero,
                sigma: 1.0,
            },
            BranchingKernel::Scatter { delta: 1.0 },
            0.0,
        );
        let b = model.eval_beta(0.0, BetaMethod::Exact).unwrap();
        assert!(!b.analytic);
        assert_relative_eq!(
            b.value,
            1.0 + (2.0 / std::f64::consts::PI).sqrt() / 100.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn derivative_examples() {
        let sq = ModelSpec::walk(
            scale(),
            DisplacementKernel::Gaussian {
                drift: Drift::Square { coef: 1.0 },
                sigma: 1.0,
            },
            0.0,
        );
        let d = sq.derivatives(1.0, DerivativePreference::default()).unwrap();
        assert_eq!((d.g1, d.g2), (2.0, 2.0));
        assert_eq!(d.source, DerivativeSource::Analytic);

        let lin = ModelSpec::walk(scale(), DisplacementKernel::BiasedDrift { kappa: 0.4 }, 0.0);
        for u in [-0.5, 0.0, 0.9] {
            assert_eq!(lin.derivatives(u, DerivativePreference::default()).unwrap().g2, 0.0);
        }

        let sine = ModelSpec::walk(
            scale(),
            DisplacementKernel::Gaussian {
                drift: Drift::Sine { amplitude: 1.0 },
                sigma: 1.0,
            },
            0.0,
        );
        let fd = sine.finite_difference_derivatives(0.7, 1e-4).unwrap();
        assert!((fd.g1 - 0.7f64.cos()).abs() < 1e-6);
        assert!((fd.g2 + 0.7f64.sin()).abs() < 1e-6);
    }

    #[test]
    fn finite_differences_need_room_in_the_domain() {
        let m = ModelSpec::walk(scale(), DisplacementKernel::BiasedDrift { kappa: 1.0 }, 0.0);
        assert!(matches!(
            m.finite_difference_derivatives(0.9999, 1e-3),
            Err(Error::Derivative(_))
        ));
        assert!(m.finite_difference_derivatives(0.5, 0.0).is_err());
    }

    #[test]
    fn scale_invariants() {
        assert!(ScaleParams::new(100, 101, 100).validate().is_err());
        assert!(ScaleParams::new(10, 10, 200).validate().is_err());
        assert!(ScaleParams::new(100, 50, 100).validate().is_ok());
    }

    #[test]
    fn finite_differences_converge_at_second_order() {
        let sine = ModelSpec::walk(
            scale(),
            DisplacementKernel::Gaussian {
                drift: Drift::Sine { amplitude: 1.0 },
                sigma: 1.0,
            },
            0.0,
        );
        let u: f64 = 0.4;
        let exact = u.cos();
        let error = |h: f64| (sine.finite_difference_derivatives(u, h).unwrap().g1 - exact).abs();
        let (e1, e2, e3) = (error(0.08), error(0.04), error(0.02));
        assert!(
            (e1 / e2 - 4.0).abs() < 0.1 && (e2 / e3 - 4.0).abs() < 0.1,
            "{e1} {e2} {e3}"
        );
    }

    mod props {
        use super::*;
        use crate::models::catalog::{martingale_kernels, sample_displacements};
        use proptest::prelude::*;

        fn kernel() -> impl Strategy<Value = DisplacementKernel> {
            proptest::sample::select(sample_displacements())
        }

        proptest! {
            #[test]
            fn variance_dominates_squared_drift(k in kernel(), u in -0.95f64..0.95) {
                let m = ModelSpec::walk(scale(), k, 0.0);
                let (g, nu) = (m.eval_g(u).unwrap(), m.eval_nu(u).unwrap());
                prop_assert!(nu - g * g >= -1e-12);
            }

            #[test]
            fn exp_abs_moment_starts_at_one_and_grows(k in kernel(), u in -0.95f64..0.95, t in 0.0f64..1.0, dt in 0.0f64..0.5) {
                let m = ModelSpec::walk(scale(), k, 0.0);
                prop_assert_eq!(m.exp_abs_moment(u, 0.0).unwrap(), 1.0);
                let (lo, hi) = (m.exp_abs_moment(u, t).unwrap(), m.exp_abs_moment(u, t + dt).unwrap());
                prop_assert!(lo >= 1.0 - 1e-12 && hi >= lo * (1.0 - 1e-9));
            }

            #[test]
            fn martingale_kernels_have_no_drift(i in 0usize..4, u in -0.95f64..0.95) {
                let m = ModelSpec::walk(scale(), martingale_kernels()[i].clone(), 0.0);
                prop_assert_eq!(m.eval_g(u).unwrap(), 0.0);
            }
        }
    }
}
