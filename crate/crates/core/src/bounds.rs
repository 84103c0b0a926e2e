//! Closed-form tail bounds with precondition checks.
//!
//! Bounds above 1 are returned as computed and flagged `vacuous`, so the
//! monotonicity properties hold exactly. The classical `cosh` inequalities
//! for bounded increments are special cases of [`mgf_bound`] and have no
//! separate entry point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DisplacementKernel, ScaleParams, QUADRATURE_TOL};

/// Deviations below `NEIGHBORHOOD_WINDOW · √N` are outside the regime the
/// neighborhood bound is meant for and get a warning flag.
pub const NEIGHBORHOOD_WINDOW: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    AzumaClassic,
    AzumaDowngraded,
    Extended,
    Neighborhood,
    Mgf,
}

impl BoundKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundKind::AzumaClassic => "azuma_classic",
            BoundKind::AzumaDowngraded => "azuma_downgraded",
            BoundKind::Extended => "extended",
            BoundKind::Neighborhood => "neighborhood",
            BoundKind::Mgf => "mgf",
        }
    }
}

impl std::fmt::Display for BoundKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AzumaVariant {
    /// `2·exp(−λ²/(2n c²))`.
    Classic,
    /// `2·exp(−(λ²/2n)/(2e^c))`, the constant produced by the exponential-moment inequality.
    Downgraded,
}

/// A bound evaluation together with its validity status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub kind: BoundKind,
    pub value: f64,
    pub valid: bool,
    /// The bound exceeds 1 (tail bounds) and so says nothing.
    pub vacuous: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl BoundValue {
    fn tail(kind: BoundKind, value: f64) -> Self {
        BoundValue {
            kind,
            value,
            valid: true,
            vacuous: value >= 1.0,
            reason: None,
            flags: Vec::new(),
        }
    }

    /// Turns an invalid evaluation into an [`Error::InvalidRegime`].
    pub fn require_valid(self) -> Result<Self> {
        if self.valid {
            Ok(self)
        } else {
            Err(Error::InvalidRegime(
                self.reason
                    .unwrap_or_else(|| format!("{} bound is not valid", self.kind)),
            ))
        }
    }
}

/// Shared parameters `(δ, K, L, A, c, λ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub delta: f64,
    pub k: f64,
    pub lipschitz: f64,
    /// `A = 1 + L·M/N`.
    pub a: f64,
    pub c: f64,
    pub lambda: f64,
}

impl BoundParams {
    /// Builds the parameters, deriving `A` from `L` and the scale. `c`
    /// defaults to `K²/δ²`.
    pub fn new(delta: f64, k: f64, lipschitz: f64, scale: &ScaleParams, lambda: f64) -> Result<Self> {
        let a = amplification(lipschitz, scale);
        let params = BoundParams {
            delta,
            k,
            lipschitz,
            a,
            c: default_c(delta, k),
            lambda,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::config("bounds.delta", "must be positive and finite"));
        }
        if !(self.k >= 1.0) {
            return Err(Error::config("bounds.k", "must be at least 1"));
        }
        if !(self.lipschitz >= 0.0) {
            return Err(Error::config("bounds.lipschitz", "must be nonnegative"));
        }
        if !(self.a >= 1.0) {
            return Err(Error::config("bounds.a", "must be at least 1"));
        }
        if !(self.c > 0.0) {
            return Err(Error::config("bounds.c", "must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::config("bounds.lambda", "must be nonnegative"));
        }
        Ok(())
    }
}

/// `A = 1 + L·M/N`.
pub fn amplification(lipschitz: f64, scale: &ScaleParams) -> f64 {
    1.0 + lipschitz * scale.max_horizon as f64 / scale.n_f64()
}

/// The default neighborhood constant `c = K²/δ²`.
pub fn default_c(delta: f64, k: f64) -> f64 {
    k * k / (delta * delta)
}

/// The two forms of the moment-generating-function bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgfBound {
    /// `1 + (t/δ)²·E[e^{δ|X|}]`.
    pub linear: f64,
    /// `exp((t/δ)²·E[e^{δ|X|}])`.
    pub exponential: f64,
}

/// Upper bounds on `E[e^{tX}]` for a centred increment with
/// `E[e^{δ|X|}] = exp_moment`, valid for `|t| ≤ δ`.
pub fn mgf_bound(t: f64, delta: f64, exp_moment: f64) -> Result<MgfBound> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("delta must be positive, got {delta}")));
    }
    if !(exp_moment >= 1.0) {
        return Err(Error::invalid(format!(
            "exponential moment must be at least 1, got {exp_moment}"
        )));
    }
    if t.abs() > delta {
        return Err(Error::Range { t, delta });
    }
    let x = (t / delta).powi(2) * exp_moment;
    Ok(MgfBound {
        linear: 1.0 + x,
        exponential: x.exp(),
    })
}

fn check_tail_inputs(n: usize, lambda: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    Ok(())
}

/// Azuma–Hoeffding bound for `n` martingale differences bounded by `c`.
pub fn azuma_bound(n: usize, lambda: f64, c: f64, variant: AzumaVariant) -> Result<BoundValue> {
    check_tail_inputs(n, lambda)?;
    if !(c > 0.0) {
        return Err(Error::invalid(format!("increment bound c must be positive, got {c}")));
    }
    let n = n as f64;
    let (kind, exponent) = match variant {
        AzumaVariant::Classic => (BoundKind::AzumaClassic, lambda * lambda / (2.0 * n * c * c)),
        AzumaVariant::Downgraded => (
            BoundKind::AzumaDowngraded,
            lambda * lambda / (2.0 * n) / (2.0 * c.exp()),
        ),
    };
    Ok(BoundValue::tail(kind, 2.0 * (-exponent).exp()))
}

/// `2·exp(−δ²λ²/(4K²n))`.
pub fn extended_bound(n: usize, lambda: f64, delta: f64, k: f64) -> Result<BoundValue> {
    check_tail_inputs(n, lambda)?;
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("delta must be positive, got {delta}")));
    }
    if !(k >= 1.0) {
        return Err(Error::invalid(format!("K must be at least 1, got {k}")));
    }
    let exponent = delta * delta * lambda * lambda / (4.0 * k * k * n as f64);
    Ok(BoundValue::tail(BoundKind::Extended, 2.0 * (-exponent).exp()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalT {
    pub t: f64,
    /// The unconstrained minimiser exceeded `δ` and was clamped to it.
    pub clamped: bool,
}

/// Minimiser of `−tλ + n t²K²/δ²` over `0 ≤ t ≤ δ`.
pub fn optimal_t(lambda: f64, n: usize, delta: f64, k: f64) -> Result<OptimalT> {
    check_tail_inputs(n, lambda)?;
    if !(delta > 0.0) || !(k >= 1.0) {
        return Err(Error::invalid("optimal_t needs delta > 0 and K >= 1"));
    }
    let t = lambda * delta * delta / (2.0 * n as f64 * k * k);
    Ok(if t > delta {
        OptimalT {
            t: delta,
            clamped: true,
        }
    } else {
        OptimalT { t, clamped: false }
    })
}

/// Lower bound `(1 − 2e^{−λ²/(4cN)})^n` on the probability that the first
/// `n` partial sums all stay within `λ` of their means.
///
/// When the base is not positive the result is marked invalid and its value
/// is the trivial lower bound 0; the literal power is kept in `flags`.
pub fn neighborhood_bound(n: usize, lambda: f64, c: f64, scale_n: u64) -> Result<BoundValue> {
    check_tail_inputs(n, lambda)?;
    if scale_n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    if !(c > 0.0) {
        return Err(Error::invalid(format!("c must be positive, got {c}")));
    }
    let big_n = scale_n as f64;
    let miss = 2.0 * (-lambda * lambda / (4.0 * c * big_n)).exp();
    let base = 1.0 - miss;
    let mut flags = Vec::new();
    if lambda < NEIGHBORHOOD_WINDOW * big_n.sqrt() {
        flags.push(format!(
            "lambda_below_window: lambda = {lambda} < {NEIGHBORHOOD_WINDOW}*sqrt(N) = {}",
            NEIGHBORHOOD_WINDOW * big_n.sqrt()
        ));
    }
    if base > 0.0 {
        Ok(BoundValue {
            kind: BoundKind::Neighborhood,
            value: base.powi(n as i32),
            valid: true,
            vacuous: false,
            reason: None,
            flags,
        })
    } else {
        flags.push(format!("literal_power: {}", base.powi(n as i32)));
        Ok(BoundValue {
            kind: BoundKind::Neighborhood,
            value: 0.0,
            valid: false,
            vacuous: true,
            reason: Some(format!("base 1 - 2exp(-lambda^2/(4cN)) = {base} is not positive")),
            flags,
        })
    }
}

/// Outcome of checking `E[e^{t(X−g)}] ≤ 1 + (t/δ)² E[e^{δ|X−g|}]` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgfSweep {
    pub checked: usize,
    pub violations: usize,
    /// Largest ratio of the true moment generating function to the bound.
    pub worst_ratio: f64,
}

/// Verifies the exponential-moment inequality for one kernel at each `u`, on a
/// `grid × grid` lattice of `δ ∈ (0, 1]` and `t ∈ [−δ, δ]`. The true moment
/// generating function is computed from the kernel's law (exact summation or
/// quadrature), not from its closed form.
pub fn mgf_sweep(kernel: &DisplacementKernel, positions: &[f64], grid: usize) -> Result<MgfSweep> {
    let grid = grid.max(2);
    let mut report = MgfSweep {
        checked: 0,
        violations: 0,
        worst_ratio: 0.0,
    };
    for &u in positions {
        let g = kernel.g(u);
        let law = kernel.law(u);
        for j in 1..=grid {
            let delta = j as f64 / grid as f64;
            let moment = law.expect(|x| (delta * (x - g).abs()).exp(), QUADRATURE_TOL);
            for i in 0..grid {
                let t = delta * (-1.0 + 2.0 * i as f64 / (grid - 1) as f64);
                let actual = law.expect(|x| (t * (x - g)).exp(), QUADRATURE_TOL);
                let bound = mgf_bound(t, delta, moment.max(1.0))?.linear;
                report.checked += 1;
                report.worst_ratio = report.worst_ratio.max(actual / bound);
                if actual > bound {
                    report.violations += 1;
                }
            }
        }
    }
    Ok(report)
}
