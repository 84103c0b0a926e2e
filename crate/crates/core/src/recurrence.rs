//! Deterministic propagation of the mean path `ū`, the variance
//! `Var_k = E(u_k − ū_k)²` and the sensitivity of `ū` to its starting point.
//!
//! Step indices are absolute: a path started at index `i0` covers
//! `i0..=n`, and every accessor takes absolute indices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DerivativePreference, DerivativeSource, KernelDerivatives, ModelSpec};

/// `E|Z|³` for a standard normal `Z`, used to size the neglected third-order term.
const NORMAL_ABS_THIRD_MOMENT: f64 = 1.595_769_121_605_730_7;

/// Horizons longer than this many multiples of `N` are flagged.
pub const LONG_HORIZON_RATIO: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanOrder {
    /// `ū_{k+1} = ū_k + g(ū_k)/N`.
    #[default]
    First,
    /// Adds `½ g″(ū_k)·Var_k / N`.
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanPath {
    pub start: usize,
    /// `ū_start, …, ū_end`.
    pub values: Vec<f64>,
    pub order: MeanOrder,
    pub derivatives: DerivativePreference,
}

impl MeanPath {
    pub fn end(&self) -> usize {
        self.start + self.values.len() - 1
    }

    /// `ū_k` for absolute index `k`.
    pub fn at(&self, k: usize) -> f64 {
        self.values[k - self.start]
    }

    fn check_range(&self, i: usize, n: usize) -> Result<()> {
        if i < self.start || n > self.end() || i > n {
            return Err(Error::invalid(format!(
                "indices {i}..{n} are not inside the mean path {}..{}",
                self.start,
                self.end()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceCoeffs {
    /// `1 + (2g′ + ν″/(2N) − g·g″/N)/N`.
    pub a: f64,
    /// `(ν − g²)/N²`.
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCurve {
    pub start: usize,
    /// `Var_start = 0, …, Var_end`.
    pub values: Vec<f64>,
    /// Coefficients used for each step `k → k+1`.
    pub coeffs: Vec<RecurrenceCoeffs>,
    pub source: DerivativeSource,
    pub flags: Vec<String>,
}

impl VarianceCurve {
    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("curve is never empty")
    }
}

/// Estimated size of the terms the recurrences drop.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Accumulated `½ g″ Var / N` (what the second-order mean adds).
    pub second_order_mean: f64,
    /// Accumulated `|g‴|·E|u−ū|³/(6N)`, with a Gaussian third absolute moment.
    pub third_order_mean: f64,
    /// Accumulated `|a_k − (1 + 2g′_k/N)|·Var_k`, the `O(1/N²)` factor terms.
    pub factor_terms: f64,
    /// `C` in `Var ≤ C/N`, from the path maxima of `ν − g²` and of the growth rate.
    pub variance_constant: f64,
}

fn derivs(model: &ModelSpec, u: f64, pref: DerivativePreference) -> Result<KernelDerivatives> {
    model.derivatives(u, pref).map_err(|e| match e {
        Error::Domain { .. } => e,
        other => Error::Derivative(other.to_string()),
    })
}

fn coeffs_at(model: &ModelSpec, u: f64, pref: DerivativePreference) -> Result<(RecurrenceCoeffs, KernelDerivatives)> {
    let n = model.n_scale();
    let g = model.eval_g(u)?;
    let nu = model.eval_nu(u)?;
    let d = derivs(model, u, pref)?;
    let a = 1.0 + (2.0 * d.g1 + d.nu2 / (2.0 * n) - g * d.g2 / n) / n;
    let b = ((nu - g * g) / (n * n)).max(0.0);
    Ok((RecurrenceCoeffs { a, b }, d))
}

/// The mean path from `u0` at index `i0` up to index `n`.
pub fn mean_path(model: &ModelSpec, u0: f64, i0: usize, n: usize, order: MeanOrder) -> Result<MeanPath> {
    mean_path_with(model, u0, i0, n, order, DerivativePreference::default())
}

pub fn mean_path_with(
    model: &ModelSpec,
    u0: f64,
    i0: usize,
    n: usize,
    order: MeanOrder,
    derivatives: DerivativePreference,
) -> Result<MeanPath> {
    if i0 > n {
        return Err(Error::invalid(format!("start index {i0} exceeds end index {n}")));
    }
    if n > model.scale.max_horizon {
        return Err(Error::config(
            "scale.max_horizon",
            format!("end index {n} exceeds M = {}", model.scale.max_horizon),
        ));
    }
    let big_n = model.n_scale();
    let mut values = Vec::with_capacity(n - i0 + 1);
    let mut u = u0;
    let mut var = 0.0;
    values.push(u);
    for _ in i0..n {
        let g = model.eval_g(u)?;
        let mut next = u + g / big_n;
        if order == MeanOrder::Second {
            let (c, d) = coeffs_at(model, u, derivatives)?;
            next += 0.5 * d.g2 * var / big_n;
            var = c.a * var + c.b;
        }
        u = next;
        values.push(u);
    }
    model.eval_g(u)?;
    Ok(MeanPath {
        start: i0,
        values,
        order,
        derivatives,
    })
}

/// Iterates `Var_{k+1} = a_k Var_k + b_k` along the mean path.
pub fn variance_curve(model: &ModelSpec, mean: &MeanPath) -> Result<VarianceCurve> {
    let mut values = Vec::with_capacity(mean.values.len());
    let mut coeffs = Vec::with_capacity(mean.values.len() - 1);
    let mut var = 0.0;
    let mut source = DerivativeSource::Analytic;
    values.push(var);
    for &u in &mean.values[..mean.values.len() - 1] {
        let (c, d) = coeffs_at(model, u, mean.derivatives)?;
        source = d.source;
        var = (c.a * var + c.b).max(0.0);
        values.push(var);
        coeffs.push(c);
    }
    let mut flags = Vec::new();
    let steps = (mean.values.len() - 1) as f64;
    let big_n = model.n_scale();
    if steps > LONG_HORIZON_RATIO * big_n {
        flags.push(format!(
            "horizon_much_longer_than_n: {steps} steps > {LONG_HORIZON_RATIO}*N"
        ));
    }
    let constant = variance_bound_constant(model, mean)?;
    if var > constant / big_n * (1.0 + 1e-9) {
        flags.push(format!("var_exceeds_c_over_n: {var} > {constant}/N"));
    }
    Ok(VarianceCurve {
        start: mean.start,
        values,
        coeffs,
        source,
        flags,
    })
}

/// `(1/N²) Σ_{j} (ν_j − g_j²) ∏_{k>j} (1 + 2g′_k/N)`, the variance with the
/// `O(1/N²)` factor terms dropped.
pub fn closed_form_variance(model: &ModelSpec, mean: &MeanPath) -> Result<f64> {
    Ok(*closed_form_curve(model, mean)?.last().expect("curve is never empty"))
}

/// The closed form evaluated at every index of the mean path.
pub fn closed_form_curve(model: &ModelSpec, mean: &MeanPath) -> Result<Vec<f64>> {
    let big_n = model.n_scale();
    let mut total = 0.0;
    let mut out = Vec::with_capacity(mean.values.len());
    out.push(0.0);
    // Horner form: running (sum) * factor_k + b_k.
    for &u in &mean.values[..mean.values.len() - 1] {
        let g = model.eval_g(u)?;
        let nu = model.eval_nu(u)?;
        let d = derivs(model, u, mean.derivatives)?;
        total = total * (1.0 + 2.0 * d.g1 / big_n) + (nu - g * g).max(0.0);
        out.push(total / (big_n * big_n));
    }
    Ok(out)
}

/// `∏_{k=i}^{n−1} (1 + g′(ū_k)/N)`: how a perturbation of `ū_i` is carried to `ū_n`.
pub fn sensitivity_factor(model: &ModelSpec, mean: &MeanPath, i: usize, n: usize) -> Result<f64> {
    mean.check_range(i, n)?;
    let big_n = model.n_scale();
    let mut product = 1.0;
    for k in i..n {
        product *= 1.0 + derivs(model, mean.at(k), mean.derivatives)?.g1 / big_n;
    }
    Ok(product)
}

/// Predicted `∂E(X_l | u_i)/∂u_i = g′(ū_{l−1})·∏_{k=i}^{l−2}(1 + g′_k/N)`.
pub fn effective_lipschitz(model: &ModelSpec, mean: &MeanPath, i: usize, l: usize) -> Result<f64> {
    if l <= i {
        return Err(Error::invalid(format!("need i < l, got i = {i}, l = {l}")));
    }
    let slope = derivs(model, mean.at(l - 1), mean.derivatives)?.g1;
    Ok(slope * sensitivity_factor(model, mean, i, l - 1)?)
}

/// `L = max_{i<l} |g′(ū_{l−1})|·∏_{k=i}^{l−2}(1 + g′_k/N)` over the path.
pub fn lipschitz_constant(model: &ModelSpec, mean: &MeanPath) -> Result<f64> {
    let big_n = model.n_scale();
    let factors: Vec<f64> = mean
        .values
        .iter()
        .map(|&u| derivs(model, u, mean.derivatives).map(|d| d.g1))
        .collect::<Result<_>>()?;
    let mut best = 0.0f64;
    for end in 0..factors.len().saturating_sub(1) {
        // end = l − 1; walk i downward from end, extending the product
        let mut product = 1.0f64;
        let mut widest = 1.0f64;
        for i in (0..end).rev() {
            product *= 1.0 + factors[i] / big_n;
            widest = widest.max(product.abs());
        }
        best = best.max(factors[end].abs() * widest);
    }
    Ok(best)
}

/// `C` with `Var_end ≤ C/N`: `B·(s/N)·exp(G·s/N)` for `s` steps, where `B`
/// and `G` are the path maxima of `ν − g²` and `|2g′ + ν″/(2N) − g g″/N|`.
pub fn variance_bound_constant(model: &ModelSpec, mean: &MeanPath) -> Result<f64> {
    let big_n = model.n_scale();
    let (mut b_max, mut g_max) = (0.0f64, 0.0f64);
    for &u in &mean.values[..mean.values.len() - 1] {
        let (c, _) = coeffs_at(model, u, mean.derivatives)?;
        b_max = b_max.max(c.b * big_n * big_n);
        g_max = g_max.max(((c.a - 1.0) * big_n).abs());
    }
    let ratio = (mean.values.len() - 1) as f64 / big_n;
    Ok(b_max * ratio * (g_max * ratio).exp())
}

/// Sizes of the neglected terms along the path.
pub fn diagnostics(model: &ModelSpec, mean: &MeanPath) -> Result<Diagnostics> {
    let big_n = model.n_scale();
    let curve = variance_curve(model, mean)?;
    let mut out = Diagnostics {
        variance_constant: variance_bound_constant(model, mean)?,
        ..Diagnostics::default()
    };
    for (k, &u) in mean.values[..mean.values.len() - 1].iter().enumerate() {
        let var = curve.values[k];
        let d = derivs(model, u, mean.derivatives)?;
        out.second_order_mean += 0.5 * d.g2 * var / big_n;
        out.third_order_mean += d.g3.abs() * NORMAL_ABS_THIRD_MOMENT * var.powf(1.5) / (6.0 * big_n);
        out.factor_terms += (curve.coeffs[k].a - (1.0 + 2.0 * d.g1 / big_n)).abs() * var;
    }
    Ok(out)
}
