use rayon::prelude::*;

use super::{WeightedEstimate, WeightedSample};
use crate::error::{Error, Result};
use crate::mc::Walker;
use crate::models::{Interval, ModelSpec};
use crate::rng::RngSpec;
use crate::stats::normalize_log_weights;

pub(crate) fn check_horizons(model: &ModelSpec, horizon_m: usize, n: usize) -> Result<()> {
    model.validate()?;
    if horizon_m > model.scale.max_horizon {
        return Err(Error::config(
            "scale.max_horizon",
            format!("horizon {horizon_m} exceeds M = {}", model.scale.max_horizon),
        ));
    }
    if n == 0 || n > horizon_m {
        return Err(Error::config(
            "scale.horizon",
            format!("need 1 <= n <= horizon, got n = {n}, horizon = {horizon_m}"),
        ));
    }
    Ok(())
}

struct WeightedTrial {
    log_weight: f64,
    sum_at_n: f64,
    terminal: f64,
    lo: f64,
    hi: f64,
    clamps: u32,
}

/// Walks `horizon_m` steps, accumulating `Σ ln m(u_k)` for `k = 1..=horizon_m`.
fn weighted_trial(model: &ModelSpec, horizon_m: usize, n: usize, rng: &RngSpec, t: usize) -> WeightedTrial {
    let mut r = rng.stream(t as u64);
    let mut w = Walker::new(model.u0);
    let mut log_weight = 0.0;
    let mut sum_at_n = 0.0;
    for k in 1..=horizon_m {
        w.advance(model, model.u0, &mut r);
        if k == n {
            sum_at_n = w.sum;
        }
        log_weight += model.branching.ln_m(w.position(model, model.u0));
    }
    WeightedTrial {
        log_weight,
        sum_at_n,
        terminal: w.position(model, model.u0),
        lo: w.lo,
        hi: w.hi,
        clamps: w.clamps,
    }
}

/// Independent walks weighted by `∏_{k=1}^{M} m(u_k)`.
pub fn simulate_weighted(
    model: &ModelSpec,
    horizon_m: usize,
    n: usize,
    trials: usize,
    rng: RngSpec,
) -> Result<WeightedSample> {
    check_horizons(model, horizon_m, n)?;
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    let outcomes: Vec<WeightedTrial> = (0..trials)
        .into_par_iter()
        .map(|t| weighted_trial(model, horizon_m, n, &rng, t))
        .collect();
    let log_weights: Vec<f64> = outcomes.iter().map(|o| o.log_weight).collect();
    let (weights, shift) = normalize_log_weights(&log_weights);
    let envelope = outcomes.iter().fold(Interval::new(model.u0, model.u0), |e, o| {
        Interval::new(e.lo.min(o.lo), e.hi.max(o.hi))
    });
    Ok(WeightedSample {
        sums: outcomes.iter().map(|o| o.sum_at_n).collect(),
        terminal: outcomes.iter().map(|o| o.terminal).collect(),
        weights,
        log_scale: shift,
        groups: vec![trials],
        envelope,
        clamped_steps: outcomes.iter().map(|o| o.clamps as u64).sum(),
    })
}

/// Self-normalised estimate `Σ w f(path) / Σ w` of the population average of
/// a path functional. `f` receives the scaled positions `u_0, …, u_M`.
pub fn weighted_expectation<F>(
    model: &ModelSpec,
    f: F,
    horizon_m: usize,
    trials: usize,
    rng: RngSpec,
    ess_floor: f64,
) -> Result<WeightedEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check_horizons(model, horizon_m, horizon_m.max(1))?;
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    let outcomes: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng.stream(t as u64);
            let mut w = Walker::new(model.u0);
            let mut positions = Vec::with_capacity(horizon_m + 1);
            positions.push(model.u0);
            let mut log_weight = 0.0;
            for _ in 0..horizon_m {
                w.advance(model, model.u0, &mut r);
                let u = w.position(model, model.u0);
                positions.push(u);
                log_weight += model.branching.ln_m(u);
            }
            (log_weight, f(&positions))
        })
        .collect();
    let log_weights: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let values: Vec<f64> = outcomes.iter().map(|o| o.1).collect();
    let (weights, _) = normalize_log_weights(&log_weights);
    WeightedEstimate::from_weights(&weights, &values, horizon_m, ess_floor)
}
