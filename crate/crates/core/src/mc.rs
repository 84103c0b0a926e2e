//! Plain random-walk Monte Carlo: path ensembles, tail estimates, the
//! Lipschitz probe and nested estimates of Doob increments.
//!
//! Trial `t` always draws from `rng.stream(t)`, and per-trial results are
//! collected in trial order, so the output does not depend on the size of
//! the rayon pool the call runs in.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Interval, ModelSpec};
use crate::rng::RngSpec;
use crate::stats::{clopper_pearson, mean_var};

/// Confidence level of every interval in [`TailEstimate`].
pub const TAIL_LEVEL: f64 = 0.95;
/// Smallest number of restarts per Doob increment.
pub const MIN_SUB_TRIALS: usize = 100;
/// Default budget for nested Monte Carlo, in simulated steps.
pub const DEFAULT_DOOB_BUDGET: u64 = 2_000_000_000;
/// Grid points used when measuring `K` over an envelope.
pub const K_GRID: usize = 257;

/// Running state of one walk: the unscaled partial sum `S`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Walker {
    pub sum: f64,
    pub clamps: u32,
    pub lo: f64,
    pub hi: f64,
}

impl Walker {
    pub fn new(u0: f64) -> Self {
        Walker {
            sum: 0.0,
            clamps: 0,
            lo: u0,
            hi: u0,
        }
    }

    /// Scaled position `u0 + S/N`.
    #[inline]
    pub fn position(&self, model: &ModelSpec, u0: f64) -> f64 {
        u0 + self.sum / model.n_scale()
    }

    /// Draws the next increment from the current position and returns it.
    #[inline]
    pub fn advance<R: Rng + ?Sized>(&mut self, model: &ModelSpec, u0: f64, rng: &mut R) -> f64 {
        let (x, clamped) = model.step(self.position(model, u0), rng);
        self.clamps += clamped as u32;
        self.sum += x;
        let u = self.position(model, u0);
        self.lo = self.lo.min(u);
        self.hi = self.hi.max(u);
        x
    }
}

/// Outcome of simulating many independent walks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub model_fingerprint: String,
    pub u0: f64,
    pub scale_n: u64,
    pub horizon: usize,
    pub trials: usize,
    pub rng: RngSpec,
    /// Terminal partial sums `S_n` (unscaled), in trial order.
    pub terminal: Vec<f64>,
    /// Partial sums `S_0 = 0, …, S_n` of every trial, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<Vec<Vec<f64>>>,
    /// Smallest interval containing every visited scaled position.
    pub envelope: Interval,
    /// Steps at which the position had to be clamped onto the kernel domain.
    pub clamped_steps: u64,
}

impl PathEnsemble {
    /// Scaled positions `u_0, …, u_n` of a stored path.
    pub fn positions(&self, trial: usize) -> Option<Vec<f64>> {
        let n = self.scale_n as f64;
        self.paths
            .as_ref()
            .map(|p| p[trial].iter().map(|s| self.u0 + s / n).collect())
    }

    /// Terminal scaled positions `u_n`.
    pub fn terminal_positions(&self) -> Vec<f64> {
        let n = self.scale_n as f64;
        self.terminal.iter().map(|s| self.u0 + s / n).collect()
    }

    /// Sample mean of `S_n` and its standard error.
    pub fn mean_terminal(&self) -> (f64, f64) {
        let (m, v) = mean_var(&self.terminal);
        (m, (v / self.terminal.len() as f64).sqrt())
    }
}

struct TrialOutcome {
    sum: f64,
    path: Option<Vec<f64>>,
    lo: f64,
    hi: f64,
    clamps: u32,
}

fn run_trial(model: &ModelSpec, n: usize, rng: &RngSpec, t: usize, keep_full: bool) -> TrialOutcome {
    let mut r = rng.stream(t as u64);
    let mut w = Walker::new(model.u0);
    let mut path = keep_full.then(|| {
        let mut v = Vec::with_capacity(n + 1);
        v.push(0.0);
        v
    });
    for _ in 0..n {
        w.advance(model, model.u0, &mut r);
        if let Some(p) = path.as_mut() {
            p.push(w.sum);
        }
    }
    TrialOutcome {
        sum: w.sum,
        path,
        lo: w.lo,
        hi: w.hi,
        clamps: w.clamps,
    }
}

/// Simulates `trials` walks of `n` steps from `model.u0`.
pub fn simulate_paths(
    model: &ModelSpec,
    n: usize,
    trials: usize,
    rng: RngSpec,
    keep_full: bool,
) -> Result<PathEnsemble> {
    if trials == 0 {
        return Err(Error::invalid("simulate_paths needs at least one trial"));
    }
    model.validate()?;
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(model, n, &rng, t, keep_full))
        .collect();
    let mut envelope = Interval::new(model.u0, model.u0);
    let mut clamped_steps = 0u64;
    let mut terminal = Vec::with_capacity(trials);
    let mut paths = keep_full.then(|| Vec::with_capacity(trials));
    for o in outcomes {
        envelope = Interval::new(envelope.lo.min(o.lo), envelope.hi.max(o.hi));
        clamped_steps += o.clamps as u64;
        terminal.push(o.sum);
        if let (Some(ps), Some(p)) = (paths.as_mut(), o.path) {
            ps.push(p);
        }
    }
    Ok(PathEnsemble {
        model_fingerprint: model.fingerprint(),
        u0: model.u0,
        scale_n: model.scale.scale_n,
        horizon: n,
        trials,
        rng,
        terminal,
        paths,
        envelope,
        clamped_steps,
    })
}

/// An empirical probability `P(|S_n − center| ≥ λ)` with its exact interval.
///
/// For weighted estimates `hits` and `trials` are effective counts derived
/// from the effective sample size, and `ess` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub lambda: f64,
    pub hits: u64,
    pub trials: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub center: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ess: Option<f64>,
}

impl TailEstimate {
    pub(crate) fn from_counts(lambda: f64, hits: u64, trials: u64, center: f64) -> Self {
        let (ci_low, ci_high) = clopper_pearson(hits, trials, TAIL_LEVEL);
        TailEstimate {
            lambda,
            hits,
            trials,
            p_hat: hits as f64 / trials as f64,
            ci_low,
            ci_high,
            center,
            ess: None,
        }
    }
}

/// Counts `|S − center| ≥ λ` over a list of sums.
pub fn tail_of(values: &[f64], center: f64, lambda: f64) -> TailEstimate {
    let hits = values.iter().filter(|s| (*s - center).abs() >= lambda).count() as u64;
    TailEstimate::from_counts(lambda, hits, values.len() as u64, center)
}

/// `P(|S_n − center| ≥ λ)` over the ensemble.
pub fn empirical_tail(ensemble: &PathEnsemble, center: f64, lambda: f64) -> TailEstimate {
    tail_of(&ensemble.terminal, center, lambda)
}

/// Empirical probability that every partial sum stays within `λ` of its
/// mean, `P(max_{k≤n} |S_k − E S_k| < λ)`, with per-step means estimated
/// from the ensemble itself.
pub fn joint_containment(ensemble: &PathEnsemble, lambda: f64) -> Result<TailEstimate> {
    let paths = ensemble
        .paths
        .as_ref()
        .ok_or_else(|| Error::invalid("joint containment needs full paths"))?;
    let steps = ensemble.horizon + 1;
    let mut means = vec![0.0; steps];
    for p in paths {
        for (m, s) in means.iter_mut().zip(p) {
            *m += s;
        }
    }
    let count = paths.len() as f64;
    means.iter_mut().for_each(|m| *m /= count);
    let hits = paths
        .iter()
        .filter(|p| p.iter().zip(&means).skip(1).all(|(s, m)| (s - m).abs() < lambda))
        .count() as u64;
    Ok(TailEstimate::from_counts(lambda, hits, paths.len() as u64, 0.0))
}

/// `sup_u E[e^{t|X|} | u]` over an envelope of positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeasurement {
    pub k: f64,
    pub t: f64,
    pub envelope: Interval,
    /// Position where the supremum was attained.
    pub argmax: f64,
    pub grid_points: usize,
}

/// Measures `K = max_u E[e^{t|X|}|u]` on a grid over `envelope`, clipped to
/// the model's domain.
pub fn measure_k(model: &ModelSpec, envelope: Interval, t: f64) -> Result<KMeasurement> {
    let env = envelope.intersect(&model.displacement.domain());
    if !(env.lo <= env.hi) {
        return Err(Error::invalid("position envelope does not meet the model domain"));
    }
    let points = if env.lo == env.hi { 1 } else { K_GRID };
    let mut best = (f64::NEG_INFINITY, env.lo);
    for j in 0..points {
        let u = if points == 1 {
            env.lo
        } else {
            env.lo + (env.hi - env.lo) * j as f64 / (points - 1) as f64
        };
        let v = model.displacement.exp_abs_moment(u, t)?;
        if v > best.0 {
            best = (v, u);
        }
    }
    Ok(KMeasurement {
        k: best.0.max(1.0),
        t,
        envelope: env,
        argmax: best.1,
        grid_points: points,
    })
}

/// Estimated `|∂E(X_l | u_i)/∂u_i|` from a pair of coupled walks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub i: usize,
    pub l: usize,
    pub u: f64,
    pub u_prime: f64,
    /// `(Ê(X_l|u) − Ê(X_l|u′)) / (u − u′)`.
    pub slope: f64,
    /// `|slope|`.
    pub value: f64,
    pub se: f64,
    pub trials: usize,
}

/// Runs walks from `u` and `u′` at index `i` up to index `l`, feeding both
/// the same random stream per trial, and compares the increment `X_l`.
pub fn lipschitz_probe(
    model: &ModelSpec,
    i: usize,
    l: usize,
    u: f64,
    u_prime: f64,
    trials: usize,
    rng: RngSpec,
) -> Result<LipschitzEstimate> {
    if i >= l {
        return Err(Error::invalid(format!("need i < l, got i = {i}, l = {l}")));
    }
    if l > model.scale.max_horizon {
        return Err(Error::config(
            "probe.l",
            format!("l = {l} exceeds M = {}", model.scale.max_horizon),
        ));
    }
    if u == u_prime {
        return Err(Error::invalid("the two starting positions must differ"));
    }
    if trials < 2 {
        return Err(Error::invalid("the probe needs at least two trials"));
    }
    let steps = l - i;
    let last_increment = |start: f64, t: usize| {
        let mut r = rng.stream(t as u64);
        let mut w = Walker::new(start);
        let mut x = 0.0;
        for _ in 0..steps {
            x = w.advance(model, start, &mut r);
        }
        x
    };
    let diffs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| last_increment(u, t) - last_increment(u_prime, t))
        .collect();
    let (mean, var) = mean_var(&diffs);
    let du = u - u_prime;
    let slope = mean / du;
    Ok(LipschitzEstimate {
        i,
        l,
        u,
        u_prime,
        slope,
        value: slope.abs(),
        se: (var / trials as f64).sqrt() / du.abs(),
        trials,
    })
}

/// Estimate of one Doob martingale increment `d_i = E_i S_n − E_{i−1} S_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoobIncrement {
    pub index: usize,
    /// The realised increment `X_i`.
    pub increment: f64,
    pub value: f64,
    pub se: f64,
    pub sub_trials: usize,
}

/// Mean remaining displacement `E[X_{j+1} + … + X_n | u_j = u]` by restarts.
fn remainder(model: &ModelSpec, u: f64, steps: usize, sub_trials: usize, rng: RngSpec) -> (f64, f64) {
    if steps == 0 {
        return (0.0, 0.0);
    }
    let sums: Vec<f64> = (0..sub_trials)
        .map(|t| {
            let mut r = rng.stream(t as u64);
            let mut w = Walker::new(u);
            for _ in 0..steps {
                w.advance(model, u, &mut r);
            }
            w.sum
        })
        .collect();
    let (m, v) = mean_var(&sums);
    (m, (v / sub_trials as f64).sqrt())
}

/// Nested Monte Carlo estimates of `d_i` along one path, given by its
/// partial sums `S_0 = 0, …, S_n`.
///
/// `d_i = X_i + R_i − R_{i−1}` with `R_j` the mean remaining displacement
/// from `u_j`; each `R_j` is estimated once and shared by `d_j` and
/// `d_{j+1}`, so summing every increment gives `S_n − R_0` exactly.
/// `indices` selects which `i ∈ 1..=n` to report (all when `None`).
pub fn doob_increments(
    model: &ModelSpec,
    sums: &[f64],
    sub_trials: usize,
    rng: RngSpec,
    indices: Option<&[usize]>,
    budget: u64,
) -> Result<Vec<DoobIncrement>> {
    if sub_trials < MIN_SUB_TRIALS {
        return Err(Error::invalid(format!(
            "sub_trials must be at least {MIN_SUB_TRIALS}, got {sub_trials}"
        )));
    }
    if sums.len() < 2 {
        return Err(Error::invalid("the path needs at least one step"));
    }
    let n = sums.len() - 1;
    let wanted: Vec<usize> = match indices {
        Some(ix) => {
            if let Some(&bad) = ix.iter().find(|&&i| i == 0 || i > n) {
                return Err(Error::invalid(format!("Doob index {bad} is outside 1..={n}")));
            }
            ix.to_vec()
        }
        None => (1..=n).collect(),
    };
    let mut needed: Vec<usize> = wanted.iter().flat_map(|&i| [i - 1, i]).collect();
    needed.sort_unstable();
    needed.dedup();
    let cost: u64 = needed.iter().map(|&j| ((n - j) * sub_trials) as u64).sum();
    if cost > budget {
        return Err(Error::Budget { cost, cap: budget });
    }
    let big_n = model.n_scale();
    let estimates: Vec<(usize, (f64, f64))> = needed
        .par_iter()
        .map(|&j| {
            let u = model.u0 + sums[j] / big_n;
            (j, remainder(model, u, n - j, sub_trials, rng.derive(j as u64)))
        })
        .collect();
    let lookup = |j: usize| estimates[estimates.binary_search_by_key(&j, |e| e.0).expect("estimated")].1;
    Ok(wanted
        .iter()
        .map(|&i| {
            let (r_i, se_i) = lookup(i);
            let (r_prev, se_prev) = lookup(i - 1);
            let x = sums[i] - sums[i - 1];
            DoobIncrement {
                index: i,
                increment: x,
                value: x + r_i - r_prev,
                se: (se_i * se_i + se_prev * se_prev).sqrt(),
                sub_trials,
            }
        })
        .collect())
}

/// Indices `1..=n` thinned to at most `count` evenly spaced entries.
pub fn index_grid(n: usize, count: usize) -> Vec<usize> {
    if count == 0 || n == 0 {
        return Vec::new();
    }
    if count >= n {
        return (1..=n).collect();
    }
    let mut v: Vec<usize> = (0..count)
        .map(|k| 1 + ((n - 1) as f64 * k as f64 / (count - 1).max(1) as f64).round() as usize)
        .collect();
    v.dedup();
    v
}
