use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::weighted::check_horizons;
use crate::error::{Error, Result};
use crate::mc::Walker;
use crate::models::ModelSpec;
use crate::rng::RngSpec;
use crate::stats::mean_var;

const CLOUD_TAG: u64 = 0x0063_6c6f_7564;
/// Standard normal nodes per unit of `z` and their half-width.
const NORMAL_NODES_PER_SD: f64 = 10.0;
const NORMAL_HALF_WIDTH: f64 = 7.0;
/// Grid nodes per unit of the unscaled walk when the step law is not
/// supported on the integers.
const OFF_LATTICE_DENSITY: f64 = 4.0;
const MAX_GRID_NODES: usize = 400_001;

/// How the descendant weight `E[∏_{k>i} m(u_k) | u_i]` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DescendantWeight {
    #[default]
    /// Backward recursion of the one-step transfer operator on a position
    /// grid; exact for integer-valued steps up to rounding.
    Transfer,
    /// Monte Carlo over `cloud` continuation paths, resampled in proportion
    /// to `m` each generation.
    Continuation { cloud: usize },
}

/// `ln E[∏_{k=1}^{g} m(u_k) | u_0 = u]` tabulated on a uniform grid of `u`.
#[derive(Debug, Clone)]
pub struct DescendantTable {
    origin: f64,
    spacing: f64,
    /// Index of the node at `origin`.
    center: usize,
    log_z: Vec<f64>,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let hi = a.max(b);
    hi + (-(a - b).abs()).exp().ln_1p()
}

fn atoms(law: &crate::models::Law) -> Vec<(f64, f64)> {
    match law {
        crate::models::Law::Discrete(a) => a.iter().copied().filter(|&(_, p)| p > 0.0).collect(),
        crate::models::Law::Normal { mean, sd } if *sd == 0.0 => vec![(*mean, 1.0)],
        crate::models::Law::Normal { mean, sd } => {
            let half = (NORMAL_HALF_WIDTH * NORMAL_NODES_PER_SD) as i64;
            let raw: Vec<(f64, f64)> = (-half..=half)
                .map(|j| {
                    let z = j as f64 / NORMAL_NODES_PER_SD;
                    (mean + sd * z, (-0.5 * z * z).exp())
                })
                .collect();
            let total: f64 = raw.iter().map(|a| a.1).sum();
            raw.into_iter().map(|(x, w)| (x, w / total)).collect()
        }
    }
}

impl DescendantTable {
    /// Tabulates the descendant weight over `generations` steps for particles
    /// reachable from `u0` within `reach_steps` steps.
    pub fn build(model: &ModelSpec, u0: f64, reach_steps: usize, generations: usize) -> Result<Self> {
        let n = model.n_scale();
        let domain = model.displacement.domain();
        let law0 = atoms(&model.displacement.law(domain.clamp(u0)));
        let on_lattice = law0.iter().all(|&(x, _)| x.fract() == 0.0);
        let sd0 = match model.displacement.law(domain.clamp(u0)) {
            crate::models::Law::Normal { sd, .. } if sd > 0.0 => sd,
            _ => 1.0,
        };
        let spacing_steps = if on_lattice {
            1.0
        } else {
            sd0.min(1.0) / OFF_LATTICE_DENSITY
        };
        let reach = law0.iter().map(|&(x, _)| x.abs()).fold(0.0, f64::max).max(sd0);
        let half = ((reach_steps + generations) as f64 * reach / spacing_steps).ceil() as usize;
        let half = half.min(MAX_GRID_NODES / 2);
        let spacing = spacing_steps / n;
        let nodes = 2 * half + 1;
        let mut table = DescendantTable {
            origin: u0,
            spacing,
            center: half,
            log_z: vec![0.0; nodes],
        };
        if model.branching.is_unit() {
            return Ok(table);
        }
        let steps: Vec<Vec<(f64, f64)>> = (0..nodes)
            .map(|j| {
                let u = table.node(j);
                atoms(&model.displacement.law(domain.clamp(u)))
                    .into_iter()
                    .map(|(x, p)| (x / n, p.ln()))
                    .collect()
            })
            .collect();
        for _ in 0..generations {
            let next: Vec<f64> = (0..nodes)
                .into_par_iter()
                .map(|j| {
                    let u = table.node(j);
                    steps[j].iter().fold(f64::NEG_INFINITY, |acc, &(dx, lp)| {
                        let v = u + dx;
                        log_sum_exp(acc, lp + model.branching.ln_m(v) + table.log_weight(v))
                    })
                })
                .collect();
            table.log_z = next;
        }
        if table.log_z.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("descendant weight recursion produced NaN"));
        }
        Ok(table)
    }

    fn node(&self, j: usize) -> f64 {
        self.origin + (j as f64 - self.center as f64) * self.spacing
    }

    /// `ln Z(u)`, linearly interpolated in `Z` and held constant past the grid.
    pub fn log_weight(&self, u: f64) -> f64 {
        let last = self.log_z.len() - 1;
        let pos = ((u - self.origin) / self.spacing + self.center as f64).clamp(0.0, last as f64);
        let j = pos.floor() as usize;
        let theta = pos - j as f64;
        if j == last || theta < 1e-9 {
            return self.log_z[j];
        }
        if theta > 1.0 - 1e-9 {
            return self.log_z[j + 1];
        }
        log_sum_exp((1.0 - theta).ln() + self.log_z[j], theta.ln() + self.log_z[j + 1])
    }

    pub fn weight(&self, u: f64) -> f64 {
        self.log_weight(u).exp()
    }
}

/// Monotone increasing test functions on `[0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MonotoneFn {
    Identity,
    Square,
    /// `e^{x/2}`.
    HalfExp,
    /// `1{x > threshold}`.
    Indicator {
        threshold: f64,
    },
}

impl MonotoneFn {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            MonotoneFn::Identity => x,
            MonotoneFn::Square => x * x,
            MonotoneFn::HalfExp => (0.5 * x).exp(),
            MonotoneFn::Indicator { threshold } => (x > threshold) as u8 as f64,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            MonotoneFn::Identity => "x".into(),
            MonotoneFn::Square => "x^2".into(),
            MonotoneFn::HalfExp => "exp(x/2)".into(),
            MonotoneFn::Indicator { threshold } => format!("1{{x>{threshold}}}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "x" => Ok(MonotoneFn::Identity),
            "x^2" => Ok(MonotoneFn::Square),
            "exp(x/2)" => Ok(MonotoneFn::HalfExp),
            other => other
                .strip_prefix("1{x>")
                .and_then(|r| r.strip_suffix('}'))
                .and_then(|t| t.parse().ok())
                .map(|threshold| MonotoneFn::Indicator { threshold })
                .ok_or_else(|| Error::config("probe.f_family", format!("unknown monotone function `{other}`"))),
        }
    }

    /// `{x, x², e^{x/2}, 1{x>1}}`.
    pub fn default_family() -> Vec<MonotoneFn> {
        vec![
            MonotoneFn::Identity,
            MonotoneFn::Square,
            MonotoneFn::HalfExp,
            MonotoneFn::Indicator { threshold: 1.0 },
        ]
    }
}

/// Both sides of `E[f(|X_i|) Z] ≤ E[f(|X_i|)] E[Z]` for one `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationReport {
    pub f: String,
    /// `E[f(|X_i|)·Z(X_i)]`.
    pub lhs: f64,
    /// `E[f(|X_i|)]·E[Z(X_i)]`, as `lhs + margin`.
    pub rhs: f64,
    /// `rhs − lhs = −Cov(f(|X_i|), Z)`; negative values contradict the inequality.
    pub margin: f64,
    /// Standard error of the margin.
    pub se: f64,
    pub z: f64,
    pub trials: usize,
}

/// Monte Carlo descendant weight of a particle born at `u`. With `cloud = 1`
/// this is the weight product along one continuation; larger clouds are
/// resampled in proportion to `m` each generation, and the product of
/// generation-mean `m` stays unbiased.
fn descendant_weight<R: Rng>(model: &ModelSpec, u: f64, generations: usize, cloud: usize, rng: &mut R) -> f64 {
    let mut walkers = vec![Walker::new(u); cloud];
    let mut m = vec![0.0; cloud];
    let mut log_z = 0.0;
    for _ in 0..generations {
        for (w, mk) in walkers.iter_mut().zip(m.iter_mut()) {
            w.advance(model, u, rng);
            *mk = model.branching.m(w.position(model, u));
        }
        let total: f64 = m.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        log_z += (total / cloud as f64).ln();
        if cloud > 1 {
            let step = total / cloud as f64;
            let mut next = step * rng.random::<f64>();
            let mut cumulative = 0.0;
            let old = walkers.clone();
            let mut j = 0;
            for (w, mk) in old.iter().zip(&m) {
                cumulative += mk;
                while next < cumulative && j < cloud {
                    walkers[j] = *w;
                    j += 1;
                    next += step;
                }
            }
            for slot in walkers.iter_mut().skip(j) {
                *slot = *old.last().expect("nonempty cloud");
            }
        }
    }
    log_z.exp()
}

/// Tests negative association between `|X_i|` and the descendant weight of
/// the particle it produces, for each function in `family`.
///
/// Each trial draws two independent walks to index `i`. The margin is the
/// mean of `½(f(X) − f(X′))(Z(X′) − Z(X))`, an unbiased estimate of
/// `−Cov(f, Z)`. Monte Carlo descendant weights of a pair share one cloud
/// stream so that their noise largely cancels.
pub fn negative_association_test(
    model: &ModelSpec,
    i: usize,
    horizon_m: usize,
    family: &[MonotoneFn],
    trials: usize,
    descendant: DescendantWeight,
    rng: RngSpec,
) -> Result<Vec<AssociationReport>> {
    check_horizons(model, horizon_m, horizon_m)?;
    if i == 0 || i >= horizon_m {
        return Err(Error::invalid(format!("need 1 <= i < M, got i = {i}, M = {horizon_m}")));
    }
    if trials < 2 {
        return Err(Error::invalid("need at least two trials"));
    }
    if descendant == (DescendantWeight::Continuation { cloud: 0 }) {
        return Err(Error::invalid("the continuation cloud must be nonempty"));
    }
    let generations = horizon_m - i;
    let table = match descendant {
        DescendantWeight::Transfer => Some(DescendantTable::build(model, model.u0, i, generations)?),
        DescendantWeight::Continuation { .. } => None,
    };
    let clouds = rng.derive(CLOUD_TAG);
    let draw = |r: &mut rand_chacha::ChaCha8Rng| {
        let mut w = Walker::new(model.u0);
        let mut x = 0.0;
        for _ in 0..i {
            x = w.advance(model, model.u0, r);
        }
        (x.abs(), w.position(model, model.u0))
    };
    let pairs: Vec<[(f64, f64); 2]> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng.stream(t as u64);
            let (a, ua) = draw(&mut r);
            let (b, ub) = draw(&mut r);
            let (za, zb) = match (&table, descendant) {
                (Some(table), _) => (table.weight(ua), table.weight(ub)),
                (None, DescendantWeight::Continuation { cloud }) => (
                    descendant_weight(model, ua, generations, cloud, &mut clouds.stream(t as u64)),
                    descendant_weight(model, ub, generations, cloud, &mut clouds.stream(t as u64)),
                ),
                (None, DescendantWeight::Transfer) => unreachable!("transfer weights use the table"),
            };
            [(a, za), (b, zb)]
        })
        .collect();
    let t = trials as f64;
    Ok(family
        .iter()
        .map(|f| {
            let terms: Vec<f64> = pairs
                .iter()
                .map(|[(a, za), (b, zb)]| 0.5 * (f.apply(*a) - f.apply(*b)) * (zb - za))
                .collect();
            let (margin, var) = mean_var(&terms);
            let se = (var / t).sqrt();
            let lhs = pairs.iter().flatten().map(|(x, z)| f.apply(*x) * z).sum::<f64>() / (2.0 * t);
            AssociationReport {
                f: f.label(),
                lhs,
                rhs: lhs + margin,
                margin,
                se,
                z: if se > 0.0 { margin / se } else { 0.0 },
                trials,
            }
        })
        .collect())
}
