//! Branching random walks: population-weighted averages, tails over the
//! population, the negative-association test and variance comparisons.
//!
//! Two engines carry the weighted measure `∏ m(u_k)·P`:
//! independent walks weighted by their branching product, and an explicit
//! particle population with offspring, resampling and a global normalizer.

mod association;
mod population;
mod weighted;

pub use association::{negative_association_test, AssociationReport, DescendantTable, DescendantWeight, MonotoneFn};
pub use population::{
    simulate_population, GenerationSummary, OffspringLaw, ParticleState, Population, PopulationConfig, PopulationRun,
    ResampleEvent, ResampleReason, MIN_CAP,
};
pub use weighted::{simulate_weighted, weighted_expectation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::{simulate_paths, TailEstimate, TAIL_LEVEL};
use crate::models::{BranchingKernel, Interval, ModelSpec};
use crate::rng::RngSpec;
use crate::stats::{clopper_pearson, effective_sample_size, jackknife_se, mean_var};

/// Default lower limit on the effective sample size of weighted-path runs.
pub const DEFAULT_ESS_FLOOR: f64 = 100.0;
const REPLICATE_TAG: u64 = 0x7265_706c_0000;

/// Population-weighted sample: one entry per path or particle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    /// `S_n` (unscaled) of each path or ancestral line.
    pub sums: Vec<f64>,
    /// Scaled terminal position `u_M`.
    pub terminal: Vec<f64>,
    /// Relative weights.
    pub weights: Vec<f64>,
    /// `ln` of the factor that turns the weights of the first group into
    /// absolute branching products.
    pub log_scale: f64,
    /// Sizes of consecutive blocks that come from independent replicates;
    /// each block's weights sum to the same total.
    pub groups: Vec<usize>,
    pub envelope: Interval,
    pub clamped_steps: u64,
}

impl WeightedSample {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn ess(&self) -> f64 {
        effective_sample_size(&self.weights)
    }

    /// `Σ w v / Σ w`.
    pub fn mean_of(&self, values: &[f64]) -> f64 {
        let num: f64 = self.weights.iter().zip(values).map(|(w, v)| w * v).sum();
        let den: f64 = self.weights.iter().sum();
        num / den
    }

    /// Weighted variance `Σ w (v − v̄)² / Σ w`.
    pub fn variance_of(&self, values: &[f64]) -> f64 {
        let mean = self.mean_of(values);
        let num: f64 = self
            .weights
            .iter()
            .zip(values)
            .map(|(w, v)| w * (v - mean) * (v - mean))
            .sum();
        num / self.weights.iter().sum::<f64>()
    }

    /// Scaled positions `u_n = u0 + S_n/N`.
    pub fn positions_at_n(&self, u0: f64, scale_n: f64) -> Vec<f64> {
        self.sums.iter().map(|s| u0 + s / scale_n).collect()
    }

    /// Estimate of `E[∏ m]` with its standard error, for single-group
    /// samples from the weighted-path engine.
    pub fn mean_weight(&self) -> (f64, f64) {
        let (m, v) = mean_var(&self.weights);
        let scale = self.log_scale.exp();
        (m * scale, (v / self.len() as f64).sqrt() * scale)
    }

    /// Weighted probability that `|S_n − center| ≥ λ`. The hit and trial
    /// counts are effective counts scaled to the effective sample size.
    pub fn tail(&self, center: f64, lambda: f64) -> TailEstimate {
        let den: f64 = self.weights.iter().sum();
        let num: f64 = self
            .weights
            .iter()
            .zip(&self.sums)
            .filter(|(_, s)| (*s - center).abs() >= lambda)
            .fold(0.0, |acc, (w, _)| acc + w);
        let p_hat = num / den;
        let ess = self.ess();
        let trials = ess.round().max(1.0) as u64;
        let hits = ((p_hat * ess).round() as u64).min(trials);
        let (ci_low, ci_high) = clopper_pearson(hits, trials, TAIL_LEVEL);
        TailEstimate {
            lambda,
            hits,
            trials,
            p_hat,
            ci_low: ci_low.min(p_hat),
            ci_high: ci_high.max(p_hat),
            center,
            ess: Some(ess),
        }
    }

    fn concat(samples: Vec<WeightedSample>) -> WeightedSample {
        let mut out = WeightedSample {
            sums: Vec::new(),
            terminal: Vec::new(),
            weights: Vec::new(),
            log_scale: samples.first().map_or(0.0, |s| s.log_scale),
            groups: Vec::new(),
            envelope: samples.first().map_or(Interval::new(0.0, 0.0), |s| s.envelope),
            clamped_steps: 0,
        };
        let reference: f64 = samples.first().map_or(1.0, |s| s.weights.iter().sum());
        for s in samples {
            let factor = reference / s.weights.iter().sum::<f64>();
            out.sums.extend(&s.sums);
            out.terminal.extend(&s.terminal);
            out.weights.extend(s.weights.iter().map(|w| w * factor));
            out.groups.push(s.len());
            out.envelope = Interval::new(out.envelope.lo.min(s.envelope.lo), out.envelope.hi.max(s.envelope.hi));
            out.clamped_steps += s.clamped_steps;
        }
        out
    }
}

/// A self-normalised population average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedEstimate {
    pub value: f64,
    pub se: f64,
    pub ess: f64,
    pub trials: usize,
    pub horizon: usize,
}

impl WeightedEstimate {
    /// Delta-method standard error `√(Σ w²(v − v̂)²) / Σ w`.
    pub fn from_weights(weights: &[f64], values: &[f64], horizon: usize, ess_floor: f64) -> Result<Self> {
        let ess = effective_sample_size(weights);
        if ess < ess_floor {
            return Err(Error::DegenerateWeights { ess, floor: ess_floor });
        }
        let den: f64 = weights.iter().sum();
        let num: f64 = weights.iter().zip(values).map(|(w, v)| w * v).sum();
        let value = num / den;
        let spread: f64 = weights.iter().zip(values).map(|(w, v)| (w * (v - value)).powi(2)).sum();
        Ok(WeightedEstimate {
            value,
            se: spread.sqrt() / den,
            ess,
            trials: weights.len(),
            horizon,
        })
    }
}

/// Which engine carries the weighted measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Engine {
    WeightedPath {
        trials: usize,
        #[serde(default = "default_ess_floor")]
        ess_floor: f64,
    },
    Population {
        #[serde(flatten)]
        config: PopulationConfig,
        #[serde(default = "one")]
        replicates: usize,
    },
}

fn default_ess_floor() -> f64 {
    DEFAULT_ESS_FLOOR
}

fn one() -> usize {
    1
}

/// Stream family for replicate `r` of a population run.
pub fn replicate_rng(rng: RngSpec, r: usize) -> RngSpec {
    if r == 0 {
        rng
    } else {
        rng.derive(REPLICATE_TAG + r as u64)
    }
}

/// Runs the engine and returns the pooled weighted sample, plus the
/// population runs when the population engine was used.
pub fn run_engine(
    model: &ModelSpec,
    horizon_m: usize,
    n: usize,
    engine: &Engine,
    rng: RngSpec,
) -> Result<(WeightedSample, Vec<PopulationRun>)> {
    match engine {
        Engine::WeightedPath { trials, ess_floor } => {
            let s = simulate_weighted(model, horizon_m, n, *trials, rng)?;
            let ess = s.ess();
            if ess < *ess_floor {
                return Err(Error::DegenerateWeights { ess, floor: *ess_floor });
            }
            Ok((s, Vec::new()))
        }
        Engine::Population { config, replicates } => {
            let runs: Vec<PopulationRun> = (0..(*replicates).max(1))
                .map(|r| simulate_population(model, horizon_m, n, config, replicate_rng(rng, r)))
                .collect::<Result<_>>()?;
            let samples = runs.iter().map(|r| r.sample()).collect::<Result<Vec<_>>>()?;
            Ok((WeightedSample::concat(samples), runs))
        }
    }
}

/// Population-weighted tail `P(|S_n − S̄_n| ≥ λ)` at each `λ`, where `S̄_n`
/// is the weighted mean of `S_n`.
pub fn brw_tails(
    model: &ModelSpec,
    horizon_m: usize,
    n: usize,
    lambdas: &[f64],
    engine: &Engine,
    rng: RngSpec,
) -> Result<Vec<TailEstimate>> {
    let (sample, _) = run_engine(model, horizon_m, n, engine, rng)?;
    let center = sample.mean_of(&sample.sums);
    Ok(lambdas.iter().map(|&l| sample.tail(center, l)).collect())
}

pub fn brw_tail(
    model: &ModelSpec,
    horizon_m: usize,
    n: usize,
    lambda: f64,
    engine: &Engine,
    rng: RngSpec,
) -> Result<TailEstimate> {
    Ok(brw_tails(model, horizon_m, n, &[lambda], engine, rng)?.remove(0))
}

/// Weighted against plain variance of `u_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComparison {
    pub var_weighted: f64,
    pub var_plain: f64,
    /// `var_weighted − var_plain`.
    pub difference: f64,
    /// Standard error of the paired difference.
    pub se: f64,
    pub ess: f64,
}

impl VarianceComparison {
    /// The difference in units of its standard error.
    pub fn z(&self) -> f64 {
        if self.se > 0.0 {
            self.difference / self.se
        } else {
            0.0
        }
    }
}

fn weighted_variance_parts(weights: &[f64], values: &[f64]) -> (f64, f64, f64) {
    let s0: f64 = weights.iter().sum();
    let s1: f64 = weights.iter().zip(values).map(|(w, v)| w * v).sum();
    let s2: f64 = weights.iter().zip(values).map(|(w, v)| w * v * v).sum();
    (s0, s1, s2)
}

fn variance_from_parts(s0: f64, s1: f64, s2: f64) -> f64 {
    let mean = s1 / s0;
    (s2 / s0 - mean * mean).max(0.0)
}

/// Compares the population-weighted variance of `u_n` with the variance
/// under unit branching.
///
/// With the weighted-path engine both come from the same walks and the
/// standard error is a paired delete-one jackknife. With the population
/// engine each replicate is paired with plain walks on the same stream
/// family, and the standard error is taken across replicates.
pub fn variance_comparison(
    model: &ModelSpec,
    horizon_m: usize,
    n: usize,
    engine: &Engine,
    rng: RngSpec,
) -> Result<VarianceComparison> {
    let big_n = model.n_scale();
    match engine {
        Engine::WeightedPath { .. } => {
            let (s, _) = run_engine(model, horizon_m, n, engine, rng)?;
            let u = s.positions_at_n(model.u0, big_n);
            let ones = vec![1.0; u.len()];
            let (w0, w1, w2) = weighted_variance_parts(&s.weights, &u);
            let (p0, p1, p2) = weighted_variance_parts(&ones, &u);
            let vw = variance_from_parts(w0, w1, w2);
            let vp = variance_from_parts(p0, p1, p2);
            let leave_one_out: Vec<f64> = s
                .weights
                .iter()
                .zip(&u)
                .map(|(w, x)| {
                    variance_from_parts(w0 - w, w1 - w * x, w2 - w * x * x)
                        - variance_from_parts(p0 - 1.0, p1 - x, p2 - x * x)
                })
                .collect();
            Ok(VarianceComparison {
                var_weighted: vw,
                var_plain: vp,
                difference: vw - vp,
                se: jackknife_se(&leave_one_out),
                ess: s.ess(),
            })
        }
        Engine::Population { config, replicates } => {
            let reps = (*replicates).max(2);
            let plain_model = model.with_branching(BranchingKernel::Unit);
            let mut diffs = Vec::with_capacity(reps);
            let mut vws = Vec::with_capacity(reps);
            let mut vps = Vec::with_capacity(reps);
            let mut ess = 0.0;
            for r in 0..reps {
                let rr = replicate_rng(rng, r);
                let run = simulate_population(model, horizon_m, n, config, rr)?;
                let s = run.sample()?;
                ess += s.ess();
                let u = s.positions_at_n(model.u0, big_n);
                let vw = s.variance_of(&u);
                let plain = simulate_paths(&plain_model, n, config.initial, rr, false)?;
                let up = plain.terminal_positions();
                let (_, var) = mean_var(&up);
                let vp = var * (up.len() as f64 - 1.0) / up.len() as f64;
                vws.push(vw);
                vps.push(vp);
                diffs.push(vw - vp);
            }
            let (d, dvar) = mean_var(&diffs);
            let (vw, _) = mean_var(&vws);
            let (vp, _) = mean_var(&vps);
            Ok(VarianceComparison {
                var_weighted: vw,
                var_plain: vp,
                difference: d,
                se: (dvar / reps as f64).sqrt(),
                ess,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::{empirical_tail, simulate_paths};
    use crate::models::{DisplacementKernel, Drift, ScaleParams};

    fn model(n: u64, m: usize, kernel: DisplacementKernel, branching: BranchingKernel, u0: f64) -> ModelSpec {
        ModelSpec::new(ScaleParams::new(n, m, m), kernel, branching, u0)
    }

    fn expected_engine(particles: usize) -> Engine {
        Engine::Population {
            config: PopulationConfig::new(particles.max(MIN_CAP), particles, OffspringLaw::Expected),
            replicates: 1,
        }
    }

    #[test]
    fn unit_branching_reduces_to_plain_walks() {
        let m = model(
            100,
            60,
            DisplacementKernel::BiasedDrift { kappa: 0.8 },
            BranchingKernel::Unit,
            0.1,
        );
        let rng = RngSpec::new(77);
        let plain = simulate_paths(&m, 40, 1_000, rng, false).unwrap();
        let plain_u = plain.terminal_positions();
        let plain_mean = plain_u.iter().sum::<f64>() / plain_u.len() as f64;

        let est = weighted_expectation(&m, |p| p[40], 60, 1_000, rng, 1.0).unwrap();
        assert_eq!(est.value, plain_mean);
        assert_eq!(est.ess, 1_000.0);

        let ws = simulate_weighted(&m, 60, 40, 1_000, rng).unwrap();
        assert_eq!(ws.sums, plain.terminal);
        let pop = simulate_population(
            &m,
            60,
            40,
            &PopulationConfig::new(1_000, 1_000, OffspringLaw::Expected),
            rng,
        )
        .unwrap();
        assert!(pop.resample_log.is_empty());
        let ps = pop.sample().unwrap();
        assert_eq!(ps.sums, plain.terminal);
        assert_eq!(ps.mean_of(&ps.positions_at_n(0.1, 100.0)), plain_mean);

        let center = plain.terminal.iter().sum::<f64>() / 1_000.0;
        for engine in [
            Engine::WeightedPath {
                trials: 1_000,
                ess_floor: 1.0,
            },
            expected_engine(1_000),
        ] {
            let t = brw_tail(&m, 60, 40, 5.0, &engine, rng).unwrap();
            let e = empirical_tail(&plain, center, 5.0);
            assert_eq!(
                (t.hits, t.trials, t.p_hat, t.ci_low, t.ci_high),
                (e.hits, e.trials, e.p_hat, e.ci_low, e.ci_high)
            );
        }
    }

    #[test]
    fn constant_function_averages_to_one() {
        let m = model(
            50,
            50,
            DisplacementKernel::Rademacher,
            BranchingKernel::Scatter { delta: 1.0 },
            0.0,
        );
        let e = weighted_expectation(&m, |_| 1.0, 50, 500, RngSpec::new(1), 1.0).unwrap();
        assert_eq!(e.value, 1.0);
    }

    #[test]
    fn degenerate_weights_are_reported() {
        let m = model(
            200,
            200,
            DisplacementKernel::Rademacher,
            BranchingKernel::KsatLike { k: 2 },
            0.5,
        );
        let r = weighted_expectation(&m, |p| p[200], 200, 2_000, RngSpec::new(3), DEFAULT_ESS_FLOOR);
        assert!(matches!(r, Err(Error::DegenerateWeights { .. })), "{r:?}");
    }

    #[test]
    fn supercritical_population_grows_geometrically() {
        let m = model(
            100,
            5,
            DisplacementKernel::Rademacher,
            BranchingKernel::Constant { m: 2.0 },
            0.0,
        );
        let config = PopulationConfig::new(1_000_000, 1, OffspringLaw::Poisson);
        let sizes: Vec<f64> = (0..4_000)
            .map(|r| {
                let run = simulate_population(&m, 5, 5, &config, replicate_rng(RngSpec::new(21), r)).unwrap();
                run.last.particles.len() as f64
            })
            .collect();
        let (mean, var) = mean_var(&sizes);
        let se = (var / sizes.len() as f64).sqrt();
        assert!((mean - 32.0).abs() < 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn total_weight_agrees_with_weighted_paths() {
        let m = model(
            200,
            20,
            DisplacementKernel::Rademacher,
            BranchingKernel::KsatLike { k: 2 },
            0.5,
        );
        let ws = simulate_weighted(&m, 20, 20, 100_000, RngSpec::new(4)).unwrap();
        let (direct, direct_se) = ws.mean_weight();
        let config = PopulationConfig::new(5_000, 5_000, OffspringLaw::Poisson);
        let totals: Vec<f64> = (0..20)
            .map(|r| {
                simulate_population(&m, 20, 20, &config, replicate_rng(RngSpec::new(5), r))
                    .unwrap()
                    .log_total_weight()
                    .exp()
            })
            .collect();
        let (pop, var) = mean_var(&totals);
        let pop_se = (var / totals.len() as f64).sqrt();
        let combined = (direct_se * direct_se + pop_se * pop_se).sqrt();
        assert!(
            (direct - pop).abs() <= 1.96 * combined,
            "{direct} ± {direct_se} vs {pop} ± {pop_se}"
        );
    }

    #[test]
    fn population_respects_cap_and_logs_resampling() {
        let m = model(
            100,
            30,
            DisplacementKernel::Rademacher,
            BranchingKernel::Constant { m: 1.5 },
            0.0,
        );
        let run = simulate_population(
            &m,
            30,
            30,
            &PopulationConfig::new(1_000, 1_000, OffspringLaw::Poisson),
            RngSpec::new(2),
        )
        .unwrap();
        assert!(run.generations.iter().all(|g| g.size <= 1_000));
        assert!(!run.resample_log.is_empty());
        assert!(run.last.particles.iter().all(|p| p.log_weight.is_finite()));
        let expected = 30.0 * 1.5f64.ln();
        let ratios: Vec<f64> = (0..10)
            .map(|r| {
                let run = simulate_population(
                    &m,
                    30,
                    30,
                    &PopulationConfig::new(1_000, 1_000, OffspringLaw::Poisson),
                    replicate_rng(RngSpec::new(2), r),
                )
                .unwrap();
                (run.log_total_weight() - expected).exp()
            })
            .collect();
        let (mean, var) = mean_var(&ratios);
        assert!((mean - 1.0).abs() < 3.0 * (var / 10.0).sqrt(), "{ratios:?}");
    }

    #[test]
    fn population_is_independent_of_worker_count() {
        let m = model(
            100,
            40,
            DisplacementKernel::Gaussian {
                drift: Drift::Zero,
                sigma: 1.0,
            },
            BranchingKernel::Scatter { delta: 1.0 },
            0.0,
        );
        let config = PopulationConfig::new(1_000, 500, OffspringLaw::Poisson);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_population(&m, 40, 20, &config, RngSpec::new(6)).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn unit_branching_association_margin_is_zero() {
        let m = model(
            200,
            200,
            DisplacementKernel::Gaussian {
                drift: Drift::Zero,
                sigma: 1.0,
            },
            BranchingKernel::Unit,
            0.0,
        );
        let reports = negative_association_test(
            &m,
            1,
            50,
            &MonotoneFn::default_family(),
            500,
            DescendantWeight::Continuation { cloud: 8 },
            RngSpec::new(9),
        )
        .unwrap();
        for r in reports {
            assert!(r.margin.abs() <= 3.0 * r.se + 1e-12, "{r:?}");
        }
    }

    #[test]
    fn monotone_labels_parse_back() {
        for f in MonotoneFn::default_family() {
            assert_eq!(MonotoneFn::parse(&f.label()).unwrap(), f);
        }
        assert!(MonotoneFn::parse("sin(x)").is_err());
    }

    #[test]
    fn variance_comparison_with_unit_branching_is_equal() {
        let m = model(100, 100, DisplacementKernel::Rademacher, BranchingKernel::Unit, 0.0);
        let v = variance_comparison(
            &m,
            100,
            100,
            &Engine::WeightedPath {
                trials: 2_000,
                ess_floor: 1.0,
            },
            RngSpec::new(1),
        )
        .unwrap();
        assert_eq!(v.var_weighted, v.var_plain);
    }

    #[test]
    fn squeeze_concentrates_on_small_runs() {
        let base = model(
            100,
            100,
            DisplacementKernel::Rademacher,
            BranchingKernel::Squeeze { delta: 0.3 },
            0.0,
        );
        let v = variance_comparison(
            &base,
            100,
            100,
            &Engine::WeightedPath {
                trials: 50_000,
                ess_floor: 100.0,
            },
            RngSpec::new(2),
        )
        .unwrap();
        assert!(v.difference < 0.0 && v.z() < -2.0, "{v:?}");
        let scatter = base.with_branching(BranchingKernel::Scatter { delta: 0.3 });
        let v = variance_comparison(
            &scatter,
            100,
            100,
            &Engine::WeightedPath {
                trials: 50_000,
                ess_floor: 100.0,
            },
            RngSpec::new(2),
        )
        .unwrap();
        assert!(v.difference > 0.0 && v.z() > 2.0, "{v:?}");
    }
}
