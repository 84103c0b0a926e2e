use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::weighted::check_horizons;
use super::WeightedSample;
use crate::error::{Error, Result};
use crate::models::{Interval, ModelSpec};
use crate::rng::RngSpec;
use crate::stats::effective_sample_size;

/// Smallest allowed particle cap.
pub const MIN_CAP: usize = 1_000;
const RESAMPLE_TAG: u64 = 0x7265_7361_6d70;

/// How many children a particle leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffspringLaw {
    /// `Poisson(m(u))` children, each inheriting the parent's weight.
    #[default]
    Poisson,
    /// One child whose weight is multiplied by `m(u)`.
    Expected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    /// Largest population kept; larger generations are resampled down to it.
    pub cap: usize,
    /// Particles in generation zero, all at `u0` with total weight one.
    pub initial: usize,
    pub offspring: OffspringLaw,
}

impl PopulationConfig {
    pub fn new(cap: usize, initial: usize, offspring: OffspringLaw) -> Self {
        PopulationConfig {
            cap,
            initial,
            offspring,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.cap < MIN_CAP {
            return Err(Error::config(
                "engine.cap",
                format!("cap must be at least {MIN_CAP}, got {}", self.cap),
            ));
        }
        if self.initial == 0 {
            return Err(Error::config("engine.initial", "need at least one initial particle"));
        }
        Ok(())
    }

    /// Size restored when a Poisson population shrinks below half of it.
    fn target(&self) -> usize {
        self.initial.min(self.cap)
    }
}

/// One particle as seen from outside the engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub u: f64,
    /// Partial sum `S_n` of the particle's ancestry at the reporting index `n`.
    pub sum_at_n: f64,
    pub log_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub generation: usize,
    pub particles: Vec<ParticleState>,
    /// Particle weights are `exp(log_normalizer + log_weight)`.
    pub log_normalizer: f64,
    pub resample_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleReason {
    Cap,
    Floor,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleEvent {
    pub generation: usize,
    pub before: usize,
    pub after: usize,
    pub reason: ResampleReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub generation: usize,
    pub size: usize,
    /// `ln` of the total weight, an unbiased carrier of `E[∏ m]`.
    pub log_total_weight: f64,
    pub ess: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub resampled: Option<ResampleReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationRun {
    pub generations: Vec<GenerationSummary>,
    pub last: Population,
    pub resample_log: Vec<ResampleEvent>,
    pub extinct_at: Option<usize>,
    pub envelope: Interval,
    pub clamped_steps: u64,
}

impl PopulationRun {
    /// `ln` of the final total weight.
    pub fn log_total_weight(&self) -> f64 {
        self.generations.last().map_or(0.0, |g| g.log_total_weight)
    }

    /// The final generation as a weighted sample.
    pub fn sample(&self) -> Result<WeightedSample> {
        if let Some(g) = self.extinct_at {
            return Err(Error::Extinction(g));
        }
        let ps = &self.last.particles;
        let max = ps.iter().map(|p| p.log_weight).fold(f64::NEG_INFINITY, f64::max);
        Ok(WeightedSample {
            sums: ps.iter().map(|p| p.sum_at_n).collect(),
            terminal: ps.iter().map(|p| p.u).collect(),
            weights: ps.iter().map(|p| (p.log_weight - max).exp()).collect(),
            log_scale: self.last.log_normalizer + max,
            groups: vec![ps.len()],
            envelope: self.envelope,
            clamped_steps: self.clamped_steps,
        })
    }
}

#[derive(Clone)]
struct Particle {
    sum: f64,
    sum_at_n: f64,
    log_weight: f64,
    rng: ChaCha8Rng,
}

fn reseeded(p: &Particle, seed: u64) -> Particle {
    Particle {
        sum: p.sum,
        sum_at_n: p.sum_at_n,
        log_weight: p.log_weight,
        rng: ChaCha8Rng::seed_from_u64(seed),
    }
}

/// Systematic resampling to `target` particles of equal weight, preserving
/// the total weight. Copies after the first get fresh streams.
fn systematic_resample(particles: Vec<Particle>, target: usize, rng: &mut ChaCha8Rng) -> Vec<Particle> {
    let weights: Vec<f64> = particles.iter().map(|p| p.log_weight.exp()).collect();
    let total: f64 = weights.iter().sum();
    let log_each = (total / target as f64).ln();
    let step = total / target as f64;
    let mut next = step * rng.random::<f64>();
    let mut out = Vec::with_capacity(target);
    let mut cumulative = 0.0;
    for (p, w) in particles.iter().zip(&weights) {
        cumulative += w;
        let mut copies = 0;
        while next < cumulative && out.len() < target {
            let mut child = if copies == 0 {
                p.clone()
            } else {
                reseeded(p, rng.random())
            };
            child.log_weight = log_each;
            out.push(child);
            copies += 1;
            next += step;
        }
    }
    // rounding can leave the last slot empty
    while out.len() < target {
        let p = particles
            .iter()
            .zip(&weights)
            .rev()
            .find(|(_, w)| **w > 0.0)
            .map(|(p, _)| p)
            .expect("positive weight");
        let mut child = reseeded(p, rng.random());
        child.log_weight = log_each;
        out.push(child);
    }
    out
}

/// Explicit branching population, generation by generation up to `horizon_m`.
///
/// Each generation every particle moves, then branches at its new position.
/// Weights are kept in log space relative to a global normalizer, so the
/// total weight estimates `E[∏_{k≤M} m(u_k)]` without underflow. Positions
/// reported per particle are the ancestral `S_n` and the final `u_M`.
pub fn simulate_population(
    model: &ModelSpec,
    horizon_m: usize,
    n: usize,
    config: &PopulationConfig,
    rng: RngSpec,
) -> Result<PopulationRun> {
    check_horizons(model, horizon_m, n)?;
    config.validate()?;
    let big_n = model.n_scale();
    let u0 = model.u0;
    let mut particles: Vec<Particle> = (0..config.initial)
        .map(|t| Particle {
            sum: 0.0,
            sum_at_n: 0.0,
            log_weight: 0.0,
            rng: rng.stream(t as u64),
        })
        .collect();
    let mut log_normalizer = -(config.initial as f64).ln();
    let resampler = rng.derive(RESAMPLE_TAG);
    let mut generations = Vec::with_capacity(horizon_m);
    let mut resample_log = Vec::new();
    let mut envelope = Interval::new(u0, u0);
    let clamps = AtomicU64::new(0);
    let mut extinct_at = None;
    let offspring = config.offspring;

    for generation in 1..=horizon_m {
        particles = particles
            .into_par_iter()
            .flat_map_iter(|mut p| {
                let (x, clamped) = model.step(u0 + p.sum / big_n, &mut p.rng);
                if clamped {
                    clamps.fetch_add(1, Ordering::Relaxed);
                }
                p.sum += x;
                if generation == n {
                    p.sum_at_n = p.sum;
                }
                let u = u0 + p.sum / big_n;
                let mut out = Vec::new();
                match offspring {
                    OffspringLaw::Expected => {
                        p.log_weight += model.branching.ln_m(u);
                        if p.log_weight > f64::NEG_INFINITY {
                            out.push(p);
                        }
                    }
                    OffspringLaw::Poisson => {
                        let m = model.branching.m(u);
                        let k = if m > 0.0 {
                            Poisson::new(m).expect("positive finite mean").sample(&mut p.rng) as usize
                        } else {
                            0
                        };
                        for _ in 1..k {
                            let seed = p.rng.random();
                            out.push(reseeded(&p, seed));
                        }
                        if k >= 1 {
                            out.push(p);
                        }
                    }
                }
                out
            })
            .collect();

        if particles.is_empty() {
            extinct_at = Some(generation);
            generations.push(GenerationSummary {
                generation,
                size: 0,
                log_total_weight: f64::NEG_INFINITY,
                ess: 0.0,
                u_min: f64::NAN,
                u_max: f64::NAN,
                resampled: None,
            });
            break;
        }

        let max = particles.iter().map(|p| p.log_weight).fold(f64::NEG_INFINITY, f64::max);
        for p in particles.iter_mut() {
            p.log_weight -= max;
        }
        log_normalizer += max;

        let (u_min, u_max) = particles
            .iter()
            .map(|p| u0 + p.sum / big_n)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| (lo.min(u), hi.max(u)));
        envelope = Interval::new(envelope.lo.min(u_min), envelope.hi.max(u_max));

        let weights: Vec<f64> = particles.iter().map(|p| p.log_weight.exp()).collect();
        let ess = effective_sample_size(&weights);
        let count = particles.len();
        let reason = if count > config.cap {
            Some((ResampleReason::Cap, config.cap))
        } else if offspring == OffspringLaw::Poisson && count < config.target() / 2 {
            Some((ResampleReason::Floor, config.target()))
        } else if offspring == OffspringLaw::Expected && ess < 0.5 * count as f64 {
            Some((ResampleReason::Degenerate, count))
        } else {
            None
        };
        if let Some((why, target)) = reason {
            let mut r = resampler.stream(generation as u64);
            particles = systematic_resample(particles, target, &mut r);
            resample_log.push(ResampleEvent {
                generation,
                before: count,
                after: target,
                reason: why,
            });
        }
        let total: f64 = particles.iter().map(|p| p.log_weight.exp()).sum();
        generations.push(GenerationSummary {
            generation,
            size: particles.len(),
            log_total_weight: log_normalizer + total.ln(),
            ess: if reason.is_some() { particles.len() as f64 } else { ess },
            u_min,
            u_max,
            resampled: reason.map(|r| r.0),
        });
    }

    let last = Population {
        generation: generations.len(),
        particles: particles
            .iter()
            .map(|p| ParticleState {
                u: u0 + p.sum / big_n,
                sum_at_n: p.sum_at_n,
                log_weight: p.log_weight,
            })
            .collect(),
        log_normalizer,
        resample_count: resample_log.len(),
    };
    Ok(PopulationRun {
        generations,
        last,
        resample_log,
        extinct_at,
        envelope,
        clamped_steps: clamps.into_inner(),
    })
}
