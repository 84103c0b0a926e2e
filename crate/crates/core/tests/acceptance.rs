//! Acceptance criteria, one line each.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use brw_core::bounds::{azuma_bound, default_c, extended_bound, mgf_sweep, neighborhood_bound, AzumaVariant};
use brw_core::brw::{
    brw_tails, negative_association_test, replicate_rng, run_engine, simulate_population, simulate_weighted,
    variance_comparison, weighted_expectation, DescendantWeight, Engine, MonotoneFn, OffspringLaw, PopulationConfig,
};
use brw_core::mc::{empirical_tail, joint_containment, lipschitz_probe, measure_k, simulate_paths};
use brw_core::models::catalog::sample_displacements;
use brw_core::models::{BranchingKernel, DisplacementKernel, Drift, ModelSpec, ScaleParams};
use brw_core::recurrence::{
    closed_form_variance, effective_lipschitz, lipschitz_constant, mean_path, variance_curve, MeanOrder,
};
use brw_core::stats::{binomial_acceptance_region, binomial_upper_tail, mean_var};
use brw_core::RngSpec;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let spent = start.elapsed();
    if spent > budget {
        Err(format!(
            "took {:.1}s, budget {:.0}s",
            spent.as_secs_f64(),
            budget.as_secs_f64()
        ))
    } else {
        Ok(())
    }
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let n = 100;
    let trials = 1_000_000u64;
    let model = ModelSpec::walk(ScaleParams::new(100, n, n), DisplacementKernel::Rademacher, 0.0);
    let ens = simulate_paths(&model, n, trials as usize, RngSpec::new(1), false).map_err(err)?;
    let mut lines = Vec::new();
    let mut ok = true;
    for lambda in [10.0, 20.0, 30.0] {
        let t = empirical_tail(&ens, 0.0, lambda);
        let bound = azuma_bound(n, lambda, 1.0, AzumaVariant::Classic).map_err(err)?;
        let exact = 2.0 * binomial_upper_tail(100, 0.5, 50 + (lambda / 2.0) as u64);
        let (lo, hi) = binomial_acceptance_region(trials, exact, 0.99);
        let inside = (lo..=hi).contains(&t.hits);
        ok &= t.p_hat <= bound.value && inside;
        lines.push(format!(
            "λ={lambda}: p̂={:.5} exact={exact:.5} bound={:.4}",
            t.p_hat, bound.value
        ));
    }
    within_budget(start, Duration::from_secs(60))?;
    check(ok, lines.join("; "))
}

fn ac2() -> Outcome {
    let start = Instant::now();
    let (big_n, n, delta) = (1000u64, 1000usize, 0.5);
    let scale = ScaleParams::new(big_n, n, n);
    let model = ModelSpec::walk(scale.clone(), DisplacementKernel::BiasedDrift { kappa: 1.0 }, 0.0);
    let ens = simulate_paths(&model, n, 1_000_000, RngSpec::new(2), false).map_err(err)?;
    let mean = mean_path(&model, 0.0, 0, n, MeanOrder::First).map_err(err)?;
    let lipschitz = lipschitz_constant(&model, &mean).map_err(err)?;
    let a = brw_core::bounds::amplification(lipschitz, &scale);
    let k = measure_k(&model, ens.envelope, delta * a).map_err(err)?.k;
    let center = big_n as f64 * (mean.at(n) - model.u0);
    let mut ok = true;
    let mut worst = f64::INFINITY;
    let mut vacuous = 0;
    for mult in [1.0, 1.5, 2.0, 2.5, 3.0] {
        let lambda = mult * (n as f64).sqrt();
        let t = empirical_tail(&ens, center, lambda);
        let b = extended_bound(n, lambda, delta, k).map_err(err)?;
        ok &= t.p_hat <= b.value;
        worst = worst.min(b.value - t.p_hat);
        vacuous += b.vacuous as usize;
    }
    within_budget(start, Duration::from_secs(300))?;
    check(
        ok,
        format!("L={lipschitz:.4} A={a:.4} K={k:.4}; min slack {worst:.4}; {vacuous}/5 bounds ≥ 1 (vacuous)"),
    )
}

fn ac3() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    let mut violations = 0;
    let mut worst = 0.0f64;
    for kernel in sample_displacements() {
        let domain = kernel.domain();
        let positions: Vec<f64> = [-0.5, -0.1, 0.0, 0.2, 0.6]
            .into_iter()
            .filter(|u| domain.contains(*u))
            .collect();
        let sweep = mgf_sweep(&kernel, &positions, 20).map_err(err)?;
        checked += sweep.checked;
        violations += sweep.violations;
        worst = worst.max(sweep.worst_ratio);
    }
    within_budget(start, Duration::from_secs(10))?;
    check(
        violations == 0,
        format!("{checked} (kernel, u, t, δ) points, {violations} violations, worst ratio {worst:.4}"),
    )
}

fn ac4() -> Outcome {
    let start = Instant::now();
    let n = 1000;
    let model = ModelSpec::walk(
        ScaleParams::new(1000, n, n),
        DisplacementKernel::BiasedDrift { kappa: 1.0 },
        0.0,
    );
    let mean = mean_path(&model, 0.0, 0, n, MeanOrder::First).map_err(err)?;
    let var = variance_curve(&model, &mean).map_err(err)?.terminal();
    let closed = closed_form_variance(&model, &mean).map_err(err)?;
    let ens = simulate_paths(&model, n, 100_000, RngSpec::new(4), false).map_err(err)?;
    let (_, mc) = mean_var(&ens.terminal_positions());
    let mc_rel = (var - mc).abs() / mc;
    let closed_rel = (var - closed).abs() / var;
    within_budget(start, Duration::from_secs(120))?;
    check(
        mc_rel <= 0.05 && closed_rel <= 10.0 / 1000.0,
        format!("Var_n={var:.6e} MC={mc:.6e} (rel {mc_rel:.4}) closed form rel {closed_rel:.2e}"),
    )
}

fn ac5() -> Outcome {
    let (i, l, du) = (100usize, 600usize, 0.1);
    let scale = ScaleParams::new(1000, l, 1000);
    let biased = ModelSpec::walk(scale.clone(), DisplacementKernel::BiasedDrift { kappa: 1.0 }, 0.0);
    let base = mean_path(&biased, 0.0, 0, i, MeanOrder::First).map_err(err)?;
    let u = base.at(i);
    let est = lipschitz_probe(&biased, i, l, u, u + du, 400_000, RngSpec::new(5)).map_err(err)?;
    let ahead = mean_path(&biased, u, i, l, MeanOrder::First).map_err(err)?;
    let predicted = effective_lipschitz(&biased, &ahead, i, l).map_err(err)?;
    let rel = (est.slope - predicted).abs() / predicted.abs();
    let flat = ModelSpec::walk(scale, DisplacementKernel::Rademacher, 0.0);
    let zero = lipschitz_probe(&flat, i, l, 0.0, du, 400_000, RngSpec::new(5)).map_err(err)?;
    check(
        rel <= 0.10 && zero.slope.abs() <= 3.0 * zero.se,
        format!(
            "biased: probe {:.4} ± {:.4} vs predicted {predicted:.4} (rel {rel:.4}); rademacher: {:.2e} ± {:.2e}",
            est.slope, est.se, zero.slope, zero.se
        ),
    )
}

fn ac6() -> Outcome {
    let (n, trials) = (150usize, 1000usize);
    let model = ModelSpec::new(
        ScaleParams::new(200, n, 200),
        DisplacementKernel::BiasedDrift { kappa: 0.7 },
        BranchingKernel::Unit,
        0.2,
    );
    let rng = RngSpec::new(6);
    let plain = simulate_paths(&model, n, trials, rng, false).map_err(err)?;
    let weighted = simulate_weighted(&model, 200, n, trials, rng).map_err(err)?;
    let population = simulate_population(
        &model,
        200,
        n,
        &PopulationConfig::new(trials, trials, OffspringLaw::Expected),
        rng,
    )
    .map_err(err)?
    .sample()
    .map_err(err)?;
    let center = plain.terminal.iter().sum::<f64>() / trials as f64;
    let lambdas = [5.0, 10.0, 15.0];
    let expected: Vec<_> = lambdas.iter().map(|&l| empirical_tail(&plain, center, l)).collect();
    let mut ok = weighted.sums == plain.terminal && population.sums == plain.terminal;
    for engine in [
        Engine::WeightedPath { trials, ess_floor: 1.0 },
        Engine::Population {
            config: PopulationConfig::new(trials, trials, OffspringLaw::Expected),
            replicates: 1,
        },
    ] {
        let tails = brw_tails(&model, 200, n, &lambdas, &engine, rng).map_err(err)?;
        for (t, e) in tails.iter().zip(&expected) {
            ok &= (t.hits, t.trials, t.p_hat, t.ci_low, t.ci_high) == (e.hits, e.trials, e.p_hat, e.ci_low, e.ci_high);
        }
    }
    let mean_u = plain.terminal_positions().iter().sum::<f64>() / trials as f64;
    let est = weighted_expectation(&model, |p| p[n], n, trials, rng, 1.0).map_err(err)?;
    ok &= est.value == mean_u;
    check(
        ok,
        format!("S_n, tails and E(u_n) identical across 3 engines ({trials} trials)"),
    )
}

fn ac7() -> Outcome {
    let start = Instant::now();
    let n = 200;
    let model = ModelSpec::new(
        ScaleParams::new(200, n, n),
        DisplacementKernel::Rademacher,
        BranchingKernel::KsatLike { k: 2 },
        0.1,
    );
    let direct = weighted_expectation(&model, |p| p[n], n, 200_000, RngSpec::new(7), 100.0).map_err(err)?;
    let config = PopulationConfig::new(20_000, 20_000, OffspringLaw::Poisson);
    let mut replicate_means = Vec::new();
    let mut ess = Vec::new();
    for r in 0..10 {
        let s = simulate_population(&model, n, n, &config, replicate_rng(RngSpec::new(70), r))
            .map_err(err)?
            .sample()
            .map_err(err)?;
        ess.push(s.ess());
        replicate_means.push(s.mean_of(&s.positions_at_n(model.u0, 200.0)));
    }
    let (pop, var) = mean_var(&replicate_means);
    let pop_se = (var / replicate_means.len() as f64).sqrt();
    let combined = (direct.se.powi(2) + pop_se.powi(2)).sqrt();
    let diff = (direct.value - pop).abs();
    within_budget(start, Duration::from_secs(120))?;
    check(
        diff <= 1.96 * combined,
        format!(
            "weighted {:.5} ± {:.5} (ESS {:.0}); population {pop:.5} ± {pop_se:.5} (mean ESS {:.0}); |Δ| = {diff:.5}",
            direct.value,
            direct.se,
            direct.ess,
            ess.iter().sum::<f64>() / ess.len() as f64
        ),
    )
}

fn ac8() -> Outcome {
    let start = Instant::now();
    let model = ModelSpec::new(
        ScaleParams::new(200, 200, 200),
        DisplacementKernel::Gaussian {
            drift: Drift::Zero,
            sigma: 1.0,
        },
        BranchingKernel::Squeeze { delta: 1.0 },
        0.0,
    );
    let family = MonotoneFn::default_family();
    let trials = 200_000;
    let squeeze = negative_association_test(
        &model,
        1,
        200,
        &family,
        trials,
        DescendantWeight::Transfer,
        RngSpec::new(8),
    )
    .map_err(err)?;
    let scatter_model = model.with_branching(BranchingKernel::Scatter { delta: 1.0 });
    let scatter = negative_association_test(
        &scatter_model,
        1,
        200,
        &family,
        trials,
        DescendantWeight::Transfer,
        RngSpec::new(8),
    )
    .map_err(err)?;
    let squeeze_ok = squeeze.iter().all(|r| r.margin >= -r.se);
    let identity = scatter.iter().find(|r| r.f == "x").ok_or("identity missing")?;
    within_budget(start, Duration::from_secs(120))?;
    let zs: Vec<String> = squeeze.iter().map(|r| format!("{}:{:.2}", r.f, r.z)).collect();
    check(
        squeeze_ok && identity.z < -3.0,
        format!("squeeze z = [{}]; scatter z(x) = {:.2}", zs.join(" "), identity.z),
    )
}

fn ac9() -> Outcome {
    let n = 200;
    let base = ModelSpec::new(
        ScaleParams::new(200, n, n),
        DisplacementKernel::Rademacher,
        BranchingKernel::Unit,
        0.0,
    );
    let engine = Engine::Population {
        config: PopulationConfig::new(5_000, 5_000, OffspringLaw::Poisson),
        replicates: 20,
    };
    let squeeze = variance_comparison(
        &base.with_branching(BranchingKernel::Squeeze { delta: 1.0 }),
        n,
        n,
        &engine,
        RngSpec::new(9),
    )
    .map_err(err)?;
    let scatter = variance_comparison(
        &base.with_branching(BranchingKernel::Scatter { delta: 1.0 }),
        n,
        n,
        &engine,
        RngSpec::new(9),
    )
    .map_err(err)?;
    check(
        squeeze.difference <= -2.0 * squeeze.se && scatter.difference >= 2.0 * scatter.se,
        format!(
            "squeeze Δ = {:.3e} ({:.1} SE); scatter Δ = {:.3e} ({:.1} SE); plain Var = {:.3e}",
            squeeze.difference,
            squeeze.z(),
            scatter.difference,
            scatter.z(),
            squeeze.var_plain
        ),
    )
}

fn ac10() -> Outcome {
    let (n, delta) = (400usize, 0.5);
    let scale = ScaleParams::new(400, n, n);
    let model = ModelSpec::new(
        scale.clone(),
        DisplacementKernel::Rademacher,
        BranchingKernel::Squeeze { delta: 1.0 },
        0.0,
    );
    let engine = Engine::Population {
        config: PopulationConfig::new(20_000, 20_000, OffspringLaw::Poisson),
        replicates: 1,
    };
    let (sample, _) = run_engine(&model, n, n, &engine, RngSpec::new(10)).map_err(err)?;
    let mean = mean_path(&model, 0.0, 0, n, MeanOrder::First).map_err(err)?;
    let a = brw_core::bounds::amplification(lipschitz_constant(&model, &mean).map_err(err)?, &scale);
    let k = measure_k(&model, sample.envelope, delta * a).map_err(err)?.k;
    let center = sample.mean_of(&sample.sums);
    let mut ok = true;
    let mut parts = Vec::new();
    for mult in [1.0, 2.0, 3.0] {
        let lambda = mult * (n as f64).sqrt();
        let t = sample.tail(center, lambda);
        let b = extended_bound(n, lambda, delta, k).map_err(err)?;
        ok &= t.p_hat <= b.value;
        parts.push(format!("λ={lambda}: p̂={:.4} bound={:.3}", t.p_hat, b.value));
    }
    check(
        ok,
        format!("A={a:.3} K={k:.4} ESS={:.0}; {}", sample.ess(), parts.join("; ")),
    )
}

fn ac11() -> Outcome {
    let (big_n, n, delta) = (10_000u64, 100usize, 0.5);
    let lambda = 4.0 * (big_n as f64).sqrt();
    let model = ModelSpec::walk(ScaleParams::new(big_n, n, n), DisplacementKernel::Rademacher, 0.0);
    let ens = simulate_paths(&model, n, 100_000, RngSpec::new(11), true).map_err(err)?;
    let contained = joint_containment(&ens, lambda).map_err(err)?;
    let k = measure_k(&model, ens.envelope, delta).map_err(err)?.k;
    let c = default_c(delta, k);
    let bound = neighborhood_bound(n, lambda, c, big_n).map_err(err)?;
    let literal = neighborhood_bound(n, lambda, 1.0, big_n).map_err(err)?;
    let ok = contained.p_hat >= bound.value && contained.p_hat >= literal.value;
    check(
        ok,
        format!(
            "P(contained) = {:.4}; c = K²/δ² = {c:.3} gives {} (valid={}, flags: {}); c = 1 gives {:.4}",
            contained.p_hat,
            bound.value,
            bound.valid,
            bound.flags.join(" | "),
            literal.value
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("AC1 Azuma verification on the fair walk", ac1),
        ("AC2 extended bound with measured K on the biased walk", ac2),
        ("AC3 moment generating function inequality sweep", ac3),
        ("AC4 variance recurrence against Monte Carlo and closed form", ac4),
        ("AC5 Lipschitz probe against the sensitivity factor", ac5),
        ("AC6 unit-branching reduction is bit-exact", ac6),
        ("AC7 cross-engine population average", ac7),
        ("AC8 negative association separates squeeze from scatter", ac8),
        ("AC9 squeeze/scatter variance ordering", ac9),
        ("AC10 branching walk tail under the extended bound", ac10),
        ("AC11 neighborhood containment bound", ac11),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failures += 1;
                println!("[FAIL] {name} ({secs:.1}s): {detail}");
            }
        }
    }
    println!("{} of 11 criteria passed", 11 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
