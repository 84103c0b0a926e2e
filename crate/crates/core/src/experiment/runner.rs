use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::table::{Cell, Table};
use crate::bounds::{
    amplification, azuma_bound, default_c, extended_bound, mgf_bound, neighborhood_bound, optimal_t, AzumaVariant,
    BoundKind, BoundValue,
};
use crate::brw::{negative_association_test, run_engine, MonotoneFn, PopulationRun, ResampleEvent};
use crate::error::{Error, Result};
use crate::mc::{
    doob_increments, empirical_tail, index_grid, joint_containment, lipschitz_probe, measure_k, simulate_paths,
    KMeasurement, TailEstimate,
};
use crate::models::{Interval, ModelSpec};
use crate::recurrence::{
    closed_form_curve, diagnostics, effective_lipschitz, lipschitz_constant, mean_path, variance_curve,
};
use crate::rng::RngSpec;
use crate::stats::mean_var;

/// Version recorded in every manifest.
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
const DOOB_TAG: u64 = 0x646f_6f62;

/// The pipelines a run can execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SimulateRw,
    SimulateBrw,
    Bounds,
    Recurrence,
    ProbeLipschitz,
    ProbeDoob,
    TestAssociation,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::SimulateRw => "simulate-rw",
            Command::SimulateBrw => "simulate-brw",
            Command::Bounds => "bounds",
            Command::Recurrence => "recurrence",
            Command::ProbeLipschitz => "probe-lipschitz",
            Command::ProbeDoob => "probe-doob",
            Command::TestAssociation => "test-association",
        }
    }
}

/// Digest of one emitted file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
    pub rows: usize,
}

/// A resampling event tagged with its replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEvent {
    pub replicate: usize,
    #[serde(flatten)]
    pub event: ResampleEvent,
}

/// Provenance record written next to a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub command: Command,
    pub run_id: String,
    pub config: ExperimentConfig,
    pub model_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_measurement: Option<KMeasurement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<Interval>,
    pub wall_time_secs: f64,
    pub outputs: Vec<OutputDigest>,
    pub flags: Vec<String>,
    pub violations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub resample_log: Vec<ReplicateEvent>,
    pub summary: Value,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::MissingOutput(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::config("manifest", format!("{}: {e}", path.display())))
    }

    pub fn output(&self, stem: &str) -> Option<&OutputDigest> {
        self.outputs.iter().find(|o| o.file.split('.').next() == Some(stem))
    }
}

/// What a pipeline produced, before anything is written.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub tables: Vec<Table>,
    pub summary: Value,
    pub flags: Vec<String>,
    pub violations: usize,
    pub k_measurement: Option<KMeasurement>,
    pub envelope: Option<Interval>,
    pub resample_log: Vec<ReplicateEvent>,
}

impl RunReport {
    fn new() -> Self {
        RunReport {
            tables: Vec::new(),
            summary: json!({}),
            flags: Vec::new(),
            violations: 0,
            k_measurement: None,
            envelope: None,
            resample_log: Vec::new(),
        }
    }
}

/// A finished run on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

/// Bound parameters resolved for one run.
struct BoundInputs {
    delta: f64,
    lipschitz: f64,
    a: f64,
    k: f64,
    c: f64,
    k_measurement: Option<KMeasurement>,
}

fn resolve_bounds(
    config: &ExperimentConfig,
    model: &ModelSpec,
    envelope: Interval,
    flags: &mut Vec<String>,
) -> Result<BoundInputs> {
    let b = &config.bounds;
    let lipschitz = match b.lipschitz {
        Some(l) => l,
        None => {
            let mean = mean_path(model, model.u0, 0, config.scale.max_horizon, config.recurrence.order)?;
            lipschitz_constant(model, &mean)?
        }
    };
    let a = amplification(lipschitz, &config.scale);
    let (k, k_measurement) = match b.k {
        Some(k) => (k, None),
        None => {
            let m = measure_k(model, envelope, b.delta * a)?;
            (m.k, Some(m))
        }
    };
    let c = match b.c {
        Some(c) => c,
        None => {
            if b.kinds.contains(&BoundKind::Neighborhood) {
                flags.push("c_default: neighborhood constant c = K^2/delta^2".into());
            }
            default_c(b.delta, k)
        }
    };
    Ok(BoundInputs {
        delta: b.delta,
        lipschitz,
        a,
        k,
        c,
        k_measurement,
    })
}

fn tail_bound(
    kind: BoundKind,
    n: usize,
    lambda: f64,
    inputs: &BoundInputs,
    config: &ExperimentConfig,
) -> Result<Option<BoundValue>> {
    let azuma_c = config.bounds.azuma_c;
    Ok(match kind {
        BoundKind::AzumaClassic => Some(azuma_bound(n, lambda, azuma_c, AzumaVariant::Classic)?),
        BoundKind::AzumaDowngraded => Some(azuma_bound(n, lambda, azuma_c, AzumaVariant::Downgraded)?),
        BoundKind::Extended => Some(extended_bound(n, lambda, inputs.delta, inputs.k)?),
        BoundKind::Neighborhood => Some(neighborhood_bound(n, lambda, inputs.c, config.scale.scale_n)?),
        BoundKind::Mgf => None,
    })
}

/// One row per λ: the empirical tail, its interval, each selected bound and
/// whether any valid bound is exceeded.
fn tail_table(
    config: &ExperimentConfig,
    tails: &[TailEstimate],
    containment: Option<&[TailEstimate]>,
    inputs: &BoundInputs,
    report: &mut RunReport,
) -> Result<Table> {
    let n = config.scale.horizon;
    let kinds: Vec<BoundKind> = config
        .bounds
        .kinds
        .iter()
        .copied()
        .filter(|k| *k != BoundKind::Mgf && (*k != BoundKind::Neighborhood || containment.is_some()))
        .collect();
    if config.bounds.kinds.contains(&BoundKind::Mgf) {
        report
            .flags
            .push("mgf_not_a_tail_bound: reported by the bounds subcommand only".into());
    }
    if config.bounds.kinds.contains(&BoundKind::Neighborhood) && containment.is_none() {
        report
            .flags
            .push("neighborhood_skipped: needs full paths of a plain walk".into());
    }
    let mut columns: Vec<String> = ["lambda", "hits", "trials", "ess", "p_hat", "ci_low", "ci_high"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if containment.is_some() {
        columns.extend(["p_contained", "contained_ci_low", "contained_ci_high"].map(String::from));
    }
    columns.extend(kinds.iter().map(|k| k.as_str().to_string()));
    columns.push("violated".into());
    let mut table = Table::with_columns("tails", columns);
    for (j, t) in tails.iter().enumerate() {
        let mut row: Vec<Cell> = vec![
            t.lambda.into(),
            t.hits.into(),
            t.trials.into(),
            t.ess.into(),
            t.p_hat.into(),
            t.ci_low.into(),
            t.ci_high.into(),
        ];
        let inside = containment.map(|c| &c[j]);
        if let Some(c) = inside {
            row.extend([c.p_hat.into(), c.ci_low.into(), c.ci_high.into()]);
        }
        let mut violated = false;
        for &kind in &kinds {
            let bound = tail_bound(kind, n, t.lambda, inputs, config)?.expect("tail kinds only");
            let exceeded = if kind == BoundKind::Neighborhood {
                inside.is_some_and(|c| bound.valid && c.p_hat < bound.value)
            } else {
                bound.valid && t.p_hat > bound.value
            };
            violated |= exceeded;
            for f in &bound.flags {
                let flag = format!("{kind} at lambda = {}: {f}", t.lambda);
                if !report.flags.contains(&flag) {
                    report.flags.push(flag);
                }
            }
            if let Some(reason) = &bound.reason {
                report
                    .flags
                    .push(format!("{kind} invalid at lambda = {}: {reason}", t.lambda));
            }
            row.push(if bound.valid { bound.value.into() } else { Cell::Empty });
        }
        report.violations += violated as usize;
        row.push(violated.into());
        table.push(row);
    }
    Ok(table)
}

fn bound_summary(inputs: &BoundInputs) -> Value {
    json!({
        "delta": inputs.delta,
        "lipschitz": inputs.lipschitz,
        "a": inputs.a,
        "k": inputs.k,
        "c": inputs.c,
    })
}

fn simulate_rw(config: &ExperimentConfig, model: &ModelSpec, rng: RngSpec) -> Result<RunReport> {
    let mut report = RunReport::new();
    let n = config.scale.horizon;
    if !model.branching.is_unit() {
        report.flags.push("branching_ignored: plain walks do not branch".into());
    }
    let keep_full = config.bounds.kinds.contains(&BoundKind::Neighborhood);
    let ens = simulate_paths(model, n, config.engine.trials, rng, keep_full)?;
    let (center, center_se) = ens.mean_terminal();
    let lambdas = config.lambdas();
    let tails: Vec<TailEstimate> = lambdas.iter().map(|&l| empirical_tail(&ens, center, l)).collect();
    let containment = if keep_full {
        Some(
            lambdas
                .iter()
                .map(|&l| joint_containment(&ens, l))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let inputs = resolve_bounds(config, model, ens.envelope, &mut report.flags)?;
    let table = tail_table(config, &tails, containment.as_deref(), &inputs, &mut report)?;
    if ens.clamped_steps > 0 {
        report.flags.push(format!("clamped_steps: {}", ens.clamped_steps));
    }
    report.summary = json!({
        "trials": ens.trials,
        "center": center,
        "center_se": center_se,
        "clamped_steps": ens.clamped_steps,
        "bounds": bound_summary(&inputs),
    });
    report.tables.push(table);
    report.k_measurement = inputs.k_measurement;
    report.envelope = Some(ens.envelope);
    Ok(report)
}

fn generations_table(runs: &[PopulationRun]) -> Table {
    let mut t = Table::new(
        "generations",
        &[
            "replicate",
            "generation",
            "size",
            "log_total_weight",
            "ess",
            "u_min",
            "u_max",
            "resampled",
        ],
    );
    for (r, run) in runs.iter().enumerate() {
        for g in &run.generations {
            t.push(vec![
                r.into(),
                g.generation.into(),
                g.size.into(),
                g.log_total_weight.into(),
                g.ess.into(),
                g.u_min.into(),
                g.u_max.into(),
                g.resampled.map_or(Cell::Empty, |why| {
                    serde_json::to_value(why)
                        .expect("reason serializes")
                        .as_str()
                        .unwrap_or("")
                        .into()
                }),
            ]);
        }
    }
    t
}

fn simulate_brw(config: &ExperimentConfig, model: &ModelSpec, rng: RngSpec) -> Result<RunReport> {
    let mut report = RunReport::new();
    let (m, n) = (config.scale.max_horizon, config.scale.horizon);
    let (sample, runs) = run_engine(model, m, n, &config.engine.engine(), rng)?;
    let center = sample.mean_of(&sample.sums);
    let tails: Vec<TailEstimate> = config.lambdas().iter().map(|&l| sample.tail(center, l)).collect();
    let inputs = resolve_bounds(config, model, sample.envelope, &mut report.flags)?;
    let table = tail_table(config, &tails, None, &inputs, &mut report)?;
    let u_n = sample.positions_at_n(model.u0, model.n_scale());
    let mean_weight = if runs.is_empty() {
        let (w, se) = sample.mean_weight();
        json!({ "value": w, "se": se })
    } else {
        let totals: Vec<f64> = runs.iter().map(|r| r.log_total_weight().exp()).collect();
        let (w, var) = mean_var(&totals);
        json!({ "value": w, "se": (var / totals.len() as f64).sqrt() })
    };
    if sample.clamped_steps > 0 {
        report.flags.push(format!("clamped_steps: {}", sample.clamped_steps));
    }
    report.summary = json!({
        "engine": config.engine.kind,
        "samples": sample.len(),
        "ess": sample.ess(),
        "center": center,
        "mean_u_n": sample.mean_of(&u_n),
        "var_u_n": sample.variance_of(&u_n),
        "mean_branching_product": mean_weight,
        "clamped_steps": sample.clamped_steps,
        "bounds": bound_summary(&inputs),
    });
    report.tables.push(table);
    if !runs.is_empty() {
        report.tables.push(generations_table(&runs));
        report.resample_log = runs
            .iter()
            .enumerate()
            .flat_map(|(r, run)| {
                run.resample_log.iter().map(move |e| ReplicateEvent {
                    replicate: r,
                    event: e.clone(),
                })
            })
            .collect();
    }
    report.k_measurement = inputs.k_measurement;
    report.envelope = Some(sample.envelope);
    Ok(report)
}

fn bounds_only(config: &ExperimentConfig, model: &ModelSpec) -> Result<RunReport> {
    let mut report = RunReport::new();
    let n = config.scale.horizon;
    let lambdas = config.lambdas();
    let mean = mean_path(model, model.u0, 0, n, config.recurrence.order)?;
    let reach = lambdas.iter().fold(0.0f64, |a, &b| a.max(b)) / model.n_scale();
    let (lo, hi) = mean
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &u| {
            (lo.min(u), hi.max(u))
        });
    let envelope = Interval::new(lo - reach, hi + reach).intersect(&model.domain());
    if config.bounds.k.is_none() {
        report
            .flags
            .push("k_envelope: mean path widened by the largest lambda/N".into());
    }
    let inputs = resolve_bounds(config, model, envelope, &mut report.flags)?;
    let mut table = Table::new(
        "bounds",
        &[
            "bound_kind",
            "lambda",
            "n",
            "delta",
            "k",
            "lipschitz",
            "a",
            "c",
            "t",
            "value",
            "valid",
            "vacuous",
            "flags",
        ],
    );
    for &kind in &config.bounds.kinds {
        for &lambda in &lambdas {
            let (value, t) = match tail_bound(kind, n, lambda, &inputs, config)? {
                Some(v) => (v, None),
                None => {
                    let t = optimal_t(lambda, n, inputs.delta, inputs.k)?;
                    let m = mgf_bound(t.t, inputs.delta, inputs.k)?;
                    let mut v = BoundValue {
                        kind,
                        value: m.linear,
                        valid: true,
                        vacuous: false,
                        reason: None,
                        flags: vec![format!("exponential_form: {}", m.exponential)],
                    };
                    if t.clamped {
                        v.flags.push("t_clamped_to_delta".into());
                    }
                    (v, Some(t.t))
                }
            };
            table.push(vec![
                kind.as_str().into(),
                lambda.into(),
                n.into(),
                inputs.delta.into(),
                inputs.k.into(),
                inputs.lipschitz.into(),
                inputs.a.into(),
                inputs.c.into(),
                t.into(),
                value.value.into(),
                value.valid.into(),
                value.vacuous.into(),
                value.flags.join("; ").into(),
            ]);
        }
    }
    report.summary = json!({ "bounds": bound_summary(&inputs) });
    report.tables.push(table);
    report.k_measurement = inputs.k_measurement;
    report.envelope = Some(envelope);
    Ok(report)
}

fn recurrence_run(config: &ExperimentConfig, model: &ModelSpec, rng: RngSpec) -> Result<RunReport> {
    let mut report = RunReport::new();
    let n = config.scale.horizon;
    let big_n = model.n_scale();
    let mean = mean_path(model, model.u0, 0, n, config.recurrence.order)?;
    let curve = variance_curve(model, &mean)?;
    let closed = closed_form_curve(model, &mean)?;
    let mc: Option<Vec<(f64, f64)>> = if config.recurrence.mc_trials > 1 {
        let ens = simulate_paths(model, n, config.recurrence.mc_trials, rng, true)?;
        let paths = ens.paths.expect("full paths were requested");
        let trials = paths.len() as f64;
        Some(
            (0..=n)
                .map(|k| {
                    let u: Vec<f64> = paths.iter().map(|p| p[k] / big_n).collect();
                    let (_, var) = mean_var(&u);
                    (var, var * (2.0 / (trials - 1.0)).sqrt())
                })
                .collect(),
        )
    } else {
        None
    };
    let mut table = Table::new(
        "recurrence",
        &[
            "step",
            "u_bar",
            "var",
            "a",
            "b",
            "var_closed_form",
            "var_mc",
            "var_mc_se",
        ],
    );
    for k in 0..=n {
        let coeff = curve.coeffs.get(k);
        let m = mc.as_ref().map(|v| v[k]);
        table.push(vec![
            k.into(),
            mean.at(k).into(),
            curve.values[k].into(),
            coeff.map(|c| c.a).into(),
            coeff.map(|c| c.b).into(),
            closed[k].into(),
            m.map(|v| v.0).into(),
            m.map(|v| v.1).into(),
        ]);
    }
    report.flags.extend(curve.flags.iter().cloned());
    let terminal = curve.terminal();
    let closed_terminal = closed[n];
    let mc_terminal = mc.as_ref().map(|v| v[n]);
    report.summary = json!({
        "steps": n,
        "u_bar_terminal": mean.at(n),
        "var_terminal": terminal,
        "var_closed_form": closed_terminal,
        "closed_form_relative_gap": (terminal - closed_terminal).abs() / terminal.abs().max(f64::MIN_POSITIVE),
        "var_monte_carlo": mc_terminal.map(|v| v.0),
        "var_monte_carlo_se": mc_terminal.map(|v| v.1),
        "monte_carlo_relative_error": mc_terminal.map(|v| (terminal - v.0).abs() / v.0),
        "derivative_source": curve.source,
        "diagnostics": diagnostics(model, &mean)?,
    });
    report.tables.push(table);
    Ok(report)
}

fn probe_lipschitz(config: &ExperimentConfig, model: &ModelSpec, rng: RngSpec) -> Result<RunReport> {
    let mut report = RunReport::new();
    let p = &config.probe;
    let l = p.l.unwrap_or(config.scale.horizon);
    let i = p.i;
    if i >= l {
        return Err(Error::config("probe.i", format!("need i < l, got i = {i}, l = {l}")));
    }
    let base = mean_path(model, model.u0, 0, i, config.recurrence.order)?;
    let u = p.u.unwrap_or_else(|| base.at(i));
    let u_prime = p.u_prime.unwrap_or(u + p.step);
    if u == u_prime {
        return Err(Error::config("probe.u_prime", "must differ from probe.u"));
    }
    let est = lipschitz_probe(model, i, l, u, u_prime, config.engine.trials, rng)?;
    let ahead = mean_path(model, u, i, l, config.recurrence.order)?;
    let predicted = effective_lipschitz(model, &ahead, i, l)?;
    let mut table = Table::new(
        "lipschitz",
        &[
            "i",
            "l",
            "u",
            "u_prime",
            "trials",
            "slope",
            "value",
            "se",
            "predicted",
            "relative_error",
        ],
    );
    let relative = if predicted != 0.0 {
        Some((est.slope - predicted).abs() / predicted.abs())
    } else {
        None
    };
    table.push(vec![
        i.into(),
        l.into(),
        u.into(),
        u_prime.into(),
        est.trials.into(),
        est.slope.into(),
        est.value.into(),
        est.se.into(),
        predicted.into(),
        relative.into(),
    ]);
    report.summary = json!({ "estimate": est, "predicted": predicted });
    report.tables.push(table);
    Ok(report)
}

fn probe_doob(config: &ExperimentConfig, model: &ModelSpec, rng: RngSpec) -> Result<RunReport> {
    let mut report = RunReport::new();
    let n = config.scale.horizon;
    let p = &config.probe;
    let ens = simulate_paths(model, n, 1, rng, true)?;
    let path = &ens.paths.as_ref().expect("full paths were requested")[0];
    let indices = p.indices.clone().unwrap_or_else(|| index_grid(n, p.index_count));
    let increments = doob_increments(
        model,
        path,
        p.sub_trials,
        rng.derive(DOOB_TAG),
        Some(&indices),
        p.budget,
    )?;
    let mean = mean_path(model, model.u0, 0, config.scale.max_horizon, config.recurrence.order)?;
    let a = amplification(lipschitz_constant(model, &mean)?, &config.scale);
    let mut table = Table::new(
        "doob",
        &["index", "increment", "value", "se", "sub_trials", "amplified_increment"],
    );
    for d in &increments {
        table.push(vec![
            d.index.into(),
            d.increment.into(),
            d.value.into(),
            d.se.into(),
            d.sub_trials.into(),
            (a * d.increment.abs()).into(),
        ]);
    }
    report.summary = json!({
        "path_terminal_sum": path[n],
        "amplification": a,
        "indices": indices,
    });
    report.tables.push(table);
    report.envelope = Some(ens.envelope);
    Ok(report)
}

fn test_association(config: &ExperimentConfig, model: &ModelSpec, rng: RngSpec) -> Result<RunReport> {
    let mut report = RunReport::new();
    let p = &config.probe;
    let family: Vec<MonotoneFn> = p.f_family.iter().map(|f| MonotoneFn::parse(f)).collect::<Result<_>>()?;
    let results = negative_association_test(
        model,
        p.i,
        config.scale.max_horizon,
        &family,
        config.engine.trials,
        p.descendant,
        rng,
    )?;
    let mut table = Table::new(
        "association",
        &["f", "lhs", "rhs", "margin", "se", "z", "trials", "passes"],
    );
    for r in &results {
        table.push(vec![
            r.f.clone().into(),
            r.lhs.into(),
            r.rhs.into(),
            r.margin.into(),
            r.se.into(),
            r.z.into(),
            r.trials.into(),
            (r.margin >= -r.se).into(),
        ]);
    }
    report.summary = json!({
        "i": p.i,
        "horizon": config.scale.max_horizon,
        "descendant": p.descendant,
        "all_pass": results.iter().all(|r| r.margin >= -r.se),
    });
    report.tables.push(table);
    Ok(report)
}

/// Runs a pipeline in memory on the current thread pool.
pub fn execute(command: Command, config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let model = config.model()?;
    let rng = RngSpec::new(config.seed);
    match command {
        Command::SimulateRw => simulate_rw(config, &model, rng),
        Command::SimulateBrw => simulate_brw(config, &model, rng),
        Command::Bounds => bounds_only(config, &model),
        Command::Recurrence => recurrence_run(config, &model, rng),
        Command::ProbeLipschitz => probe_lipschitz(config, &model, rng),
        Command::ProbeDoob => probe_doob(config, &model, rng),
        Command::TestAssociation => test_association(config, &model, rng),
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `<command>-<digest>` of the command and result-relevant configuration.
pub fn run_name(command: Command, config: &ExperimentConfig) -> String {
    let digest = sha256_hex(format!("{}\n{}", command.as_str(), config.canonical_json()).as_bytes());
    format!("{}-{}", command.as_str(), &digest[..12])
}

/// Creates a fresh directory for the run, suffixing `-r2`, `-r3`, … when the
/// name is taken.
fn fresh_dir(out: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    for attempt in 1.. {
        let candidate = if attempt == 1 {
            out.join(name)
        } else {
            out.join(format!("{name}-r{attempt}"))
        };
        match std::fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("the attempt counter is unbounded")
}

pub(crate) fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    bytes.push(b'\n');
    std::fs::write(dir.join(MANIFEST_FILE), bytes)?;
    Ok(())
}

/// Validates the configuration, runs the pipeline on a pool of
/// `config.workers` threads and writes its tables and manifest to a new
/// directory under `config.out_dir`.
pub fn run_experiment(command: Command, config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    let report = pool.install(|| execute(command, config))?;
    let name = run_name(command, config);
    let dir = fresh_dir(&config.out_dir, &name)?;
    let mut outputs = Vec::with_capacity(report.tables.len());
    for table in &report.tables {
        let file = table.file_name(config.format);
        let bytes = table.render(config.format)?;
        std::fs::write(dir.join(&file), &bytes)?;
        outputs.push(OutputDigest {
            file,
            sha256: sha256_hex(&bytes),
            rows: table.rows.len(),
        });
    }
    let manifest = RunManifest {
        toolkit_version: TOOLKIT_VERSION.into(),
        command,
        run_id: dir.file_name().and_then(|f| f.to_str()).unwrap_or(&name).to_string(),
        config: config.clone(),
        model_fingerprint: config.model()?.fingerprint(),
        k_measurement: report.k_measurement,
        envelope: report.envelope,
        wall_time_secs: start.elapsed().as_secs_f64(),
        outputs,
        flags: report.flags,
        violations: report.violations,
        resample_log: report.resample_log,
        summary: report.summary,
    };
    write_manifest(&dir, &manifest)?;
    Ok(RunOutcome { dir, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::KernelChoice;
    use crate::models::ScaleParams;

    fn rademacher(trials: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(KernelChoice::new("rademacher"), ScaleParams::new(100, 100, 100));
        c.engine.trials = trials;
        c.seed = 11;
        c
    }

    #[test]
    fn tail_table_has_one_row_per_lambda() {
        let report = execute(Command::SimulateRw, &rademacher(20_000)).unwrap();
        let t = &report.tables[0];
        assert_eq!(t.rows.len(), 3);
        assert_eq!(report.violations, 0);
        assert!(t.columns.contains(&"azuma_classic".to_string()) && t.columns.contains(&"extended".to_string()));
        let k = report.k_measurement.unwrap();
        assert!((k.k - 0.5f64.exp()).abs() < 1e-12, "{k:?}");
    }

    #[test]
    fn neighborhood_selection_adds_containment_and_c_flag() {
        let mut c = rademacher(2_000);
        c.bounds.kinds = vec![BoundKind::Neighborhood];
        let report = execute(Command::SimulateRw, &c).unwrap();
        let t = &report.tables[0];
        assert!(t.columns.contains(&"p_contained".to_string()));
        assert!(report.flags.iter().any(|f| f.starts_with("c_default")));
    }

    #[test]
    fn bounds_table_covers_every_kind() {
        let mut c = rademacher(1);
        c.bounds.kinds = vec![
            BoundKind::AzumaClassic,
            BoundKind::Extended,
            BoundKind::Neighborhood,
            BoundKind::Mgf,
        ];
        let report = execute(Command::Bounds, &c).unwrap();
        assert_eq!(report.tables[0].rows.len(), 12);
    }

    #[test]
    fn recurrence_table_spans_every_step() {
        let mut c = ExperimentConfig::new(
            KernelChoice::new("biased_drift").with("kappa", 1.0),
            ScaleParams::new(200, 100, 200),
        );
        c.recurrence.mc_trials = 2_000;
        let report = execute(Command::Recurrence, &c).unwrap();
        assert_eq!(report.tables[0].rows.len(), 101);
        let err = report.summary["monte_carlo_relative_error"].as_f64().unwrap();
        assert!(err < 0.15, "{err}");
    }
}
