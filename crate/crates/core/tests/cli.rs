use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use brw_core::experiment::{emit_plot_data, LoadedTable, RunManifest, MANIFEST_FILE, PLOT_FILE};
use brw_core::Error;

const RADEMACHER: &str = r#"
seed = 5

[model]
displacement = { id = "rademacher" }

[scale]
scale_n = 100
horizon = 100
max_horizon = 100

[engine]
trials = 50000

[lambda]
units = "absolute"
values = [10.0, 20.0, 30.0]
"#;

fn brw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brw"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run_dir(out: &Output) -> PathBuf {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim())
}

fn simulate(subcommand: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        subcommand,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    brw(&args)
}

fn series(dir: &Path) -> Vec<String> {
    let t = LoadedTable::read(&dir.join(PLOT_FILE)).unwrap();
    let mut names: Vec<String> = t.rows.iter().map(|r| r[0].clone()).collect();
    names.dedup();
    names
}

#[test]
fn rademacher_grid_gives_three_rows_without_violations() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "rw.toml", RADEMACHER);
    let dir = run_dir(&simulate("simulate-rw", &config, tmp.path(), &["--verify"]));
    let tails = LoadedTable::read(&dir.join("tails.csv")).unwrap();
    assert_eq!(tails.rows.len(), 3);
    let violated = tails.column("violated").unwrap();
    assert!(tails.rows.iter().all(|r| r[violated] == "false"));
    let manifest = RunManifest::load(&dir.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.violations, 0);
    assert_eq!(manifest.config.engine.trials, 50_000);
    assert!(manifest.k_measurement.is_some());
    assert_eq!(manifest.outputs.len(), 1);
}

#[test]
fn horizon_beyond_terminal_generation_exits_with_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "bad.toml",
        &RADEMACHER.replace("\nhorizon = 100", "\nhorizon = 101"),
    );
    let out = simulate("simulate-rw", &config, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("scale.horizon") && stderr.contains("n <= M"),
        "{stderr}"
    );
}

#[test]
fn manifest_rerun_is_byte_identical_in_a_new_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "rw.toml", RADEMACHER);
    let first = run_dir(&simulate("simulate-rw", &config, tmp.path(), &["--workers", "1"]));
    let manifest = first.join(MANIFEST_FILE);
    let second = run_dir(&simulate("simulate-rw", &manifest, tmp.path(), &["--workers", "2"]));
    assert_ne!(first, second);
    assert!(second.file_name().unwrap().to_str().unwrap().ends_with("-r2"));
    assert_eq!(
        std::fs::read(first.join("tails.csv")).unwrap(),
        std::fs::read(second.join("tails.csv")).unwrap()
    );
    let a = RunManifest::load(&manifest).unwrap();
    let b = RunManifest::load(&second.join(MANIFEST_FILE)).unwrap();
    assert_eq!(a.outputs, b.outputs);
}

#[test]
fn manifest_of_another_command_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "rw.toml", RADEMACHER);
    let dir = run_dir(&simulate("simulate-rw", &config, tmp.path(), &[]));
    let out = simulate("bounds", &dir.join(MANIFEST_FILE), tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verification_mode_exits_on_violation() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{RADEMACHER}\n[bounds]\nkinds = [\"azuma_classic\"]\nazuma_c = 0.2\n");
    let config = write_config(tmp.path(), "tight.toml", &text);
    assert_eq!(simulate("simulate-rw", &config, tmp.path(), &[]).status.code(), Some(0));
    assert_eq!(
        simulate("simulate-rw", &config, tmp.path(), &["--verify"])
            .status
            .code(),
        Some(4)
    );
}

#[test]
fn tail_and_recurrence_runs_give_their_plot_series() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "rw.toml", RADEMACHER);
    let dir = run_dir(&simulate("simulate-rw", &config, tmp.path(), &[]));
    assert_eq!(
        run_dir(&brw(&["emit-plot-data", "--run", dir.to_str().unwrap()])),
        dir.join(PLOT_FILE)
    );
    assert_eq!(series(&dir), ["empirical", "azuma_classic", "extended_bound"]);
    // a second emission leaves the file and manifest alone
    emit_plot_data(&dir).unwrap();
    assert_eq!(RunManifest::load(&dir.join(MANIFEST_FILE)).unwrap().outputs.len(), 2);

    let text = RADEMACHER.replace("id = \"rademacher\"", "id = \"biased_drift\", params = { kappa = 1.0 }")
        + "\n[recurrence]\nmc_trials = 2000\n";
    let config = write_config(tmp.path(), "rec.toml", &text);
    let dir = run_dir(&simulate("recurrence", &config, tmp.path(), &["--format", "json"]));
    assert!(dir.join("recurrence.json").exists());
    emit_plot_data(&dir).unwrap();
    assert_eq!(series(&dir), ["var_recurrence", "var_closed_form", "var_monte_carlo"]);
}

#[test]
fn empty_tail_table_is_missing_output() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "rw.toml", RADEMACHER);
    let dir = run_dir(&simulate("simulate-rw", &config, tmp.path(), &[]));
    let header = std::fs::read_to_string(dir.join("tails.csv")).unwrap();
    std::fs::write(dir.join("tails.csv"), header.lines().next().unwrap()).unwrap();
    assert!(matches!(emit_plot_data(&dir), Err(Error::MissingOutput(_))));
    let out = brw(&["emit-plot-data", "--run", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(matches!(
        emit_plot_data(&tmp.path().join("nowhere")),
        Err(Error::MissingOutput(_))
    ));
}

#[test]
fn population_run_logs_generations_and_resampling() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
seed = 3

[model]
u0 = 0.1
displacement = { id = "rademacher" }
branching = { id = "scatter", params = { delta = 1.0 } }

[scale]
scale_n = 100
horizon = 50
max_horizon = 100

[engine]
kind = "population"
cap = 1000
replicates = 2
"#;
    let config = write_config(tmp.path(), "pop.toml", text);
    let dir = run_dir(&simulate("simulate-brw", &config, tmp.path(), &[]));
    let generations = LoadedTable::read(&dir.join("generations.csv")).unwrap();
    assert_eq!(generations.rows.len(), 200);
    let manifest = RunManifest::load(&dir.join(MANIFEST_FILE)).unwrap();
    assert!(!manifest.resample_log.is_empty());
    assert!(manifest.summary["ess"].as_f64().unwrap() > 0.0);
}

#[test]
fn remaining_subcommands_produce_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let base = RADEMACHER.replace("trials = 50000", "trials = 2000");
    let doob = base.clone() + "\n[probe]\nsub_trials = 200\nindex_count = 5\n";
    let lipschitz = base.replace("id = \"rademacher\"", "id = \"biased_drift\"") + "\n[probe]\ni = 10\nl = 60\n";
    let association = base.replace(
        "id = \"rademacher\" }",
        "id = \"gaussian\" }\nbranching = { id = \"squeeze\" }",
    ) + "\n[probe]\ndescendant = { kind = \"continuation\", cloud = 8 }\n";
    for (sub, text, table) in [
        ("bounds", base.clone(), "bounds.csv"),
        ("probe-doob", doob, "doob.csv"),
        ("probe-lipschitz", lipschitz, "lipschitz.csv"),
        ("test-association", association, "association.csv"),
    ] {
        let config = write_config(tmp.path(), &format!("{sub}.toml"), &text);
        let dir = run_dir(&simulate(sub, &config, tmp.path(), &[]));
        assert!(!LoadedTable::read(&dir.join(table)).unwrap().rows.is_empty(), "{sub}");
        emit_plot_data(&dir).unwrap();
    }
}

#[test]
fn catalog_lists_branching_kernels_with_parameters() {
    let out = brw(&["list-models"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("ksat_like,") && l.contains("k=")));
    assert!(text.lines().any(|l| l.starts_with("scatter,") && l.contains("delta=")));
    let json: serde_json::Value = serde_json::from_slice(&brw(&["list-models", "--format", "json"]).stdout).unwrap();
    assert!(json.as_array().unwrap().len() >= 10);
}
