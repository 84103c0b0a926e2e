use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use brw_core::experiment::{
    catalog_table, emit_plot_data, run_experiment, Command, ExperimentConfig, OutputFormat, RunManifest,
};
use brw_core::models::catalog::list_models;
use brw_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_ENGINE: u8 = 3;
const EXIT_VIOLATION: u8 = 4;

#[derive(Parser)]
#[command(
    name = "brw",
    version,
    about = "Concentration bounds for random walks and branching random walks"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Tail probabilities of plain walks against the selected bounds.
    SimulateRw(RunArgs),
    /// Population-weighted tail probabilities of a branching walk.
    SimulateBrw(RunArgs),
    /// Bound values on the lambda grid, without simulation.
    Bounds(RunArgs),
    /// Mean path and variance recurrence, with optional Monte Carlo check.
    Recurrence(RunArgs),
    /// Coupled-walk estimate of the sensitivity of E(X_l | u_i) to u_i.
    ProbeLipschitz(RunArgs),
    /// Nested Monte Carlo Doob martingale increments along one path.
    ProbeDoob(RunArgs),
    /// Negative association between |X_i| and the descendant weight.
    TestAssociation(RunArgs),
    /// The model catalog.
    ListModels {
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
    },
    /// Tidy plot data for a finished run.
    EmitPlotData {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration, or the manifest.json of an earlier run to repeat it.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// Exit with status 4 when a bound is violated.
    #[arg(long)]
    verify: bool,
}

fn load_config(command: Command, path: &Path) -> Result<ExperimentConfig, Error> {
    if path.extension().is_some_and(|e| e == "json") {
        let manifest = RunManifest::load(path)?;
        if manifest.command != command {
            return Err(Error::config(
                "command",
                format!(
                    "manifest records `{}`, not `{}`",
                    manifest.command.as_str(),
                    command.as_str()
                ),
            ));
        }
        manifest.config.validate()?;
        Ok(manifest.config)
    } else {
        ExperimentConfig::load(path)
    }
}

fn run(command: Command, args: RunArgs) -> Result<u8, Error> {
    let mut config = load_config(command, &args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.workers.is_some() {
        config.workers = args.workers;
    }
    if let Some(out) = args.out {
        config.out_dir = out;
    }
    if let Some(format) = args.format {
        config.format = format;
    }
    config.verify |= args.verify;
    let outcome = run_experiment(command, &config)?;
    println!("{}", outcome.dir.display());
    for flag in &outcome.manifest.flags {
        eprintln!("flag: {flag}");
    }
    if outcome.manifest.violations > 0 {
        eprintln!("{} bound violation(s)", outcome.manifest.violations);
        if config.verify {
            return Ok(EXIT_VIOLATION);
        }
    }
    Ok(0)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        _ => EXIT_ENGINE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Sub::SimulateRw(a) => run(Command::SimulateRw, a),
        Sub::SimulateBrw(a) => run(Command::SimulateBrw, a),
        Sub::Bounds(a) => run(Command::Bounds, a),
        Sub::Recurrence(a) => run(Command::Recurrence, a),
        Sub::ProbeLipschitz(a) => run(Command::ProbeLipschitz, a),
        Sub::ProbeDoob(a) => run(Command::ProbeDoob, a),
        Sub::TestAssociation(a) => run(Command::TestAssociation, a),
        Sub::ListModels { format } => match format {
            OutputFormat::Json => {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&list_models()).expect("catalog serializes")
                );
                Ok(0)
            }
            OutputFormat::Csv => catalog_table().render(OutputFormat::Csv).map(|bytes| {
                print!("{}", String::from_utf8_lossy(&bytes));
                0
            }),
        },
        Sub::EmitPlotData { run } => emit_plot_data(&run).map(|path| {
            println!("{}", path.display());
            0
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
