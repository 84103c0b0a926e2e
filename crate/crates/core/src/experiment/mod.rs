//! Reproducible experiment runs: configuration, pipelines, run directories
//! with manifests, and plot-ready data.

mod config;
mod plot;
mod runner;
mod table;

pub use config::{
    BoundsConfig, EngineConfig, EngineKind, ExperimentConfig, KernelChoice, LambdaGrid, LambdaUnits, ModelConfig,
    OutputFormat, ProbeConfig, RecurrenceConfig,
};
pub use plot::{emit_plot_data, plot_table, PLOT_FILE};
pub use runner::{
    execute, run_experiment, run_name, Command, OutputDigest, ReplicateEvent, RunManifest, RunOutcome, RunReport,
    MANIFEST_FILE, TOOLKIT_VERSION,
};
pub use table::{Cell, LoadedTable, Table};

use crate::models::catalog::{list_models, CatalogEntry};

/// The model catalog as a table.
pub fn catalog_table() -> Table {
    let mut t = Table::new(
        "models",
        &[
            "id",
            "role",
            "summary",
            "params",
            "smooth_domain",
            "kinks",
            "kink_window",
        ],
    );
    for e in list_models() {
        t.push(catalog_row(&e));
    }
    t
}

fn catalog_row(e: &CatalogEntry) -> Vec<Cell> {
    let params: Vec<String> = e.params.iter().map(|p| format!("{}={}", p.name, p.default)).collect();
    vec![
        e.id.into(),
        format!("{:?}", e.role).to_lowercase().into(),
        e.summary.into(),
        params.join(" ").into(),
        e.smooth_domain.into(),
        e.kinks.into(),
        e.kink_window.into(),
    ]
}
