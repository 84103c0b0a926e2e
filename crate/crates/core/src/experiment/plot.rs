use std::path::{Path, PathBuf};

use super::runner::{sha256_hex, write_manifest, Command, OutputDigest, RunManifest, MANIFEST_FILE};
use super::table::{Cell, LoadedTable, Table};
use crate::bounds::BoundKind;
use crate::error::{Error, Result};

pub const PLOT_FILE: &str = "plot_data.csv";
const Z95: f64 = 1.959_963_984_540_054;

fn series_name(kind: BoundKind) -> &'static str {
    match kind {
        BoundKind::AzumaClassic => "azuma_classic",
        BoundKind::AzumaDowngraded => "azuma_downgraded",
        BoundKind::Extended => "extended_bound",
        BoundKind::Neighborhood => "neighborhood_bound",
        BoundKind::Mgf => "mgf_bound",
    }
}

const BOUND_KINDS: [BoundKind; 5] = [
    BoundKind::AzumaClassic,
    BoundKind::AzumaDowngraded,
    BoundKind::Extended,
    BoundKind::Neighborhood,
    BoundKind::Mgf,
];

fn load(dir: &Path, manifest: &RunManifest, stem: &str) -> Result<LoadedTable> {
    let out = manifest
        .output(stem)
        .ok_or_else(|| Error::MissingOutput(format!("run {} has no `{stem}` table", manifest.run_id)))?;
    let table = LoadedTable::read(&dir.join(&out.file))?;
    if table.rows.is_empty() {
        return Err(Error::MissingOutput(format!("`{}` has no rows", out.file)));
    }
    Ok(table)
}

fn required(table: &LoadedTable, name: &str) -> Result<usize> {
    table
        .column(name)
        .ok_or_else(|| Error::MissingOutput(format!("column `{name}` is missing")))
}

struct Series<'a> {
    name: &'a str,
    x: usize,
    y: usize,
    /// Lower and upper columns, or a standard error column for a 95% band.
    band: Band,
}

enum Band {
    None,
    Columns(usize, usize),
    StandardError(usize),
}

fn push_series(out: &mut Table, table: &LoadedTable, s: &Series) {
    for r in 0..table.rows.len() {
        let (Some(x), Some(y)) = (table.number(r, s.x), table.number(r, s.y)) else {
            continue;
        };
        let (lo, hi): (Cell, Cell) = match s.band {
            Band::None => (Cell::Empty, Cell::Empty),
            Band::Columns(a, b) => (table.number(r, a).into(), table.number(r, b).into()),
            Band::StandardError(c) => match table.number(r, c) {
                Some(se) => ((y - Z95 * se).into(), (y + Z95 * se).into()),
                None => (Cell::Empty, Cell::Empty),
            },
        };
        out.push(vec![s.name.into(), x.into(), y.into(), lo, hi]);
    }
}

/// Tidy long-format rows `(series, x, y, y_low, y_high)` for a finished run.
pub fn plot_table(dir: &Path, manifest: &RunManifest) -> Result<Table> {
    let mut out = Table::new("plot_data", &["series", "x", "y", "y_low", "y_high"]);
    match manifest.command {
        Command::SimulateRw | Command::SimulateBrw => {
            let t = load(dir, manifest, "tails")?;
            let x = required(&t, "lambda")?;
            let band = Band::Columns(required(&t, "ci_low")?, required(&t, "ci_high")?);
            push_series(
                &mut out,
                &t,
                &Series {
                    name: "empirical",
                    x,
                    y: required(&t, "p_hat")?,
                    band,
                },
            );
            if let (Some(y), Some(lo), Some(hi)) = (
                t.column("p_contained"),
                t.column("contained_ci_low"),
                t.column("contained_ci_high"),
            ) {
                push_series(
                    &mut out,
                    &t,
                    &Series {
                        name: "contained",
                        x,
                        y,
                        band: Band::Columns(lo, hi),
                    },
                );
            }
            for kind in BOUND_KINDS {
                if let Some(y) = t.column(kind.as_str()) {
                    push_series(
                        &mut out,
                        &t,
                        &Series {
                            name: series_name(kind),
                            x,
                            y,
                            band: Band::None,
                        },
                    );
                }
            }
        }
        Command::Recurrence => {
            let t = load(dir, manifest, "recurrence")?;
            let x = required(&t, "step")?;
            push_series(
                &mut out,
                &t,
                &Series {
                    name: "var_recurrence",
                    x,
                    y: required(&t, "var")?,
                    band: Band::None,
                },
            );
            push_series(
                &mut out,
                &t,
                &Series {
                    name: "var_closed_form",
                    x,
                    y: required(&t, "var_closed_form")?,
                    band: Band::None,
                },
            );
            let se = Band::StandardError(required(&t, "var_mc_se")?);
            push_series(
                &mut out,
                &t,
                &Series {
                    name: "var_monte_carlo",
                    x,
                    y: required(&t, "var_mc")?,
                    band: se,
                },
            );
        }
        Command::Bounds => {
            let t = load(dir, manifest, "bounds")?;
            let (kind, x, y) = (
                required(&t, "bound_kind")?,
                required(&t, "lambda")?,
                required(&t, "value")?,
            );
            for k in BOUND_KINDS {
                let rows: Vec<usize> = (0..t.rows.len()).filter(|&r| t.rows[r][kind] == k.as_str()).collect();
                for r in rows {
                    if let (Some(xv), Some(yv)) = (t.number(r, x), t.number(r, y)) {
                        out.push(vec![
                            series_name(k).into(),
                            xv.into(),
                            yv.into(),
                            Cell::Empty,
                            Cell::Empty,
                        ]);
                    }
                }
            }
        }
        Command::ProbeLipschitz => {
            let t = load(dir, manifest, "lipschitz")?;
            let x = required(&t, "l")?;
            let se = Band::StandardError(required(&t, "se")?);
            push_series(
                &mut out,
                &t,
                &Series {
                    name: "lipschitz_probe",
                    x,
                    y: required(&t, "slope")?,
                    band: se,
                },
            );
            push_series(
                &mut out,
                &t,
                &Series {
                    name: "lipschitz_predicted",
                    x,
                    y: required(&t, "predicted")?,
                    band: Band::None,
                },
            );
        }
        Command::ProbeDoob => {
            let t = load(dir, manifest, "doob")?;
            let x = required(&t, "index")?;
            let se = Band::StandardError(required(&t, "se")?);
            push_series(
                &mut out,
                &t,
                &Series {
                    name: "doob_increment",
                    x,
                    y: required(&t, "value")?,
                    band: se,
                },
            );
            push_series(
                &mut out,
                &t,
                &Series {
                    name: "amplified_increment",
                    x,
                    y: required(&t, "amplified_increment")?,
                    band: Band::None,
                },
            );
        }
        Command::TestAssociation => {
            let t = load(dir, manifest, "association")?;
            let (f, margin, se) = (required(&t, "f")?, required(&t, "margin")?, required(&t, "se")?);
            for r in 0..t.rows.len() {
                if let (Some(m), Some(s)) = (t.number(r, margin), t.number(r, se)) {
                    let name = format!("margin:{}", t.rows[r][f]);
                    out.push(vec![
                        name.into(),
                        r.into(),
                        m.into(),
                        (m - Z95 * s).into(),
                        (m + Z95 * s).into(),
                    ]);
                }
            }
        }
    }
    if out.rows.is_empty() {
        return Err(Error::MissingOutput(format!(
            "run {} has no plottable values",
            manifest.run_id
        )));
    }
    Ok(out)
}

/// Writes `plot_data.csv` into a run directory and records it in the
/// manifest. An existing identical file is kept as is.
pub fn emit_plot_data(run_dir: &Path) -> Result<PathBuf> {
    let mut manifest = RunManifest::load(&run_dir.join(MANIFEST_FILE))?;
    let table = plot_table(run_dir, &manifest)?;
    let bytes = table.render(super::config::OutputFormat::Csv)?;
    let path = run_dir.join(PLOT_FILE);
    if let Ok(existing) = std::fs::read(&path) {
        if existing == bytes {
            return Ok(path);
        }
        return Err(Error::invalid(format!(
            "{} exists with different contents",
            path.display()
        )));
    }
    std::fs::write(&path, &bytes)?;
    manifest.outputs.push(OutputDigest {
        file: PLOT_FILE.into(),
        sha256: sha256_hex(&bytes),
        rows: table.rows.len(),
    });
    write_manifest(run_dir, &manifest)?;
    Ok(path)
}
