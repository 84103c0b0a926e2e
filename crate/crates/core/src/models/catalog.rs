//! Built-in kernels, addressable by string id plus a parameter map.

use serde::Serialize;
use serde_json::{Map, Value};

use super::{BranchingKernel, DisplacementKernel, Drift};
use crate::error::{Error, Result};

/// Default half-width of the window around a kink that smoothness checks skip.
pub const KINK_WINDOW: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Displacement,
    Branching,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamSpec {
    pub name: &'static str,
    pub default: Value,
    pub description: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub id: &'static str,
    pub role: Role,
    pub summary: &'static str,
    pub params: Vec<ParamSpec>,
    pub smooth_domain: &'static str,
    pub kinks: &'static str,
    pub kink_window: f64,
}

fn p(name: &'static str, default: Value, description: &'static str) -> ParamSpec {
    ParamSpec {
        name,
        default,
        description,
    }
}

/// Every kernel the toolkit ships.
pub fn list_models() -> Vec<CatalogEntry> {
    use serde_json::json;
    let entry = |id, role, summary, params, smooth_domain, kinks| CatalogEntry {
        id,
        role,
        summary,
        params,
        smooth_domain,
        kinks,
        kink_window: KINK_WINDOW,
    };
    vec![
        entry(
            "rademacher",
            Role::Displacement,
            "fair ±1 steps (martingale differences)",
            vec![],
            "all u",
            "none",
        ),
        entry(
            "biased_drift",
            Role::Displacement,
            "±1 steps with P(+1) = (1 + kappa u)/2, so g(u) = kappa u",
            vec![p("kappa", json!(1.0), "drift slope")],
            "|kappa u| < 1",
            "u = ±1/|kappa| (probability clamp)",
        ),
        entry(
            "poisson",
            Role::Displacement,
            "Poisson count with rate mu(u) = rate + slope u, optionally centred",
            vec![
                p("rate", json!(1.0), "rate at u = 0"),
                p("slope", json!(0.0), "rate slope in u"),
                p("centered", json!(false), "subtract the rate so E[X|u] = 0"),
            ],
            "0 <= mu(u) <= 500",
            "none",
        ),
        entry(
            "gaussian",
            Role::Displacement,
            "g(u) + sigma Z with drift zero | constant | linear | sine | square",
            vec![
                p("drift", json!({"kind": "zero"}), "drift function, tagged by `kind`"),
                p("sigma", json!(1.0), "standard deviation"),
            ],
            "all u",
            "none",
        ),
        entry(
            "deterministic",
            Role::Displacement,
            "fixed step X = step",
            vec![p("step", json!(1.0), "the step")],
            "all u",
            "none",
        ),
        entry(
            "unit",
            Role::Branching,
            "m = 1 (plain random walk)",
            vec![],
            "all u",
            "none",
        ),
        entry(
            "constant",
            Role::Branching,
            "m = const",
            vec![p("m", json!(2.0), "birth rate")],
            "all u",
            "none",
        ),
        entry(
            "ksat_like",
            Role::Branching,
            "m = max(0, min(1, 1 - u^K))",
            vec![p("k", json!(2), "clause width K")],
            "|u| < 1 (and u != 0 for odd K)",
            "u = ±1; u = 0 for odd K",
        ),
        entry(
            "scatter",
            Role::Branching,
            "m = 1 + delta |u|",
            vec![p("delta", json!(1.0), "strength")],
            "u != 0",
            "u = 0",
        ),
        entry(
            "squeeze",
            Role::Branching,
            "m = 1 / (1 + delta |u|)",
            vec![p("delta", json!(1.0), "strength")],
            "u != 0",
            "u = 0",
        ),
    ]
}

fn params_object(id: &str, entry: &CatalogEntry, params: &Map<String, Value>) -> Result<Value> {
    let mut obj = Map::new();
    obj.insert("id".into(), Value::String(id.to_string()));
    for spec in &entry.params {
        obj.insert(spec.name.to_string(), spec.default.clone());
    }
    for (k, v) in params {
        if !entry.params.iter().any(|s| s.name == k) {
            return Err(Error::config(
                format!("model.{id}.{k}"),
                format!("unknown parameter for `{id}`"),
            ));
        }
        obj.insert(k.clone(), v.clone());
    }
    Ok(Value::Object(obj))
}

fn lookup(id: &str, role: Role) -> Result<CatalogEntry> {
    list_models()
        .into_iter()
        .find(|e| e.id == id && e.role == role)
        .ok_or_else(|| Error::config("model", format!("no {role:?} kernel named `{id}` in the catalog")))
}

/// Builds a displacement kernel from its id and (possibly partial) parameters.
pub fn displacement(id: &str, params: &Map<String, Value>) -> Result<DisplacementKernel> {
    let entry = lookup(id, Role::Displacement)?;
    let value = params_object(id, &entry, params)?;
    let kernel: DisplacementKernel =
        serde_json::from_value(value).map_err(|e| Error::config(format!("model.{id}"), e.to_string()))?;
    kernel.validate()?;
    Ok(kernel)
}

/// Builds a branching kernel from its id and (possibly partial) parameters.
pub fn branching(id: &str, params: &Map<String, Value>) -> Result<BranchingKernel> {
    let entry = lookup(id, Role::Branching)?;
    let value = params_object(id, &entry, params)?;
    let kernel: BranchingKernel =
        serde_json::from_value(value).map_err(|e| Error::config(format!("model.{id}"), e.to_string()))?;
    kernel.validate()?;
    Ok(kernel)
}

/// Displacement kernels whose increments have conditional mean zero everywhere.
pub fn martingale_kernels() -> Vec<DisplacementKernel> {
    vec![
        DisplacementKernel::Rademacher,
        DisplacementKernel::Poisson {
            rate: 2.0,
            slope: 0.0,
            centered: true,
        },
        DisplacementKernel::Poisson {
            rate: 1.0,
            slope: 0.5,
            centered: true,
        },
        DisplacementKernel::Gaussian {
            drift: Drift::Zero,
            sigma: 1.0,
        },
    ]
}

/// A representative instance of every displacement kernel, used by sweeps.
pub fn sample_displacements() -> Vec<DisplacementKernel> {
    let mut v = martingale_kernels();
    v.extend([
        DisplacementKernel::BiasedDrift { kappa: 1.0 },
        DisplacementKernel::BiasedDrift { kappa: 0.5 },
        DisplacementKernel::Poisson {
            rate: 1.0,
            slope: 0.0,
            centered: false,
        },
        DisplacementKernel::Poisson {
            rate: 3.0,
            slope: 1.0,
            centered: false,
        },
        DisplacementKernel::Gaussian {
            drift: Drift::Sine { amplitude: 1.0 },
            sigma: 1.0,
        },
        DisplacementKernel::Gaussian {
            drift: Drift::Linear { kappa: 0.5 },
            sigma: 0.5,
        },
        DisplacementKernel::Gaussian {
            drift: Drift::Square { coef: 1.0 },
            sigma: 2.0,
        },
        DisplacementKernel::Deterministic { step: 1.0 },
    ]);
    v
}
