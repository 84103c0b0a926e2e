use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::bounds::BoundKind;
use crate::brw::{DescendantWeight, Engine, OffspringLaw, PopulationConfig, DEFAULT_ESS_FLOOR};
use crate::error::{Error, Result};
use crate::mc::DEFAULT_DOOB_BUDGET;
use crate::models::{catalog, BranchingKernel, DisplacementKernel, ModelSpec, ScaleParams};
use crate::recurrence::MeanOrder;

/// Output table encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

/// A catalog id plus parameter overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelChoice {
    pub id: String,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub params: Map<String, Value>,
}

impl KernelChoice {
    pub fn new(id: &str) -> Self {
        KernelChoice {
            id: id.into(),
            params: Map::new(),
        }
    }

    pub fn with(mut self, name: &str, value: impl Into<Value>) -> Self {
        self.params.insert(name.into(), value.into());
        self
    }
}

fn unit_branching() -> KernelChoice {
    KernelChoice::new("unit")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub u0: f64,
    pub displacement: KernelChoice,
    #[serde(default = "unit_branching")]
    pub branching: KernelChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    #[default]
    WeightedPath,
    Population,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub kind: EngineKind,
    /// Independent walks (plain and weighted-path runs, probes).
    pub trials: usize,
    /// Particle cap of the population engine.
    pub cap: usize,
    /// Initial particles; defaults to `cap`.
    pub initial: Option<usize>,
    pub replicates: usize,
    pub offspring: OffspringLaw,
    pub ess_floor: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            kind: EngineKind::WeightedPath,
            trials: 10_000,
            cap: 10_000,
            initial: None,
            replicates: 1,
            offspring: OffspringLaw::Poisson,
            ess_floor: DEFAULT_ESS_FLOOR,
        }
    }
}

impl EngineConfig {
    pub fn engine(&self) -> Engine {
        match self.kind {
            EngineKind::WeightedPath => Engine::WeightedPath {
                trials: self.trials,
                ess_floor: self.ess_floor,
            },
            EngineKind::Population => Engine::Population {
                config: PopulationConfig::new(self.cap, self.initial.unwrap_or(self.cap), self.offspring),
                replicates: self.replicates,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaUnits {
    /// Values are multiples of `√n`.
    #[default]
    SqrtN,
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaGrid {
    pub units: LambdaUnits,
    pub values: Vec<f64>,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid {
            units: LambdaUnits::SqrtN,
            values: vec![1.0, 2.0, 3.0],
        }
    }
}

impl LambdaGrid {
    /// Absolute deviations for a walk of `n` steps.
    pub fn resolve(&self, n: usize) -> Vec<f64> {
        let unit = match self.units {
            LambdaUnits::SqrtN => (n as f64).sqrt(),
            LambdaUnits::Absolute => 1.0,
        };
        self.values.iter().map(|v| v * unit).collect()
    }
}

fn default_kinds() -> Vec<BoundKind> {
    vec![BoundKind::AzumaClassic, BoundKind::Extended]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    #[serde(default = "default_kinds")]
    pub kinds: Vec<BoundKind>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Overrides the Lipschitz constant derived from the mean path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    /// Overrides the measured exponential moment `K`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    /// Overrides the neighborhood constant `c = K²/δ²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Increment bound of the Azuma bounds.
    #[serde(default = "one")]
    pub azuma_c: f64,
}

fn default_delta() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            kinds: default_kinds(),
            delta: default_delta(),
            lipschitz: None,
            k: None,
            c: None,
            azuma_c: one(),
        }
    }
}

fn default_family() -> Vec<String> {
    crate::brw::MonotoneFn::default_family()
        .iter()
        .map(|f| f.label())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Conditioning index `i`.
    pub i: usize,
    /// Target index `l`; defaults to `n`.
    pub l: Option<usize>,
    /// Perturbed positions; default to the mean path at `i` and that plus `step`.
    pub u: Option<f64>,
    pub u_prime: Option<f64>,
    pub step: f64,
    pub sub_trials: usize,
    /// Doob indices; an evenly spaced grid of `index_count` when absent.
    pub indices: Option<Vec<usize>>,
    pub index_count: usize,
    pub budget: u64,
    pub f_family: Vec<String>,
    pub descendant: DescendantWeight,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            i: 1,
            l: None,
            u: None,
            u_prime: None,
            step: 0.01,
            sub_trials: 1_000,
            indices: None,
            index_count: 20,
            budget: DEFAULT_DOOB_BUDGET,
            f_family: default_family(),
            descendant: DescendantWeight::Transfer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecurrenceConfig {
    pub order: MeanOrder,
    /// Walks used for the Monte Carlo variance; zero skips it.
    pub mc_trials: usize,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; all available cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
    /// Treat bound violations as failures.
    #[serde(default)]
    pub verify: bool,
    pub model: ModelConfig,
    pub scale: ScaleParams,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub lambda: LambdaGrid,
    #[serde(default)]
    pub bounds: BoundsConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub recurrence: RecurrenceConfig,
}

impl ExperimentConfig {
    /// A plain walk with default settings.
    pub fn new(displacement: KernelChoice, scale: ScaleParams) -> Self {
        ExperimentConfig {
            seed: 0,
            workers: None,
            out_dir: default_out(),
            format: OutputFormat::Csv,
            verify: false,
            model: ModelConfig {
                u0: 0.0,
                displacement,
                branching: unit_branching(),
            },
            scale,
            engine: EngineConfig::default(),
            lambda: LambdaGrid::default(),
            bounds: BoundsConfig::default(),
            probe: ProbeConfig::default(),
            recurrence: RecurrenceConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(toml_field(&e), e.message()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn displacement(&self) -> Result<DisplacementKernel> {
        catalog::displacement(&self.model.displacement.id, &self.model.displacement.params)
    }

    pub fn branching(&self) -> Result<BranchingKernel> {
        catalog::branching(&self.model.branching.id, &self.model.branching.params)
    }

    pub fn model(&self) -> Result<ModelSpec> {
        let model = ModelSpec::new(
            self.scale.clone(),
            self.displacement()?,
            self.branching()?,
            self.model.u0,
        );
        model.validate()?;
        Ok(model)
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.lambda.resolve(self.scale.horizon)
    }

    /// Checks every invariant that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        self.scale.validate()?;
        self.model()?;
        if self.lambda.values.is_empty() {
            return Err(Error::config("lambda.values", "the lambda grid is empty"));
        }
        if let Some(bad) = self.lambda.values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::config(
                "lambda.values",
                format!("{bad} is not a finite nonnegative deviation"),
            ));
        }
        if !(self.bounds.delta > 0.0 && self.bounds.delta.is_finite()) {
            return Err(Error::config("bounds.delta", "must be positive and finite"));
        }
        if !(self.bounds.azuma_c > 0.0) {
            return Err(Error::config("bounds.azuma_c", "must be positive"));
        }
        if self.bounds.k.is_some_and(|k| !(k >= 1.0)) {
            return Err(Error::config("bounds.k", "must be at least 1"));
        }
        if self.bounds.c.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::config("bounds.c", "must be positive"));
        }
        if self.bounds.lipschitz.is_some_and(|l| !(l >= 0.0)) {
            return Err(Error::config("bounds.lipschitz", "must be nonnegative"));
        }
        if self.engine.trials == 0 {
            return Err(Error::config("engine.trials", "need at least one trial"));
        }
        if self.engine.replicates == 0 {
            return Err(Error::config("engine.replicates", "need at least one replicate"));
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers", "need at least one worker"));
        }
        for f in &self.probe.f_family {
            crate::brw::MonotoneFn::parse(f)?;
        }
        Ok(())
    }

    /// The configuration with the fields that cannot change results removed,
    /// as canonical JSON.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.workers = None;
        c.out_dir = PathBuf::new();
        serde_json::to_string(&c).expect("config serializes")
    }
}

fn toml_field(e: &toml::de::Error) -> String {
    let msg = e.message();
    msg.split('`')
        .nth(1)
        .filter(|_| msg.contains("field"))
        .unwrap_or("config")
        .to_string()
}
