//! Layered experiment configuration: built-in defaults, then a TOML file,
//! then `key.path=value` overrides.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use isli_core::estimator::{DEFAULT_FLOOR, DEFAULT_UPDATE_EVERY, MIN_BANDWIDTH};
use isli_core::EnvConfig;
use isli_policy::ppo::PpoConfig;
use isli_policy::PolicyConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Every seeded command runs once per entry.
    pub seeds: Vec<u64>,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub ppo: PpoConfig,
    pub train: TrainOptions,
    pub eval: EvalOptions,
    pub dataset: DatasetOptions,
    pub sweep: SweepOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            env: EnvConfig::default(),
            policy: PolicyConfig::default(),
            ppo: PpoConfig::default(),
            train: TrainOptions::default(),
            eval: EvalOptions::default(),
            dataset: DatasetOptions::default(),
            sweep: SweepOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    /// Save a checkpoint every this many updates (0 disables).
    pub checkpoint_every: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            checkpoint_every: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub episodes: usize,
    /// Per-axis argmax instead of sampling.
    pub greedy: bool,
    pub update_every: usize,
    pub histogram_bins: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            episodes: 100,
            greedy: false,
            update_every: DEFAULT_UPDATE_EVERY,
            histogram_bins: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetOptions {
    /// Swarm sizes pooled into the density fit.
    pub n_values: Vec<usize>,
    /// Episodes per swarm size.
    pub episodes: usize,
    pub max_samples: usize,
    pub floor: f64,
    pub min_bandwidth: f64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            n_values: vec![6, 10, 15],
            episodes: 50,
            max_samples: 4000,
            floor: DEFAULT_FLOOR,
            min_bandwidth: MIN_BANDWIDTH,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub grid_n: Vec<usize>,
    pub grid_vmax: Vec<f64>,
    /// Training grid over PPO and model hyperparameters.
    pub clip: Vec<f64>,
    pub ent_coef: Vec<f64>,
    pub model_dim: Vec<usize>,
    pub layers: Vec<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            grid_n: (6..=19).collect(),
            grid_vmax: vec![0.23, 0.3, 0.4, 0.5],
            clip: vec![0.2, 0.3],
            ent_coef: vec![0.01, 0.02],
            model_dim: vec![128, 256],
            layers: vec![2, 4],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        self.env.validate()?;
        self.policy.validate()?;
        self.ppo.validate()?;
        if self.eval.update_every == 0 || self.eval.histogram_bins == 0 {
            bail!("eval.update_every and eval.histogram_bins must be positive");
        }
        if self.dataset.n_values.iter().any(|&n| n < 2) {
            bail!("dataset.n_values entries must be at least 2");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }
}

fn merge(base: &mut Table, layer: Table) {
    for (k, v) in layer {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(l)) => merge(b, l),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parse the right-hand side of an override as a TOML value, falling back to
/// a bare string.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Apply one `a.b.c=value` override.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .with_context(|| format!("override {spec:?} is not key=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("override {spec:?} has an empty key");
    }
    let mut node = table;
    for k in &keys[..keys.len() - 1] {
        let entry = node
            .entry(k.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .with_context(|| format!("override {spec:?}: {k} is not a table"))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Defaults, then the file at `path`, then `overrides`.
pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table: Table = toml::from_str(&toml::to_string(&ExperimentConfig::default())?)?;
    if let Some(path) = path {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let file: Table =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        merge(&mut table, file);
    }
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let config: ExperimentConfig = Value::Table(table)
        .try_into()
        .context("resolving configuration")?;
    config.validate()?;
    Ok(config)
}
