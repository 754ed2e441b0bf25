//! Run configuration: TOML file, then flag overrides, then defaults.

use std::path::Path;

use anyhow::{bail, Context, Result};
use divnet_core::baselines::FitConfig;
use divnet_core::data::SyntheticConfig;
use divnet_core::{EvalOptions, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_k: usize,
    pub d_v: usize,
    pub blocks: usize,
    /// Seed of the parameter initialisation.
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            d_k: 64,
            d_v: 64,
            blocks: 1,
            seed: 0,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, item_dim: usize, user_dim: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(item_dim, user_dim).with_dims(self.d_k, self.d_v);
        cfg.blocks = self.blocks;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointwiseSection {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PointwiseSection {
    fn default() -> Self {
        let fit = FitConfig::default();
        PointwiseSection {
            hidden: 64,
            epochs: fit.epochs,
            learning_rate: fit.learning_rate,
            batch_size: fit.batch_size,
            seed: fit.seed,
        }
    }
}

impl PointwiseSection {
    pub fn fit(&self) -> FitConfig {
        FitConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrmSection {
    /// Whether `train` also fits the per-item PRM baseline.
    pub enabled: bool,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PrmSection {
    fn default() -> Self {
        let fit = FitConfig::default();
        PrmSection {
            enabled: true,
            epochs: fit.epochs,
            learning_rate: fit.learning_rate,
            batch_size: fit.batch_size,
            seed: fit.seed,
        }
    }
}

impl PrmSection {
    pub fn fit(&self) -> FitConfig {
        FitConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub queries: usize,
    pub num_items: usize,
    pub num_categories: usize,
    pub attractiveness_min: f64,
    pub attractiveness_max: f64,
    pub beta: f64,
    pub signal: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let g = SyntheticConfig::default();
        SyntheticSection {
            queries: 1000,
            num_items: g.num_items,
            num_categories: g.num_categories,
            attractiveness_min: g.attractiveness_min,
            attractiveness_max: g.attractiveness_max,
            beta: g.beta,
            signal: g.signal,
            noise: g.noise,
            seed: g.seed,
        }
    }
}

impl SyntheticSection {
    pub fn generator(&self) -> SyntheticConfig {
        SyntheticConfig {
            num_items: self.num_items,
            num_categories: self.num_categories,
            attractiveness_min: self.attractiveness_min,
            attractiveness_max: self.attractiveness_max,
            beta: self.beta,
            signal: self.signal,
            noise: self.noise,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub cutoffs: Vec<usize>,
    pub ild_cutoffs: Vec<usize>,
    /// Graded (0–4) gains instead of binary clicks in NDCG.
    pub graded: bool,
    /// Redundancy weight of the submodular baseline.
    pub gamma: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let o = EvalOptions::default();
        EvalSection {
            cutoffs: o.cutoffs,
            ild_cutoffs: o.ild_cutoffs,
            graded: o.graded,
            gamma: 0.1,
        }
    }
}

impl EvalSection {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            cutoffs: self.cutoffs.clone(),
            graded: self.graded,
            ild_cutoffs: self.ild_cutoffs.clone(),
            breakdown: false,
        }
    }
}

/// Every setting a command can read. Paths are not part of it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
    pub pointwise: PointwiseSection,
    pub prm: PrmSection,
    pub split: SplitSection,
    pub synthetic: SyntheticSection,
    pub eval: EvalSection,
}

/// A flag value destined for `section.key`.
pub struct Override {
    pub flag: &'static str,
    pub section: &'static str,
    pub key: &'static str,
    pub value: toml::Value,
}

impl Override {
    pub fn new(flag: &'static str, path: &'static str, value: impl Into<toml::Value>) -> Self {
        let (section, key) = path.split_once('.').expect("override path is section.key");
        Override {
            flag,
            section,
            key,
            value: value.into(),
        }
    }
}

/// Collects the overrides of the flags that were given.
#[derive(Default)]
pub struct Overrides(pub Vec<Override>);

impl Overrides {
    pub fn set<T: Into<toml::Value>>(&mut self, flag: &'static str, path: &'static str, value: Option<T>) {
        if let Some(v) = value {
            self.0.push(Override::new(flag, path, v));
        }
    }

    pub fn set_str<T: ToString>(&mut self, flag: &'static str, path: &'static str, value: Option<T>) {
        self.set(flag, path, value.map(|v| v.to_string()));
    }

    pub fn set_u64(&mut self, flag: &'static str, path: &'static str, value: Option<u64>) {
        self.set(flag, path, value.map(|v| v as i64));
    }

    pub fn set_usize(&mut self, flag: &'static str, path: &'static str, value: Option<usize>) {
        self.set(flag, path, value.map(|v| v as i64));
    }
}

/// Reads `path` (if any), applies the overrides and validates the result.
///
/// Returns the config plus one message per flag that replaced a different
/// value from the file.
pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<(RunConfig, Vec<String>)> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
            text.parse::<toml::Table>()
                .with_context(|| format!("config {} is not valid TOML", p.display()))?
        }
        None => toml::Table::new(),
    };
    let mut conflicts = Vec::new();
    for o in &overrides.0 {
        let section = table
            .entry(o.section)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let Some(section) = section.as_table_mut() else {
            bail!("config key {} must be a table", o.section);
        };
        if let Some(old) = section.get(o.key) {
            if !same_value(old, &o.value) {
                conflicts.push(format!(
                    "--{} = {} overrides {}.{} = {} from the config file",
                    o.flag, o.value, o.section, o.key, old
                ));
            }
        }
        section.insert(o.key.to_string(), o.value.clone());
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .context("invalid configuration")?;
    cfg.train.validate()?;
    cfg.synthetic.generator().validate()?;
    if cfg.model.d_k == 0 || cfg.model.d_v == 0 || cfg.model.blocks == 0 {
        bail!("model dimensions must be positive");
    }
    if cfg.pointwise.hidden == 0 {
        bail!("pointwise.hidden must be positive");
    }
    if cfg.eval.cutoffs.is_empty() || cfg.eval.cutoffs.contains(&0) {
        bail!("eval.cutoffs must be a non-empty list of positive cutoffs");
    }
    Ok((cfg, conflicts))
}

fn same_value(a: &toml::Value, b: &toml::Value) -> bool {
    match (a, b) {
        (toml::Value::Integer(x), toml::Value::Float(y)) | (toml::Value::Float(y), toml::Value::Integer(x)) => {
            *x as f64 == *y
        }
        _ => a == b,
    }
}
