//! Flat key-value run configuration.
//!
//! The same keys are accepted from a TOML file, from the `config` table of a
//! previously written manifest, and from command-line flags. Flags win over
//! the file, the file wins over built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// 5 informative + 45 noise features, 200/100/1000 samples, one grid cell.
    Smoke,
    /// 100 informative + 900 noise features, 2000/1000/20000 samples.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmName {
    Mle,
    FixedDropout,
    Uor,
    For,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaModeName {
    InverseSampleCount,
    Constant,
    OneOverT,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorName {
    Plain,
    ExpectedMask,
    Gaussian,
    Enumerate,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GridName {
    /// The full published grid.
    Default,
    /// The single cell given by `a`, `b`, `c`, `d`.
    Singleton,
}

/// Every recognised key. Unset keys are omitted when serialized.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<Scale>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_informative: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_noise: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_shift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_valid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<AlgorithmName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_mode: Option<DeltaModeName>,
    /// Value for `delta_mode = "constant"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub minibatch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_keep_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub progress_every: Option<u64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictor: Option<PredictorName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_samples: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_a: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_b: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_c: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_d: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repeats: Option<u64>,
    /// Cells that skip the grid search, e.g. `fixed_for = [0.01, 1000, 0.01, 10000]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_mle: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_fixed_dropout: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_uor: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_for: Option<Vec<f64>>,
}

impl Config {
    /// Reads a TOML file, or the `config` table of a JSON manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        if path.extension().is_some_and(|e| e == "json") {
            let doc: Value = serde_json::from_str(&text)
                .with_context(|| format!("parsing manifest {}", path.display()))?;
            let Some(config) = doc.get("config") else {
                bail!("{} has no `config` table", path.display());
            };
            serde_json::from_value(config.clone())
                .with_context(|| format!("reading `config` of {}", path.display()))
        } else {
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
        }
    }

    /// Keys set in `top` replace those in `self`.
    pub fn overlay(self, top: &Config) -> Result<Self> {
        let mut base = to_map(&self)?;
        base.extend(to_map(top)?);
        Ok(serde_json::from_value(Value::Object(base.into_iter().collect()))?)
    }

    pub fn fixed_cells(&self) -> BTreeMap<&'static str, &Vec<f64>> {
        [
            ("mle", &self.fixed_mle),
            ("fixed-dropout", &self.fixed_fixed_dropout),
            ("uor", &self.fixed_uor),
            ("for", &self.fixed_for),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
        .collect()
    }

    pub fn set_fixed(&mut self, algorithm: AlgorithmName, cell: Vec<f64>) {
        let slot = match algorithm {
            AlgorithmName::Mle => &mut self.fixed_mle,
            AlgorithmName::FixedDropout => &mut self.fixed_fixed_dropout,
            AlgorithmName::Uor => &mut self.fixed_uor,
            AlgorithmName::For => &mut self.fixed_for,
        };
        *slot = Some(cell);
    }
}

fn to_map(c: &Config) -> Result<serde_json::Map<String, Value>> {
    match serde_json::to_value(c)? {
        Value::Object(m) => Ok(m),
        _ => unreachable!("Config serializes to an object"),
    }
}
