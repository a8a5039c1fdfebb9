//! Run configuration: a versioned JSON file whose fields can each be
//! overridden on the command line.

use std::path::{Path, PathBuf};

use pcae::datasets::{self, Dataset};
use pcae::theory::Theorem2Config;
use pcae::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    #[default]
    SwissRoll,
    FactorManifold,
    FlatStrip,
    Segment,
    Disc,
    /// Samples read from `path`.
    Csv,
}

/// Which samples to use. Fields that do not apply to the chosen generator
/// are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub generator: Generator,
    pub n: usize,
    pub d_true: usize,
    pub p: usize,
    /// Per-factor variances, descending; `d_true, d_true − 1, …, 1` when absent.
    pub variances: Option<Vec<f64>>,
    pub noise_sd: f64,
    pub height: f64,
    pub ambient: usize,
    pub path: Option<PathBuf>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            generator: Generator::SwissRoll,
            n: 1000,
            d_true: 4,
            p: 16,
            variances: None,
            noise_sd: 0.0,
            height: std::f64::consts::PI,
            ambient: 3,
            path: None,
        }
    }
}

impl DatasetSpec {
    pub fn build(&self, seed: u64) -> Result<Dataset, CliError> {
        let ds = match self.generator {
            Generator::SwissRoll => datasets::gen_swiss_roll(self.n, self.noise_sd, seed)?,
            Generator::FactorManifold => {
                let profile = self
                    .variances
                    .clone()
                    .unwrap_or_else(|| (1..=self.d_true).rev().map(|v| v as f64).collect());
                datasets::gen_factor_manifold_noisy(self.d_true, self.p, self.n, &profile, self.noise_sd, seed)?
            }
            Generator::FlatStrip => datasets::gen_flat_strip(self.n, self.height, seed)?,
            Generator::Segment => datasets::gen_segment(self.n, self.ambient, seed)?,
            Generator::Disc => datasets::gen_disc(self.n, self.ambient, seed)?,
            Generator::Csv => {
                let path = self.path.as_ref().ok_or_else(|| CliError::Config("csv dataset needs a path".into()))?;
                read_dataset(path)?
            }
        };
        Ok(ds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Seeds data generation, landmark selection, initialization and
    /// minibatch order.
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub k_neighbors: usize,
    pub landmark_count: usize,
    /// The `seed` field here is ignored in favour of the top-level one.
    pub train: TrainConfig,
    pub theorem2: Theorem2Config,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            dataset: DatasetSpec::default(),
            k_neighbors: pcae::geodesic::DEFAULT_K,
            landmark_count: 1000,
            train: TrainConfig::default(),
            theorem2: Theorem2Config::default(),
        }
    }
}

impl RunConfig {
    /// Defaults, or the given file. The file must carry `"version": 1`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {} is not JSON: {e}", path.display())))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(CONFIG_VERSION) => {}
            Some(v) => return Err(CliError::Config(format!("unsupported config version {v}"))),
            None => return Err(CliError::Config("config has no integer `version` field".into())),
        }
        serde_json::from_value(value).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    /// Hex SHA-256 of the effective configuration as compact JSON.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn finish(mut self) -> Result<Self, CliError> {
        self.train.seed = self.seed;
        self.theorem2.seed = self.seed;
        self.train.validate()?;
        if self.k_neighbors == 0 || self.landmark_count == 0 {
            return Err(CliError::Config("k_neighbors and landmark_count must be positive".into()));
        }
        Ok(self)
    }
}

/// Reads a dataset CSV, failing with a config error when it is missing.
pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("dataset {} does not exist", path.display())));
    }
    Ok(Dataset::read_csv(path, true)?)
}

pub fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} does not exist", path.display())))
    }
}
