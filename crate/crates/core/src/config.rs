//! Run configuration shared by the command line and the service.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attribution::AttributionMethod;
use crate::error::{Error, Result};
use crate::ingest::DataSource;
use crate::lab::DEFAULT_K_GRID;
use crate::model::Hyperparams;
use crate::search::{Algorithm, DEFAULT_MAX_PASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Minimum acceptable mean Pearson r.
    pub floor: f64,
    pub test_points: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            floor: 0.9,
            test_points: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionConfig {
    pub methods: Vec<AttributionMethod>,
    pub k_grid: Vec<usize>,
    /// Test points scored per method; all when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_points: Option<usize>,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            methods: AttributionMethod::ALL.to_vec(),
            k_grid: DEFAULT_K_GRID.to_vec(),
            test_points: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub data: DataSource,
    #[serde(default)]
    pub hyper: Hyperparams,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_max_passes")]
    pub max_passes: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Seeds anything random outside the dataset (RANDOM attribution).
    #[serde(default)]
    pub seed: u64,
    /// Worker threads for per-test-point work; 0 means all cores.
    #[serde(default)]
    pub threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_test_points: Option<usize>,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub attribution: AttributionConfig,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Iterative
}

fn default_max_passes() -> usize {
    DEFAULT_MAX_PASSES
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    pub fn new(name: impl Into<String>, data: DataSource) -> Self {
        Self {
            name: name.into(),
            data,
            hyper: Hyperparams::default(),
            algorithm: default_algorithm(),
            max_passes: default_max_passes(),
            output_dir: default_output_dir(),
            seed: 0,
            threads: 0,
            max_test_points: None,
            calibration: CalibrationConfig::default(),
            attribution: AttributionConfig::default(),
        }
    }

    /// Reads TOML, or JSON when the extension is `.json`. A relative dataset
    /// path is taken relative to the config file.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = if is_json(path) {
            Self::from_json(&raw)
        } else {
            Self::from_toml(&raw)
        }
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let (Some(base), Some(data_path)) = (path.parent(), config.data.path_mut()) {
            if data_path.is_relative() {
                *data_path = base.join(&*data_path);
            }
        }
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = if is_json(path) { self.to_json()? } else { self.to_toml()? };
        crate::fsutil::write_atomic(path, text.as_bytes())
    }

    pub fn from_toml(raw: &str) -> Result<Self> {
        toml::from_str(raw).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        serde_json::from_str(raw).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Checks values and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("name must not be empty".into()));
        }
        if self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            return Err(Error::Config(format!("name {:?} must be a plain file name", self.name)));
        }
        self.hyper.validate()?;
        if self.max_passes == 0 {
            return Err(Error::Config("max_passes must be at least 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.calibration.floor) {
            return Err(Error::Config(format!(
                "calibration floor must lie in [-1, 1], got {}",
                self.calibration.floor
            )));
        }
        if self.attribution.methods.is_empty() {
            return Err(Error::Config("attribution needs at least one method".into()));
        }
        self.data.validate()
    }

    /// Directory this run writes into.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}
