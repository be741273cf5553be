//! Run configuration files, canonical hashing and run manifests.
//!
//! Configs are TOML. Relative paths inside a config resolve against the
//! directory holding the config file. Run `i` uses seed `base + i`, where the
//! base is the engine section's own seed, so adding seeds never changes the
//! earlier runs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::auit::{CommMode, Policy};
use crate::baselines::BaselineParams;
use crate::seal::SealConfig;

/// SHA-256 of the canonical TOML serialization, hex encoded.
pub fn canonical_hash<T: Serialize>(value: &T) -> String {
    let text = toml::to_string(value).expect("config types serialize to TOML");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SealRun,
    NoiseSweep,
    BaselineCompare,
    AuitEval,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SealRun => "seal-run",
            ExperimentKind::NoiseSweep => "noise-sweep",
            ExperimentKind::BaselineCompare => "baseline-compare",
            ExperimentKind::AuitEval => "auit-eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSweep {
    /// Sensing-noise standard deviations.
    pub levels: Vec<f64>,
}

impl Default for NoiseSweep {
    fn default() -> Self {
        Self {
            levels: vec![0.0, 0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    /// Iteration at which engines are compared.
    pub compare_at: usize,
    #[serde(default)]
    pub learning: BaselineParams,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            compare_at: 150,
            learning: BaselineParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuitSection {
    pub agents: usize,
    pub policy: Policy,
    pub sense_radius: f64,
    pub episodes: usize,
    pub steps: usize,
    pub report_every: usize,
    /// Base seed of the AUIT runs.
    pub seed: u64,
    /// Pattern files; each pattern is named after its file stem.
    pub patterns: Vec<String>,
    /// Space sizes as `[width, height]`.
    pub sizes: Vec<[usize; 2]>,
    pub comm_modes: Vec<CommMode>,
}

impl Default for AuitSection {
    fn default() -> Self {
        Self {
            agents: 5,
            policy: Policy::GreedyTowardGood,
            sense_radius: 2.0,
            episodes: 20,
            steps: 100,
            report_every: 10,
            seed: 1,
            patterns: Vec::new(),
            sizes: vec![[8, 8], [16, 16]],
            comm_modes: vec![
                CommMode::Direct,
                CommMode::Indirect { bias_std: 1.0 },
                CommMode::Imitation { range: 3.0 },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// When set, the config may only drive this experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,
    /// Target pattern file.
    pub pattern: String,
    pub agents: usize,
    /// Number of seeds per configuration.
    pub seeds: usize,
    pub out_dir: String,
    pub seal: SealConfig,
    #[serde(default)]
    pub noise_sweep: NoiseSweep,
    #[serde(default)]
    pub baselines: BaselineSection,
    #[serde(default)]
    pub auit: AuitSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config types serialize to TOML")
    }

    /// Reads and parses a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn hash(&self) -> String {
        canonical_hash(self)
    }

    /// Seeds `base, base + 1, ...` for the given base.
    pub fn seed_list(&self, base: u64) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| base + i).collect()
    }
}

/// Resolves `path` against `base_dir` unless it is absolute.
pub fn resolve(base_dir: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub label: String,
    pub seed: u64,
    pub files: Vec<String>,
    pub wall_clock_secs: f64,
}

/// Summary of one command invocation, written last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config_hash: String,
    pub tool_version: String,
    pub seeds: Vec<u64>,
    /// Files not tied to a single run.
    pub summary_files: Vec<String>,
    pub runs: Vec<ManifestRun>,
}

impl RunManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes to TOML")
    }
}
