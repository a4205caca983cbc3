//! TOML configuration with `[generator]`, `[train]`, `[dssp]` and `[bench]`
//! sections. Missing sections and keys take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dssp::DsspConfig;
use crate::instance::GenParams;
use crate::ppo::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Method names as accepted by [`crate::bench::Method`].
    pub methods: Vec<String>,
    /// Write measured wall time in the seconds column.
    pub timing: bool,
    /// Node budget for solver-derived references.
    pub exact_nodes: u64,
    pub exact_seconds: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            methods: vec!["dr:FIFO+EET".into(), "dr:FIFO+SPT".into()],
            timing: true,
            exact_nodes: 5_000_000,
            exact_seconds: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub generator: GenParams,
    pub train: TrainConfig,
    pub dssp: DsspConfig,
    pub bench: BenchConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            generator: TrainConfig::desk().gen,
            train: TrainConfig::desk(),
            dssp: DsspConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl Config {
    /// Parses `text`; keys it leaves out keep the values of [`Config::default`].
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let given: toml::Table = toml::from_str(text)?;
        let mut merged = toml::Table::try_from(Config::default())?;
        merge(&mut merged, given);
        Ok(merged.try_into()?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    /// Points every section's seed at `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.generator.seed = seed;
        self.train.seed = seed;
        self.train.gen.seed = seed;
        self.dssp.seed = seed;
        self.dssp.base.seed = seed;
        self
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}
