//! Global configuration and structured-file loading.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mlops_core::drift::DriftThresholds;
use mlops_core::retrain::PolicyConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Store root used when neither the flag, the environment nor the config names one.
pub const DEFAULT_STORE: &str = "mlops-store";

/// Settings shared by every subcommand. Flags override these.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub store: Option<PathBuf>,
    pub thresholds: DriftThresholds,
    pub policy: PolicyConfig,
    pub max_parallel: Option<usize>,
    /// Log filter such as `info` or `mlops_core=debug`.
    pub log: Option<String>,
}

impl GlobalConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(GlobalConfig::default());
        };
        let config: GlobalConfig = load_file(path)?;
        config.check().with_context(|| format!("invalid config {}", path.display()))?;
        Ok(config)
    }

    pub fn check(&self) -> Result<()> {
        if self.max_parallel == Some(0) {
            bail!("max_parallel must be at least 1");
        }
        self.thresholds.check()?;
        self.policy.check()?;
        Ok(())
    }
}

fn is_toml(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"))
}

/// Reads a TOML (by extension) or YAML file into any value.
pub fn load_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    if is_toml(path) {
        toml::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
    } else {
        serde_yaml::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
    }
}

/// Fills keys missing from `doc` with the given defaults.
pub fn merge_defaults(doc: &mut serde_json::Value, defaults: &[(&str, serde_json::Value)]) -> Result<()> {
    let Some(map) = doc.as_object_mut() else {
        bail!("expected a mapping at the top level");
    };
    for (key, value) in defaults {
        if !map.contains_key(*key) {
            map.insert(key.to_string(), value.clone());
        }
    }
    Ok(())
}
