//! TOML experiment configs. Every section maps onto a typed struct and
//! unknown keys are rejected.

use std::fs;
use std::path::Path;

use clues_core::eval::ExperimentConfig;

/// A configuration problem: unreadable, malformed or invalid.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

pub fn parse_experiment(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError(format!("malformed config: {e}")))?;
    cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(cfg)
}

pub fn load_experiment(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("reading {}: {e}", path.display())))?;
    parse_experiment(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
}

pub fn render_experiment(cfg: &ExperimentConfig) -> String {
    toml::to_string_pretty(cfg).expect("experiment config is TOML-representable")
}
