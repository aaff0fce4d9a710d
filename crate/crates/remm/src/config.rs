//! TOML simulation configs and the bundled scenario presets.

use std::path::Path;

use remm_core::{LinkFunction, SimulationConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

fn yes() -> bool {
    true
}

/// File form of [`SimulationConfig`]; the link is a `boxcox:<rho>` or
/// `log:<r>` string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationFile {
    pub link: String,
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<Vec<f64>>,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma4: f64,
    pub gamma3_cap: f64,
    pub censor_low: f64,
    pub censor_high: f64,
    pub tau: f64,
    pub n: usize,
    pub seed: u64,
    #[serde(default = "yes")]
    pub random_censoring: bool,
    #[serde(default = "yes")]
    pub terminal_events: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_covariates: Option<Vec<f64>>,
}

impl SimulationFile {
    pub fn to_config(&self) -> CliResult<SimulationConfig> {
        let link: LinkFunction = self.link.parse()?;
        let cfg = SimulationConfig {
            link,
            beta: self.beta.clone(),
            beta2: self.beta2.clone(),
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            gamma4: self.gamma4,
            gamma3_cap: self.gamma3_cap,
            censor_low: self.censor_low,
            censor_high: self.censor_high,
            tau: self.tau,
            n: self.n,
            seed: self.seed,
            random_censoring: self.random_censoring,
            terminal_events: self.terminal_events,
            fixed_covariates: self.fixed_covariates.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_config(cfg: &SimulationConfig) -> Self {
        Self {
            link: cfg.link.to_string(),
            beta: cfg.beta.clone(),
            beta2: cfg.beta2.clone(),
            gamma1: cfg.gamma1,
            gamma2: cfg.gamma2,
            gamma4: cfg.gamma4,
            gamma3_cap: cfg.gamma3_cap,
            censor_low: cfg.censor_low,
            censor_high: cfg.censor_high,
            tau: cfg.tau,
            n: cfg.n,
            seed: cfg.seed,
            random_censoring: cfg.random_censoring,
            terminal_events: cfg.terminal_events,
            fixed_covariates: cfg.fixed_covariates.clone(),
        }
    }
}

pub fn parse_config(text: &str) -> CliResult<SimulationConfig> {
    let file: SimulationFile = toml::from_str(text).map_err(|e| CliError::Validation(format!("simulation config: {e}")))?;
    file.to_config()
}

pub fn to_toml(cfg: &SimulationConfig) -> String {
    toml::to_string(&SimulationFile::from_config(cfg)).expect("simulation config serializes")
}

/// Bundled preset files, by name.
pub const PRESET_FILES: [(&str, &str); 5] = [
    ("scenario_bc_05", include_str!("../presets/scenario_bc_05.toml")),
    ("scenario_bc_1", include_str!("../presets/scenario_bc_1.toml")),
    ("scenario_bc_2", include_str!("../presets/scenario_bc_2.toml")),
    ("scenario_log_05", include_str!("../presets/scenario_log_05.toml")),
    ("scenario_log_1", include_str!("../presets/scenario_log_1.toml")),
];

/// Loads a config file. A path that does not exist but names a preset
/// (with or without `.toml`) loads the bundled copy.
pub fn load_config(path: &Path) -> CliResult<SimulationConfig> {
    match std::fs::read_to_string(path) {
        Ok(text) => parse_config(&text),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let stem = path.file_name().and_then(|f| f.to_str()).map(|f| f.trim_end_matches(".toml")).unwrap_or_default();
            match PRESET_FILES.iter().find(|(name, _)| *name == stem) {
                Some((_, text)) => parse_config(text),
                None => Err(CliError::io(path, e)),
            }
        }
        Err(e) => Err(CliError::io(path, e)),
    }
}
