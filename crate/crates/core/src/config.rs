//! Structured run configuration: constants overrides, lab-frame
//! calibration, and fit options, loaded from JSON with unknown keys
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::FitOptions;
use crate::hamiltonian::PhysicalConstants;
use crate::optimize::LeastSquaresOptions;
use crate::transitions::LabFrameCalibration;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid config value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Perturbation grid edge length for uncertainty propagation.
    pub grid_n: usize,
    /// Relative field-amplitude uncertainty.
    pub rel_error: f64,
    pub max_iterations: usize,
    /// Relative objective-change convergence threshold.
    pub ftol: f64,
    /// Relative finite-difference step.
    pub rel_step: f64,
    /// Re-runs of the strain/quenching stage block.
    pub refinement_passes: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            grid_n: 5,
            rel_error: 0.005,
            max_iterations: 200,
            ftol: 1e-12,
            rel_step: 1e-6,
            refinement_passes: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub constants: PhysicalConstants,
    pub calibration: LabFrameCalibration,
    pub fit: FitConfig,
    /// Worker threads for parallel sections; default: all cores.
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Json {
                path: path.display().to_string(),
                source,
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.constants
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.fit.grid_n < 2 {
            return Err(ConfigError::Invalid(format!(
                "fit.grid_n must be >= 2, got {}",
                self.fit.grid_n
            )));
        }
        for (name, value) in [
            ("fit.rel_error", self.fit.rel_error),
            ("fit.ftol", self.fit.ftol),
            ("fit.rel_step", self.fit.rel_step),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "{name} must be non-negative, got {value}"
                )));
            }
        }
        for (name, value) in [
            ("fit.max_iterations", self.fit.max_iterations),
            ("fit.refinement_passes", self.fit.refinement_passes),
        ] {
            if value == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if let Some(jobs) = self.jobs {
            if jobs == 0 {
                return Err(ConfigError::Invalid("jobs must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            least_squares: LeastSquaresOptions {
                max_iterations: self.fit.max_iterations,
                ftol: self.fit.ftol,
                rel_step: self.fit.rel_step,
            },
            refinement_passes: self.fit.refinement_passes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"fit": {"grid_n": 5}, "frobnicate": true}"#;
        let parsed: Result<RunConfig, _> = serde_json::from_str(text);
        assert!(parsed.is_err());
    }

    #[test]
    fn nested_overrides_apply() {
        let text = r#"{"constants": {"gamma_s": 27.993, "gamma_l": 14.0, "gamma_c13": 10.7084}}"#;
        let config: RunConfig = serde_json::from_str(text).unwrap();
        assert_eq!(config.constants.gamma_s, 27.993);
        assert_eq!(config.fit.grid_n, 5);
    }

    #[test]
    fn bad_values_rejected() {
        let mut config = RunConfig::default();
        config.fit.grid_n = 1;
        assert!(config.validate().is_err());
        let mut config = RunConfig::default();
        config.fit.rel_error = -0.1;
        assert!(config.validate().is_err());
    }
}
