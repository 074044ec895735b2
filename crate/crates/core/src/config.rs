//! TOML configuration shared by the simulator, the sweep and experiments.
//!
//! Every key is optional; missing keys take the library defaults.
//!
//! ```toml
//! seed = 7
//!
//! [rig]
//! quantization_step = 1.0
//! backlash = 0.2
//!
//! [sweep]
//! step = 5.0
//!
//! [experiment]
//! trials = 191
//! corrective = 1
//! ```

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::SweepSpec;
use crate::eval::ExperimentConfig;
use crate::rig::{RigError, RigModel, TargetBoard};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Invalid(#[from] RigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; calibration and experiment seeds are drawn from it.
    pub seed: u64,
    pub rig: RigModel,
    pub board: TargetBoard,
    pub sweep: SweepSpec,
    pub experiment: ExperimentConfig,
}

/// Seeds derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub calibration: u64,
    pub experiment: u64,
    pub single_shot: u64,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.rig.validate()?;
        self.board.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn seeds(&self) -> Seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Seeds {
            calibration: rng.random(),
            experiment: rng.random(),
            single_shot: rng.random(),
        }
    }

    /// Experiment settings with the derived experiment seed filled in.
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            seed: self.seeds().experiment,
            ..self.experiment
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn partial_sections_override_single_keys() {
        let cfg =
            Config::from_toml("seed = 3\n[rig]\nbacklash = 0.0\n[sweep]\nstep = 10.0\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.rig.backlash, 0.0);
        assert_eq!(cfg.rig.gain_pan, RigModel::default().gain_pan);
        assert_eq!(cfg.sweep.step, 10.0);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = Config::default();
        cfg.seed = 11;
        cfg.rig.gain_tilt = 0.97;
        cfg.experiment.target_on_board = true;
        assert_eq!(Config::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_a_parse_error() {
        assert!(matches!(
            Config::from_toml("[rig]\nbogus = 1\n"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(matches!(
            Config::from_toml("[rig]\nquantization_step = -1.0\n"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn seeds_depend_only_on_master_seed() {
        let a = Config {
            seed: 5,
            ..Config::default()
        };
        let b = Config {
            seed: 5,
            ..Config::default()
        };
        assert_eq!(a.seeds(), b.seeds());
        assert_ne!(a.seeds(), Config::default().seeds());
        assert_eq!(a.experiment().seed, a.seeds().experiment);
    }
}
