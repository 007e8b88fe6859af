//! Pipeline configuration, read from a TOML file with one section per stage.
//!
//! ```toml
//! seed = 7
//! [data]
//! trajectories = 500
//! [dynamics]
//! epochs = 20
//! [idbf]
//! eps_safe = 0.05
//! ```
//!
//! Every key is optional. Stage seeds are derived from the top-level seed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bcpolicy::BcConfig;
use crate::envnav::NavConfig;
use crate::error::{Error, Result};
use crate::evalcli::EvalConfig;
use crate::idbf::{IdbfHyper, PhaseCConfig};
use crate::latentdyn::{DynTrainConfig, LatentArch};
use crate::rng::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub trajectories: usize,
    pub horizon: usize,
    /// Trailing trajectories kept out of training for diagnostics.
    pub holdout: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            trajectories: 500,
            horizon: 100,
            holdout: 25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub members: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 5,
            epochs: 10,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub env: NavConfig,
    pub data: DataConfig,
    pub arch: LatentArch,
    pub dynamics: DynTrainConfig,
    /// Latent-conditioned model used to draw contrastive samples.
    pub bc: BcConfig,
    /// Privileged-state model used by the density baseline filter.
    pub baseline_bc: BcConfig,
    pub idbf: IdbfHyper,
    pub joint: PhaseCConfig,
    pub ensemble: EnsembleConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Sets the master seed and re-derives every stage seed from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.dynamics.seed = derive_seed(seed, "dynamics");
        self.bc.seed = derive_seed(seed, "bc");
        self.baseline_bc.seed = derive_seed(seed, "baseline-bc");
        self.joint.seed = derive_seed(seed, "joint");
        self.eval.seed = derive_seed(seed, "eval");
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.set_seed(seed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.arch.validate()?;
        self.dynamics.validate()?;
        self.idbf.validate()?;
        self.eval.validate()?;
        if self.arch.image_size != self.env.image_size {
            return Err(Error::Config(format!(
                "model image size {} differs from environment image size {}",
                self.arch.image_size, self.env.image_size
            )));
        }
        if self.data.trajectories <= self.data.holdout {
            return Err(Error::Config("holdout must leave training trajectories".into()));
        }
        if self.dynamics.t_pred > self.data.horizon {
            return Err(Error::Config("t_pred exceeds the trajectory horizon".into()));
        }
        Ok(())
    }

    /// Seed used to collect the dataset.
    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, "data")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = Config::from_toml("").unwrap();
        assert_eq!(cfg, Config::default().with_seed(0));
        assert_eq!(cfg.dynamics.t_pred, 10);
        assert_eq!(cfg.idbf.n_candidate, 20);
    }

    #[test]
    fn round_trip_and_overrides() {
        let cfg = Config::from_toml("seed = 3\n[dynamics]\nepochs = 2\n[idbf]\nalpha = 0.5\n").unwrap();
        assert_eq!(cfg.dynamics.epochs, 2);
        assert_eq!(cfg.idbf.alpha, 0.5);
        assert_eq!(Config::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(Config::from_toml("[idbf]\nalpha = -1.0\n").is_err());
        assert!(Config::from_toml("[dynamics]\nbogus_key = [").is_err());
    }
}
