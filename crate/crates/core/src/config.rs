//! Run configuration: every hyperparameter of the pipeline in one versioned
//! JSON document. Omitted keys take the documented defaults; unknown keys
//! are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::offline::{FcbFitConfig, OfflineConfig};
use crate::online::OnlineConfig;
use crate::train::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub train: TrainConfig,
    pub offline: OfflineConfig,
    pub online: OnlineConfig,
    pub fcb_fit: FcbFitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            train: TrainConfig::default(),
            offline: OfflineConfig::default(),
            online: OnlineConfig::default(),
            fcb_fit: FcbFitConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::format(path, m),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("config version {} (supported: {CONFIG_VERSION})", self.version)));
        }
        self.train.validate()?;
        self.online.validate()?;
        if self.offline.workflows == 0 || !(self.offline.sigma_smooth > 0.0) || self.offline.map_width != 2 * self.offline.map_height {
            return Err(Error::Config("offline settings out of range".into()));
        }
        let f = &self.fcb_fit;
        if !(f.sigma_min > 0.0 && f.sigma_max >= f.sigma_min && f.coarse_step > 0.0 && f.fine_step > 0.0 && f.w1_step > 0.0 && f.w1_step <= 1.0) {
            return Err(Error::Config("fcb_fit grid out of range".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn default_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!((c.train.rewards.rho, c.train.rewards.varrho, c.train.rewards.varsigma), (42.0, 0.7, 1.0));
        assert_eq!(c.train.gamma, 0.99);
        assert_eq!(c.offline.workflows, 58);
        assert_eq!((c.online.episodes, c.online.th_mo), (30, 0.7));
    }

    #[test]
    fn typos_are_rejected() {
        assert!(RunConfig::from_json(r#"{"train": {"gama": 0.9}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"version": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"online": {"th_mo": 1.5}}"#).is_err());
        let c = RunConfig::from_json(r#"{"train": {"rmsprop": {"lr": 0.001}}}"#).unwrap();
        assert_eq!(c.train.rmsprop.lr, 0.001);
        assert_eq!(c.train.rmsprop.decay, 0.99);
    }
}
