//! Run configuration: a TOML file whose omitted keys fall back to the
//! reference protocol's values.
//!
//! ```toml
//! mode = "scratch"          # or "transfer"
//! protocol = "kfold"        # or "holdout"
//! epochs = 200
//! seed = 7
//! # pretrained = "trunk.ckpt"   # required for transfer mode
//!
//! [augment]
//! horizontal_flip = 0.5
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::augment::AugmentPolicy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Trunk loaded from a checkpoint and frozen; only the head trains.
    Transfer,
    Scratch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Kfold,
    Holdout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: TrainMode,
    pub protocol: Protocol,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub train_batch: usize,
    pub validation_batch: usize,
    pub test_batch: usize,
    pub validation_steps: usize,
    pub learning_rate: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Side length patches are resized to before entering the model.
    pub input_size: usize,
    pub pretrained: Option<PathBuf>,
    pub augment: AugmentPolicy,
}

/// On-disk form; every key optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfigFile {
    mode: Option<TrainMode>,
    protocol: Option<Protocol>,
    epochs: Option<usize>,
    steps_per_epoch: Option<usize>,
    train_batch: Option<usize>,
    validation_batch: Option<usize>,
    test_batch: Option<usize>,
    validation_steps: Option<usize>,
    learning_rate: Option<f64>,
    early_stop_patience: Option<usize>,
    seed: Option<u64>,
    input_size: Option<usize>,
    pretrained: Option<PathBuf>,
    augment: Option<AugmentPolicy>,
}

impl RunConfig {
    /// Reference protocol values for a mode/protocol pair.
    pub fn reference(mode: TrainMode, protocol: Protocol) -> Self {
        let (train_batch, validation_batch, validation_steps) = match protocol {
            Protocol::Kfold => (24, 56, 6),
            Protocol::Holdout => (26, 70, 5),
        };
        Self {
            mode,
            protocol,
            epochs: match mode {
                TrainMode::Transfer => 100,
                TrainMode::Scratch => 200,
            },
            steps_per_epoch: 80,
            train_batch,
            validation_batch,
            test_batch: 45,
            validation_steps,
            learning_rate: 1e-5,
            early_stop_patience: 8,
            seed: 0,
            input_size: 64,
            pretrained: None,
            augment: AugmentPolicy::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let file: RunConfigFile = toml::from_str(text).map_err(|e| HarnessError::InvalidConfig(e.message().to_string()))?;
        let mut c = Self::reference(
            file.mode.unwrap_or(TrainMode::Scratch),
            file.protocol.unwrap_or(Protocol::Kfold),
        );
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = file.$f { c.$f = v; } )* };
        }
        take!(epochs, steps_per_epoch, train_batch, validation_batch, test_batch, validation_steps,
              learning_rate, early_stop_patience, seed, input_size, augment);
        c.pretrained = file.pretrained;
        c.validate()?;
        Ok(c)
    }

    /// Read a config file; a relative `pretrained` path resolves against
    /// the file's directory.
    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_toml_str(&text)?;
        if let (Some(p), Some(dir)) = (&c.pretrained, path.parent()) {
            if p.is_relative() {
                c.pretrained = Some(dir.join(p));
            }
        }
        Ok(c)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let counts = [
            ("epochs", self.epochs),
            ("steps_per_epoch", self.steps_per_epoch),
            ("train_batch", self.train_batch),
            ("validation_batch", self.validation_batch),
            ("test_batch", self.test_batch),
            ("validation_steps", self.validation_steps),
            ("early_stop_patience", self.early_stop_patience),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(HarnessError::InvalidConfig(format!("{name} must be at least 1")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HarnessError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.input_size < 8 || !self.input_size.is_multiple_of(8) {
            return Err(HarnessError::InvalidConfig("input_size must be a positive multiple of 8".into()));
        }
        if self.mode == TrainMode::Transfer && self.pretrained.is_none() {
            return Err(HarnessError::InvalidConfig("transfer mode needs a pretrained checkpoint".into()));
        }
        self.augment.validate().map_err(HarnessError::InvalidConfig)
    }

    /// Training samples drawn per epoch.
    pub fn samples_per_epoch(&self) -> usize {
        self.steps_per_epoch * self.train_batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_protocol() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!((c.mode, c.protocol), (TrainMode::Scratch, Protocol::Kfold));
        assert_eq!((c.epochs, c.train_batch, c.validation_batch, c.validation_steps), (200, 24, 56, 6));
        assert_eq!((c.steps_per_epoch, c.test_batch, c.early_stop_patience), (80, 45, 8));
        assert_eq!(c.learning_rate, 1e-5);
        assert_eq!(c.samples_per_epoch(), 1920);

        let h = RunConfig::from_toml_str("protocol = \"holdout\"\nmode = \"transfer\"\npretrained = \"x\"").unwrap();
        assert_eq!((h.epochs, h.train_batch, h.validation_batch, h.validation_steps), (100, 26, 70, 5));
    }

    #[test]
    fn overrides_and_round_trip() {
        let c = RunConfig::from_toml_str("epochs = 3\nseed = 11\n[augment]\nrotation = false").unwrap();
        assert_eq!((c.epochs, c.seed), (3, 11));
        assert!(!c.augment.rotation);
        assert_eq!(c.augment.horizontal_flip, 0.5);
        let again = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "train_batch = 0",
            "learning_rate = 0.0",
            "learning_rate = -1e-5",
            "mode = \"transfer\"",
            "bogus = 1",
            "input_size = 12",
            "[augment]\nbrightness_jitter = 0.9",
        ] {
            assert!(
                matches!(RunConfig::from_toml_str(text), Err(HarnessError::InvalidConfig(_))),
                "{text}"
            );
        }
    }
}
