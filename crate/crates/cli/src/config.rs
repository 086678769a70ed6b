//! The experiment configuration file.
//!
//! One JSON document describes a complete run: model, optimizer, training
//! protocol, data sources and the seed from which every random choice is
//! derived. Unknown keys are rejected at every level, and [`ExperimentConfig::validate`]
//! reports all semantic problems at once before any work starts.

use std::fs;
use std::path::{Path, PathBuf};

use segmicro::augment::AugmentPolicy;
use segmicro::optim::OptimizerHyperparams;
use segmicro::train::{EarlyStopConfig, ReduceLrConfig, TrainConfig};
use segmicro::{ModelConfig, OptimizerKind, Overrides};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SCHEMA: &str = "segmicro.experiment.v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub kind: OptimizerKind,
    #[serde(default)]
    pub overrides: Overrides,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop: EarlyStopConfig,
    pub reduce_lr: ReduceLrConfig,
    pub validation_fraction: f64,
    pub log_wall_time: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingSection {
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            early_stop: t.early_stop,
            reduce_lr: t.reduce_lr,
            validation_fraction: 0.1,
            log_wall_time: t.log_wall_time,
        }
    }
}

/// Generated blob images instead of files on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub train_count: usize,
    pub test_count: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Manifest of the training pool (split into train/validation).
    pub train: Option<PathBuf>,
    /// Manifest of the held-out test set.
    pub test: Option<PathBuf>,
    pub synthetic: Option<SyntheticSection>,
    /// Manifest of original images for `gen-data`.
    pub originals: Option<PathBuf>,
    /// Copies per original produced by `gen-data`.
    pub multiplier: usize,
    /// Preprocessing and augmentation (includes target size and equalize).
    pub augment: AugmentPolicy,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train: None,
            test: None,
            synthetic: None,
            originals: None,
            multiplier: 1,
            augment: AugmentPolicy::microscopy((256, 256)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub data: DataSection,
}

impl ExperimentConfig {
    pub fn new(model: ModelConfig, kind: OptimizerKind) -> Self {
        ExperimentConfig {
            schema: SCHEMA.to_string(),
            seed: 0,
            model,
            optimizer: OptimizerSection {
                kind,
                overrides: Overrides::default(),
            },
            training: TrainingSection::default(),
            data: DataSection::default(),
        }
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads, validates and resolves relative data paths against the
    /// config file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config = Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.data.train, &mut config.data.test, &mut config.data.originals]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        let mut problems = Vec::new();
        if self.schema != SCHEMA {
            problems.push(format!("schema must be {SCHEMA:?}, got {:?}", self.schema));
        }
        if let Err(e) = self.model.validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.hyperparams() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.train_config(None).validate() {
            problems.push(e.to_string());
        }
        let f = self.training.validation_fraction;
        if !(f > 0.0 && f < 1.0) {
            problems.push(format!("training.validation_fraction must be in (0, 1), got {f}"));
        }
        if let Err(e) = self.data.augment.validate() {
            problems.push(e.to_string());
        }
        if self.data.multiplier == 0 {
            problems.push("data.multiplier must be >= 1".into());
        }
        if let Some(s) = &self.data.synthetic {
            if self.model.num_channels != 1 || self.model.num_classes != 3 {
                problems.push("data.synthetic produces 1-channel, 3-class images; the model must match".into());
            }
            if s.train_count < 2 || s.test_count == 0 || s.height == 0 || s.width == 0 {
                problems.push(format!("data.synthetic needs train_count >= 2, test_count >= 1 and a positive size, got {s:?}"));
            }
            if self.data.train.is_some() || self.data.test.is_some() {
                problems.push("data.synthetic cannot be combined with data.train / data.test".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems.join("; ")))
        }
    }

    pub fn hyperparams(&self) -> segmicro::Result<OptimizerHyperparams> {
        Ok(*segmicro::make_optimizer::<f32>(self.optimizer.kind, &self.optimizer.overrides)?.hyperparams())
    }

    pub fn train_config(&self, checkpoint_path: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            batch_size: self.training.batch_size,
            max_epochs: self.training.max_epochs,
            early_stop: self.training.early_stop,
            reduce_lr: self.training.reduce_lr,
            shuffle_seed: self.seed,
            checkpoint_path,
            log_wall_time: self.training.log_wall_time,
        }
    }

    /// Compact canonical serialization (field order is fixed by the types).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical serialization.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": "segmicro.experiment.v1",
        "model": {"arch": "UNET", "num_channels": 1, "num_classes": 3,
                  "filters": [16, 32, 64, 128, 256], "conv_kernel": 3, "deconv_kernel": 2, "out_kernel": 1},
        "optimizer": {"kind": "ADAM"},
        "training": {"batch_size": 1}
    }"#;

    #[test]
    fn reference_row_is_expressible() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.hyperparams().unwrap().lr, 0.001);
        assert_eq!(c.training.early_stop.patience, 12);
        assert_eq!(c.data.augment.max_rotation_deg, 60.0);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let extra = MINIMAL.replace("\"seed\"", "\"x\"").replace("\"training\"", "\"trainig\"");
        assert!(matches!(ExperimentConfig::from_json(&extra), Err(CliError::Config(_))));
        let bad = MINIMAL.replace("\"batch_size\": 1", "\"batch_size\": 0").replace("\"conv_kernel\": 3", "\"conv_kernel\": 0");
        let msg = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(msg.contains("batch_size") && msg.contains("conv_kernel"), "{msg}");
        let wrong_schema = MINIMAL.replace("v1", "v0");
        assert!(ExperimentConfig::from_json(&wrong_schema).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.content_hash(), b.content_hash());
        b.seed = 1;
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash().len(), 16);
    }
}
