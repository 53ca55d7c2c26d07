//! Experiment configuration: one JSON document per experiment.

use std::path::{Path, PathBuf};

use distilforge_core::data::{load_csv, load_idx, mean_std_normalize, synth_blobs};
use distilforge_core::{derive_seed, Dataset, NetworkConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::Failure;

pub const SEED_ENV: &str = "DISTILFORGE_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    /// Header row, numeric feature columns, integer label in the last column.
    Csv { train: PathBuf, test: PathBuf },
    /// Gaussian blobs; the test split shares the class centres and draws
    /// fresh noise.
    Blobs {
        num_classes: usize,
        per_class: usize,
        test_per_class: usize,
        dim: usize,
        spread: f64,
        seed: u64,
    },
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_repetitions() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub net1: NetworkConfig,
    pub net2: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Relative paths resolve against the config file's directory.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Seeds `train.seed`, `train.seed + 1`, ...
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Standardize features with training-split statistics.
    #[serde(default)]
    pub normalize: bool,
}

fn config_error(field: &str, err: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("{field}: {err}"))
}

/// Re-labels a core configuration error with the section it came from.
fn scoped(section: &str, err: distilforge_core::Error) -> Failure {
    match err {
        distilforge_core::Error::Config { field, reason } => {
            Failure::Config(format!("{section}.{field}: {reason}"))
        }
        other => config_error(section, other),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, Failure> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_error("config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, applies the seed override from the environment, validates and
    /// resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(&path.display().to_string(), e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| config_error("config", e))?;
        if let Ok(raw) = std::env::var(SEED_ENV) {
            cfg.train.seed = raw
                .trim()
                .parse()
                .map_err(|e| config_error(SEED_ENV, format!("{e} ({raw:?})")))?;
        }
        cfg.validate()?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.net1.validate().map_err(|e| scoped("net1", e))?;
        self.net2.validate().map_err(|e| scoped("net2", e))?;
        self.train.validate().map_err(|e| scoped("train", e))?;
        if self.repetitions == 0 {
            return Err(config_error("repetitions", "must be at least 1"));
        }
        if self.net1.input_dim != self.net2.input_dim {
            return Err(config_error("net2.input_dim", "must equal net1.input_dim"));
        }
        if self.net1.num_classes != self.net2.num_classes {
            return Err(config_error(
                "net2.num_classes",
                "must equal net1.num_classes",
            ));
        }
        if let DatasetSpec::Blobs {
            num_classes,
            per_class,
            test_per_class,
            dim,
            spread,
            ..
        } = self.dataset
        {
            if num_classes < 2 {
                return Err(config_error("dataset.num_classes", "must be at least 2"));
            }
            if per_class == 0 || test_per_class == 0 {
                return Err(config_error("dataset.per_class", "must be at least 1"));
            }
            if dim < 2 {
                return Err(config_error("dataset.dim", "must be at least 2"));
            }
            if !(spread.is_finite() && spread >= 0.0) {
                return Err(config_error(
                    "dataset.spread",
                    "must be a finite non-negative number",
                ));
            }
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        match &mut self.dataset {
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    fix(p);
                }
            }
            DatasetSpec::Csv { train, test } => {
                fix(train);
                fix(test);
            }
            DatasetSpec::Blobs { .. } => {}
        }
    }

    /// Seeds of the repetitions, in order.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repetitions as u64)
            .map(|r| self.train.seed.wrapping_add(r))
            .collect()
    }

    /// Loads train and test splits and checks them against the networks.
    pub fn load_data(&self) -> anyhow::Result<(Dataset, Dataset)> {
        let (train, test) = match &self.dataset {
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => (
                load_idx(train_images, train_labels)?,
                load_idx(test_images, test_labels)?,
            ),
            DatasetSpec::Csv { train, test } => (load_csv(train)?, load_csv(test)?),
            &DatasetSpec::Blobs {
                num_classes,
                per_class,
                test_per_class,
                dim,
                spread,
                seed,
            } => (
                synth_blobs(num_classes, per_class, dim, spread, seed)?,
                synth_blobs(
                    num_classes,
                    test_per_class,
                    dim,
                    spread,
                    derive_seed(seed, 1),
                )?,
            ),
        };
        let (train, test) = if self.normalize {
            let (train, mut others, _) = mean_std_normalize(&train, &[&test])?;
            (train, others.remove(0))
        } else {
            (train, test)
        };
        let classes = self.net1.num_classes;
        for (name, ds) in [("train", &train), ("test", &test)] {
            if ds.input_dim() != self.net1.input_dim {
                return Err(config_error(
                    "net1.input_dim",
                    format!(
                        "{} but the {name} split has {} features",
                        self.net1.input_dim,
                        ds.input_dim()
                    ),
                )
                .into());
            }
            if ds.num_classes() > classes {
                return Err(config_error(
                    "net1.num_classes",
                    format!(
                        "{classes} but the {name} split has {} classes",
                        ds.num_classes()
                    ),
                )
                .into());
            }
        }
        Ok((
            train.with_num_classes(classes)?,
            test.with_num_classes(classes)?,
        ))
    }

    /// Network configurations for one repetition; the run seed is mixed into
    /// each network's init seed.
    pub fn networks_for(&self, seed: u64) -> [NetworkConfig; 2] {
        [&self.net1, &self.net2].map(|n| NetworkConfig {
            init_seed: derive_seed(n.init_seed, seed),
            ..n.clone()
        })
    }

    pub fn train_for(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const BLOBS: &str = r#"{
        "dataset": {"kind": "blobs", "num_classes": 3, "per_class": 10, "test_per_class": 5,
                    "dim": 2, "spread": 0.5, "seed": 1},
        "net1": {"input_dim": 2, "hidden_dims": [8], "num_classes": 3, "init_seed": 1},
        "net2": {"input_dim": 2, "hidden_dims": [6, 4], "num_classes": 3, "init_seed": 2},
        "train": {"stage1_epochs": 2, "stage2_epochs": 2, "lr_milestones": [1]}
    }"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(BLOBS).unwrap();
        assert_eq!(cfg.repetitions, 1);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
        let (train, test) = cfg.load_data().unwrap();
        assert_eq!((train.len(), test.len()), (30, 15));
    }

    #[test]
    fn errors_name_the_field() {
        let bad = BLOBS.replace(r#""stage2_epochs": 2"#, r#""stage2_epochs": 2, "lr": -0.1"#);
        let msg = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(msg.starts_with("train.lr:"), "{msg}");

        let bad = BLOBS.replace(r#""init_seed": 2"#, r#""init_seed": 2, "dropout": 0.5"#);
        let msg = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(msg.contains("dropout"), "{msg}");

        let bad = BLOBS.replace(
            r#""num_classes": 3, "init_seed": 2"#,
            r#""num_classes": 4, "init_seed": 2"#,
        );
        let msg = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(msg.starts_with("net2.num_classes"), "{msg}");
    }

    #[test]
    fn input_width_is_checked_against_data() {
        let bad = BLOBS.replace(r#""dim": 2"#, r#""dim": 3"#);
        let cfg = ExperimentConfig::from_json(&bad).unwrap();
        let msg = cfg.load_data().unwrap_err().to_string();
        assert!(msg.starts_with("net1.input_dim"), "{msg}");
    }
}
