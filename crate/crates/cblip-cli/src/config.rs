//! Run configuration: a flat `key = value` file plus command-line overrides.
//!
//! Every key maps onto one training-config field or one path; unknown keys
//! are rejected so typos fail loudly instead of silently training with a
//! default.

use std::path::PathBuf;

use cblip_core::context::MergeMode;
use cblip_core::encoder::{AttnScale, BiasMode};
use cblip_core::model::{AggMode, TaskMode};
use cblip_core::train::{NeighborSampling, TrainConfig};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ConfigFileError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}` ({expected})")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
}

/// Everything a run needs: hyperparameters plus dataset/output locations.
#[derive(Clone, Debug, Default)]
pub struct RunPaths {
    pub train_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub paths: RunPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::inductive_defaults(),
            paths: RunPaths::default(),
        }
    }
}

fn bad(key: &str, value: &str, expected: &'static str) -> ConfigFileError {
    ConfigFileError::BadValue {
        key: key.to_owned(),
        value: value.to_owned(),
        expected,
    }
}

fn parse_num<T: std::str::FromStr>(
    key: &str,
    value: &str,
    expected: &'static str,
) -> Result<T, ConfigFileError> {
    value.parse().map_err(|_| bad(key, value, expected))
}

impl RunConfig {
    /// Applies one key/value pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigFileError> {
        let t = &mut self.train;
        match key {
            "mode" => {
                t.mode = match value {
                    "inductive" => TaskMode::Inductive,
                    "transductive" => TaskMode::Transductive,
                    _ => return Err(bad(key, value, "inductive|transductive")),
                }
            }
            "k" => t.k = parse_num(key, value, "positive integer")?,
            "m" => t.m = parse_num(key, value, "non-negative integer")?,
            "d" => t.d = parse_num(key, value, "positive integer")?,
            "d_model" => t.d_model = parse_num(key, value, "positive integer")?,
            "heads" => t.heads = parse_num(key, value, "positive integer")?,
            "layers" => t.layers = parse_num(key, value, "positive integer")?,
            "d_ff" => t.d_ff = parse_num(key, value, "positive integer")?,
            "agg" => {
                t.agg = match value {
                    "concat" => AggMode::Concat,
                    "mean" => AggMode::Mean,
                    _ => return Err(bad(key, value, "concat|mean")),
                }
            }
            "merge_mode" => {
                t.merge_mode = match value {
                    "union" => MergeMode::Union,
                    "intersection" => MergeMode::Intersection,
                    _ => return Err(bad(key, value, "union|intersection")),
                }
            }
            "gamma" => t.gamma = parse_num(key, value, "float")?,
            "lr" => t.lr = parse_num(key, value, "float")?,
            "epochs" => t.epochs = parse_num(key, value, "positive integer")?,
            "batch_size" => t.batch_size = parse_num(key, value, "positive integer")?,
            "seed" => t.seed = parse_num(key, value, "u64")?,
            "eval_negatives" => t.eval_negatives = parse_num(key, value, "positive integer")?,
            "attn_scale" => {
                t.attn_scale = match value {
                    "dim" => AttnScale::Dim,
                    "sqrt_dim" => AttnScale::SqrtDim,
                    _ => return Err(bad(key, value, "dim|sqrt_dim")),
                }
            }
            "ablation" => {
                t.bias_mode = match value {
                    "none" => BiasMode::Connection,
                    "vanilla" => BiasMode::Vanilla,
                    _ => return Err(bad(key, value, "none|vanilla")),
                }
            }
            "neighbor_sampling" => {
                t.neighbor_sampling = match value {
                    "deterministic" => NeighborSampling::Deterministic,
                    "seeded" => NeighborSampling::Seeded,
                    _ => return Err(bad(key, value, "deterministic|seeded")),
                }
            }
            "eval_filter" => {
                t.eval_filter = match value {
                    "on" => true,
                    "off" => false,
                    _ => return Err(bad(key, value, "on|off")),
                }
            }
            "negatives_per_positive" => {
                t.negatives_per_positive = parse_num(key, value, "positive integer")?
            }
            "patience" => t.patience = parse_num(key, value, "positive integer")?,
            "train_dir" => self.paths.train_dir = Some(PathBuf::from(value)),
            "test_dir" => self.paths.test_dir = Some(PathBuf::from(value)),
            "data_dir" => self.paths.data_dir = Some(PathBuf::from(value)),
            "out_dir" => self.paths.out_dir = Some(PathBuf::from(value)),
            _ => return Err(ConfigFileError::UnknownKey(key.to_owned())),
        }
        Ok(())
    }

    /// Parses a config file: one `key = value` per line, `#` comments and
    /// blank lines ignored.
    pub fn apply_file(&mut self, text: &str) -> Result<(), ConfigFileError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigFileError::Syntax {
                    line: idx + 1,
                    text: raw.to_owned(),
                });
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }
}
