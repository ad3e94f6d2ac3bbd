//! Run configuration files.
//!
//! Each command reads one flat JSON object. Unknown keys are rejected, and
//! relative paths are resolved against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use dpo_lab::corpus::{AspectWeights, GeneratorConfig, LoadOptions};
use dpo_lab::losses::LossVariant;
use dpo_lab::noise::{NoiseConfig, NoiseKind};
use dpo_lab::trainer::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

fn default_eval_fraction() -> f64 {
    0.2
}
fn default_vocab() -> usize {
    32
}
fn default_beta() -> f64 {
    0.5
}
fn default_learning_rate() -> f64 {
    0.1
}
fn default_batch_size() -> usize {
    32
}
fn default_iterations() -> usize {
    2000
}
fn default_eval_every() -> usize {
    100
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_num_pairs() -> usize {
    2000
}
fn default_quality_gap() -> f64 {
    2.0
}

/// Configuration for `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub label: String,
    /// Dataset in the corpus JSONL format.
    pub dataset: PathBuf,
    /// Separate eval set. When absent, the tail of `dataset` is held out.
    #[serde(default)]
    pub eval_dataset: Option<PathBuf>,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default)]
    pub aspect_weights: Option<[f64; 5]>,
    /// Reference policy checkpoint. Uniform when absent.
    #[serde(default)]
    pub reference: Option<PathBuf>,
    pub variant: LossVariant,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train_noise: NoiseKind,
    #[serde(default)]
    pub train_flip_rate: f64,
    /// Defaults to `seed + 1`.
    #[serde(default)]
    pub train_noise_seed: Option<u64>,
    #[serde(default)]
    pub eval_noise: NoiseKind,
    #[serde(default)]
    pub eval_flip_rate: f64,
    /// Defaults to `seed + 2`.
    #[serde(default)]
    pub eval_noise_seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut config: RunConfig = read_json(path)?;
        let base = base_dir(path);
        config.dataset = base.join(&config.dataset);
        config.eval_dataset = config.eval_dataset.map(|p| base.join(p));
        config.reference = config.reference.map(|p| base.join(p));
        config.output_dir = base.join(&config.output_dir);
        Ok(config)
    }

    pub fn load_options(&self) -> Result<LoadOptions, CliError> {
        load_options(self.vocab_size, self.aspect_weights)
    }

    pub fn train_noise_seed(&self) -> u64 {
        self.train_noise_seed.unwrap_or(self.seed.wrapping_add(1))
    }

    pub fn eval_noise_seed(&self) -> u64 {
        self.eval_noise_seed.unwrap_or(self.seed.wrapping_add(2))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            variant: self.variant,
            beta: self.beta,
            epsilon: self.epsilon,
            gamma: self.gamma,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            iterations: self.iterations,
            eval_every: self.eval_every,
            seed: self.seed,
            train_noise: NoiseConfig {
                kind: self.train_noise,
                gamma: self.train_flip_rate,
                seed: self.train_noise_seed(),
            },
            eval_noise: NoiseConfig {
                kind: self.eval_noise,
                gamma: self.eval_flip_rate,
                seed: self.eval_noise_seed(),
            },
        }
    }
}

/// Configuration for `matrix`. Without `dataset`, a synthetic set is
/// generated from `vocab_size`, `num_pairs`, `quality_gap` and `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default)]
    pub aspect_weights: Option<[f64; 5]>,
    #[serde(default = "default_num_pairs")]
    pub num_pairs: usize,
    #[serde(default = "default_quality_gap")]
    pub quality_gap: f64,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to `seed + 2`.
    #[serde(default)]
    pub eval_noise_seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every matrix field has a default")
    }
}

impl MatrixConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut config: MatrixConfig = read_json(path)?;
        let base = base_dir(path);
        config.dataset = config.dataset.map(|p| base.join(p));
        config.output_dir = base.join(&config.output_dir);
        Ok(config)
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            vocab_size: self.vocab_size,
            num_pairs: self.num_pairs,
            quality_gap: self.quality_gap,
            seed: self.seed,
            ..GeneratorConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            variant: LossVariant::Dpo,
            beta: self.beta,
            epsilon: 0.0,
            gamma: 0.0,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            iterations: self.iterations,
            eval_every: self.eval_every,
            seed: self.seed,
            train_noise: NoiseConfig::none(),
            eval_noise: NoiseConfig::none(),
        }
    }

    pub fn eval_noise_seed(&self) -> u64 {
        self.eval_noise_seed.unwrap_or(self.seed.wrapping_add(2))
    }
}

pub fn load_generator_config(path: &Path) -> Result<GeneratorConfig, CliError> {
    read_json(path)
}

pub(crate) fn load_options(vocab_size: usize, weights: Option<[f64; 5]>) -> Result<LoadOptions, CliError> {
    let mut options = LoadOptions::new(vocab_size);
    if let Some(w) = weights {
        options.aspect_weights = AspectWeights::new(w)?;
    }
    Ok(options)
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
