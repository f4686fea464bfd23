//! Run configuration: the flat JSON file read by `hyperinr train` and the
//! built-in `desk` and `paper` presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::AugmentConfig;
use crate::hypernet::{EncoderConfig, ModelConfig};
use crate::inr::TargetNetConfig;
use crate::loss::{LossConfig, Resolution};
use crate::train::{AdamWConfig, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub sample_rate: u32,
    pub crop_length: usize,
    pub latent_dim: usize,
    pub base_channels: usize,
    pub strides: Vec<usize>,
    pub dilations: Vec<usize>,
    pub head_width: usize,
    pub embedding_size: usize,
    pub hidden_widths: Vec<usize>,
}

impl ArchitectureConfig {
    pub fn model_config(&self) -> Result<ModelConfig> {
        let target = TargetNetConfig::new(self.embedding_size, self.hidden_widths.clone())?;
        let encoder = EncoderConfig {
            base_channels: self.base_channels,
            strides: self.strides.clone(),
            dilations: self.dilations.clone(),
            latent_dim: self.latent_dim,
        };
        let cfg = ModelConfig::new(encoder, self.head_width, target, self.sample_rate)?;
        let hop = cfg.encoder.hop_length();
        if self.crop_length < hop {
            return Err(Error::InvalidConfig(format!(
                "crop_length {} is shorter than the encoder hop {hop}",
                self.crop_length
            )));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    pub loss: LossConfig,
    pub architecture: ArchitectureConfig,
    pub augment: AugmentConfig,
}

impl RunConfig {
    pub const PRESETS: [&'static str; 2] = ["desk", "paper"];

    /// `desk` is a small model that trains in minutes on one CPU core;
    /// `paper` is the full-size recipe.
    pub fn preset(name: &str) -> Result<Self> {
        let adam = AdamWConfig::default();
        let cfg = match name {
            "desk" => {
                let mut loss = LossConfig::preset("l1_stft")?;
                // A small model starts near silence, where a 1e-7 floor makes
                // the log-magnitude term dominate and stall waveform fitting.
                loss.lambda_sl1 = 10.0;
                loss.log_epsilon = 1e-2;
                loss.resolutions = vec![
                    Resolution { fft_size: 128, hop: 16, win: 128 },
                    Resolution { fft_size: 256, hop: 32, win: 256 },
                ];
                Self {
                    steps: 5000,
                    batch_size: 8,
                    lr: 1e-3,
                    beta1: adam.beta1,
                    beta2: adam.beta2,
                    eps: adam.eps,
                    weight_decay: adam.weight_decay,
                    seed: 0,
                    checkpoint_every: 1000,
                    log_every: 100,
                    grad_clip: None,
                    loss,
                    architecture: ArchitectureConfig {
                        sample_rate: 22050,
                        crop_length: 2048,
                        latent_dim: 16,
                        base_channels: 4,
                        strides: vec![2, 4, 8, 8],
                        dilations: vec![1, 3, 9],
                        head_width: 32,
                        embedding_size: 16,
                        hidden_widths: vec![8, 8],
                    },
                    augment: AugmentConfig::default(),
                }
            }
            "paper" => Self {
                steps: 1_250_000,
                batch_size: 16,
                lr: adam.lr,
                beta1: adam.beta1,
                beta2: adam.beta2,
                eps: adam.eps,
                weight_decay: adam.weight_decay,
                seed: 0,
                checkpoint_every: 10_000,
                log_every: 1000,
                grad_clip: None,
                loss: LossConfig::preset("l1_melstft")?,
                architecture: ArchitectureConfig {
                    sample_rate: 22050,
                    crop_length: 32768,
                    latent_dim: 128,
                    base_channels: 32,
                    strides: vec![2, 4, 8, 8],
                    dilations: vec![1, 3, 9],
                    head_width: 256,
                    embedding_size: 16,
                    hidden_widths: vec![256; 4],
                },
                augment: AugmentConfig::default(),
            },
            other => return Err(Error::UnknownPreset(other.to_string())),
        };
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Sets the run seed, which drives initialisation and batch sampling.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.augment.seed = seed;
        self
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        self.architecture.model_config()
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn train_config(&self, threads: usize, checkpoint_dir: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            total_steps: self.steps,
            batch_size: self.batch_size,
            loss: self.loss.clone(),
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            log_every: self.log_every,
            optimizer: self.optimizer(),
            augment: self.augment.clone(),
            grad_clip: self.grad_clip,
            threads: threads.max(1),
            checkpoint_dir,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()?;
        self.train_config(1, None).validate()?;
        self.augment.validate(self.architecture.sample_rate)
    }
}
