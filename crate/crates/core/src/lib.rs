//! Hypernetwork-generated implicit neural representations (INRs) for audio.
//!
//! A single hypernetwork maps a raw waveform to the flat weight vector of a
//! small coordinate MLP. That MLP, queried on a time grid, reconstructs the
//! waveform at any sampling rate.
//!
//! Module map:
//! - [`audio`]: buffers, WAV I/O, STFT, mel filterbanks, reference resampler
//! - [`inr`]: the target network (positional embedding + ReLU MLP)
//! - [`hypernet`]: convolutional encoder and fully-connected weight head
//! - [`loss`]: smooth L1 + multi-resolution (mel-)STFT objective
//! - [`metrics`]: MSE, log-spectral distance, SI-SNR and evaluation reports
//! - [`data`]: dataset manifests, augmentations, batch assembly
//! - [`train`]: reverse-mode gradients, AdamW, the training loop, gradcheck
//! - [`config`]: JSON run configuration and built-in presets

pub mod audio;
pub mod config;
pub mod data;
mod error;
pub mod hypernet;
pub mod inr;
pub mod loss;
pub mod metrics;
pub(crate) mod nn;
pub mod train;

pub use error::{Error, Result};
