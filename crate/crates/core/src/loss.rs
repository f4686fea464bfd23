//! Reconstruction objective: weighted smooth L1 in the time domain plus a
//! multi-resolution STFT loss (spectral convergence + log-magnitude L1),
//! optionally computed on mel-projected magnitudes.
//!
//! Every term has an analytic gradient with respect to the reconstruction.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioBuffer, MelFilterbank, StftPlan};
use crate::error::check_same_len;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub fft_size: usize,
    pub hop: usize,
    pub win: usize,
}

impl Resolution {
    /// Window equal to the FFT size with 87.5% overlap.
    pub fn with_overlap(fft_size: usize) -> Self {
        Self {
            fft_size,
            hop: fft_size / 8,
            win: fft_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub mel_bins: usize,
    #[serde(default)]
    pub f_min: f64,
    /// Defaults to the Nyquist frequency of the signal.
    #[serde(default)]
    pub f_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LossConfigFile", into = "LossConfigFile")]
pub struct LossConfig {
    pub lambda_sl1: f64,
    pub lambda_stft: f64,
    pub beta: f64,
    pub resolutions: Vec<Resolution>,
    pub mel: Option<MelConfig>,
    pub log_epsilon: f64,
}

/// Flat JSON form of [`LossConfig`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LossConfigFile {
    lambda_sl1: f64,
    lambda_stft: f64,
    beta: f64,
    fft_sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hops: Option<Vec<usize>>,
    #[serde(default)]
    mel_bins: Option<usize>,
    #[serde(default = "default_log_epsilon")]
    log_epsilon: f64,
}

fn default_log_epsilon() -> f64 {
    1e-7
}

impl TryFrom<LossConfigFile> for LossConfig {
    type Error = Error;

    fn try_from(f: LossConfigFile) -> Result<Self> {
        let resolutions = match f.hops {
            Some(hops) => {
                if hops.len() != f.fft_sizes.len() {
                    return Err(Error::InvalidConfig("hops must pair with fft_sizes".into()));
                }
                f.fft_sizes
                    .iter()
                    .zip(hops)
                    .map(|(&fft_size, hop)| Resolution { fft_size, hop, win: fft_size })
                    .collect()
            }
            None => f.fft_sizes.iter().map(|&n| Resolution::with_overlap(n)).collect(),
        };
        let cfg = LossConfig {
            lambda_sl1: f.lambda_sl1,
            lambda_stft: f.lambda_stft,
            beta: f.beta,
            resolutions,
            mel: f.mel_bins.filter(|&b| b > 0).map(|mel_bins| MelConfig {
                mel_bins,
                f_min: 0.0,
                f_max: None,
            }),
            log_epsilon: f.log_epsilon,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<LossConfig> for LossConfigFile {
    fn from(c: LossConfig) -> Self {
        let default_hops = c.resolutions.iter().all(|r| r.hop == r.fft_size / 8);
        Self {
            lambda_sl1: c.lambda_sl1,
            lambda_stft: c.lambda_stft,
            beta: c.beta,
            fft_sizes: c.resolutions.iter().map(|r| r.fft_size).collect(),
            hops: (!default_hops).then(|| c.resolutions.iter().map(|r| r.hop).collect()),
            mel_bins: c.mel.map(|m| m.mel_bins),
            log_epsilon: c.log_epsilon,
        }
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::preset("l1_melstft").expect("built-in preset")
    }
}

impl LossConfig {
    pub const PRESETS: [&'static str; 4] = ["l1_melstft", "l1_stft", "stft_only", "melstft_only"];

    /// The four loss variants: L1+MelSTFT (default), L1+STFT, STFT only and
    /// MelSTFT only.
    pub fn preset(name: &str) -> Result<Self> {
        let (lambda_sl1, mel) = match name {
            "l1_melstft" => (1.0, true),
            "l1_stft" => (1.0, false),
            "stft_only" => (0.0, false),
            "melstft_only" => (0.0, true),
            other => return Err(Error::UnknownPreset(other.to_string())),
        };
        let ffts: &[usize] = if mel {
            &[512, 1024, 2048]
        } else {
            &[128, 256, 512, 1024, 2048]
        };
        Ok(Self {
            lambda_sl1,
            lambda_stft: 1.0,
            beta: 0.1,
            resolutions: ffts.iter().map(|&n| Resolution::with_overlap(n)).collect(),
            mel: mel.then_some(MelConfig {
                mel_bins: 128,
                f_min: 0.0,
                f_max: None,
            }),
            log_epsilon: default_log_epsilon(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_sl1 >= 0.0 && self.lambda_stft >= 0.0) {
            return Err(Error::InvalidConfig("loss weights must be >= 0".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidConfig("smooth L1 beta must be > 0".into()));
        }
        if !(self.log_epsilon > 0.0) {
            return Err(Error::InvalidConfig("log_epsilon must be > 0".into()));
        }
        if self.resolutions.is_empty() {
            return Err(Error::InvalidConfig("at least one STFT resolution is required".into()));
        }
        for r in &self.resolutions {
            StftPlan::with_window(r.fft_size, r.hop, r.win)?;
        }
        Ok(())
    }
}

/// Weighted total and its unweighted parts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub sl1: f64,
    pub stft: f64,
}

impl LossParts {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.sl1.is_finite() && self.stft.is_finite()
    }
}

/// Compensated (Neumaier) summation. Loss values are long reductions of
/// terms of similar sign; plain summation leaves tens of ulps of noise.
fn accurate_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Mean smooth L1 (Huber-style) loss.
pub fn smooth_l1(x: &AudioBuffer, xhat: &AudioBuffer, beta: f64) -> Result<f64> {
    check_same_len(x.len(), xhat.len())?;
    Ok(smooth_l1_with_grad(x.samples(), xhat.samples(), beta, false).0)
}

fn smooth_l1_with_grad(x: &[f64], xhat: &[f64], beta: f64, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let n = x.len().max(1) as f64;
    let mut grad = want_grad.then(|| Vec::with_capacity(x.len()));
    let sum = accurate_sum(x.iter().zip(xhat).map(|(&a, &b)| {
        let d = a - b;
        let (v, g) = if d.abs() < beta {
            (0.5 * d * d / beta, d / beta)
        } else {
            (d.abs() - 0.5 * beta, d.signum())
        };
        if let Some(gr) = grad.as_mut() {
            gr.push(-g / n);
        }
        v
    }));
    (sum / n, grad)
}

/// Precomputed STFT plans and mel filterbanks for one loss configuration at
/// one sampling rate.
#[derive(Debug, Clone)]
pub struct LossEngine {
    config: LossConfig,
    sample_rate: u32,
    plans: Vec<StftPlan>,
    mels: Vec<Option<MelFilterbank>>,
}

impl LossEngine {
    pub fn new(config: LossConfig, sample_rate: u32) -> Result<Self> {
        config.validate()?;
        let mut plans = Vec::new();
        let mut mels = Vec::new();
        for r in &config.resolutions {
            plans.push(StftPlan::with_window(r.fft_size, r.hop, r.win)?);
            mels.push(match &config.mel {
                Some(m) => Some(MelFilterbank::new(
                    m.mel_bins,
                    r.fft_size,
                    sample_rate,
                    m.f_min,
                    m.f_max.unwrap_or(sample_rate as f64 / 2.0),
                )?),
                None => None,
            });
        }
        Ok(Self {
            config,
            sample_rate,
            plans,
            mels,
        })
    }

    pub fn config(&self) -> &LossConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn resolutions(&self) -> usize {
        self.plans.len()
    }

    /// Single-resolution STFT loss, `L_sc + L_mag`.
    pub fn stft_single(&self, index: usize, x: &[f64], xhat: &[f64]) -> Result<f64> {
        check_same_len(x.len(), xhat.len())?;
        Ok(self.stft_single_impl(index, x, xhat, false)?.0)
    }

    fn stft_single_impl(
        &self,
        index: usize,
        x: &[f64],
        xhat: &[f64],
        want_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>)> {
        let plan = &self.plans[index];
        let mel = self.mels[index].as_ref();
        let eps = self.config.log_epsilon;

        let reference = plan.magnitudes(x)?;
        let reference = match mel {
            Some(fb) => fb.apply(&reference),
            None => reference,
        };
        let spec = plan.spectrum(xhat)?;
        let mags: Vec<f64> = spec.iter().map(|c| c.norm_sqr().sqrt()).collect();
        let estimate = match mel {
            Some(fb) => fb.apply(&mags),
            None => mags,
        };

        let ref_norm = accurate_sum(reference.iter().map(|v| v * v)).sqrt();
        if ref_norm == 0.0 {
            return Err(Error::SilentReference);
        }
        let diff_norm = accurate_sum(reference.iter().zip(&estimate).map(|(a, b)| (a - b) * (a - b))).sqrt();
        let count = reference.len() as f64;
        let log_l1 = accurate_sum(
            reference
                .iter()
                .zip(&estimate)
                .map(|(a, b)| ((a + eps).ln() - (b + eps).ln()).abs()),
        ) / count;
        let value = diff_norm / ref_norm + log_l1;
        if !want_grad {
            return Ok((value, None));
        }

        let mut d_est = Vec::with_capacity(estimate.len());
        for (&a, &b) in reference.iter().zip(&estimate) {
            let sc = if diff_norm > 0.0 {
                -(a - b) / (diff_norm * ref_norm)
            } else {
                0.0
            };
            let s = ((a + eps).ln() - (b + eps).ln()).signum();
            let lm = if (a + eps).ln() == (b + eps).ln() { 0.0 } else { -s / ((b + eps) * count) };
            d_est.push(sc + lm);
        }
        let d_mag = match mel {
            Some(fb) => fb.apply_transpose(&d_est),
            None => d_est,
        };
        let d_spec: Vec<Complex64> = spec
            .iter()
            .zip(&d_mag)
            .map(|(c, &g)| {
                // d|c| = c/|c|; an exactly zero bin takes the subgradient 0
                let m = c.norm_sqr().sqrt();
                if m > 0.0 {
                    Complex64::new(g * c.re / m, g * c.im / m)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        Ok((value, Some(plan.backward(xhat.len(), &d_spec))))
    }

    /// Signs that locate the points where the loss is not smooth: the
    /// smooth-L1 branch of each sample, each real-valued bin (DC, Nyquist)
    /// of the estimate, where `|X|` has a corner, and each
    /// `log A - log B` difference, where the L1 has one. Two inputs with
    /// equal signatures lie on the same smooth piece, apart from complex
    /// bins passing through zero.
    pub(crate) fn kink_signature(&self, x: &[f64], xhat: &[f64]) -> Result<Vec<bool>> {
        let mut sig = Vec::new();
        if self.config.lambda_sl1 > 0.0 {
            sig.extend(x.iter().zip(xhat).map(|(a, b)| (a - b).abs() < self.config.beta));
        }
        if self.config.lambda_stft == 0.0 {
            return Ok(sig);
        }
        let eps = self.config.log_epsilon;
        for (plan, mel) in self.plans.iter().zip(&self.mels) {
            let spec = plan.spectrum(xhat)?;
            let bins = plan.bins();
            for (k, c) in spec.iter().enumerate() {
                if k % bins == 0 || k % bins == bins - 1 {
                    sig.push(c.re > 0.0);
                }
            }
            let mags: Vec<f64> = spec.iter().map(|c| c.norm_sqr().sqrt()).collect();
            let reference = plan.magnitudes(x)?;
            let (a, b) = match mel {
                Some(fb) => (fb.apply(&reference), fb.apply(&mags)),
                None => (reference, mags),
            };
            sig.extend(a.iter().zip(&b).map(|(a, b)| (a + eps).ln() > (b + eps).ln()));
        }
        Ok(sig)
    }

    /// Complex spectra of `xhat` at every resolution, concatenated.
    pub(crate) fn spectra(&self, xhat: &[f64]) -> Result<Vec<Complex64>> {
        let mut out = Vec::new();
        for plan in &self.plans {
            out.extend(plan.spectrum(xhat)?);
        }
        Ok(out)
    }

    /// Mean of the single-resolution losses.
    pub fn multires(&self, x: &[f64], xhat: &[f64]) -> Result<f64> {
        check_same_len(x.len(), xhat.len())?;
        Ok(self.multires_impl(x, xhat, false)?.0)
    }

    fn multires_impl(&self, x: &[f64], xhat: &[f64], want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let r = self.plans.len() as f64;
        let mut sum = 0.0;
        let mut grad = want_grad.then(|| vec![0.0; xhat.len()]);
        for i in 0..self.plans.len() {
            let (v, g) = self.stft_single_impl(i, x, xhat, want_grad)?;
            sum += v;
            if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b / r;
                }
            }
        }
        Ok((sum / r, grad))
    }

    pub fn total(&self, x: &[f64], xhat: &[f64]) -> Result<LossParts> {
        Ok(self.total_impl(x, xhat, false)?.0)
    }

    /// Loss parts and the gradient of the weighted total w.r.t. `xhat`.
    pub fn total_with_grad(&self, x: &[f64], xhat: &[f64]) -> Result<(LossParts, Vec<f64>)> {
        let (parts, g) = self.total_impl(x, xhat, true)?;
        Ok((parts, g.expect("gradient requested")))
    }

    fn total_impl(&self, x: &[f64], xhat: &[f64], want_grad: bool) -> Result<(LossParts, Option<Vec<f64>>)> {
        check_same_len(x.len(), xhat.len())?;
        let c = &self.config;
        let mut grad = want_grad.then(|| vec![0.0; xhat.len()]);
        let mut parts = LossParts::default();
        if c.lambda_sl1 > 0.0 {
            let (v, g) = smooth_l1_with_grad(x, xhat, c.beta, want_grad);
            parts.sl1 = v;
            if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += c.lambda_sl1 * b;
                }
            }
        }
        if c.lambda_stft > 0.0 {
            let (v, g) = self.multires_impl(x, xhat, want_grad)?;
            parts.stft = v;
            if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += c.lambda_stft * b;
                }
            }
        }
        parts.total = c.lambda_sl1 * parts.sl1 + c.lambda_stft * parts.stft;
        Ok((parts, grad))
    }
}

fn check_rates(x: &AudioBuffer, xhat: &AudioBuffer) -> Result<()> {
    check_same_len(x.len(), xhat.len())?;
    if x.sample_rate() != xhat.sample_rate() {
        return Err(Error::InvalidRange(format!(
            "sample rates differ: {} vs {}",
            x.sample_rate(),
            xhat.sample_rate()
        )));
    }
    Ok(())
}

/// STFT loss at one resolution, with optional mel projection.
pub fn stft_loss_single(
    x: &AudioBuffer,
    xhat: &AudioBuffer,
    resolution: Resolution,
    mel: Option<&MelConfig>,
) -> Result<f64> {
    check_rates(x, xhat)?;
    let cfg = LossConfig {
        lambda_sl1: 0.0,
        lambda_stft: 1.0,
        beta: 0.1,
        resolutions: vec![resolution],
        mel: mel.cloned(),
        log_epsilon: default_log_epsilon(),
    };
    LossEngine::new(cfg, x.sample_rate())?.stft_single(0, x.samples(), xhat.samples())
}

pub fn multires_stft_loss(x: &AudioBuffer, xhat: &AudioBuffer, config: &LossConfig) -> Result<f64> {
    check_rates(x, xhat)?;
    LossEngine::new(config.clone(), x.sample_rate())?.multires(x.samples(), xhat.samples())
}

/// `lambda_sl1 * smooth_l1 + lambda_stft * multires_stft`; zero-weighted
/// terms are skipped entirely.
pub fn total_loss(x: &AudioBuffer, xhat: &AudioBuffer, config: &LossConfig) -> Result<LossParts> {
    check_rates(x, xhat)?;
    LossEngine::new(config.clone(), x.sample_rate())?.total(x.samples(), xhat.samples())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buf(v: Vec<f64>) -> AudioBuffer {
        AudioBuffer::new(v, 16000).unwrap()
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()
    }

    #[test]
    fn smooth_l1_cases() {
        let x = buf(vec![0.3; 10]);
        assert_eq!(smooth_l1(&x, &x, 0.1).unwrap(), 0.0);
        let y = buf(vec![0.25; 10]);
        assert!((smooth_l1(&x, &y, 0.1).unwrap() - 0.0125).abs() < 1e-12);
        let z = buf(vec![0.1; 10]);
        assert!((smooth_l1(&x, &z, 0.1).unwrap() - 0.15).abs() < 1e-12);
        assert!(matches!(
            smooth_l1(&x, &buf(vec![0.0; 3]), 0.1),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn smooth_l1_continuous_at_beta() {
        let beta = 0.1;
        for d in [beta, -beta] {
            let quad = 0.5 * d * d / beta;
            let lin = f64::abs(d) - 0.5 * beta;
            assert!((quad - lin).abs() < 1e-12);
            let v = smooth_l1(&buf(vec![d]), &buf(vec![0.0]), beta).unwrap();
            assert!((v - 0.5 * beta).abs() < 1e-12);
        }
    }

    #[test]
    fn stft_loss_identity_and_silence() {
        let x = buf(noise(1024, 1));
        let r = Resolution::with_overlap(256);
        assert!(stft_loss_single(&x, &x, r, None).unwrap() < 1e-9);
        let silent = buf(vec![0.0; 1024]);
        let cfg = LossConfig {
            lambda_sl1: 0.0,
            lambda_stft: 1.0,
            beta: 0.1,
            resolutions: vec![r],
            mel: None,
            log_epsilon: 1e-7,
        };
        let engine = LossEngine::new(cfg, 16000).unwrap();
        let plan = StftPlan::new(256, 32).unwrap();
        let a = plan.magnitudes(x.samples()).unwrap();
        let log_l1: f64 = a.iter().map(|v| ((v + 1e-7f64).ln() - 1e-7f64.ln()).abs()).sum::<f64>() / a.len() as f64;
        let v = engine.stft_single(0, x.samples(), silent.samples()).unwrap();
        assert!((v - (1.0 + log_l1)).abs() < 1e-9);
        assert!(matches!(
            engine.stft_single(0, silent.samples(), x.samples()),
            Err(Error::SilentReference)
        ));
    }

    #[test]
    fn presets() {
        let d = LossConfig::preset("l1_melstft").unwrap();
        assert_eq!(d.beta, 0.1);
        assert_eq!(d.mel.as_ref().unwrap().mel_bins, 128);
        assert_eq!(d.resolutions.iter().map(|r| r.hop).collect::<Vec<_>>(), vec![64, 128, 256]);
        let s = LossConfig::preset("stft_only").unwrap();
        assert_eq!(s.lambda_sl1, 0.0);
        assert_eq!(s.resolutions.len(), 5);
        assert!(s.mel.is_none());
        assert!(matches!(LossConfig::preset("nope"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn json_keys() {
        let json = serde_json::to_value(LossConfig::default()).unwrap();
        for key in ["lambda_sl1", "lambda_stft", "beta", "fft_sizes", "mel_bins", "log_epsilon"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        let back: LossConfig = serde_json::from_value(json).unwrap();
        assert_eq!(back, LossConfig::default());
        let bad = serde_json::json!({"lambda_sl1": 1.0, "lambda_stft": 1.0, "beta": 0.1, "fft_sizes": []});
        assert!(serde_json::from_value::<LossConfig>(bad).is_err());
    }

    #[test]
    fn total_loss_weighting() {
        let x = buf(noise(512, 2));
        let y = buf(noise(512, 3));
        let mut cfg = LossConfig::preset("l1_stft").unwrap();
        cfg.lambda_sl1 = 0.0;
        cfg.lambda_stft = 0.0;
        assert_eq!(total_loss(&x, &y, &cfg).unwrap().total, 0.0);

        let c = buf(vec![0.2; 512]);
        let zero = buf(vec![0.0; 512]);
        cfg.lambda_sl1 = 1.0;
        assert!((total_loss(&c, &zero, &cfg).unwrap().total - 0.15).abs() < 1e-12);

        let full = LossConfig::preset("l1_melstft").unwrap();
        let p = total_loss(&x, &y, &full).unwrap();
        assert!((p.total - (p.sl1 + p.stft)).abs() < 1e-12);
    }

    #[test]
    fn multires_is_mean_of_singles() {
        let x = buf(noise(2048, 4));
        let y = buf(noise(2048, 5));
        let cfg = LossConfig::preset("l1_melstft").unwrap();
        let m = multires_stft_loss(&x, &y, &cfg).unwrap();
        let singles: Vec<f64> = cfg
            .resolutions
            .iter()
            .map(|&r| stft_loss_single(&x, &y, r, cfg.mel.as_ref()).unwrap())
            .collect();
        assert!((m - singles.iter().sum::<f64>() / 3.0).abs() < 1e-12);

        let mut rev = cfg.clone();
        rev.resolutions.reverse();
        assert!((multires_stft_loss(&x, &y, &rev).unwrap() - m).abs() < 1e-12);
    }
}
