use crate::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, peak-normalised, `[mel_bins x fft_bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    weights: Vec<f64>,
    mel_bins: usize,
    fft_bins: usize,
    f_min: f64,
    f_max: f64,
    centers: Vec<f64>,
}

impl MelFilterbank {
    /// Filters peak at mel-equispaced centres between `mel(f_min)` and
    /// `mel(f_max)`. A filter narrower than the FFT bin spacing would cover
    /// no bin at all; such a filter is given weight 1 at the bin nearest its
    /// centre so every row stays non-empty.
    pub fn new(
        mel_bins: usize,
        fft_size: usize,
        sample_rate: u32,
        f_min: f64,
        f_max: f64,
    ) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if mel_bins == 0 {
            return Err(Error::InvalidRange("mel_bins must be >= 1".into()));
        }
        if fft_size < 2 {
            return Err(Error::InvalidRange("fft size must be >= 2".into()));
        }
        if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
            return Err(Error::InvalidRange(format!(
                "need 0 <= f_min < f_max <= {nyquist}, got [{f_min}, {f_max}]"
            )));
        }
        let fft_bins = fft_size / 2 + 1;
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let step = (hi - lo) / (mel_bins + 1) as f64;
        let mut edges: Vec<f64> = (0..mel_bins + 2)
            .map(|i| mel_to_hz(lo + step * i as f64))
            .collect();
        edges[0] = f_min;
        edges[mel_bins + 1] = f_max;

        let mut weights = vec![0.0; mel_bins * fft_bins];
        for r in 0..mel_bins {
            let (left, center, right) = (edges[r], edges[r + 1], edges[r + 2]);
            let row = &mut weights[r * fft_bins..(r + 1) * fft_bins];
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * bin_hz;
                let up = (f - left) / (center - left);
                let down = (right - f) / (right - center);
                *w = up.min(down).max(0.0);
            }
            if row.iter().all(|&w| w == 0.0) {
                let nearest = ((center / bin_hz).round() as usize).min(fft_bins - 1);
                row[nearest] = 1.0;
            }
        }
        Ok(Self {
            weights,
            mel_bins,
            fft_bins,
            f_min,
            f_max,
            centers: edges[1..=mel_bins].to_vec(),
        })
    }

    pub fn mel_bins(&self) -> usize {
        self.mel_bins
    }

    pub fn fft_bins(&self) -> usize {
        self.fft_bins
    }

    pub fn f_min(&self) -> f64 {
        self.f_min
    }

    pub fn f_max(&self) -> f64 {
        self.f_max
    }

    /// Centre frequency of each filter in Hz.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.fft_bins..(r + 1) * self.fft_bins]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Projects a frame-major `[frames x fft_bins]` matrix to `[frames x mel_bins]`.
    pub fn apply(&self, spec: &[f64]) -> Vec<f64> {
        let frames = spec.len() / self.fft_bins;
        let mut out = vec![0.0; frames * self.mel_bins];
        for f in 0..frames {
            let frame = &spec[f * self.fft_bins..(f + 1) * self.fft_bins];
            for r in 0..self.mel_bins {
                out[f * self.mel_bins + r] = self
                    .row(r)
                    .iter()
                    .zip(frame)
                    .map(|(w, s)| w * s)
                    .sum();
            }
        }
        out
    }

    /// Transpose of [`apply`](Self::apply): mel-domain gradient to FFT bins.
    pub fn apply_transpose(&self, grad: &[f64]) -> Vec<f64> {
        let frames = grad.len() / self.mel_bins;
        let mut out = vec![0.0; frames * self.fft_bins];
        for f in 0..frames {
            let dst = &mut out[f * self.fft_bins..(f + 1) * self.fft_bins];
            for r in 0..self.mel_bins {
                let g = grad[f * self.mel_bins + r];
                if g == 0.0 {
                    continue;
                }
                for (d, w) in dst.iter_mut().zip(self.row(r)) {
                    *d += g * w;
                }
            }
        }
        out
    }
}
