use std::io::Write;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::AudioBuffer;
use crate::{Error, Result};

/// Periodic Hann window of length `len`.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
        .collect()
}

/// Maps an index of the centre-padded signal back into `0..n` by mirror
/// reflection (edge sample not repeated). Handles pads longer than the signal.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// A reusable short-time Fourier transform configuration.
///
/// Frames are centred: the signal is reflect-padded by `fft_size / 2` on each
/// side and frame `f` starts at `f * hop` in the padded signal, giving
/// `1 + n / hop` frames for an `n`-sample input.
#[derive(Clone)]
pub struct StftPlan {
    fft_size: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan")
            .field("fft_size", &self.fft_size)
            .field("hop", &self.hop)
            .finish()
    }
}

impl StftPlan {
    /// Plan with a full-length Hann window.
    pub fn new(fft_size: usize, hop: usize) -> Result<Self> {
        Self::with_window(fft_size, hop, fft_size)
    }

    /// Plan whose Hann window of length `win` is centred inside the FFT frame.
    pub fn with_window(fft_size: usize, hop: usize, win: usize) -> Result<Self> {
        if fft_size < 2 || !fft_size.is_power_of_two() {
            return Err(Error::InvalidRange(format!(
                "fft size {fft_size} is not a power of two >= 2"
            )));
        }
        if hop == 0 {
            return Err(Error::InvalidRange("hop must be >= 1".into()));
        }
        if win == 0 || win > fft_size {
            return Err(Error::InvalidRange(format!(
                "window length {win} must be in 1..={fft_size}"
            )));
        }
        let mut window = vec![0.0; fft_size];
        let offset = (fft_size - win) / 2;
        window[offset..offset + win].copy_from_slice(&hann_window(win));
        let mut planner = FftPlanner::new();
        Ok(Self {
            fft_size,
            hop,
            window,
            forward: planner.plan_fft_forward(fft_size),
            inverse: planner.plan_fft_inverse(fft_size),
        })
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn frame_count(&self, n: usize) -> usize {
        1 + n / self.hop
    }

    /// One-sided complex spectrum, frame-major `[frames x bins]`.
    pub fn spectrum(&self, x: &[f64]) -> Result<Vec<Complex64>> {
        if x.is_empty() {
            return Err(Error::EmptySignal);
        }
        let n = x.len();
        let half = (self.fft_size / 2) as isize;
        let frames = self.frame_count(n);
        let bins = self.bins();
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_size];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for f in 0..frames {
            let start = (f * self.hop) as isize - half;
            for (j, slot) in buf.iter_mut().enumerate() {
                let v = x[reflect_index(start + j as isize, n)];
                *slot = Complex64::new(v * self.window[j], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            out.extend_from_slice(&buf[..bins]);
        }
        Ok(out)
    }

    /// Magnitude spectrogram `|X|`, frame-major `[frames x bins]`.
    pub fn magnitudes(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.spectrum(x)?.iter().map(|c| c.norm_sqr().sqrt()).collect())
    }

    /// Pulls a gradient on the one-sided spectrum back to the `n` input
    /// samples. `grad[k]` holds `dL/dRe + i dL/dIm` for each frame/bin.
    pub fn backward(&self, n: usize, grad: &[Complex64]) -> Vec<f64> {
        let bins = self.bins();
        let frames = self.frame_count(n);
        debug_assert_eq!(grad.len(), frames * bins);
        let half = (self.fft_size / 2) as isize;
        let mut dx = vec![0.0; n];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_size];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        for f in 0..frames {
            buf[..bins].copy_from_slice(&grad[f * bins..(f + 1) * bins]);
            buf[bins..].fill(Complex64::new(0.0, 0.0));
            // d x_j = Re( sum_k G_k e^{+2 pi i j k / N} ) for re/im = sum x_j (cos, -sin)
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = (f * self.hop) as isize - half;
            for (j, c) in buf.iter().enumerate() {
                dx[reflect_index(start + j as isize, n)] += c.re * self.window[j];
            }
        }
        dx
    }
}

/// Magnitude spectrogram of a buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    magnitudes: Vec<f64>,
    frames: usize,
    fft_size: usize,
    hop: usize,
    sample_rate: u32,
}

impl Spectrogram {
    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let b = self.bins();
        &self.magnitudes[f * b..(f + 1) * b]
    }

    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.magnitudes[frame * self.bins() + bin]
    }

    /// CSV with header `frame,bin,magnitude`, frame-major rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "frame,bin,magnitude")?;
        let bins = self.bins();
        for f in 0..self.frames {
            for b in 0..bins {
                writeln!(out, "{f},{b},{}", self.magnitudes[f * bins + b])?;
            }
        }
        Ok(())
    }
}

/// Centred Hann-window magnitude STFT.
pub fn stft(x: &AudioBuffer, fft_size: usize, hop: usize) -> Result<Spectrogram> {
    let plan = StftPlan::new(fft_size, hop)?;
    let magnitudes = plan.magnitudes(x.samples())?;
    Ok(Spectrogram {
        frames: plan.frame_count(x.len()),
        magnitudes,
        fft_size,
        hop,
        sample_rate: x.sample_rate(),
    })
}
