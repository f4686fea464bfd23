//! The target network: a coordinate MLP `t -> amplitude`.
//!
//! A scalar time `t` (nominally in `[0, 1]`) is expanded into `2L` sinusoidal
//! features, then passed through ReLU hidden layers and a final linear unit.
//! All weights live in one flat vector laid out layer by layer, input to
//! output, each layer as a row-major `[out x in]` matrix followed by its bias.

use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::{Error, Result};

pub const INR_MAGIC: &[u8; 4] = b"HSIR";
pub const INR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetNetConfig {
    pub embedding_size: usize,
    pub hidden_widths: Vec<usize>,
}

impl TargetNetConfig {
    pub fn new(embedding_size: usize, hidden_widths: Vec<usize>) -> Result<Self> {
        let cfg = Self {
            embedding_size,
            hidden_widths,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_size == 0 {
            return Err(Error::InvalidConfig("embedding size must be >= 1".into()));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::InvalidConfig(
                "target network needs at least one hidden layer of positive width".into(),
            ));
        }
        Ok(())
    }

    /// 4 x 64 hidden layers, L = 16.
    pub fn small() -> Self {
        Self {
            embedding_size: 16,
            hidden_widths: vec![64; 4],
        }
    }

    /// 4 x 256 hidden layers, L = 16.
    pub fn base() -> Self {
        Self {
            embedding_size: 16,
            hidden_widths: vec![256; 4],
        }
    }

    /// 6 x 384 hidden layers, L = 16.
    pub fn large() -> Self {
        Self {
            embedding_size: 16,
            hidden_widths: vec![384; 6],
        }
    }

    pub fn input_dim(&self) -> usize {
        2 * self.embedding_size
    }

    /// `(inputs, outputs)` of each affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut prev = self.input_dim();
        for &w in &self.hidden_widths {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, 1));
        dims
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }
}

pub fn param_count(config: &TargetNetConfig) -> usize {
    config.layer_dims().iter().map(|(i, o)| i * o + o).sum()
}

/// `[sin(2^0 pi t), cos(2^0 pi t), ..., sin(2^(L-1) pi t), cos(2^(L-1) pi t)]`
pub fn positional_embedding(t: f64, embedding_size: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * embedding_size);
    embed_into(t, embedding_size, &mut out);
    out
}

fn embed_into(t: f64, embedding_size: usize, out: &mut Vec<f64>) {
    let mut freq = PI;
    for _ in 0..embedding_size {
        let (s, c) = (freq * t).sin_cos();
        out.push(s);
        out.push(c);
        freq *= 2.0;
    }
}

/// Time coordinates for rendering, with the nominal sampling rate they stand for.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateGrid {
    times: Vec<f64>,
    nominal_rate: u32,
}

impl CoordinateGrid {
    pub fn new(times: Vec<f64>, nominal_rate: u32) -> Result<Self> {
        if times.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::InvalidRange("grid times must be non-decreasing".into()));
        }
        Ok(Self {
            times,
            nominal_rate,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn nominal_rate(&self) -> u32 {
        self.nominal_rate
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Uniform grid `t_i = i / (n - 1)` covering `[0, 1]` end to end.
pub fn make_grid(num_samples: usize, rate: u32) -> Result<CoordinateGrid> {
    if num_samples < 2 {
        return Err(Error::TooFewSamples(num_samples));
    }
    let last = (num_samples - 1) as f64;
    let times = (0..num_samples).map(|i| i as f64 / last).collect();
    Ok(CoordinateGrid {
        times,
        nominal_rate: rate,
    })
}

/// A target network configuration together with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNetParams {
    config: TargetNetConfig,
    theta: Vec<f64>,
}

impl TargetNetParams {
    pub fn new(config: TargetNetConfig, theta: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_count();
        if theta.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParams);
        }
        Ok(Self { config, theta })
    }

    pub fn zeros(config: TargetNetConfig) -> Result<Self> {
        let n = config.param_count();
        Self::new(config, vec![0.0; n])
    }

    pub fn config(&self) -> &TargetNetConfig {
        &self.config
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_theta(self) -> Vec<f64> {
        self.theta
    }

    /// Evaluates the network at a single coordinate. Coordinates outside
    /// `[0, 1]` are extrapolated, not clamped.
    pub fn forward(&self, t: f64) -> f64 {
        let features = positional_embedding(t, self.config.embedding_size);
        evaluate(&self.config, &self.theta, &features, 1).pop().unwrap()
    }

    /// Evaluates every grid coordinate; the result carries the grid's rate.
    pub fn render(&self, grid: &CoordinateGrid) -> Result<AudioBuffer> {
        if grid.is_empty() {
            return Err(Error::EmptySignal);
        }
        let features = Embedding::new(grid.times(), self.config.embedding_size);
        let out = evaluate(&self.config, &self.theta, &features.data, grid.len());
        AudioBuffer::new(out, grid.nominal_rate())
            .map_err(|_| Error::InvalidRange("rendered output is not finite".into()))
    }

    /// Serialises to the `HSIR` weight-file format. Weights are stored as f32.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(INR_MAGIC)?;
        out.write_all(&INR_FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.config.embedding_size as u32).to_le_bytes())?;
        out.write_all(&(self.config.hidden_widths.len() as u32).to_le_bytes())?;
        for &w in &self.config.hidden_widths {
            out.write_all(&(w as u32).to_le_bytes())?;
        }
        let mut bytes = Vec::with_capacity(self.theta.len() * 4);
        for &v in &self.theta {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to a Vec cannot fail");
        v
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != INR_MAGIC {
            return Err(Error::BadMagic {
                expected: "HSIR".into(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let version = r.u32()?;
        if version != INR_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: INR_FORMAT_VERSION,
                found: version,
            });
        }
        let embedding_size = r.u32()? as usize;
        let layers = r.u32()? as usize;
        // widths must be present before the count can be trusted
        if layers > bytes.len() / 4 {
            return Err(Error::LengthMismatch {
                expected: layers * 4,
                actual: bytes.len().saturating_sub(r.pos),
            });
        }
        let hidden_widths = (0..layers)
            .map(|_| r.u32().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let config = TargetNetConfig {
            embedding_size,
            hidden_widths,
        };
        config
            .validate()
            .map_err(|e| Error::CorruptHeader(e.to_string()))?;
        let count = config.param_count();
        let remaining = bytes.len() - r.pos;
        if remaining != count * 4 {
            return Err(Error::LengthMismatch {
                expected: count * 4,
                actual: remaining,
            });
        }
        let theta = r
            .take(count * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::new(config, theta)
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::LengthMismatch {
                expected: end,
                actual: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Positional features for a set of coordinates, `[n x 2L]`.
#[derive(Debug, Clone)]
pub(crate) struct Embedding {
    pub data: Vec<f64>,
}

impl Embedding {
    pub fn new(times: &[f64], embedding_size: usize) -> Self {
        let mut data = Vec::with_capacity(times.len() * 2 * embedding_size);
        for &t in times {
            embed_into(t, embedding_size, &mut data);
        }
        Self { data }
    }
}

fn layer_slices<'a>(theta: &'a [f64], dims: &[(usize, usize)]) -> Vec<(&'a [f64], &'a [f64])> {
    let mut off = 0;
    dims.iter()
        .map(|&(i, o)| {
            let w = &theta[off..off + i * o];
            let b = &theta[off + i * o..off + i * o + o];
            off += i * o + o;
            (w, b)
        })
        .collect()
}

fn evaluate(config: &TargetNetConfig, theta: &[f64], features: &[f64], n: usize) -> Vec<f64> {
    render_forward(config, theta, features, n).output
}

/// Activations kept for the backward pass; `pre[k]` are layer-k pre-activations.
pub(crate) struct RenderTrace {
    pub pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl RenderTrace {
    /// Sign pattern of every hidden pre-activation. Two parameter settings
    /// with different patterns straddle a ReLU kink.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.pre.iter().flatten().map(|&v| v > 0.0).collect()
    }
}

pub(crate) fn render_forward(
    config: &TargetNetConfig,
    theta: &[f64],
    features: &[f64],
    n: usize,
) -> RenderTrace {
    let dims = config.layer_dims();
    let layers = layer_slices(theta, &dims);
    let hidden = layers.len() - 1;
    let mut pre = Vec::with_capacity(hidden);
    let mut act: Vec<f64>;
    let mut input: &[f64] = features;
    let mut owned;
    for (k, &(w, b)) in layers.iter().enumerate().take(hidden) {
        let (i, o) = dims[k];
        let z = crate::nn::dense_forward(w, b, &input[..n * i], i, o);
        act = z.iter().map(|&v| v.max(0.0)).collect();
        pre.push(z);
        owned = act;
        input = &owned;
    }
    let (w, b) = layers[hidden];
    let (i, _) = dims[hidden];
    let output = crate::nn::dense_forward(w, b, &input[..n * i], i, 1);
    RenderTrace { pre, output }
}

/// Gradient of `sum_n dout[n] * out[n]` with respect to `theta`.
pub(crate) fn render_backward(
    config: &TargetNetConfig,
    theta: &[f64],
    features: &[f64],
    trace: &RenderTrace,
    dout: &[f64],
) -> Vec<f64> {
    let dims = config.layer_dims();
    let layers = layer_slices(theta, &dims);
    let hidden = layers.len() - 1;
    let mut dtheta = vec![0.0; theta.len()];
    let mut offsets = Vec::with_capacity(dims.len());
    let mut off = 0;
    for &(i, o) in &dims {
        offsets.push(off);
        off += i * o + o;
    }

    let relu = |z: &[f64]| z.iter().map(|&v| v.max(0.0)).collect::<Vec<f64>>();
    let mut grad = dout.to_vec();
    for k in (0..=hidden).rev() {
        let (i, o) = dims[k];
        let input_owned;
        let input: &[f64] = if k == 0 {
            features
        } else {
            input_owned = relu(&trace.pre[k - 1]);
            &input_owned
        };
        let (dw, rest) = dtheta[offsets[k]..].split_at_mut(i * o);
        let db = &mut rest[..o];
        let dx = crate::nn::dense_backward(layers[k].0, input, &grad, i, o, dw, db, k > 0);
        if let Some(mut dx) = dx {
            for (d, &z) in dx.iter_mut().zip(&trace.pre[k - 1]) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
            grad = dx;
        }
    }
    dtheta
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn embedding_examples() {
        assert!(close(&positional_embedding(0.0, 2), &[0.0, 1.0, 0.0, 1.0], 1e-15));
        assert!(close(&positional_embedding(0.5, 2), &[1.0, 0.0, 0.0, -1.0], 1e-15));
        assert!(close(&positional_embedding(1.0, 1), &[0.0, -1.0], 1e-15));
    }

    #[test]
    fn paper_sizes() {
        assert_eq!(TargetNetConfig::base().param_count(), 206_081);
        assert_eq!(TargetNetConfig::small().param_count(), 14_657);
        assert_eq!(TargetNetConfig::large().param_count(), 752_257);
    }

    #[test]
    fn zero_and_constant_networks() {
        let cfg = TargetNetConfig::new(3, vec![4, 5]).unwrap();
        let mut p = TargetNetParams::zeros(cfg.clone()).unwrap();
        assert_eq!(p.forward(0.3), 0.0);
        let n = cfg.param_count();
        let mut theta = vec![0.0; n];
        theta[n - 1] = 0.3;
        p = TargetNetParams::new(cfg, theta).unwrap();
        for t in [0.0, 0.25, 1.0, 1.7, -0.2] {
            assert_eq!(p.forward(t), 0.3);
        }
    }

    #[test]
    fn tiny_network_against_matrix_oracle() {
        // L = 1, one hidden layer of 2 units, written out by hand.
        let cfg = TargetNetConfig::new(1, vec![2]).unwrap();
        assert_eq!(cfg.param_count(), 2 * 2 + 2 + 2 + 1);
        let theta = vec![0.5, -1.0, 2.0, 0.25, 0.1, -0.3, 1.5, -2.0, 0.05];
        let p = TargetNetParams::new(cfg, theta).unwrap();
        for t in [0.0, 0.1, 0.33, 0.8] {
            let (s, c) = ((PI * t).sin(), (PI * t).cos());
            let h0 = (0.5 * s - 1.0 * c + 0.1f64).max(0.0);
            let h1 = (2.0 * s + 0.25 * c - 0.3f64).max(0.0);
            let want = 1.5 * h0 - 2.0 * h1 + 0.05;
            assert!((p.forward(t) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn render_matches_pointwise_forward() {
        let cfg = TargetNetConfig::new(4, vec![6, 5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = (0..cfg.param_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = TargetNetParams::new(cfg, theta).unwrap();
        let grid = make_grid(37, 8000).unwrap();
        let out = p.render(&grid).unwrap();
        assert_eq!(out.sample_rate(), 8000);
        for (i, &t) in grid.times().iter().enumerate() {
            assert_eq!(out.samples()[i].to_bits(), p.forward(t).to_bits());
        }
    }

    #[test]
    fn grids() {
        assert_eq!(make_grid(2, 100).unwrap().times(), &[0.0, 1.0]);
        assert_eq!(make_grid(3, 100).unwrap().times(), &[0.0, 0.5, 1.0]);
        assert!(matches!(make_grid(1, 100), Err(Error::TooFewSamples(1))));
        let n = crate::audio::resampled_len(32768, 22050, 44100);
        assert_eq!(make_grid(n, 44100).unwrap().len(), 65536);
    }

    #[test]
    fn hsir_round_trip_and_errors() {
        let cfg = TargetNetConfig::new(2, vec![3, 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let theta: Vec<f64> = (0..cfg.param_count())
            .map(|_| rng.gen_range(-1.0f32..1.0) as f64)
            .collect();
        let p = TargetNetParams::new(cfg, theta).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"HSIR");
        let back = TargetNetParams::from_bytes(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_bytes(), bytes);

        assert!(matches!(
            TargetNetParams::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::LengthMismatch { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(TargetNetParams::from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(
            TargetNetParams::from_bytes(&v2),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn non_finite_params_rejected() {
        let cfg = TargetNetConfig::new(1, vec![1]).unwrap();
        let mut theta = vec![0.0; cfg.param_count()];
        theta[2] = f64::NAN;
        assert!(matches!(TargetNetParams::new(cfg, theta), Err(Error::NonFiniteParams)));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cfg = TargetNetConfig::new(2, vec![5, 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let theta: Vec<f64> = (0..cfg.param_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let times: Vec<f64> = (0..9).map(|i| i as f64 / 8.0).collect();
        let emb = Embedding::new(&times, 2);
        let dout: Vec<f64> = (0..9).map(|i| (i as f64 * 0.7).cos()).collect();
        let f = |th: &[f64]| -> f64 {
            render_forward(&cfg, th, &emb.data, 9)
                .output
                .iter()
                .zip(&dout)
                .map(|(a, b)| a * b)
                .sum()
        };
        let trace = render_forward(&cfg, &theta, &emb.data, 9);
        let g = render_backward(&cfg, &theta, &emb.data, &trace, &dout);
        let h = 1e-6;
        for k in 0..theta.len() {
            let mut p = theta.clone();
            p[k] += h;
            let fp = f(&p);
            p[k] -= 2.0 * h;
            let fm = f(&p);
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }
}
