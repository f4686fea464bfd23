//! The hypernetwork: waveform -> latent code -> flat target-network weights.
//!
//! The encoder is a causal 1-D convolution stack. Each block runs three
//! residual units (ELU, dilated kernel-3 conv, ELU, 1x1 conv, skip) and then
//! a strided conv that doubles the channel count. A final 1x1 conv maps to the
//! latent width and the frame sequence is mean-pooled into one vector, which
//! makes the latent size independent of input length.
//!
//! The head is six dense layers; the first five use ELU and the last emits
//! the target network's weight vector.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::inr::{TargetNetConfig, TargetNetParams};
use crate::nn::{dense_backward, dense_forward, elu, elu_grad, Conv1d};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HSCK";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const HEAD_LAYERS: usize = 6;
const INPUT_KERNEL: usize = 7;
const RESIDUAL_KERNEL: usize = 3;
/// Scale applied to the last head layer at initialisation.
pub(crate) const HEAD_OUTPUT_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub base_channels: usize,
    pub strides: Vec<usize>,
    pub dilations: Vec<usize>,
    pub latent_dim: usize,
}

impl EncoderConfig {
    /// 32 base channels, strides 2/4/8/8 (512x total), dilations 1/3/9.
    pub fn full(latent_dim: usize) -> Self {
        Self {
            base_channels: 32,
            strides: vec![2, 4, 8, 8],
            dilations: vec![1, 3, 9],
            latent_dim,
        }
    }

    /// Total downsampling factor; also the shortest accepted input.
    pub fn hop_length(&self) -> usize {
        self.strides.iter().product()
    }

    fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidConfig(
                "encoder channels and latent_dim must be >= 1".into(),
            ));
        }
        if self.strides.contains(&0) || self.dilations.contains(&0) {
            return Err(Error::InvalidConfig("strides and dilations must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden_width: usize,
    pub num_layers: usize,
    pub output_dim: usize,
}

impl HeadConfig {
    pub fn for_target(hidden_width: usize, target: &TargetNetConfig) -> Self {
        Self {
            hidden_width,
            num_layers: HEAD_LAYERS,
            output_dim: target.param_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub target: TargetNetConfig,
    /// Sampling rate of the waveforms the model consumes and reconstructs.
    pub sample_rate: u32,
}

impl ModelConfig {
    pub fn new(
        encoder: EncoderConfig,
        head_width: usize,
        target: TargetNetConfig,
        sample_rate: u32,
    ) -> Result<Self> {
        let head = HeadConfig::for_target(head_width, &target);
        let cfg = Self {
            encoder,
            head,
            target,
            sample_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.target.validate()?;
        if self.head.num_layers != HEAD_LAYERS {
            return Err(Error::InvalidConfig(format!(
                "head must have {HEAD_LAYERS} layers, got {}",
                self.head.num_layers
            )));
        }
        if self.head.hidden_width == 0 {
            return Err(Error::InvalidConfig("head width must be >= 1".into()));
        }
        let expected = self.target.param_count();
        if self.head.output_dim != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: self.head.output_dim,
            });
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(())
    }
}

/// Name, shape and offset of one parameter tensor in the flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvSlot {
    conv: Conv1d,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct DenseSlot {
    inputs: usize,
    outputs: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Block {
    units: Vec<(ConvSlot, ConvSlot)>,
    down: ConvSlot,
}

#[derive(Debug, Clone)]
struct Plan {
    input: ConvSlot,
    blocks: Vec<Block>,
    output: ConvSlot,
    head: Vec<DenseSlot>,
    tensors: Vec<TensorInfo>,
    total: usize,
}

impl Plan {
    fn new(cfg: &ModelConfig) -> Self {
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            tensors.push(TensorInfo {
                name,
                shape,
                offset: total,
            });
            total += len;
            total - len
        };
        let conv = |name: &str, c: Conv1d, push: &mut dyn FnMut(String, Vec<usize>) -> usize| {
            let w = push(format!("{name}.weight"), vec![c.out_ch, c.in_ch, c.kernel]);
            let b = push(format!("{name}.bias"), vec![c.out_ch]);
            ConvSlot { conv: c, w, b }
        };

        let enc = &cfg.encoder;
        let mut ch = enc.base_channels;
        let input = conv(
            "encoder.input",
            Conv1d { in_ch: 1, out_ch: ch, kernel: INPUT_KERNEL, stride: 1, dilation: 1 },
            &mut push,
        );
        let mut blocks = Vec::new();
        for (bi, &stride) in enc.strides.iter().enumerate() {
            let mut units = Vec::new();
            for (ui, &d) in enc.dilations.iter().enumerate() {
                let dilated = conv(
                    &format!("encoder.block{bi}.unit{ui}.dilated"),
                    Conv1d { in_ch: ch, out_ch: ch, kernel: RESIDUAL_KERNEL, stride: 1, dilation: d },
                    &mut push,
                );
                let pointwise = conv(
                    &format!("encoder.block{bi}.unit{ui}.pointwise"),
                    Conv1d { in_ch: ch, out_ch: ch, kernel: 1, stride: 1, dilation: 1 },
                    &mut push,
                );
                units.push((dilated, pointwise));
            }
            let down = conv(
                &format!("encoder.block{bi}.down"),
                Conv1d { in_ch: ch, out_ch: 2 * ch, kernel: 2 * stride, stride, dilation: 1 },
                &mut push,
            );
            ch *= 2;
            blocks.push(Block { units, down });
        }
        let output = conv(
            "encoder.output",
            Conv1d { in_ch: ch, out_ch: enc.latent_dim, kernel: 1, stride: 1, dilation: 1 },
            &mut push,
        );

        let mut head = Vec::new();
        let mut prev = enc.latent_dim;
        for k in 0..cfg.head.num_layers {
            let out = if k + 1 == cfg.head.num_layers {
                cfg.head.output_dim
            } else {
                cfg.head.hidden_width
            };
            let w = push(format!("head.layer{k}.weight"), vec![out, prev]);
            let b = push(format!("head.layer{k}.bias"), vec![out]);
            head.push(DenseSlot { inputs: prev, outputs: out, w, b });
            prev = out;
        }
        Self {
            input,
            blocks,
            output,
            head,
            tensors,
            total,
        }
    }
}

fn conv_params<'a>(p: &'a [f64], s: &ConvSlot) -> (&'a [f64], &'a [f64]) {
    (&p[s.w..s.w + s.conv.weight_len()], &p[s.b..s.b + s.conv.out_ch])
}

fn dense_params<'a>(p: &'a [f64], s: &DenseSlot) -> (&'a [f64], &'a [f64]) {
    (&p[s.w..s.w + s.inputs * s.outputs], &p[s.b..s.b + s.outputs])
}

/// Splits `grads` into mutable weight and bias views for a conv slot.
fn conv_grads<'a>(g: &'a mut [f64], s: &ConvSlot) -> (&'a mut [f64], &'a mut [f64]) {
    // bias always directly follows its weight
    let (w, rest) = g[s.w..].split_at_mut(s.conv.weight_len());
    (w, &mut rest[..s.conv.out_ch])
}

fn dense_grads<'a>(g: &'a mut [f64], s: &DenseSlot) -> (&'a mut [f64], &'a mut [f64]) {
    let (w, rest) = g[s.w..].split_at_mut(s.inputs * s.outputs);
    (w, &mut rest[..s.outputs])
}

/// ELU derivative from the pre-activation `v` and the output `a = elu(v)`:
/// for `v <= 0`, `d elu / dv = exp(v) = a + 1`.
fn elu_grad_from(v: f64, a: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        a + 1.0
    }
}

fn elu_backward(g: &[f64], pre: &[f64], act: &[f64]) -> Vec<f64> {
    g.iter().zip(pre).zip(act).map(|((g, &v), &a)| g * elu_grad_from(v, a)).collect()
}

/// Intermediate encoder activations needed for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct EncoderTrace {
    input: Vec<f64>,
    /// Per block: the input of each residual unit and its dilated-conv output.
    unit_inputs: Vec<Vec<Vec<f64>>>,
    unit_mid: Vec<Vec<Vec<f64>>>,
    /// Per block: pre-activations entering the strided conv.
    block_out: Vec<Vec<f64>>,
    lengths: Vec<usize>,
    final_h: Vec<f64>,
    final_len: usize,
    /// ELU outputs matching `unit_inputs`, `unit_mid`, `block_out` and
    /// `final_h`, kept so the backward pass needs no `exp`.
    unit_act: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
    block_act: Vec<Vec<f64>>,
    final_act: Vec<f64>,
}

impl EncoderTrace {
    /// Sign of every ELU input. ELU has a jump in its second derivative at
    /// zero, so finite differences across a sign change lose accuracy.
    pub(crate) fn elu_signature(&self) -> Vec<bool> {
        let units = self.unit_inputs.iter().chain(&self.unit_mid).flatten().flatten();
        units
            .chain(self.block_out.iter().flatten())
            .chain(&self.final_h)
            .map(|&v| v > 0.0)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct HeadTrace {
    /// Input of each dense layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the ELU layers.
    pre: Vec<Vec<f64>>,
}

impl HeadTrace {
    pub(crate) fn elu_signature(&self) -> Vec<bool> {
        self.pre.iter().flatten().map(|&v| v > 0.0).collect()
    }
}

/// Forward record of `x -> z -> theta`.
#[derive(Debug, Clone)]
pub(crate) struct ForwardTrace {
    pub encoder: EncoderTrace,
    pub head: HeadTrace,
    pub theta: Vec<f64>,
}

/// Hypernetwork parameters with their configuration.
#[derive(Debug, Clone)]
pub struct HyperNetModel {
    config: ModelConfig,
    seed: u64,
    params: Vec<f64>,
    plan: Plan,
}

impl PartialEq for HyperNetModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.seed == other.seed && self.params == other.params
    }
}

impl HyperNetModel {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation of every
    /// weight and bias, with the last head layer scaled by 0.01 so the first
    /// generated weight vectors are close to zero. Values are rounded to f32
    /// so checkpoints reproduce the model exactly.
    pub fn init(seed: u64, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let plan = Plan::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; plan.total];

        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, scale: f64| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut params[range] {
                *v = ((rng.gen_range(-bound..bound) * scale) as f32) as f64;
            }
        };
        let mut convs = vec![plan.input];
        for block in &plan.blocks {
            for &(a, b) in &block.units {
                convs.push(a);
                convs.push(b);
            }
            convs.push(block.down);
        }
        convs.push(plan.output);
        for s in &convs {
            fill(s.w..s.w + s.conv.weight_len(), s.conv.fan_in(), 1.0);
            fill(s.b..s.b + s.conv.out_ch, s.conv.fan_in(), 1.0);
        }
        let last = plan.head.len() - 1;
        for (k, s) in plan.head.iter().enumerate() {
            let scale = if k == last { HEAD_OUTPUT_INIT_SCALE } else { 1.0 };
            fill(s.w..s.w + s.inputs * s.outputs, s.inputs, scale);
            fill(s.b..s.b + s.outputs, s.inputs, scale);
        }
        Ok(Self {
            config,
            seed,
            params,
            plan,
        })
    }

    /// Builds a model from an explicit parameter vector.
    pub fn from_params(seed: u64, config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let plan = Plan::new(&config);
        if params.len() != plan.total {
            return Err(Error::LengthMismatch {
                expected: plan.total,
                actual: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParams);
        }
        Ok(Self {
            config,
            seed,
            params,
            plan,
        })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let n = Plan::new(&config).total;
        Self::from_params(0, config, vec![0.0; n])
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.plan.total
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.plan.tensors
    }

    /// Index range of the head parameters within the flat vector.
    pub fn head_range(&self) -> std::ops::Range<usize> {
        self.plan.head[0].w..self.plan.total
    }

    /// Index range of the encoder parameters within the flat vector.
    pub fn encoder_range(&self) -> std::ops::Range<usize> {
        0..self.plan.head[0].w
    }

    /// Latent code of a waveform. Input is zero-padded on the right to a
    /// multiple of the encoder hop.
    pub fn encode(&self, x: &AudioBuffer) -> Result<Vec<f64>> {
        Ok(self.encode_trace(x.samples())?.1)
    }

    pub fn head_forward(&self, z: &[f64]) -> Result<TargetNetParams> {
        if z.len() != self.config.encoder.latent_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.encoder.latent_dim,
                actual: z.len(),
            });
        }
        let (_, theta) = self.head_trace(z);
        TargetNetParams::new(self.config.target.clone(), theta)
    }

    /// `theta_x = H(x)`.
    pub fn predict_inr(&self, x: &AudioBuffer) -> Result<TargetNetParams> {
        let z = self.encode(x)?;
        self.head_forward(&z)
    }

    pub(crate) fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        let (encoder, latent) = self.encode_trace(x)?;
        let (head, theta) = self.head_trace(&latent);
        Ok(ForwardTrace { encoder, head, theta })
    }

    /// Gradient of the scalar whose derivative w.r.t. theta is `dtheta`.
    pub(crate) fn backward(&self, trace: &ForwardTrace, dtheta: &[f64]) -> Vec<f64> {
        let mut grads = vec![0.0; self.plan.total];
        let dz = self.head_backward(&trace.head, dtheta, &mut grads);
        self.encoder_backward(&trace.encoder, &dz, &mut grads);
        grads
    }

    pub(crate) fn encode_trace(&self, x: &[f64]) -> Result<(EncoderTrace, Vec<f64>)> {
        let hop = self.config.encoder.hop_length();
        if x.len() < hop {
            return Err(Error::InputTooShort {
                len: x.len(),
                min: hop,
            });
        }
        let p = &self.params;
        let padded_len = x.len().div_ceil(hop) * hop;
        let mut input = x.to_vec();
        input.resize(padded_len, 0.0);

        let mut t = padded_len;
        let (w, b) = conv_params(p, &self.plan.input);
        let mut h = self.plan.input.conv.forward(w, b, &input, t);
        let mut unit_inputs = Vec::new();
        let mut unit_mid = Vec::new();
        let mut block_out = Vec::new();
        let mut lengths = Vec::new();
        let mut unit_act = Vec::new();
        let mut block_act = Vec::new();
        for block in &self.plan.blocks {
            lengths.push(t);
            let mut ins = Vec::new();
            let mut mids = Vec::new();
            let mut acts = Vec::new();
            for (dil, pw) in &block.units {
                let a1: Vec<f64> = h.iter().map(|&v| elu(v)).collect();
                let (w, b) = conv_params(p, dil);
                let c1 = dil.conv.forward(w, b, &a1, t);
                let a2: Vec<f64> = c1.iter().map(|&v| elu(v)).collect();
                let (w, b) = conv_params(p, pw);
                let c2 = pw.conv.forward(w, b, &a2, t);
                let next: Vec<f64> = h.iter().zip(&c2).map(|(a, b)| a + b).collect();
                ins.push(std::mem::replace(&mut h, next));
                mids.push(c1);
                acts.push((a1, a2));
            }
            unit_inputs.push(ins);
            unit_mid.push(mids);
            unit_act.push(acts);
            let a: Vec<f64> = h.iter().map(|&v| elu(v)).collect();
            let (w, b) = conv_params(p, &block.down);
            let next = block.down.conv.forward(w, b, &a, t);
            block_out.push(std::mem::replace(&mut h, next));
            block_act.push(a);
            t = block.down.conv.out_len(t);
        }
        let a: Vec<f64> = h.iter().map(|&v| elu(v)).collect();
        let (w, b) = conv_params(p, &self.plan.output);
        let y = self.plan.output.conv.forward(w, b, &a, t);
        let latent: Vec<f64> = y
            .chunks_exact(t)
            .map(|row| row.iter().sum::<f64>() / t as f64)
            .collect();
        Ok((
            EncoderTrace {
                input,
                unit_inputs,
                unit_mid,
                block_out,
                lengths,
                final_h: h,
                final_len: t,
                unit_act,
                block_act,
                final_act: a,
            },
            latent,
        ))
    }

    pub(crate) fn encoder_backward(&self, tr: &EncoderTrace, dz: &[f64], grads: &mut [f64]) {
        let p = &self.params;
        let t = tr.final_len;
        let mut dy = Vec::with_capacity(dz.len() * t);
        for &g in dz {
            dy.extend(std::iter::repeat(g / t as f64).take(t));
        }
        let slot = &self.plan.output;
        let (dw, db) = conv_grads(grads, slot);
        let da = slot.conv.backward(conv_params(p, slot).0, &tr.final_act, t, &dy, dw, db, true).unwrap();
        let mut dh = elu_backward(&da, &tr.final_h, &tr.final_act);

        for (bi, block) in self.plan.blocks.iter().enumerate().rev() {
            let t_in = tr.lengths[bi];
            let (dw, db) = conv_grads(grads, &block.down);
            let da = block
                .down
                .conv
                .backward(conv_params(p, &block.down).0, &tr.block_act[bi], t_in, &dh, dw, db, true)
                .unwrap();
            dh = elu_backward(&da, &tr.block_out[bi], &tr.block_act[bi]);

            for (ui, (dil, pw)) in block.units.iter().enumerate().rev() {
                let h_unit = &tr.unit_inputs[bi][ui];
                let c1 = &tr.unit_mid[bi][ui];
                let (a1, a2) = &tr.unit_act[bi][ui];
                let (dw, db) = conv_grads(grads, pw);
                let da2 = pw.conv.backward(conv_params(p, pw).0, a2, t_in, &dh, dw, db, true).unwrap();
                let dc1 = elu_backward(&da2, c1, a2);
                let (dw, db) = conv_grads(grads, dil);
                let da1 = dil.conv.backward(conv_params(p, dil).0, a1, t_in, &dc1, dw, db, true).unwrap();
                for (((d, g), &v), &a) in dh.iter_mut().zip(&da1).zip(h_unit).zip(a1) {
                    *d += g * elu_grad_from(v, a);
                }
            }
        }
        let slot = &self.plan.input;
        let (dw, db) = conv_grads(grads, slot);
        slot.conv
            .backward(conv_params(p, slot).0, &tr.input, tr.input.len(), &dh, dw, db, false);
    }

    pub(crate) fn head_trace(&self, z: &[f64]) -> (HeadTrace, Vec<f64>) {
        let last = self.plan.head.len() - 1;
        let mut inputs = Vec::with_capacity(self.plan.head.len());
        let mut pre = Vec::with_capacity(last);
        let mut a = z.to_vec();
        for (k, s) in self.plan.head.iter().enumerate() {
            let (w, b) = dense_params(&self.params, s);
            let y = dense_forward(w, b, &a, s.inputs, s.outputs);
            let input = std::mem::take(&mut a);
            inputs.push(input);
            if k == last {
                return (HeadTrace { inputs, pre }, y);
            }
            a = y.iter().map(|&v| elu(v)).collect();
            pre.push(y);
        }
        unreachable!("head has at least one layer")
    }

    /// Accumulates head gradients and returns `dL/dz`.
    pub(crate) fn head_backward(&self, tr: &HeadTrace, dtheta: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let mut g = dtheta.to_vec();
        for (k, s) in self.plan.head.iter().enumerate().rev() {
            let (w, _) = dense_params(&self.params, s);
            let (dw, db) = dense_grads(grads, s);
            let dx = dense_backward(w, &tr.inputs[k], &g, s.inputs, s.outputs, dw, db, true).unwrap();
            g = if k > 0 {
                dx.iter().zip(&tr.pre[k - 1]).map(|(d, &v)| d * elu_grad(v)).collect()
            } else {
                dx
            };
        }
        g
    }

    /// Writes an `HSCK` checkpoint, optionally with optimizer state.
    pub fn save_checkpoint(
        &self,
        path: impl AsRef<Path>,
        optimizer: Option<&OptimizerSnapshot>,
        extra: Option<serde_json::Value>,
    ) -> Result<()> {
        let bytes = self.checkpoint_bytes(optimizer, extra)?;
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes)
            .and_then(|_| std::fs::rename(&tmp, path))
            .map_err(|e| Error::CheckpointIo(format!("{}: {e}", path.display())))
    }

    pub fn checkpoint_bytes(
        &self,
        optimizer: Option<&OptimizerSnapshot>,
        extra: Option<serde_json::Value>,
    ) -> Result<Vec<u8>> {
        if let Some(opt) = optimizer {
            if opt.first_moment.len() != self.plan.total || opt.second_moment.len() != self.plan.total {
                return Err(Error::DimensionMismatch {
                    expected: self.plan.total,
                    actual: opt.first_moment.len(),
                });
            }
        }
        let header = CheckpointHeader {
            model: self.config.clone(),
            seed: self.seed,
            tensors: self.plan.tensors.clone(),
            optimizer: optimizer.map(|o| o.settings.clone()),
            extra,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + self.plan.total * 12);
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u32).to_le_bytes())?;
        out.write_all(&json)?;
        let mut put = |v: &[f64]| {
            for &x in v {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        };
        put(&self.params);
        if let Some(opt) = optimizer {
            put(&opt.first_moment);
            put(&opt.second_moment);
        }
        Ok(out)
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| Error::CheckpointIo(format!("{}: {e}", path.display())))?;
        Self::checkpoint_from_bytes(&bytes)
    }

    pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 12 {
            return Err(Error::LengthMismatch {
                expected: 12,
                actual: bytes.len(),
            });
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                expected: "HSCK".into(),
                found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
            });
        }
        let u32_at = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
        let version = u32_at(4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let json_len = u32_at(8) as usize;
        let body = 12 + json_len;
        if bytes.len() < body {
            return Err(Error::LengthMismatch {
                expected: body,
                actual: bytes.len(),
            });
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[12..body])?;
        header.model.validate()?;
        let plan = Plan::new(&header.model);
        let declared: Vec<(&str, &[usize])> =
            header.tensors.iter().map(|t| (t.name.as_str(), t.shape.as_slice())).collect();
        let expected: Vec<(&str, &[usize])> =
            plan.tensors.iter().map(|t| (t.name.as_str(), t.shape.as_slice())).collect();
        if declared != expected {
            return Err(Error::CorruptHeader(
                "tensor listing does not match the model configuration".into(),
            ));
        }
        let n = plan.total;
        let blocks = if header.optimizer.is_some() { 3 } else { 1 };
        let need = body + blocks * n * 4;
        if bytes.len() != need {
            return Err(Error::LengthMismatch {
                expected: need,
                actual: bytes.len(),
            });
        }
        let floats: Vec<f64> = bytes[body..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let model = Self::from_params(header.seed, header.model, floats[..n].to_vec())?;
        let optimizer = header.optimizer.map(|settings| OptimizerSnapshot {
            settings,
            first_moment: floats[n..2 * n].to_vec(),
            second_moment: floats[2 * n..].to_vec(),
        });
        Ok(Checkpoint {
            model,
            optimizer,
            extra: header.extra,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    model: ModelConfig,
    seed: u64,
    tensors: Vec<TensorInfo>,
    optimizer: Option<OptimizerSettings>,
    #[serde(default)]
    extra: Option<serde_json::Value>,
}

/// AdamW hyperparameters and step counter, as recorded in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSnapshot {
    pub settings: OptimizerSettings,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: HyperNetModel,
    pub optimizer: Option<OptimizerSnapshot>,
    pub extra: Option<serde_json::Value>,
}
