//! Reverse-mode training of the hypernetwork: batch loss and gradients,
//! AdamW, the training loop with checkpoints, and finite-difference checks.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::data::{make_batch, AugmentConfig, Dataset};
use crate::hypernet::{
    Checkpoint, HEAD_OUTPUT_INIT_SCALE, EncoderConfig, HyperNetModel, ModelConfig, OptimizerSettings, OptimizerSnapshot,
};
use crate::inr::{make_grid, render_backward, render_forward, Embedding, TargetNetConfig};
use crate::loss::{LossConfig, LossEngine, LossParts};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub config: AdamWConfig,
}

impl OptimizerState {
    pub fn new(param_count: usize, config: AdamWConfig) -> Self {
        Self {
            step: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            config,
        }
    }

    pub fn snapshot(&self) -> OptimizerSnapshot {
        let c = &self.config;
        OptimizerSnapshot {
            settings: OptimizerSettings {
                step: self.step,
                lr: c.lr,
                beta1: c.beta1,
                beta2: c.beta2,
                eps: c.eps,
                weight_decay: c.weight_decay,
            },
            first_moment: self.first_moment.clone(),
            second_moment: self.second_moment.clone(),
        }
    }

    pub fn from_snapshot(s: OptimizerSnapshot) -> Self {
        Self {
            step: s.settings.step,
            config: AdamWConfig {
                lr: s.settings.lr,
                beta1: s.settings.beta1,
                beta2: s.settings.beta2,
                eps: s.settings.eps,
                weight_decay: s.settings.weight_decay,
            },
            first_moment: s.first_moment,
            second_moment: s.second_moment,
        }
    }

    /// Rounds the moments to f32 so checkpoints capture them exactly.
    fn round_to_f32(&mut self) {
        round_to_f32(&mut self.first_moment);
        round_to_f32(&mut self.second_moment);
    }
}

fn round_to_f32(v: &mut [f64]) {
    for x in v {
        *x = *x as f32 as f64;
    }
}

/// One AdamW update with bias-corrected moments and decoupled weight decay.
pub fn adamw_step(state: &mut OptimizerState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    let n = params.len();
    for len in [grads.len(), state.first_moment.len(), state.second_moment.len()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for i in 0..n {
        let g = grads[i];
        let m = c.beta1 * state.first_moment[i] + (1.0 - c.beta1) * g;
        let v = c.beta2 * state.second_moment[i] + (1.0 - c.beta2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        let update = (m / bc1) / ((v / bc2).sqrt() + c.eps);
        params[i] -= c.lr * update + c.lr * c.weight_decay * params[i];
    }
    Ok(())
}

/// Mean batch loss and its exact gradient w.r.t. every model parameter.
/// Work is split over up to `threads` workers; per-example gradients are
/// summed in batch order so the result does not depend on the split.
pub fn loss_and_grads(
    model: &HyperNetModel,
    batch: &[AudioBuffer],
    loss: &LossEngine,
    threads: usize,
) -> Result<(LossParts, Vec<f64>)> {
    let Some(first) = batch.first() else {
        return Err(Error::EmptyDataset("empty batch".into()));
    };
    let n = first.len();
    for x in batch {
        crate::error::check_same_len(n, x.len())?;
    }
    let target = &model.config().target;
    let grid = make_grid(n, first.sample_rate())?;
    let features = Embedding::new(grid.times(), target.embedding_size);

    let one = |x: &AudioBuffer| -> Result<(LossParts, Vec<f64>)> {
        let trace = model.forward_trace(x.samples())?;
        let rt = render_forward(target, &trace.theta, &features.data, n);
        let (parts, dout) = loss.total_with_grad(x.samples(), &rt.output)?;
        if !parts.is_finite() {
            return Ok((parts, Vec::new()));
        }
        let dtheta = render_backward(target, &trace.theta, &features.data, &rt, &dout);
        Ok((parts, model.backward(&trace, &dtheta)))
    };

    let workers = threads.clamp(1, batch.len());
    let results: Vec<Result<(LossParts, Vec<f64>)>> = if workers == 1 {
        batch.iter().map(one).collect()
    } else {
        let chunk = batch.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .chunks(chunk)
                .map(|c| s.spawn(|| c.iter().map(one).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    };

    let scale = 1.0 / batch.len() as f64;
    let mut total = LossParts::default();
    let mut grads = vec![0.0; model.param_count()];
    for r in results {
        let (parts, g) = r?;
        if !parts.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: 0,
                last_checkpoint: None,
            });
        }
        total.total += parts.total * scale;
        total.sl1 += parts.sl1 * scale;
        total.stft += parts.stft * scale;
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b * scale;
        }
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            step: 0,
            last_checkpoint: None,
        });
    }
    Ok((total, grads))
}

/// Mean loss without gradients, for validation.
pub fn mean_loss(model: &HyperNetModel, batch: &[AudioBuffer], loss: &LossEngine) -> Result<LossParts> {
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut total = LossParts::default();
    for x in batch {
        let theta = model.predict_inr(x)?;
        let out = theta.render(&make_grid(x.len(), x.sample_rate())?)?;
        let p = loss.total(x.samples(), out.samples())?;
        total.total += p.total * scale;
        total.sl1 += p.sl1 * scale;
        total.stft += p.stft * scale;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    pub loss: LossConfig,
    pub seed: u64,
    /// 0 disables periodic checkpoints; the final step is always saved
    /// when a checkpoint directory is set.
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub optimizer: AdamWConfig,
    pub augment: AugmentConfig,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default = "one")]
    pub threads: usize,
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps < 1 {
            return Err(Error::InvalidConfig("total_steps must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.log_every < 1 {
            return Err(Error::InvalidConfig("log_every must be >= 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidConfig("grad_clip must be > 0".into()));
            }
        }
        self.loss.validate()?;
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub total_loss: f64,
    pub sl1: f64,
    pub stft: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,total_loss,sl1,stft,wall_time")?;
        for e in &self.entries {
            writeln!(out, "{},{},{},{},{:.3}", e.step, e.total_loss, e.sl1, e.stft, e.wall_time)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: HyperNetModel,
    pub optimizer: OptimizerState,
    pub log: TrainLog,
    pub last_checkpoint: Option<PathBuf>,
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:08}.hsck"))
}

/// Runs `config.total_steps` updates from a freshly initialised model.
pub fn train(model: HyperNetModel, data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let opt = OptimizerState::new(model.param_count(), config.optimizer);
    run(model, opt, data, config)
}

/// Continues a checkpointed run up to `config.total_steps` total updates.
/// The optimizer settings stored in the checkpoint take precedence.
pub fn resume(checkpoint: Checkpoint, data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let opt = match checkpoint.optimizer {
        Some(s) => OptimizerState::from_snapshot(s),
        None => OptimizerState::new(checkpoint.model.param_count(), config.optimizer),
    };
    run(checkpoint.model, opt, data, config)
}

fn run(
    mut model: HyperNetModel,
    mut opt: OptimizerState,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let engine = LossEngine::new(config.loss.clone(), model.config().sample_rate)?;
    if data.sample_rate() != model.config().sample_rate {
        return Err(Error::InvalidConfig(format!(
            "dataset rate {} differs from model rate {}",
            data.sample_rate(),
            model.config().sample_rate
        )));
    }
    config.augment.validate(data.sample_rate())?;
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::CheckpointIo(format!("{}: {e}", dir.display())))?;
    }
    // params and moments live on the f32 grid so checkpoints are exact
    round_to_f32(model.params_mut());
    opt.round_to_f32();

    let start = Instant::now();
    let mut log = TrainLog::default();
    let mut last_checkpoint = None;
    while opt.step < config.total_steps {
        let step = opt.step;
        let batch = make_batch(data, &config.augment, config.batch_size, step)?;
        let (parts, mut grads) = loss_and_grads(&model, &batch, &engine, config.threads).map_err(|e| match e {
            Error::NonFiniteLoss { .. } => Error::NonFiniteLoss {
                step,
                last_checkpoint: last_checkpoint.clone(),
            },
            other => other,
        })?;
        if step % config.log_every == 0 {
            log.entries.push(LogEntry {
                step,
                total_loss: parts.total,
                sl1: parts.sl1,
                stft: parts.stft,
                wall_time: start.elapsed().as_secs_f64(),
            });
        }
        if let Some(clip) = config.grad_clip {
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > clip {
                let s = clip / norm;
                grads.iter_mut().for_each(|g| *g *= s);
            }
        }
        adamw_step(&mut opt, model.params_mut(), &grads)?;
        round_to_f32(model.params_mut());
        opt.round_to_f32();

        if let Some(dir) = &config.checkpoint_dir {
            let done = opt.step;
            let periodic = config.checkpoint_every > 0 && done % config.checkpoint_every == 0;
            if periodic || done == config.total_steps {
                let path = checkpoint_path(dir, done);
                let extra = serde_json::to_value(config)?;
                model.save_checkpoint(&path, Some(&opt.snapshot()), Some(extra))?;
                last_checkpoint = Some(path);
            }
        }
    }
    Ok(TrainOutcome {
        model,
        optimizer: opt,
        log,
        last_checkpoint,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradComponent {
    Target,
    Head,
    Encoder,
    Loss,
    End2End,
}

impl GradComponent {
    pub const ALL: [GradComponent; 5] = [Self::Target, Self::Head, Self::Encoder, Self::Loss, Self::End2End];
}

impl fmt::Display for GradComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Target => "target",
            Self::Head => "head",
            Self::Encoder => "encoder",
            Self::Loss => "loss",
            Self::End2End => "end2end",
        })
    }
}

impl FromStr for GradComponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown gradcheck component '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub component: GradComponent,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crosses a point where the function
    /// is not smooth, so finite differences say nothing about the gradient.
    pub skipped: usize,
    /// Coordinates whose gradient is below what central differences can
    /// resolve given the measured rounding noise of the function.
    pub unresolved: usize,
    /// Measured rounding noise of one function evaluation.
    pub noise: f64,
    pub passed: bool,
}

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_FLOOR: f64 = 1e-8;
const NOISE_PROBES: usize = 16;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

/// Small model used for gradient checks: latent 8, head width 16, target
/// `L=2, [8, 8]`, a two-block encoder, 256-sample crops.
pub fn gradcheck_model_config() -> ModelConfig {
    ModelConfig::new(
        EncoderConfig {
            base_channels: 2,
            strides: vec![2, 4],
            dilations: vec![1, 3, 9],
            latent_dim: 8,
        },
        16,
        TargetNetConfig::new(2, vec![8, 8]).expect("valid target"),
        22050,
    )
    .expect("valid model")
}

pub const GRADCHECK_CROP: usize = 256;

fn random_signal(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-amp..amp)).collect()
}

/// Fourth-order central difference with step `h`:
/// `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`.
fn central_difference(f: &impl Fn(&[f64]) -> f64, x: &mut [f64], i: usize, h: f64) -> f64 {
    let x0 = x[i];
    let mut at = |d: f64| {
        x[i] = x0 + d;
        f(x)
    };
    let d1 = at(h) - at(-h);
    let d2 = at(2.0 * h) - at(-2.0 * h);
    x[i] = x0;
    (8.0 * d1 - d2) / (12.0 * h)
}

/// Largest change in `f` when every checked coordinate moves by one ulp in
/// a pseudo-random direction. The true change is far below rounding, so
/// this exposes the evaluation noise.
fn measure_noise(f: &impl Fn(&[f64]) -> f64, x: &[f64], coords: &std::ops::Range<usize>) -> f64 {
    let f0 = f(x);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut y = x.to_vec();
    let mut noise: f64 = 0.0;
    for _ in 0..NOISE_PROBES {
        for i in coords.clone() {
            y[i] = if rng.gen() { x[i].next_up() } else { x[i].next_down() };
        }
        noise = noise.max((f(&y) - f0).abs());
    }
    noise
}

fn compare(
    component: GradComponent,
    x: &[f64],
    analytic: &[f64],
    coords: std::ops::Range<usize>,
    f: impl Fn(&[f64]) -> f64,
    kink: impl Fn(&[f64], &[f64]) -> bool,
) -> GradcheckReport {
    let h = GRADCHECK_STEP;
    let noise = measure_noise(&f, x, &coords);
    // Worst-case rounding error of the stencil, with a factor 2 margin.
    let resolution = 2.0 * 18.0 * noise / (12.0 * h);
    let mut max_rel: f64 = 0.0;
    let (mut checked, mut skipped, mut unresolved) = (0, 0, 0);
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    let mut work = x.to_vec();
    for i in coords {
        xp[i] = x[i] + 2.0 * h;
        xm[i] = x[i] - 2.0 * h;
        if kink(&xp, &xm) {
            skipped += 1;
        } else {
            let numeric = central_difference(&f, &mut work, i, h);
            if analytic[i].abs().max(numeric.abs()) * GRADCHECK_TOLERANCE < resolution {
                unresolved += 1;
            } else {
                max_rel = max_rel.max(relative_error(analytic[i], numeric));
                checked += 1;
            }
        }
        xp[i] = x[i];
        xm[i] = x[i];
    }
    GradcheckReport {
        component,
        max_rel_error: max_rel,
        checked,
        skipped,
        unresolved,
        noise,
        passed: max_rel < GRADCHECK_TOLERANCE && checked > 0,
    }
}

/// A perturbation segment `z(-h) -> z(+h)` of an STFT bin passing within
/// this many half-lengths of the origin straddles the corner of `|z|`.
const CONE_MARGIN: f64 = 10.0;

fn near_cone(a: &[Complex64], b: &[Complex64]) -> bool {
    a.iter()
        .zip(b)
        .any(|(p, q)| ((p + q) * 0.5).norm() < CONE_MARGIN * ((p - q) * 0.5).norm())
}

/// Finite-difference check of one differentiable component.
///
/// Coordinates whose stencil crosses a point where the function is not
/// smooth (ReLU or ELU sign changes, smooth-L1 branch changes, corners of
/// `|X|` and of the log-L1 term) are skipped. Coordinates whose gradient is
/// too small to resolve against the measured rounding noise are counted
/// as unresolved. Both are reported.
pub fn gradcheck(component: GradComponent, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = gradcheck_model_config();
    let model = HyperNetModel::init(seed, config.clone())?;
    let target = &config.target;
    let n = GRADCHECK_CROP;
    let rebuild = |p: &[f64]| HyperNetModel::from_params(seed, config.clone(), p.to_vec()).expect("valid");

    Ok(match component {
        GradComponent::Target => {
            let theta = random_signal(&mut rng, target.param_count(), 0.5);
            let times: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
            let feats = Embedding::new(&times, target.embedding_size);
            let weights = random_signal(&mut rng, times.len(), 1.0);
            let f = |th: &[f64]| {
                let out = render_forward(target, th, &feats.data, times.len()).output;
                out.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
            };
            let rt = render_forward(target, &theta, &feats.data, times.len());
            let g = render_backward(target, &theta, &feats.data, &rt, &weights);
            let pattern = |th: &[f64]| render_forward(target, th, &feats.data, times.len()).relu_pattern();
            compare(component, &theta, &g, 0..theta.len(), f, |a, b| pattern(a) != pattern(b))
        }
        GradComponent::Head => {
            let z = random_signal(&mut rng, config.encoder.latent_dim, 1.0);
            let weights = random_signal(&mut rng, target.param_count(), 1.0);
            let params = model.params().to_vec();
            let f = |p: &[f64]| {
                let (_, theta) = rebuild(p).head_trace(&z);
                theta.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
            };
            let (tr, _) = model.head_trace(&z);
            let mut g = vec![0.0; params.len()];
            model.head_backward(&tr, &weights, &mut g);
            let pattern = |p: &[f64]| rebuild(p).head_trace(&z).0.elu_signature();
            compare(component, &params, &g, model.head_range(), f, |a, b| pattern(a) != pattern(b))
        }
        GradComponent::Encoder => {
            let x = random_signal(&mut rng, n, 0.5);
            let weights = random_signal(&mut rng, config.encoder.latent_dim, 1.0);
            let params = model.params().to_vec();
            let f = |p: &[f64]| {
                let (_, z) = rebuild(p).encode_trace(&x).expect("long enough");
                z.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
            };
            let (tr, _) = model.encode_trace(&x)?;
            let mut g = vec![0.0; params.len()];
            model.encoder_backward(&tr, &weights, &mut g);
            let pattern = |p: &[f64]| rebuild(p).encode_trace(&x).expect("long enough").0.elu_signature();
            compare(component, &params, &g, model.encoder_range(), f, |a, b| pattern(a) != pattern(b))
        }
        GradComponent::Loss => {
            let x = random_signal(&mut rng, 512, 0.5);
            let xhat = random_signal(&mut rng, 512, 0.5);
            let engine = LossEngine::new(LossConfig::preset("l1_melstft")?, config.sample_rate)?;
            let (_, g) = engine.total_with_grad(&x, &xhat)?;
            let f = |y: &[f64]| engine.total(&x, y).expect("same length").total;
            let kink = |a: &[f64], b: &[f64]| {
                engine.kink_signature(&x, a).expect("valid") != engine.kink_signature(&x, b).expect("valid")
                    || near_cone(&engine.spectra(a).expect("valid"), &engine.spectra(b).expect("valid"))
            };
            compare(component, &xhat, &g, 0..xhat.len(), f, kink)
        }
        GradComponent::End2End => {
            let grid = make_grid(n, config.sample_rate)?;
            let feats = Embedding::new(grid.times(), target.embedding_size);
            let batch: Vec<AudioBuffer> = (0..2)
                .map(|_| AudioBuffer::new(random_signal(&mut rng, n, 0.5), config.sample_rate))
                .collect::<Result<_>>()?;
            // Undo the small output-layer init so renders are not near
            // silent; otherwise almost every STFT bin sits next to the
            // corner of |X| and few coordinates can be checked.
            let mut model = model;
            let last = format!("head.layer{}.", config.head.num_layers - 1);
            for t in model.tensors().to_vec() {
                if t.name.starts_with(&last) {
                    for v in &mut model.params_mut()[t.offset..t.offset + t.len()] {
                        *v /= HEAD_OUTPUT_INIT_SCALE;
                    }
                }
            }
            let engine = LossEngine::new(gradcheck_loss_config(), config.sample_rate)?;
            let (_, g) = loss_and_grads(&model, &batch, &engine, 1)?;
            let params = model.params().to_vec();
            let f = |p: &[f64]| mean_loss(&rebuild(p), &batch, &engine).expect("valid batch").total;
            let state = |p: &[f64]| {
                let m = rebuild(p);
                let mut sig = Vec::new();
                let mut spectra = Vec::new();
                for x in &batch {
                    let tr = m.forward_trace(x.samples()).expect("valid");
                    sig.extend(tr.encoder.elu_signature());
                    sig.extend(tr.head.elu_signature());
                    let rt = render_forward(target, &tr.theta, &feats.data, n);
                    sig.extend(rt.relu_pattern());
                    sig.extend(engine.kink_signature(x.samples(), &rt.output).expect("valid"));
                    spectra.extend(engine.spectra(&rt.output).expect("valid"));
                }
                (sig, spectra)
            };
            let kink = |a: &[f64], b: &[f64]| {
                let (sa, za) = state(a);
                let (sb, zb) = state(b);
                sa != sb || near_cone(&za, &zb)
            };
            compare(component, &params, &g, 0..params.len(), f, kink)
        }
    })
}

/// Loss used by the end-to-end check: every term active, with resolutions
/// that fit a 256-sample crop.
fn gradcheck_loss_config() -> LossConfig {
    let mut c = LossConfig::preset("l1_melstft").expect("built-in preset");
    c.resolutions = [64, 128, 256].map(crate::loss::Resolution::with_overlap).to_vec();
    if let Some(m) = c.mel.as_mut() {
        m.mel_bins = 16;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adamw_step() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut st = OptimizerState::new(1, cfg);
        let mut p = [0.0];
        adamw_step(&mut st, &mut p, &[1.0]).unwrap();
        let want = -5e-5 / (1.0 + 1e-8);
        assert!((p[0] - want).abs() < 1e-18);
        assert!((p[0] + 4.99999995e-5).abs() < 1e-15);
    }

    #[test]
    fn adamw_zero_grad_and_decay() {
        let mut st = OptimizerState::new(2, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        let mut p = [0.3, -0.2];
        adamw_step(&mut st, &mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, [0.3, -0.2]);

        let mut st = OptimizerState::new(1, AdamWConfig::default());
        let mut p = [2.0];
        adamw_step(&mut st, &mut p, &[0.0]).unwrap();
        assert!((p[0] - (2.0 - 5e-5 * 0.01 * 2.0)).abs() < 1e-15);
        assert!(adamw_step(&mut st, &mut p, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn adamw_moves_against_constant_gradient() {
        let mut st = OptimizerState::new(2, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        let mut p = [0.0, 0.0];
        let mut prev = p;
        for _ in 0..10 {
            adamw_step(&mut st, &mut p, &[0.7, -2.0]).unwrap();
            assert!(p[0] < prev[0] && p[1] > prev[1]);
            prev = p;
        }
    }

    fn tiny_dataset() -> Dataset {
        let clips = (0..3)
            .map(|k| {
                let f = 300.0 + 200.0 * k as f64;
                let s = (0..600)
                    .map(|i| 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / 22050.0).sin())
                    .collect();
                AudioBuffer::new(s, 22050).unwrap()
            })
            .collect();
        Dataset::from_clips(vec!["a".into(), "b".into(), "c".into()], clips, GRADCHECK_CROP).unwrap()
    }

    fn tiny_train_config(steps: u64) -> TrainConfig {
        let mut loss = LossConfig::preset("l1_stft").unwrap();
        loss.resolutions = [64, 128].map(crate::loss::Resolution::with_overlap).to_vec();
        TrainConfig {
            total_steps: steps,
            batch_size: 3,
            loss,
            seed: 1,
            checkpoint_every: 0,
            log_every: 3,
            optimizer: AdamWConfig { lr: 1e-3, ..Default::default() },
            augment: AugmentConfig { seed: 9, ..Default::default() },
            grad_clip: None,
            threads: 1,
            checkpoint_dir: None,
        }
    }

    #[test]
    fn duplicated_batch_matches_single() {
        let model = HyperNetModel::init(4, gradcheck_model_config()).unwrap();
        let ds = tiny_dataset();
        let x = ds.eval_items()[0].audio.clone();
        let engine = LossEngine::new(tiny_train_config(1).loss, 22050).unwrap();
        let (a, ga) = loss_and_grads(&model, &[x.clone()], &engine, 1).unwrap();
        let (b, gb) = loss_and_grads(&model, &[x.clone(), x.clone()], &engine, 2).unwrap();
        assert!((a.total - b.total).abs() < 1e-15);
        assert!(ga.iter().zip(&gb).all(|(p, q)| (p - q).abs() < 1e-15));
        assert_eq!(mean_loss(&model, &[x], &engine).unwrap().total, a.total);
    }

    #[test]
    fn zero_weights_give_zero_loss() {
        let model = HyperNetModel::init(4, gradcheck_model_config()).unwrap();
        let x = tiny_dataset().eval_items()[1].audio.clone();
        let mut cfg = tiny_train_config(1).loss;
        cfg.lambda_sl1 = 0.0;
        cfg.lambda_stft = 0.0;
        let engine = LossEngine::new(cfg, 22050).unwrap();
        let (p, g) = loss_and_grads(&model, &[x], &engine, 1).unwrap();
        assert_eq!(p.total, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn thread_count_does_not_change_gradients() {
        let model = HyperNetModel::init(4, gradcheck_model_config()).unwrap();
        let ds = tiny_dataset();
        let batch = make_batch(&ds, &AugmentConfig::default(), 5, 0).unwrap();
        let engine = LossEngine::new(tiny_train_config(1).loss, 22050).unwrap();
        let a = loss_and_grads(&model, &batch, &engine, 1).unwrap();
        let b = loss_and_grads(&model, &batch, &engine, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn log_length_and_determinism() {
        let ds = tiny_dataset();
        let cfg = tiny_train_config(7);
        let m = HyperNetModel::init(2, gradcheck_model_config()).unwrap();
        let a = train(m.clone(), &ds, &cfg).unwrap();
        let b = train(m, &ds, &cfg).unwrap();
        assert_eq!(a.log.entries.len(), 3);
        assert_eq!(a.log.entries.iter().map(|e| e.step).collect::<Vec<_>>(), [0, 3, 6]);
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.optimizer.step, 7);
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset();
        let m = HyperNetModel::init(2, gradcheck_model_config()).unwrap();
        let full = train(m.clone(), &ds, &tiny_train_config(6)).unwrap();

        let mut first = tiny_train_config(4);
        first.checkpoint_dir = Some(dir.path().to_path_buf());
        let part = train(m, &ds, &first).unwrap();
        let ckpt = HyperNetModel::load_checkpoint(part.last_checkpoint.unwrap()).unwrap();
        let rest = resume(ckpt, &ds, &tiny_train_config(6)).unwrap();
        assert_eq!(rest.model.params(), full.model.params());
        assert_eq!(rest.optimizer, full.optimizer);
    }

    #[test]
    fn divergence_is_reported() {
        let ds = tiny_dataset();
        let mut cfg = tiny_train_config(50);
        cfg.optimizer.lr = 1e300;
        let m = HyperNetModel::init(2, gradcheck_model_config()).unwrap();
        match train(m, &ds, &cfg) {
            Err(Error::NonFiniteLoss { step, .. }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn component_names() {
        for c in GradComponent::ALL {
            assert_eq!(c.to_string().parse::<GradComponent>().unwrap(), c);
        }
        assert!("decoder".parse::<GradComponent>().is_err());
    }

    #[test]
    fn target_bias_gradient_at_zero() {
        let t = TargetNetConfig::new(2, vec![8, 8]).unwrap();
        let theta = vec![0.0; t.param_count()];
        let feats = Embedding::new(&[0.1, 0.7, 0.9], 2);
        let rt = render_forward(&t, &theta, &feats.data, 3);
        let g = render_backward(&t, &theta, &feats.data, &rt, &[1.0, 0.0, 0.0]);
        assert_eq!(g[g.len() - 1], 1.0);
    }
}
