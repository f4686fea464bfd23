//! Dataset manifests, speaker-held-out splits, augmentations and batches.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, sinc_resample, write_wav, AudioBuffer, WavEncoding};
use crate::metrics::EvalItem;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub speaker_id: String,
    pub num_samples: usize,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub crop_length: usize,
    pub target_rate: u32,
}

impl DatasetManifest {
    pub fn speakers(&self) -> Vec<&str> {
        let mut s: Vec<&str> = self.entries.iter().map(|e| e.speaker_id.as_str()).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct ManifestSplit {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    /// Files that could not be read and were left out.
    pub skipped: usize,
}

/// True for `name.<digits>.wav`, the naming used for resampled copies.
fn is_resample_cache(path: &Path) -> bool {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.rsplit_once('.'))
        .is_some_and(|(_, rate)| !rate.is_empty() && rate.bytes().all(|b| b.is_ascii_digit()))
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
                && !is_resample_cache(p)
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Reads a file at `target_rate`, resampling once and caching the result
/// beside the source as `<stem>.<rate>.wav`. Returns the path actually used.
pub fn ingest(path: &Path, target_rate: u32) -> Result<(PathBuf, AudioBuffer)> {
    let audio = read_wav(path)?;
    if audio.sample_rate() == target_rate {
        return Ok((path.to_path_buf(), audio));
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("audio");
    let cached = path.with_file_name(format!("{stem}.{target_rate}.wav"));
    if cached.exists() {
        if let Ok(buf) = read_wav(&cached) {
            if buf.sample_rate() == target_rate {
                return Ok((cached, buf));
            }
        }
    }
    let resampled = sinc_resample(&audio, target_rate);
    write_wav(&resampled, &cached, WavEncoding::Float32)?;
    // reload so in-memory samples match what later runs will read from disk
    Ok((cached.clone(), read_wav(&cached)?))
}

/// Scans `root/<speaker>/*.wav`, resamples to `target_rate` and holds out the
/// lexicographically last `val_speakers` speakers for validation.
pub fn build_manifest(
    root: impl AsRef<Path>,
    crop_length: usize,
    target_rate: u32,
    val_speakers: usize,
) -> Result<ManifestSplit> {
    if crop_length == 0 {
        return Err(Error::InvalidConfig("crop_length must be > 0".into()));
    }
    let root = root.as_ref();
    let mut speakers: BTreeMap<String, Vec<ManifestEntry>> = BTreeMap::new();
    let mut skipped = 0;
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let speaker = dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        for file in wav_files(&dir)? {
            match ingest(&file, target_rate) {
                Ok((path, audio)) => speakers.entry(speaker.clone()).or_default().push(ManifestEntry {
                    path,
                    speaker_id: speaker.clone(),
                    num_samples: audio.len(),
                    sample_rate: target_rate,
                }),
                Err(_) => skipped += 1,
            }
        }
    }
    if speakers.is_empty() {
        return Err(Error::EmptyDataset(format!("no readable WAV files under {}", root.display())));
    }
    if val_speakers >= speakers.len() {
        return Err(Error::EmptyDataset(format!(
            "holding out {val_speakers} of {} speakers leaves no training data",
            speakers.len()
        )));
    }
    let split_at = speakers.len() - val_speakers;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, (_, entries)) in speakers.into_iter().enumerate() {
        if i < split_at {
            train.extend(entries);
        } else {
            val.extend(entries);
        }
    }
    let manifest = |entries| DatasetManifest {
        entries,
        crop_length,
        target_rate,
    };
    Ok(ManifestSplit {
        train: manifest(train),
        val: manifest(val),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMangleConfig {
    pub enabled: bool,
    pub f_min: f64,
    pub f_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DequantizeConfig {
    pub enabled: bool,
    pub lsb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub crop: bool,
    pub phase_mangle: PhaseMangleConfig,
    pub dequantize: DequantizeConfig,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop: true,
            phase_mangle: PhaseMangleConfig {
                enabled: true,
                f_min: 20.0,
                f_max: 2000.0,
            },
            dequantize: DequantizeConfig {
                enabled: true,
                lsb: 1.0 / 32768.0,
            },
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn disabled(seed: u64) -> Self {
        let mut a = Self::default();
        a.crop = false;
        a.phase_mangle.enabled = false;
        a.dequantize.enabled = false;
        a.seed = seed;
        a
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let pm = &self.phase_mangle;
        if pm.enabled && !(pm.f_min > 0.0 && pm.f_min < pm.f_max && pm.f_max < sample_rate as f64 / 2.0) {
            return Err(Error::InvalidConfig(format!(
                "phase mangle range [{}, {}] must satisfy 0 < f_min < f_max < {}",
                pm.f_min,
                pm.f_max,
                sample_rate as f64 / 2.0
            )));
        }
        if self.dequantize.enabled && !(self.dequantize.lsb > 0.0) {
            return Err(Error::InvalidConfig("dequantize lsb must be > 0".into()));
        }
        Ok(())
    }
}

fn window(x: &AudioBuffer, offset: usize, crop_length: usize) -> AudioBuffer {
    let s = x.samples();
    let end = (offset + crop_length).min(s.len());
    let mut out = s[offset.min(end)..end].to_vec();
    out.resize(crop_length, 0.0);
    AudioBuffer::new(out, x.sample_rate()).expect("window of finite samples")
}

/// Uniformly placed contiguous window; shorter inputs are zero-padded.
pub fn random_crop<R: Rng + ?Sized>(x: &AudioBuffer, crop_length: usize, rng: &mut R) -> AudioBuffer {
    let slack = x.len().saturating_sub(crop_length);
    let offset = if slack == 0 { 0 } else { rng.gen_range(0..=slack) };
    window(x, offset, crop_length)
}

/// First `crop_length` samples, zero-padded.
pub fn leading_crop(x: &AudioBuffer, crop_length: usize) -> AudioBuffer {
    window(x, 0, crop_length)
}

/// First-order all-pass filter with its 90-degree point at `break_freq`.
pub fn phase_mangle(x: &AudioBuffer, break_freq: f64, rate: u32) -> Result<AudioBuffer> {
    let nyquist = rate as f64 / 2.0;
    if !(break_freq > 0.0 && break_freq < nyquist) {
        return Err(Error::InvalidBreakFrequency {
            freq: break_freq,
            nyquist,
        });
    }
    let t = (std::f64::consts::PI * break_freq / rate as f64).tan();
    let p = (1.0 - t) / (1.0 + t);
    let mut prev_x = 0.0;
    let mut prev_y = 0.0;
    let out = x
        .samples()
        .iter()
        .map(|&v| {
            let y = p * v + prev_x - p * prev_y;
            prev_x = v;
            prev_y = y;
            y
        })
        .collect();
    AudioBuffer::new(out, x.sample_rate())
}

/// Adds uniform noise in `[-lsb/2, lsb/2)` to every sample.
pub fn dequantize<R: Rng + ?Sized>(x: &AudioBuffer, lsb: f64, rng: &mut R) -> AudioBuffer {
    let out = x
        .samples()
        .iter()
        .map(|&v| v + (rng.gen::<f64>() - 0.5) * lsb)
        .collect();
    AudioBuffer::new(out, x.sample_rate()).expect("finite input plus bounded noise")
}

/// Random number stream for one example, keyed by seed and global index so
/// batches do not depend on how work is split between workers.
pub fn example_rng(seed: u64, example_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(example_index);
    rng
}

/// In-memory clips at one sampling rate.
#[derive(Debug, Clone)]
pub struct Dataset {
    ids: Vec<String>,
    clips: Vec<AudioBuffer>,
    crop_length: usize,
    sample_rate: u32,
}

impl Dataset {
    pub fn from_clips(ids: Vec<String>, clips: Vec<AudioBuffer>, crop_length: usize) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::EmptyDataset("no clips".into()));
        }
        if ids.len() != clips.len() {
            return Err(Error::DimensionMismatch {
                expected: clips.len(),
                actual: ids.len(),
            });
        }
        if crop_length == 0 {
            return Err(Error::InvalidConfig("crop_length must be > 0".into()));
        }
        let sample_rate = clips[0].sample_rate();
        if clips.iter().any(|c| c.sample_rate() != sample_rate) {
            return Err(Error::InvalidConfig("clips have mixed sampling rates".into()));
        }
        Ok(Self {
            ids,
            clips,
            crop_length,
            sample_rate,
        })
    }

    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self> {
        if manifest.entries.is_empty() {
            return Err(Error::EmptyDataset("manifest has no entries".into()));
        }
        let mut ids = Vec::new();
        let mut clips = Vec::new();
        for e in &manifest.entries {
            let (_, audio) = ingest(&e.path, manifest.target_rate)?;
            let stem = e.path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            ids.push(format!("{}/{}", e.speaker_id, stem));
            clips.push(audio);
        }
        Self::from_clips(ids, clips, manifest.crop_length)
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn crop_length(&self) -> usize {
        self.crop_length
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn clips(&self) -> &[AudioBuffer] {
        &self.clips
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Deterministic leading crops, one per clip, for validation.
    pub fn eval_items(&self) -> Vec<EvalItem> {
        self.ids
            .iter()
            .zip(&self.clips)
            .map(|(id, c)| EvalItem {
                id: id.clone(),
                audio: leading_crop(c, self.crop_length),
            })
            .collect()
    }

    /// One augmented training example. All randomness comes from the
    /// `(augment.seed, example_index)` stream.
    pub fn example(&self, augment: &AugmentConfig, example_index: u64) -> Result<AudioBuffer> {
        let mut rng = example_rng(augment.seed, example_index);
        let clip = &self.clips[rng.gen_range(0..self.clips.len())];
        let mut x = if augment.crop {
            random_crop(clip, self.crop_length, &mut rng)
        } else {
            leading_crop(clip, self.crop_length)
        };
        let pm = &augment.phase_mangle;
        if pm.enabled {
            let (lo, hi) = (pm.f_min.ln(), pm.f_max.ln());
            let f = rng.gen_range(lo..hi).exp();
            x = phase_mangle(&x, f, self.sample_rate)?;
        }
        if augment.dequantize.enabled {
            x = dequantize(&x, augment.dequantize.lsb, &mut rng);
        }
        Ok(x)
    }
}

/// `batch_size` independent draws (with replacement) of augmented crops.
/// Example `i` of batch `b` uses stream `b * batch_size + i`.
pub fn make_batch(
    dataset: &Dataset,
    augment: &AugmentConfig,
    batch_size: usize,
    batch_index: u64,
) -> Result<Vec<AudioBuffer>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    (0..batch_size as u64)
        .map(|i| dataset.example(augment, batch_index * batch_size as u64 + i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::StftPlan;

    fn ramp(n: usize) -> AudioBuffer {
        AudioBuffer::new((0..n).map(|i| i as f64 / n as f64).collect(), 16000).unwrap()
    }

    #[test]
    fn crop_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = ramp(100);
        assert_eq!(random_crop(&x, 100, &mut rng), x);
        let short = ramp(95);
        let c = random_crop(&short, 100, &mut rng);
        assert_eq!(c.len(), 100);
        assert!(c.samples()[95..].iter().all(|&v| v == 0.0));
        let a = random_crop(&ramp(1000), 10, &mut ChaCha8Rng::seed_from_u64(5));
        let b = random_crop(&ramp(1000), 10, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn phase_mangle_dc_and_impulse() {
        let rate = 16000;
        let dc = AudioBuffer::new(vec![0.4; 4000], rate).unwrap();
        let y = phase_mangle(&dc, 300.0, rate).unwrap();
        assert!(y.samples()[2000..].iter().all(|v| (v - 0.4).abs() < 1e-4));

        let mut imp = vec![0.0; 64];
        imp[0] = 1.0;
        let h = phase_mangle(&AudioBuffer::new(imp, rate).unwrap(), 1000.0, rate).unwrap();
        let t = (std::f64::consts::PI * 1000.0 / 16000.0).tan();
        let p = (1.0 - t) / (1.0 + t);
        assert!(p.abs() < 1.0);
        // h[0] = p, h[n] = (1 - p^2) (-p)^(n-1)
        assert!((h.samples()[0] - p).abs() < 1e-15);
        for n in 1..20 {
            let want = (1.0 - p * p) * (-p).powi(n as i32 - 1);
            assert!((h.samples()[n] - want).abs() < 1e-12);
        }
        assert!(h.samples()[63].abs() < 1e-3);
        assert!(matches!(
            phase_mangle(&dc, 9000.0, rate),
            Err(Error::InvalidBreakFrequency { .. })
        ));
    }

    #[test]
    fn phase_mangle_preserves_magnitudes() {
        let rate = 16000;
        let n = 16384;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / rate as f64;
                (2.0 * std::f64::consts::PI * 500.0 * t).sin()
                    + 0.5 * (2.0 * std::f64::consts::PI * 1500.0 * t).sin()
            })
            .collect();
        let xb = AudioBuffer::new(x, rate).unwrap();
        let y = phase_mangle(&xb, 700.0, rate).unwrap();
        let plan = StftPlan::new(1024, 256).unwrap();
        let mx = plan.magnitudes(xb.samples()).unwrap();
        let my = plan.magnitudes(y.samples()).unwrap();
        let bins = plan.bins();
        let frames = mx.len() / bins;
        for f in frames / 4..3 * frames / 4 {
            for k in [32, 96] {
                let (a, b) = (mx[f * bins + k], my[f * bins + k]);
                assert!((a - b).abs() / a < 1e-3, "frame {f} bin {k}: {a} vs {b}");
            }
        }
        let e = |s: &[f64]| s[4000..12000].iter().map(|v| v * v).sum::<f64>();
        assert!((e(y.samples()) / e(xb.samples()) - 1.0).abs() < 0.005);
    }

    #[test]
    fn dequantize_bounds() {
        let x = ramp(1000);
        let lsb = 1.0 / 32768.0;
        let y = dequantize(&x, lsb, &mut ChaCha8Rng::seed_from_u64(2));
        assert!(x.samples().iter().zip(y.samples()).all(|(a, b)| (a - b).abs() <= lsb / 2.0));
        let z = dequantize(&x, lsb, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(y, z);
        let offset = AudioBuffer::new(x.samples().iter().map(|v| v + 0.5).collect(), 16000).unwrap();
        let tiny = dequantize(&offset, 1e-300, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(tiny, offset);
    }

    #[test]
    fn batches() {
        let clips = vec![ramp(3000), ramp(500)];
        let ds = Dataset::from_clips(vec!["a".into(), "b".into()], clips, 1024).unwrap();
        let aug = AugmentConfig { seed: 3, ..AugmentConfig::default() };
        let b1 = make_batch(&ds, &aug, 16, 0).unwrap();
        assert_eq!(b1.len(), 16);
        assert!(b1.iter().all(|x| x.len() == 1024 && x.samples().iter().all(|v| v.is_finite())));
        assert_eq!(b1, make_batch(&ds, &aug, 16, 0).unwrap());
        assert_ne!(b1, make_batch(&ds, &aug, 16, 1).unwrap());
        // batch b example i == example stream b*size+i
        assert_eq!(make_batch(&ds, &aug, 4, 1).unwrap()[2], ds.example(&aug, 6).unwrap());

        let plain = AugmentConfig::disabled(3);
        for x in make_batch(&ds, &plain, 8, 0).unwrap() {
            let first = &x.samples()[..10];
            assert!(ds.clips().iter().any(|c| &c.samples()[..10] == first));
        }
        assert!(make_batch(&ds, &plain, 0, 0).is_err());
    }

    #[test]
    fn cache_name_detection() {
        assert!(is_resample_cache(Path::new("a/p225_001.22050.wav")));
        assert!(!is_resample_cache(Path::new("a/p225_001.wav")));
        assert!(!is_resample_cache(Path::new("a/v1.2b.wav")));
    }
}
