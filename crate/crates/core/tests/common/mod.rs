#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;

use hyperinr::audio::{write_wav, AudioBuffer, WavEncoding};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sine with log-uniform frequency in [110, 880] Hz, random phase and
/// amplitude in [0.3, 0.8].
pub fn random_sine(rng: &mut ChaCha8Rng, len: usize, rate: u32) -> AudioBuffer {
    random_sine_in(rng, len, rate, 110.0, 880.0)
}

/// Sine with log-uniform frequency in [f_lo, f_hi] Hz.
pub fn random_sine_in(rng: &mut ChaCha8Rng, len: usize, rate: u32, f_lo: f64, f_hi: f64) -> AudioBuffer {
    let f = rng.gen_range(f_lo.ln()..f_hi.ln()).exp();
    let phase = rng.gen_range(0.0..2.0 * PI);
    let amp = rng.gen_range(0.3..0.8);
    let s = (0..len)
        .map(|i| amp * (2.0 * PI * f * i as f64 / rate as f64 + phase).sin())
        .collect();
    AudioBuffer::new(s, rate).unwrap()
}

pub fn sine_clips_in(count: usize, len: usize, rate: u32, seed: u64, f_lo: f64, f_hi: f64) -> Vec<AudioBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_sine_in(&mut rng, len, rate, f_lo, f_hi)).collect()
}

pub fn sine_clips(count: usize, len: usize, rate: u32, seed: u64) -> Vec<AudioBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_sine(&mut rng, len, rate)).collect()
}

/// Writes `root/spk{k}/clip{i}.wav` for each speaker.
pub fn write_sine_corpus(root: &Path, speakers: usize, per_speaker: usize, len: usize, rate: u32, seed: u64) {
    let clips = sine_clips(speakers * per_speaker, len, rate, seed);
    for (i, clip) in clips.iter().enumerate() {
        let dir = root.join(format!("spk{}", i / per_speaker));
        std::fs::create_dir_all(&dir).unwrap();
        write_wav(clip, dir.join(format!("clip{}.wav", i % per_speaker)), WavEncoding::Pcm16).unwrap();
    }
}
