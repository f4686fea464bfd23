use std::path::Path;

use hound::{SampleFormat, WavSpec};

use super::AudioBuffer;
use crate::{Error, Result};

const PCM16_SCALE: f64 = 32768.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

fn map_hound(err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::Io(e),
        hound::Error::FormatError(msg) => Error::CorruptHeader(msg.to_string()),
        hound::Error::Unsupported => Error::UnsupportedFormat("unsupported WAV encoding".into()),
        other => Error::UnsupportedFormat(other.to_string()),
    }
}

/// Reads a RIFF/WAV file as mono. Multichannel files are averaged per frame.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let file = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
    // The file opened, so read failures from here on mean malformed content.
    let reader = hound::WavReader::new(file).map_err(|e| match map_hound(e) {
        Error::Io(io) => Error::CorruptHeader(io.to_string()),
        other => other,
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::CorruptHeader("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
            .collect::<Result<_, _>>()
            .map_err(|e| Error::CorruptHeader(format!("sample data: {e}")))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(|e| Error::CorruptHeader(format!("sample data: {e}")))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{bits}-bit {fmt:?} samples"
            )))
        }
    };
    if interleaved.len() % channels != 0 {
        return Err(Error::CorruptHeader("truncated final frame".into()));
    }
    let mono = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    AudioBuffer::new(mono, spec.sample_rate)
}

/// Writes a mono WAV file. PCM16 output clamps to `[-1, 1 - 1/32768]`.
pub fn write_wav(buffer: &AudioBuffer, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
    let (bits, format) = match encoding {
        WavEncoding::Pcm16 => (16, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate(),
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec).map_err(map_hound)?;
    match encoding {
        WavEncoding::Pcm16 => {
            let hi = 1.0 - 1.0 / PCM16_SCALE;
            for &s in buffer.samples() {
                let q = (s.clamp(-1.0, hi) * PCM16_SCALE).round() as i16;
                writer.write_sample(q).map_err(map_hound)?;
            }
        }
        WavEncoding::Float32 => {
            for &s in buffer.samples() {
                writer.write_sample(s as f32).map_err(map_hound)?;
            }
        }
    }
    writer.finalize().map_err(map_hound)?;
    Ok(())
}
