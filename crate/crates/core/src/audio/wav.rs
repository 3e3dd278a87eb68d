use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioClip;
use crate::error::{AsdError, Result};

const PCM16_SCALE: f64 = 32768.0;

/// Reads a mono RIFF/WAVE file (PCM 16-bit or IEEE float 32-bit).
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => AsdError::io(path, io),
        other => AsdError::Parse(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AsdError::UnsupportedFormat(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
            .collect::<std::result::Result<_, _>>(),
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>(),
        (format, bits) => {
            return Err(AsdError::UnsupportedFormat(format!(
                "{}: {bits}-bit {format:?} samples",
                path.display()
            )))
        }
    }
    .map_err(|e| AsdError::Parse(format!("{}: {e}", path.display())))?;
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes the clip as 16-bit PCM mono. Samples outside [-1, 1] saturate.
pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| AsdError::io(parent, e))?;
        }
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => AsdError::io(path, io),
        other => AsdError::Data(format!("{}: {other}", path.display())),
    };
    let mut writer = WavWriter::create(path, spec).map_err(to_err)?;
    for &s in &clip.samples {
        writer.write_sample(quantize_pcm16(s)).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

pub(crate) fn quantize_pcm16(sample: f64) -> i16 {
    (sample * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16
}
