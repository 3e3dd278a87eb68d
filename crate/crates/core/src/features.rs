//! Log-mel feature extraction, frame activity labels and sliding windows.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{ActivityIntervals, AudioClip};
use crate::error::{AsdError, Result};
use crate::util::write_atomic;

const CACHE_MAGIC: &[u8; 8] = b"ASDFEAT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    /// 64 ms at 16 kHz.
    pub frame_size: usize,
    /// 50 % of the frame.
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    /// `None` means Nyquist.
    pub f_max: Option<f64>,
    pub log_floor: f64,
    /// Frames per model window (L).
    pub window_len: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_size: 1024,
            hop: 512,
            n_mels: 128,
            f_min: 0.0,
            f_max: None,
            log_floor: 1e-10,
            window_len: 5,
        }
    }
}

impl FeatureConfig {
    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.frame_size {
            0
        } else {
            (n_samples - self.frame_size) / self.hop + 1
        }
    }

    fn f_max(&self) -> f64 {
        self.f_max.unwrap_or(self.sample_rate as f64 / 2.0)
    }
}

/// T x F log-mel frames, row-major, with optional per-frame activity labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub clip_id: String,
    pub frames: Vec<f64>,
    pub n_frames: usize,
    pub n_mels: usize,
    pub frame_size: usize,
    pub hop: usize,
    pub frame_labels: Option<Vec<u8>>,
}

impl FeatureMatrix {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.frames[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.n_frames {
            return Err(AsdError::Contract(format!(
                "{} labels for {} frames",
                labels.len(),
                self.n_frames
            )));
        }
        self.frame_labels = Some(labels);
        Ok(self)
    }

    /// Builds a matrix directly from frame rows (tests, cached features).
    pub fn from_rows(clip_id: &str, frames: Vec<f64>, n_mels: usize) -> Result<Self> {
        if n_mels == 0 || frames.len() % n_mels != 0 {
            return Err(AsdError::Contract(format!(
                "{} values do not form rows of {n_mels}",
                frames.len()
            )));
        }
        Ok(Self {
            clip_id: clip_id.to_string(),
            n_frames: frames.len() / n_mels,
            frames,
            n_mels,
            frame_size: 0,
            hop: 0,
            frame_labels: None,
        })
    }
}

/// L consecutive frames starting at 1-based frame index `start`.
#[derive(Debug, Clone, Copy)]
pub struct FeatureWindow<'a> {
    pub data: &'a [f64],
    pub labels: Option<&'a [u8]>,
    pub clip_id: &'a str,
    pub start: usize,
    pub len: usize,
    pub n_mels: usize,
}

/// Reusable STFT + mel filterbank.
pub struct LogMelExtractor {
    config: FeatureConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    /// Per mel band: first FFT bin and weights from there on.
    filters: Vec<(usize, Vec<f64>)>,
}

impl std::fmt::Debug for LogMelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMelExtractor")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the triangular mel filters.
pub fn mel_center_frequencies(config: &FeatureConfig) -> Vec<f64> {
    mel_edges(config)[1..=config.n_mels].to_vec()
}

fn mel_edges(config: &FeatureConfig) -> Vec<f64> {
    let lo = hz_to_mel(config.f_min);
    let hi = hz_to_mel(config.f_max());
    let n = config.n_mels + 2;
    (0..n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

impl LogMelExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        if config.frame_size < 2 || config.hop == 0 || config.n_mels == 0 {
            return Err(AsdError::Config(format!("invalid feature config {config:?}")));
        }
        if !(config.log_floor > 0.0) {
            return Err(AsdError::Config("log floor must be positive".into()));
        }
        let fft = FftPlanner::new().plan_fft_forward(config.frame_size);
        // periodic Hann
        let window = (0..config.frame_size)
            .map(|i| {
                0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / config.frame_size as f64).cos()
            })
            .collect();
        let n_bins = config.frame_size / 2 + 1;
        let bin_hz = config.sample_rate as f64 / config.frame_size as f64;
        let edges = mel_edges(&config);
        let filters = (0..config.n_mels)
            .map(|m| {
                let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let norm = 2.0 / (hi - lo);
                let weights: Vec<f64> = (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let up = (f - lo) / (center - lo);
                        let down = (hi - f) / (hi - center);
                        norm * up.min(down).max(0.0)
                    })
                    .collect();
                let first = weights.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = weights.iter().rposition(|&w| w > 0.0).map_or(first, |p| p + 1);
                (first, weights[first..last].to_vec())
            })
            .collect();
        Ok(Self {
            config,
            fft,
            window,
            filters,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    /// |STFT|^2 per frame, `frame_size / 2 + 1` bins each.
    pub fn power_spectrogram(&self, clip: &AudioClip) -> Result<Vec<Vec<f64>>> {
        let c = &self.config;
        if clip.len() < c.frame_size {
            return Err(AsdError::DegenerateInput(format!(
                "clip of {} samples is shorter than one {}-sample frame",
                clip.len(),
                c.frame_size
            )));
        }
        let n_frames = c.n_frames(clip.len());
        let n_bins = c.frame_size / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); c.frame_size];
        let mut out = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            let seg = &clip.samples[t * c.hop..t * c.hop + c.frame_size];
            for ((b, s), w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex::new(s * w, 0.0);
            }
            self.fft.process(&mut buf);
            out.push(buf[..n_bins].iter().map(|z| z.norm_sqr()).collect());
        }
        Ok(out)
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureMatrix> {
        if clip.sample_rate_hz != self.config.sample_rate {
            return Err(AsdError::Data(format!(
                "clip at {} Hz, features configured for {} Hz",
                clip.sample_rate_hz, self.config.sample_rate
            )));
        }
        let spec = self.power_spectrogram(clip)?;
        let n_mels = self.config.n_mels;
        let mut frames = Vec::with_capacity(spec.len() * n_mels);
        for power in &spec {
            for (first, weights) in &self.filters {
                let energy: f64 = weights.iter().zip(&power[*first..]).map(|(w, p)| w * p).sum();
                frames.push(energy.max(self.config.log_floor).ln());
            }
        }
        Ok(FeatureMatrix {
            clip_id: String::new(),
            n_frames: spec.len(),
            frames,
            n_mels,
            frame_size: self.config.frame_size,
            hop: self.config.hop,
            frame_labels: None,
        })
    }
}

/// Convenience wrapper building a one-off extractor.
pub fn logmel(clip: &AudioClip, config: &FeatureConfig) -> Result<FeatureMatrix> {
    LogMelExtractor::new(config.clone())?.extract(clip)
}

/// Frame `t` is active iff strictly more than half of its samples are
/// inside an active interval.
pub fn frame_labels(intervals: &ActivityIntervals, n_samples: usize, config: &FeatureConfig) -> Vec<u8> {
    (0..config.n_frames(n_samples))
        .map(|t| {
            let start = t * config.hop;
            let inside = intervals.overlap(start, start + config.frame_size);
            u8::from(2 * inside > config.frame_size)
        })
        .collect()
}

/// All `T - L + 1` stride-1 windows of `len` frames.
pub fn windows(features: &FeatureMatrix, len: usize) -> Result<Vec<FeatureWindow<'_>>> {
    if len == 0 || features.n_frames < len {
        return Err(AsdError::DegenerateInput(format!(
            "{} frames cannot hold a window of {len}",
            features.n_frames
        )));
    }
    let f = features.n_mels;
    Ok((0..=features.n_frames - len)
        .map(|t| FeatureWindow {
            data: &features.frames[t * f..(t + len) * f],
            labels: features.frame_labels.as_deref().map(|l| &l[t..t + len]),
            clip_id: &features.clip_id,
            start: t + 1,
            len,
            n_mels: f,
        })
        .collect())
}

/// Cache layout (little-endian): 8-byte magic `ASDFEAT1`, u32 T, u32 F,
/// then T*F f64 values row-major.
pub fn write_feature_cache(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + 8 * features.frames.len());
    bytes.extend_from_slice(CACHE_MAGIC);
    bytes.extend_from_slice(&(features.n_frames as u32).to_le_bytes());
    bytes.extend_from_slice(&(features.n_mels as u32).to_le_bytes());
    for v in &features.frames {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub fn read_feature_cache(path: &Path, clip_id: &str) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| AsdError::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != CACHE_MAGIC {
        return Err(AsdError::Parse(format!("{}: not a feature cache", path.display())));
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let f = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + 8 * t * f {
        return Err(AsdError::Parse(format!(
            "{}: expected {t}x{f} values, file has {} bytes",
            path.display(),
            bytes.len()
        )));
    }
    let frames = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::from_rows(clip_id, frames, f)
}
