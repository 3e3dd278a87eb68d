//! Audio clips, activity intervals, WAV I/O, noise mixing and the synthetic
//! machine-sound corpus.

mod corpus;
mod mix;
mod synth;
mod wav;

pub use corpus::{
    generate_corpus, read_activity_json, write_activity_json, Condition, CorpusManifest,
    GenerationConfig, ManifestEntry, Split,
};
pub use mix::{fit_noise_length, measured_snr_db, mix_at_snr, snr_gain, SnrReference};
pub use synth::{synth_machine_clip, synth_noise, AnomalyKind, NoiseKind, SynthSpec, SynthesizedClip};
pub use wav::{read_wav, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{AsdError, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono waveform with amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(AsdError::DegenerateInput("audio clip has no samples".into()));
        }
        if sample_rate_hz == 0 {
            return Err(AsdError::DegenerateInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AsdError::Numeric(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn silent(n_samples: usize, sample_rate_hz: u32) -> Self {
        Self {
            samples: vec![0.0; n_samples],
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Mean squared amplitude over the whole clip.
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }

    /// Clamps every sample into [-1, 1] and returns how many were clipped.
    pub fn clip_to_unit_range(&mut self) -> usize {
        let mut clipped = 0;
        for s in &mut self.samples {
            if s.abs() > 1.0 {
                *s = s.clamp(-1.0, 1.0);
                clipped += 1;
            }
        }
        clipped
    }
}

pub(crate) fn mean_power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

/// Half-open `[start, end)` sample ranges during which the target machine runs.
///
/// Serialized as `[[start, end], ...]`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, usize)>", into = "Vec<(usize, usize)>")]
pub struct ActivityIntervals(Vec<(usize, usize)>);

impl ActivityIntervals {
    /// Validates ordering and disjointness. Length bounds are checked by
    /// [`ActivityIntervals::check_within`].
    pub fn new(intervals: Vec<(usize, usize)>) -> Result<Self> {
        for (i, &(start, end)) in intervals.iter().enumerate() {
            if start >= end {
                return Err(AsdError::Data(format!(
                    "activity interval {i} is empty or reversed: [{start}, {end})"
                )));
            }
            if i > 0 && intervals[i - 1].1 > start {
                return Err(AsdError::Data(format!(
                    "activity intervals {} and {i} overlap or are unsorted",
                    i - 1
                )));
            }
        }
        Ok(Self(intervals))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn check_within(&self, n_samples: usize) -> Result<()> {
        match self.0.last() {
            Some(&(_, end)) if end > n_samples => Err(AsdError::Data(format!(
                "activity interval ends at {end}, past clip length {n_samples}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn as_slice(&self) -> &[(usize, usize)] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_active(&self) -> usize {
        self.0.iter().map(|(s, e)| e - s).sum()
    }

    /// Number of samples of `[start, end)` inside any active interval.
    pub fn overlap(&self, start: usize, end: usize) -> usize {
        self.0
            .iter()
            .map(|&(s, e)| e.min(end).saturating_sub(s.max(start)))
            .sum()
    }

    pub fn contains(&self, sample: usize) -> bool {
        self.0.iter().any(|&(s, e)| s <= sample && sample < e)
    }

    /// Per-sample 0/1 mask of length `n_samples`.
    pub fn mask(&self, n_samples: usize) -> Vec<bool> {
        let mut mask = vec![false; n_samples];
        for &(s, e) in &self.0 {
            for m in &mut mask[s.min(n_samples)..e.min(n_samples)] {
                *m = true;
            }
        }
        mask
    }
}

impl TryFrom<Vec<(usize, usize)>> for ActivityIntervals {
    type Error = AsdError;

    fn try_from(value: Vec<(usize, usize)>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ActivityIntervals> for Vec<(usize, usize)> {
    fn from(value: ActivityIntervals) -> Self {
        value.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_overlapping_intervals() {
        assert!(ActivityIntervals::new(vec![(0, 10), (5, 20)]).is_err());
        assert!(ActivityIntervals::new(vec![(10, 10)]).is_err());
        assert!(ActivityIntervals::new(vec![(0, 10), (10, 20)]).is_ok());
    }

    #[test]
    fn overlap_counts_samples_inside() {
        let iv = ActivityIntervals::new(vec![(10, 20), (30, 40)]).unwrap();
        assert_eq!(iv.overlap(0, 100), 20);
        assert_eq!(iv.overlap(15, 35), 10);
        assert_eq!(iv.overlap(20, 30), 0);
        assert!(iv.check_within(40).is_ok());
        assert!(iv.check_within(39).is_err());
    }

    #[test]
    fn serde_uses_pair_lists() {
        let iv = ActivityIntervals::new(vec![(1, 2), (5, 9)]).unwrap();
        let json = serde_json::to_string(&iv).unwrap();
        assert_eq!(json, "[[1,2],[5,9]]");
        assert!(serde_json::from_str::<ActivityIntervals>("[[5,9],[1,2]]").is_err());
    }

    #[test]
    fn clip_rejects_empty_and_nan() {
        assert!(AudioClip::new(vec![], 16000).is_err());
        assert!(AudioClip::new(vec![f64::NAN], 16000).is_err());
        let mut clip = AudioClip::new(vec![1.5, -0.2, -3.0], 16000).unwrap();
        assert_eq!(clip.clip_to_unit_range(), 2);
        assert_eq!(clip.samples, vec![1.0, -0.2, -1.0]);
    }
}
