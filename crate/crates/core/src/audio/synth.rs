//! Synthetic stand-in for intermittently running machines recorded in a
//! noisy factory: a harmonic tone gated by randomized start/stop intervals.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Condition;
use super::{mean_power, ActivityIntervals, AudioClip, DEFAULT_SAMPLE_RATE};
use crate::error::{AsdError, Result};
use crate::util::rng_for;

/// Shortest active stretch the interval sampler produces.
const MIN_ACTIVE_SECONDS: f64 = 0.4;
/// Shortest gap between two active stretches.
const MIN_GAP_SECONDS: f64 = 0.2;
const RAMP_SECONDS: f64 = 0.04;
const MACHINE_RMS: f64 = 0.1;
const FLOOR_RMS: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Low-pass shaped white noise.
    Broadband,
    /// A second intermittent harmonic machine with a nearby fundamental.
    SimilarMachine,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Broadband => "broadband",
            NoiseKind::SimilarMachine => "similar_machine",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = AsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "broadband" => Ok(NoiseKind::Broadband),
            "similar_machine" | "similar" => Ok(NoiseKind::SimilarMachine),
            other => Err(AsdError::Config(format!("unknown noise kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    None,
    /// Fundamental detuned by 6-12 % while running.
    FreqShift,
    /// One of the three lowest partials drops out while running.
    MissingHarmonic,
    /// Short broadband bursts on top of the running machine.
    TransientClicks,
}

impl AnomalyKind {
    pub const ANOMALOUS: [AnomalyKind; 3] = [
        AnomalyKind::FreqShift,
        AnomalyKind::MissingHarmonic,
        AnomalyKind::TransientClicks,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub sample_rate_hz: u32,
    pub clip_seconds: f64,
    pub machine_fundamental_hz: f64,
    pub n_harmonics: usize,
    pub duty_cycle: f64,
    pub noise_kind: NoiseKind,
    pub anomaly_kind: AnomalyKind,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            sample_rate_hz: DEFAULT_SAMPLE_RATE,
            clip_seconds: 4.0,
            machine_fundamental_hz: 310.0,
            n_harmonics: 8,
            duty_cycle: 0.5,
            noise_kind: NoiseKind::SimilarMachine,
            anomaly_kind: AnomalyKind::None,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn n_samples(&self) -> usize {
        (self.clip_seconds * self.sample_rate_hz as f64).round() as usize
    }

    /// `min_samples` is the smallest clip that still yields one full
    /// feature window (2 * L * hop).
    pub fn validate(&self, min_samples: usize) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(AsdError::Config("sample rate must be positive".into()));
        }
        if !(self.clip_seconds > 0.0) || self.n_samples() < min_samples {
            return Err(AsdError::Config(format!(
                "clip of {} s has fewer than {min_samples} samples",
                self.clip_seconds
            )));
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if !(self.machine_fundamental_hz > 0.0 && self.machine_fundamental_hz < nyquist) {
            return Err(AsdError::Config(format!(
                "fundamental {} Hz outside (0, {nyquist})",
                self.machine_fundamental_hz
            )));
        }
        if self.n_harmonics == 0 {
            return Err(AsdError::Config("need at least one harmonic".into()));
        }
        if !(self.duty_cycle > 0.0 && self.duty_cycle < 1.0) {
            return Err(AsdError::Config(format!(
                "duty cycle {} outside (0, 1)",
                self.duty_cycle
            )));
        }
        let n = self.n_samples() as f64 / self.sample_rate_hz as f64;
        if n < MIN_ACTIVE_SECONDS + MIN_GAP_SECONDS {
            return Err(AsdError::Config(format!(
                "clip of {n} s too short for one active and one inactive stretch"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthesizedClip {
    pub clip: AudioClip,
    pub activity: ActivityIntervals,
    pub condition: Condition,
}

/// Renders one target-machine recording. Deterministic in `spec.seed`.
pub fn synth_machine_clip(spec: &SynthSpec) -> Result<SynthesizedClip> {
    spec.validate(0)?;
    let sr = spec.sample_rate_hz as f64;
    let n = spec.n_samples();
    let mut rng = rng_for(spec.seed, "machine", 0);

    let activity = sample_activity(n, sr, spec.duty_cycle, &mut rng);
    let mask = activity.mask(n);
    let envelope = gate_envelope(&activity, n, sr);

    let jitter = 1.0 + rng.gen_range(-0.01..0.01);
    let f0 = spec.machine_fundamental_hz * jitter;
    let mut amplitudes: Vec<f64> = (1..=spec.n_harmonics)
        .map(|k| (k as f64).powf(-0.7))
        .collect();
    let base_rms = (amplitudes.iter().map(|a| a * a / 2.0).sum::<f64>()).sqrt();
    for a in &mut amplitudes {
        *a *= MACHINE_RMS / base_rms;
    }

    let mut anomaly_shift = 0.0;
    let mut dropped = None;
    match spec.anomaly_kind {
        AnomalyKind::FreqShift => {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            anomaly_shift = sign * rng.gen_range(0.06..0.12);
        }
        AnomalyKind::MissingHarmonic => dropped = Some(rng.gen_range(0..3.min(spec.n_harmonics))),
        AnomalyKind::None | AnomalyKind::TransientClicks => {}
    }

    let wobble_phase = rng.gen_range(0.0..2.0 * PI);
    let mut phases: Vec<f64> = (0..spec.n_harmonics)
        .map(|_| rng.gen_range(0.0..2.0 * PI))
        .collect();
    let mut samples = vec![0.0; n];
    for (i, out) in samples.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let shift = if mask[i] { anomaly_shift } else { 0.0 };
        let f = f0 * (1.0 + 0.003 * (2.0 * PI * 0.7 * t + wobble_phase).sin()) * (1.0 + shift);
        let mut v = 0.0;
        for (k, phase) in phases.iter_mut().enumerate() {
            let fk = f * (k + 1) as f64;
            *phase = (*phase + 2.0 * PI * fk / sr) % (2.0 * PI);
            if fk >= 0.45 * sr || (mask[i] && dropped == Some(k)) {
                continue;
            }
            v += amplitudes[k] * phase.sin();
        }
        *out = envelope[i] * v;
    }

    if spec.anomaly_kind == AnomalyKind::TransientClicks {
        add_clicks(&mut samples, &activity, sr, &mut rng);
    }
    let floor = FLOOR_RMS * 3f64.sqrt();
    for s in &mut samples {
        *s += rng.gen_range(-floor..floor);
    }

    let mut clip = AudioClip::new(samples, spec.sample_rate_hz)?;
    let clipped = clip.clip_to_unit_range();
    if clipped > 0 {
        log::warn!("synth_machine_clip: clipped {clipped} samples (seed {})", spec.seed);
    }
    let condition = if spec.anomaly_kind == AnomalyKind::None {
        Condition::Normal
    } else {
        Condition::Anomalous
    };
    Ok(SynthesizedClip {
        clip,
        activity,
        condition,
    })
}

/// Renders environmental noise of the given kind, `n_samples` long.
///
/// `SimilarMachine` noise is another harmonic machine whose fundamental sits
/// 8-20 % above or below `target_fundamental_hz`, running on its own random
/// schedule over a faint broadband bed.
pub fn synth_noise(
    kind: NoiseKind,
    n_samples: usize,
    sample_rate_hz: u32,
    target_fundamental_hz: f64,
    n_harmonics: usize,
    seed: u64,
) -> Result<AudioClip> {
    let sr = sample_rate_hz as f64;
    let mut rng = rng_for(seed, "noise", 0);
    let mut samples = shaped_noise(n_samples, &mut rng);
    match kind {
        NoiseKind::Broadband => {}
        NoiseKind::SimilarMachine => {
            scale_to_rms(&mut samples, 0.2 * MACHINE_RMS);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let f0 = target_fundamental_hz * (1.0 + sign * rng.gen_range(0.08..0.2));
            let activity = sample_activity(n_samples, sr, 0.6, &mut rng);
            let envelope = gate_envelope(&activity, n_samples, sr);
            let amplitudes: Vec<f64> = (1..=n_harmonics).map(|k| 1.0 / k as f64).collect();
            let mut phases: Vec<f64> = (0..n_harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let mut tone = vec![0.0; n_samples];
            for (i, out) in tone.iter_mut().enumerate() {
                let mut v = 0.0;
                for (k, phase) in phases.iter_mut().enumerate() {
                    let fk = f0 * (k + 1) as f64;
                    *phase = (*phase + 2.0 * PI * fk / sr) % (2.0 * PI);
                    if fk < 0.45 * sr {
                        v += amplitudes[k] * phase.sin();
                    }
                }
                *out = envelope[i] * v;
            }
            scale_to_rms(&mut tone, MACHINE_RMS);
            for (s, t) in samples.iter_mut().zip(&tone) {
                *s += t;
            }
        }
    }
    scale_to_rms(&mut samples, MACHINE_RMS);
    AudioClip::new(samples, sample_rate_hz)
}

fn shaped_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut state = 0.0;
    (0..n)
        .map(|_| {
            let white: f64 = rng.gen_range(-1.0..1.0);
            state = 0.9 * state + 0.1 * white;
            state + 0.15 * white
        })
        .collect()
}

fn scale_to_rms(samples: &mut [f64], rms: f64) {
    let p = mean_power(samples);
    if p > 0.0 {
        let g = rms / p.sqrt();
        for s in samples {
            *s *= g;
        }
    }
}

/// Draws alternating active/inactive stretches whose total active time is
/// `duty * n * U(0.7, 1.3)`, with at least one of each kind.
pub(crate) fn sample_activity<R: Rng + ?Sized>(
    n: usize,
    sr: f64,
    duty: f64,
    rng: &mut R,
) -> ActivityIntervals {
    let min_seg = ((MIN_ACTIVE_SECONDS * sr) as usize).min(n / 2).max(1);
    let min_gap = ((MIN_GAP_SECONDS * sr) as usize).min(n / 4).max(1);
    let target = (duty * n as f64 * rng.gen_range(0.7..1.3)) as usize;
    let active = target.clamp(min_seg, n - min_gap);

    let mut k = rng.gen_range(1..=3usize);
    while k > 1 && (k * min_seg > active || (k - 1) * min_gap > n - active) {
        k -= 1;
    }
    let seg_lengths = split_with_minimum(active, k, min_seg, rng);
    let inactive = n - active;
    // k + 1 gaps; interior gaps keep a minimum so stretches never merge
    let interior_min = (k - 1) * min_gap;
    let weights: Vec<f64> = (0..=k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let spare = inactive - interior_min;
    let total_w: f64 = weights.iter().sum();
    let mut gaps: Vec<usize> = weights
        .iter()
        .map(|w| (spare as f64 * w / total_w) as usize)
        .collect();
    let assigned: usize = gaps.iter().sum();
    gaps[k] += spare - assigned;
    for g in gaps.iter_mut().take(k).skip(1) {
        *g += min_gap;
    }

    let mut intervals = Vec::with_capacity(k);
    let mut cursor = gaps[0];
    for (i, len) in seg_lengths.into_iter().enumerate() {
        intervals.push((cursor, cursor + len));
        cursor += len + gaps[i + 1];
    }
    debug_assert_eq!(cursor, n);
    ActivityIntervals::new(intervals).expect("sampler produces sorted disjoint intervals")
}

fn split_with_minimum<R: Rng + ?Sized>(total: usize, k: usize, min: usize, rng: &mut R) -> Vec<usize> {
    let spare = total - k * min;
    let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
    let sum: f64 = weights.iter().sum();
    let mut parts: Vec<usize> = weights
        .iter()
        .map(|w| min + (spare as f64 * w / sum) as usize)
        .collect();
    let assigned: usize = parts.iter().sum();
    parts[k - 1] += total - assigned;
    parts
}

/// 1 inside active stretches with raised-cosine attack and release ramps.
fn gate_envelope(activity: &ActivityIntervals, n: usize, sr: f64) -> Vec<f64> {
    let mut env = vec![0.0; n];
    let ramp = (RAMP_SECONDS * sr) as usize;
    for &(start, end) in activity.as_slice() {
        let len = end - start;
        let r = ramp.min(len / 2).max(1);
        for (j, e) in env[start..end].iter_mut().enumerate() {
            let edge = j.min(len - 1 - j);
            *e = if edge >= r {
                1.0
            } else {
                0.5 - 0.5 * (PI * edge as f64 / r as f64).cos()
            };
        }
    }
    env
}

fn add_clicks<R: Rng + ?Sized>(samples: &mut [f64], activity: &ActivityIntervals, sr: f64, rng: &mut R) {
    let burst = (0.004 * sr) as usize;
    for &(start, end) in activity.as_slice() {
        let count = (((end - start) as f64 / sr) * 8.0).ceil() as usize;
        for _ in 0..count {
            if end - start <= burst {
                continue;
            }
            let at = rng.gen_range(start..end - burst);
            let amp = 4.0 * MACHINE_RMS * rng.gen_range(0.7..1.3);
            for j in 0..burst {
                let decay = (-(j as f64) / (0.25 * burst as f64)).exp();
                samples[at + j] += amp * decay * rng.gen_range(-1.0..1.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn normal_spec_gives_normal_condition() {
        let out = synth_machine_clip(&SynthSpec::default()).unwrap();
        assert_eq!(out.condition, Condition::Normal);
        assert_eq!(out.clip.len(), 64000);
        let anomalous = synth_machine_clip(&SynthSpec {
            anomaly_kind: AnomalyKind::FreqShift,
            ..SynthSpec::default()
        })
        .unwrap();
        assert_eq!(anomalous.condition, Condition::Anomalous);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SynthSpec {
            seed: 42,
            anomaly_kind: AnomalyKind::TransientClicks,
            ..SynthSpec::default()
        };
        let a = synth_machine_clip(&spec).unwrap();
        let b = synth_machine_clip(&spec).unwrap();
        assert_eq!(a.activity, b.activity);
        assert!(a
            .clip
            .samples
            .iter()
            .zip(&b.clip.samples)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn active_duration_tracks_duty_cycle_over_seeds() {
        for seed in 0..100 {
            let spec = SynthSpec {
                seed,
                ..SynthSpec::default()
            };
            let out = synth_machine_clip(&spec).unwrap();
            let active = out.activity.total_active() as f64 / 16000.0;
            assert!((1.2..=2.8).contains(&active), "seed {seed}: {active} s active");
            // at least one active and one inactive stretch
            assert!(!out.activity.is_empty());
            assert!(out.activity.total_active() < out.clip.len());
        }
    }

    #[test]
    fn interval_sampler_respects_bounds_for_many_duties() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for duty in [0.1, 0.3, 0.5, 0.7, 0.9] {
            for _ in 0..50 {
                let iv = sample_activity(64000, 16000.0, duty, &mut rng);
                iv.check_within(64000).unwrap();
                assert!(iv.total_active() > 0 && iv.total_active() < 64000);
            }
        }
    }

    #[test]
    fn machine_is_silent_outside_activity_apart_from_floor() {
        let out = synth_machine_clip(&SynthSpec {
            seed: 5,
            ..SynthSpec::default()
        })
        .unwrap();
        let mask = out.activity.mask(out.clip.len());
        let floor = FLOOR_RMS * 3f64.sqrt();
        for (s, active) in out.clip.samples.iter().zip(mask) {
            if !active {
                assert!(s.abs() <= floor + 1e-12);
            }
        }
    }

    #[test]
    fn anomalies_change_only_active_samples() {
        for kind in AnomalyKind::ANOMALOUS {
            let base = SynthSpec {
                seed: 11,
                ..SynthSpec::default()
            };
            let normal = synth_machine_clip(&base).unwrap();
            let anomalous = synth_machine_clip(&SynthSpec {
                anomaly_kind: kind,
                ..base
            })
            .unwrap();
            // the anomaly draws consume randomness, so compare activity only
            // through the interval sampler, which runs first
            assert_eq!(normal.activity, anomalous.activity);
            let mask = anomalous.activity.mask(anomalous.clip.len());
            let differs_inside = normal
                .clip
                .samples
                .iter()
                .zip(&anomalous.clip.samples)
                .zip(&mask)
                .any(|((a, b), &m)| m && (a - b).abs() > 1e-3);
            assert!(differs_inside, "{kind:?}");
        }
    }

    #[test]
    fn noise_kinds_render() {
        for kind in [NoiseKind::Broadband, NoiseKind::SimilarMachine] {
            let n = synth_noise(kind, 16000, 16000, 310.0, 8, 3).unwrap();
            assert!((n.power().sqrt() - MACHINE_RMS).abs() < 1e-9);
            assert_eq!(kind, kind.as_str().parse().unwrap());
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = SynthSpec {
            duty_cycle: 1.0,
            ..SynthSpec::default()
        };
        assert!(synth_machine_clip(&bad).is_err());
        let short = SynthSpec {
            clip_seconds: 0.2,
            ..SynthSpec::default()
        };
        assert!(short.validate(5120).is_err());
    }
}
