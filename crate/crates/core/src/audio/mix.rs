use rand::Rng;

use super::{mean_power, ActivityIntervals, AudioClip};
use crate::error::{AsdError, Result};

/// Which samples of the signal define its power when setting the SNR.
#[derive(Debug, Clone, Copy, Default)]
pub enum SnrReference<'a> {
    /// Mean squared amplitude over the full clip, inactive sections included.
    #[default]
    WholeClip,
    /// Mean squared amplitude of the signal inside the active intervals only.
    ActiveRegion(&'a ActivityIntervals),
}

/// Noise gain giving `10 log10(p_signal / (g^2 p_noise)) = snr_db`.
pub fn snr_gain(p_signal: f64, p_noise: f64, snr_db: f64) -> f64 {
    (p_signal / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt()
}

pub fn measured_snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (mean_power(signal) / mean_power(noise)).log10()
}

/// Brings `noise` to exactly `len` samples: tiled from a random circular
/// offset when shorter, randomly cropped when longer.
pub fn fit_noise_length<R: Rng + ?Sized>(noise: &[f64], len: usize, rng: &mut R) -> Vec<f64> {
    match noise.len().cmp(&len) {
        std::cmp::Ordering::Equal => noise.to_vec(),
        std::cmp::Ordering::Greater => {
            let start = rng.gen_range(0..=noise.len() - len);
            noise[start..start + len].to_vec()
        }
        std::cmp::Ordering::Less => {
            let offset = rng.gen_range(0..noise.len());
            (0..len).map(|i| noise[(offset + i) % noise.len()]).collect()
        }
    }
}

/// Returns `signal + g * noise` with `g` chosen so the two addends have the
/// requested SNR. Output samples are clamped to [-1, 1]; clamping is logged.
pub fn mix_at_snr<R: Rng + ?Sized>(
    signal: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
    reference: SnrReference<'_>,
    rng: &mut R,
) -> Result<AudioClip> {
    if signal.sample_rate_hz != noise.sample_rate_hz {
        return Err(AsdError::Data(format!(
            "sample rate mismatch: signal {} Hz, noise {} Hz",
            signal.sample_rate_hz, noise.sample_rate_hz
        )));
    }
    if !snr_db.is_finite() {
        return Err(AsdError::Config(format!("SNR must be finite, got {snr_db}")));
    }
    let noise = fit_noise_length(&noise.samples, signal.len(), rng);
    let p_noise = mean_power(&noise);
    if p_noise <= 0.0 {
        return Err(AsdError::DegenerateInput("noise has zero power".into()));
    }
    let p_signal = match reference {
        SnrReference::WholeClip => signal.power(),
        SnrReference::ActiveRegion(intervals) => {
            let active: Vec<f64> = intervals
                .as_slice()
                .iter()
                .flat_map(|&(s, e)| signal.samples[s.min(signal.len())..e.min(signal.len())].iter().copied())
                .collect();
            mean_power(&active)
        }
    };
    if p_signal <= 0.0 {
        return Err(AsdError::DegenerateInput("signal has zero power".into()));
    }
    let gain = snr_gain(p_signal, p_noise, snr_db);
    let samples = signal
        .samples
        .iter()
        .zip(&noise)
        .map(|(s, n)| s + gain * n)
        .collect();
    let mut mixed = AudioClip::new(samples, signal.sample_rate_hz)?;
    let clipped = mixed.clip_to_unit_range();
    if clipped > 0 {
        log::debug!("mix_at_snr: clipped {clipped} samples at {snr_db} dB");
    }
    Ok(mixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gain_closed_forms() {
        assert_eq!(snr_gain(1.0, 1.0, 0.0), 1.0);
        assert!((snr_gain(0.3, 0.3, 6.0) - 10f64.powf(-0.3)).abs() < 1e-12);
        assert!((snr_gain(0.3, 0.3, 6.0) - 0.50119).abs() < 1e-5);
        assert!((snr_gain(0.3, 0.3, -12.0) - 3.98107).abs() < 1e-5);
    }

    #[test]
    fn zero_power_noise_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = AudioClip::new(vec![0.1; 100], 16000).unwrap();
        let n = AudioClip::silent(100, 16000);
        assert!(matches!(
            mix_at_snr(&s, &n, 0.0, SnrReference::WholeClip, &mut rng),
            Err(AsdError::DegenerateInput(_))
        ));
        let silent = AudioClip::silent(100, 16000);
        let noise = AudioClip::new(vec![0.1; 100], 16000).unwrap();
        assert!(mix_at_snr(&silent, &noise, 0.0, SnrReference::WholeClip, &mut rng).is_err());
    }

    #[test]
    fn noise_is_tiled_or_cropped_to_signal_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let tiled = fit_noise_length(&noise, 25, &mut rng);
        assert_eq!(tiled.len(), 25);
        for w in tiled.windows(2) {
            assert_eq!((w[0] as usize + 1) % 10, w[1] as usize);
        }
        let cropped = fit_noise_length(&noise, 4, &mut rng);
        assert_eq!(cropped.len(), 4);
        assert_eq!(cropped[3] - cropped[0], 3.0);
    }

    #[test]
    fn active_region_reference_uses_only_active_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut samples = vec![0.0; 200];
        for s in &mut samples[50..150] {
            *s = 0.2;
        }
        let signal = AudioClip::new(samples, 16000).unwrap();
        let noise = AudioClip::new(vec![0.05; 200], 16000).unwrap();
        let iv = ActivityIntervals::new(vec![(50, 150)]).unwrap();
        let mixed =
            mix_at_snr(&signal, &noise, 0.0, SnrReference::ActiveRegion(&iv), &mut rng).unwrap();
        // active power 0.04 equals scaled noise power, so g * 0.05 = 0.2
        assert!((mixed.samples[0] - 0.2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn measured_snr_matches_target(seed in 0u64..1000, snr in -24.0f64..24.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let signal: Vec<f64> = (0..512).map(|_| rng.gen_range(-0.3..0.3)).collect();
            let noise: Vec<f64> = (0..512).map(|_| rng.gen_range(-0.3..0.3)).collect();
            let g = snr_gain(mean_power(&signal), mean_power(&noise), snr);
            let scaled: Vec<f64> = noise.iter().map(|n| g * n).collect();
            prop_assert!((measured_snr_db(&signal, &scaled) - snr).abs() < 1e-9);
        }
    }
}
