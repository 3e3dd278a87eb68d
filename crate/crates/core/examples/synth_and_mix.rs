//! Synthesizes one on/off machine recording, renders a similar-machine
//! interferer, and mixes them at each SNR of the sweep.
//!
//! ```bash
//! cargo run --example synth_and_mix
//! ```

use asd_core::audio::{measured_snr_db, mix_at_snr, synth_machine_clip, synth_noise, AnomalyKind, NoiseKind, SnrReference, SynthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> asd_core::Result<()> {
    let spec = SynthSpec {
        anomaly_kind: AnomalyKind::MissingHarmonic,
        seed: 11,
        ..SynthSpec::default()
    };
    let machine = synth_machine_clip(&spec)?;
    println!(
        "{:.1} s clip, condition {}, active intervals (samples): {:?}",
        machine.clip.duration_secs(),
        machine.condition,
        machine.activity.as_slice()
    );

    let noise = synth_noise(
        NoiseKind::SimilarMachine,
        machine.clip.len(),
        spec.sample_rate_hz,
        spec.machine_fundamental_hz,
        spec.n_harmonics,
        99,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for snr in [6.0, 0.0, -6.0, -12.0] {
        let mixed = mix_at_snr(&machine.clip, &noise, snr, SnrReference::WholeClip, &mut rng)?;
        let added: Vec<f64> = mixed.samples.iter().zip(&machine.clip.samples).map(|(m, s)| m - s).collect();
        println!(
            "target {snr:>5.1} dB -> measured {:>6.2} dB, mixture power {:.4}",
            measured_snr_db(&machine.clip.samples, &added),
            mixed.power()
        );
    }
    Ok(())
}
