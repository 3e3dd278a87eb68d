//! Trains the reconstruction autoencoder in both variants and compares
//! reconstruction errors of normal and anomalous clips.
//!
//! ```bash
//! cargo run --release --example autoencoder_baseline
//! ```

use asd_core::audio::{synth_machine_clip, AnomalyKind, SynthSpec};
use asd_core::baseline::{train_ae, AeConfig, AeTrainConfig, AeVariant};
use asd_core::features::{frame_labels, FeatureConfig, FeatureMatrix, LogMelExtractor};

fn clip(anomaly: AnomalyKind, seed: u64) -> asd_core::Result<FeatureMatrix> {
    let machine = synth_machine_clip(&SynthSpec { anomaly_kind: anomaly, seed, ..SynthSpec::default() })?;
    let config = FeatureConfig::default();
    let feats = LogMelExtractor::new(config.clone())?.extract(&machine.clip)?;
    feats.with_labels(frame_labels(&machine.activity, machine.clip.len(), &config))
}

fn main() -> asd_core::Result<()> {
    let train: Vec<FeatureMatrix> = (0..16).map(|s| clip(AnomalyKind::None, s)).collect::<Result<_, _>>()?;
    let test = [clip(AnomalyKind::None, 700)?, clip(AnomalyKind::MissingHarmonic, 701)?];
    let train_config = AeTrainConfig { epochs: 10, windows_per_epoch: Some(512), ..AeTrainConfig::default() };

    for variant in [AeVariant::WithLabels, AeVariant::WithoutLabels] {
        let (ae, log) = train_ae(&train, variant, AeConfig::default(), &train_config, 0)?;
        println!(
            "{variant}: {} parameters, {} eligible windows, loss {:.3} -> {:.3}",
            ae.parameter_count(),
            log.eligible_windows,
            log.epoch_loss.first().copied().unwrap_or(f64::NAN),
            log.epoch_loss.last().copied().unwrap_or(f64::NAN)
        );
        println!("    normal {:.4}, anomalous {:.4}", ae.score(&test[0])?, ae.score(&test[1])?);
    }
    Ok(())
}
