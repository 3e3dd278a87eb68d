//! Trains a small activity-detection model on noisy normal clips, then
//! prints the anomaly score of a normal and an anomalous clip and the
//! frame-wise activity trace of the anomalous one.
//!
//! ```bash
//! cargo run --release --example activity_trace
//! ```

use asd_core::activity::{trace_accuracy, trace_csv, train_activity_model, ActivityModelConfig, ActivityTrainConfig};
use asd_core::audio::{mix_at_snr, synth_machine_clip, synth_noise, AnomalyKind, NoiseKind, SnrReference, SynthSpec};
use asd_core::features::{frame_labels, FeatureConfig, FeatureMatrix, LogMelExtractor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn labeled_clip(anomaly: AnomalyKind, seed: u64, snr_db: f64) -> asd_core::Result<FeatureMatrix> {
    let spec = SynthSpec { anomaly_kind: anomaly, seed, ..SynthSpec::default() };
    let machine = synth_machine_clip(&spec)?;
    let noise = synth_noise(NoiseKind::SimilarMachine, machine.clip.len(), 16_000, 310.0, 8, seed + 1000)?;
    let mixed = mix_at_snr(&machine.clip, &noise, snr_db, SnrReference::WholeClip, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let config = FeatureConfig::default();
    let mut feats = LogMelExtractor::new(config.clone())?.extract(&mixed)?;
    feats.clip_id = format!("clip{seed}");
    feats.with_labels(frame_labels(&machine.activity, mixed.len(), &config))
}

fn main() -> asd_core::Result<()> {
    let train: Vec<FeatureMatrix> = (0..24).map(|s| labeled_clip(AnomalyKind::None, s, 6.0)).collect::<Result<_, _>>()?;
    let model_config = ActivityModelConfig { channels: 4, embed_dim: 16, ..ActivityModelConfig::default() };
    let train_config = ActivityTrainConfig { epochs: 10, windows_per_clip: Some(16), ..ActivityTrainConfig::default() };
    let (model, log) = train_activity_model(&train, model_config, &train_config, 0)?;
    for e in &log.epochs {
        println!("epoch {:>2}: sampled cost {:.4}", e.epoch, e.sampled_cost);
    }

    let normal = labeled_clip(AnomalyKind::None, 500, 6.0)?;
    let anomalous = labeled_clip(AnomalyKind::FreqShift, 501, 6.0)?;
    println!("score normal {:.4}, anomalous {:.4}", model.anomaly_score(&normal)?, model.anomaly_score(&anomalous)?);

    let rows = model.activity_trace(&anomalous)?;
    let labels = anomalous.frame_labels.as_deref().unwrap_or_default();
    println!("trace accuracy on the anomalous clip: {:.3}", trace_accuracy(&rows, labels));
    print!("{}", trace_csv(&rows[..10.min(rows.len())]));
    Ok(())
}
