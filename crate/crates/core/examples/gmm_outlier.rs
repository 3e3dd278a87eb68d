//! Fits a diagonal GMM on embeddings of normal clips and scores held-out
//! clips without using their activity labels.
//!
//! ```bash
//! cargo run --release --example gmm_outlier
//! ```

use asd_core::activity::{train_activity_model, ActivityModelConfig, ActivityTrainConfig};
use asd_core::audio::{synth_machine_clip, AnomalyKind, SynthSpec};
use asd_core::features::{frame_labels, FeatureConfig, FeatureMatrix, LogMelExtractor};
use asd_core::gmm::{anomaly_score_od_sad, collect_embeddings, fit_gmm, GmmConfig};

fn clip(anomaly: AnomalyKind, seed: u64) -> asd_core::Result<FeatureMatrix> {
    let machine = synth_machine_clip(&SynthSpec { anomaly_kind: anomaly, seed, ..SynthSpec::default() })?;
    let config = FeatureConfig::default();
    let feats = LogMelExtractor::new(config.clone())?.extract(&machine.clip)?;
    feats.with_labels(frame_labels(&machine.activity, machine.clip.len(), &config))
}

fn main() -> asd_core::Result<()> {
    let train: Vec<FeatureMatrix> = (0..16).map(|s| clip(AnomalyKind::None, s)).collect::<Result<_, _>>()?;
    let model_config = ActivityModelConfig { channels: 4, embed_dim: 8, ..ActivityModelConfig::default() };
    let train_config = ActivityTrainConfig { epochs: 5, windows_per_clip: Some(16), ..ActivityTrainConfig::default() };
    let (model, _) = train_activity_model(&train, model_config, &train_config, 0)?;

    let embeddings = collect_embeddings(&model, &train)?;
    let (gmm, log) = fit_gmm(&embeddings, &GmmConfig::default(), 0)?;
    println!(
        "fit {} components on {} vectors: {} EM iterations, converged {}, final mean log-likelihood {:.3}",
        gmm.n_components(),
        log.n_vectors,
        log.iterations,
        log.converged,
        log.log_likelihood.last().copied().unwrap_or(f64::NAN)
    );

    for (name, kind) in [("normal", AnomalyKind::None), ("freq shift", AnomalyKind::FreqShift), ("clicks", AnomalyKind::TransientClicks)] {
        let mut held_out = clip(kind, 900)?;
        held_out.frame_labels = None;
        println!("{name:>10}: mean NLL {:.3}", anomaly_score_od_sad(&held_out, &model, &gmm)?);
    }
    Ok(())
}
