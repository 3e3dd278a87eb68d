//! Log-mel features and frame-level activity labels for one clip.
//!
//! ```bash
//! cargo run --example logmel_features
//! ```

use asd_core::audio::{synth_machine_clip, SynthSpec};
use asd_core::features::{frame_labels, windows, FeatureConfig, LogMelExtractor};

fn main() -> asd_core::Result<()> {
    let machine = synth_machine_clip(&SynthSpec { seed: 3, ..SynthSpec::default() })?;
    let config = FeatureConfig::default();
    let extractor = LogMelExtractor::new(config.clone())?;
    let feats = extractor.extract(&machine.clip)?;
    let labels = frame_labels(&machine.activity, machine.clip.len(), &config);

    println!("{} frames x {} mel bands (frame {} / hop {})", feats.n_frames, feats.n_mels, feats.frame_size, feats.hop);
    let strip: String = labels.iter().map(|&y| if y == 1 { '#' } else { '.' }).collect();
    println!("activity: {strip}");

    let energy = |t: usize| feats.row(t).iter().sum::<f64>() / feats.n_mels as f64;
    let (on, off): (Vec<usize>, Vec<usize>) = (0..feats.n_frames).partition(|&t| labels[t] == 1);
    let mean = |ts: &[usize]| ts.iter().map(|&t| energy(t)).sum::<f64>() / ts.len().max(1) as f64;
    println!("mean log-mel level: active {:.2}, inactive {:.2}", mean(&on), mean(&off));

    let feats = feats.with_labels(labels)?;
    let wins = windows(&feats, config.window_len)?;
    println!("{} windows of {} frames", wins.len(), config.window_len);
    Ok(())
}
