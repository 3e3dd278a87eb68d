#![allow(dead_code)]

use std::path::PathBuf;

use asd_core::config::ExperimentConfig;

/// A corpus and training budget small enough for a few seconds per run.
pub fn small_overrides() -> Vec<String> {
    [
        "corpus.n_train=8",
        "corpus.n_test_per_condition=3",
        "corpus.snr_list=[6.0]",
        "sad.channels=2",
        "sad.embed_dim=4",
        "sad.epochs=2",
        "sad.windows_per_clip=8",
        "ae.epochs=2",
        "ae.windows_per_epoch=128",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Fresh directory under the cargo test scratch area.
pub fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

pub fn small_config(name: &str, extra: &[&str]) -> ExperimentConfig {
    let mut overrides = small_overrides();
    overrides.push(format!("out_dir={}", scratch(name).display()));
    overrides.extend(extra.iter().map(|s| s.to_string()));
    ExperimentConfig::load("desk", None, &overrides).unwrap()
}
