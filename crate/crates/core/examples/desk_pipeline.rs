//! End to end on a shrunken corpus: generate data, train the four
//! detectors, score both splits and print the AUC table. Artifacts go to a
//! directory under the system temp dir.
//!
//! ```bash
//! cargo run --release --example desk_pipeline
//! ```

use asd_core::config::ExperimentConfig;
use asd_core::pipeline;

fn main() -> asd_core::Result<()> {
    let out_dir = std::env::temp_dir().join("asd-desk-example");
    let overrides: Vec<String> = [
        format!("out_dir=\"{}\"", out_dir.display()),
        "corpus.n_train=40".into(),
        "corpus.n_test_per_condition=10".into(),
        "sad.epochs=8".into(),
        "ae.epochs=10".into(),
    ]
    .into();
    let cfg = ExperimentConfig::load("desk", None, &overrides)?;
    println!("config {} -> {}", cfg.hash(), cfg.out_dir.display());
    let report = pipeline::run_all(&cfg)?;
    print!("{}", report.to_text());
    Ok(())
}
