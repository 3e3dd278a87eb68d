//! Anomalous machine-sound detection with machine-activity detection as an
//! auxiliary task.
//!
//! A residual CNN embeds windows of log-mel frames and a linear classifier
//! predicts per frame whether the target machine is running. On normal
//! sounds that prediction is easy, so its cross-entropy doubles as an
//! anomaly score (`sad`). A GMM on the same embeddings gives a label-free
//! score (`od-sad`). Two reconstruction autoencoders serve as baselines,
//! and standardized scores are summed into ensembles.
//!
//! ## Modules
//!
//! - [`audio`]: synthetic on/off machine recordings, interfering noise,
//!   SNR-controlled mixing, WAV I/O and the corpus manifest
//! - [`features`]: STFT, mel filterbank, log-mel frames and windows
//! - [`nn`]: tensors, layers with explicit backward passes, Adam,
//!   checkpoints, gradient checking
//! - [`activity`]: the activity-detection model, its loss, training and traces
//! - [`gmm`]: diagonal GMM fitted by EM and the outlier score
//! - [`baseline`]: the autoencoder baseline in both variants
//! - [`eval`]: standardization, ensembles, AUC and the report
//! - [`config`], [`pipeline`]: experiment config and the stages behind the
//!   `asd` binary
//!
//! ## Examples
//!
//! ```text
//! examples/
//! ├── synth_and_mix.rs          # machine clip + similar-machine noise at each SNR
//! ├── logmel_features.rs        # log-mel frames and frame activity labels
//! ├── activity_trace.rs         # train the activity model, score, trace
//! ├── gmm_outlier.rs            # GMM on embeddings, label-free scoring
//! ├── autoencoder_baseline.rs   # both autoencoder variants
//! ├── scoring_and_auc.rs        # standardize, ensemble, AUC
//! └── desk_pipeline.rs          # the whole pipeline on a small corpus
//! ```
//!
//! ```bash
//! cargo run --example synth_and_mix
//! cargo run --example logmel_features
//! cargo run --release --example activity_trace
//! cargo run --release --example gmm_outlier
//! cargo run --release --example autoencoder_baseline
//! cargo run --example scoring_and_auc
//! cargo run --release --example desk_pipeline
//! ```

pub mod activity;
pub mod audio;
pub mod baseline;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod gmm;
pub mod nn;
pub mod pipeline;
pub mod util;

pub use error::{AsdError, Result};
