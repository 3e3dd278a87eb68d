//! Autoencoder baseline on five concatenated frames, with reconstruction
//! error as the anomaly score. The labeled variant trains and scores only
//! on windows whose frames are all active.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{AsdError, Result};
use crate::features::{windows, FeatureMatrix, FeatureWindow};
use crate::nn::{mse, Adam, AdamConfig, Checkpoint, LayerSpec, Mode, Network, NetworkSpec, Tensor};
use crate::util::rng_for;

const INFER_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AeVariant {
    WithLabels,
    WithoutLabels,
}

impl AeVariant {
    pub fn uses_labels(self) -> bool {
        self == AeVariant::WithLabels
    }
}

impl fmt::Display for AeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AeVariant::WithLabels => "with_labels",
            AeVariant::WithoutLabels => "without_labels",
        })
    }
}

impl FromStr for AeVariant {
    type Err = AsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with_labels" => Ok(AeVariant::WithLabels),
            "without_labels" => Ok(AeVariant::WithoutLabels),
            other => Err(AsdError::Config(format!("unknown autoencoder variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    pub window_len: usize,
    pub n_mels: usize,
    pub hidden_dim: usize,
    pub bottleneck_dim: usize,
    /// Fully connected layers in each of encoder and decoder.
    pub layers_per_side: usize,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            window_len: 5,
            n_mels: 128,
            hidden_dim: 128,
            bottleneck_dim: 8,
            layers_per_side: 5,
        }
    }
}

impl AeConfig {
    pub fn input_dim(&self) -> usize {
        self.window_len * self.n_mels
    }

    /// FC layers with batch norm and ReLU between each consecutive pair and
    /// a linear output.
    pub fn network_spec(&self) -> NetworkSpec {
        let n = self.layers_per_side;
        let input = self.input_dim();
        let mut widths = vec![input];
        widths.extend(std::iter::repeat(self.hidden_dim).take(n - 1));
        widths.push(self.bottleneck_dim);
        widths.extend(std::iter::repeat(self.hidden_dim).take(n - 1));
        widths.push(input);
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            layers.push(LayerSpec::Linear {
                in_features: pair[0],
                out_features: pair[1],
                bias: true,
            });
            if i + 2 < widths.len() {
                layers.push(LayerSpec::BatchNorm {
                    features: pair[1],
                    momentum: 0.1,
                    eps: 1e-5,
                });
                layers.push(LayerSpec::Relu);
            }
        }
        NetworkSpec {
            input_shape: vec![input],
            layers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Windows drawn per epoch; `None` visits every eligible window.
    pub windows_per_epoch: Option<usize>,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            adam: AdamConfig::default(),
            windows_per_epoch: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AeTrainingLog {
    /// Mean batch loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub windows_per_epoch: usize,
    pub eligible_windows: usize,
}

#[derive(Debug, Clone)]
pub struct AeModel {
    pub config: AeConfig,
    pub variant: AeVariant,
    pub network: Network,
}

fn fully_active(w: &FeatureWindow<'_>) -> bool {
    w.labels.is_some_and(|l| l.iter().all(|&v| v == 1))
}

/// Windows the variant trains or scores on.
pub fn eligible_windows<'a>(
    features: &'a FeatureMatrix,
    variant: AeVariant,
    window_len: usize,
) -> Result<Vec<FeatureWindow<'a>>> {
    let all = windows(features, window_len)?;
    match variant {
        AeVariant::WithoutLabels => Ok(all),
        AeVariant::WithLabels => {
            if features.frame_labels.is_none() {
                return Err(AsdError::Contract(format!(
                    "labeled autoencoder needs activity labels for clip '{}'",
                    features.clip_id
                )));
            }
            Ok(all.into_iter().filter(fully_active).collect())
        }
    }
}

/// Batch boundaries that never leave a single-sample batch behind.
fn batch_ranges(n: usize, size: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n).step_by(size).map(|s| (s, (s + size).min(n))).collect();
    if out.len() > 1 && out.last().is_some_and(|&(s, e)| e - s == 1) {
        let (_, e) = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").1 = e;
    }
    out
}

impl AeModel {
    pub fn new<R: Rng + ?Sized>(config: AeConfig, variant: AeVariant, rng: &mut R) -> Result<Self> {
        if config.layers_per_side == 0 {
            return Err(AsdError::Config("autoencoder needs at least one layer per side".into()));
        }
        let network = Network::new(config.network_spec(), rng)?;
        Ok(Self {
            config,
            variant,
            network,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.network.parameter_count()
    }

    fn stack(&self, wins: &[FeatureWindow<'_>]) -> Result<Tensor> {
        let dim = self.config.input_dim();
        let mut data = Vec::with_capacity(wins.len() * dim);
        for w in wins {
            if w.data.len() != dim {
                return Err(AsdError::Contract(format!("window has {} values, expected {dim}", w.data.len())));
            }
            data.extend_from_slice(w.data);
        }
        Tensor::new(vec![wins.len(), dim], data)
    }

    /// Per-window mean squared reconstruction error (evaluation mode).
    pub fn window_errors(&self, wins: &[FeatureWindow<'_>]) -> Result<Vec<f64>> {
        let dim = self.config.input_dim();
        let mut out = Vec::with_capacity(wins.len());
        for chunk in wins.chunks(INFER_BATCH) {
            let x = self.stack(chunk)?;
            let y = self.network.infer(&x)?;
            for r in 0..chunk.len() {
                let se: f64 = x.row(r).iter().zip(y.row(r)).map(|(a, b)| (a - b) * (a - b)).sum();
                out.push(se / dim as f64);
            }
        }
        Ok(out)
    }

    /// Mean per-window reconstruction error over the clip's eligible windows.
    pub fn score(&self, features: &FeatureMatrix) -> Result<f64> {
        let wins = eligible_windows(features, self.variant, self.config.window_len)?;
        if wins.is_empty() {
            return Err(AsdError::DegenerateInput(format!(
                "clip '{}' has no fully active window",
                features.clip_id
            )));
        }
        let errs = self.window_errors(&wins)?;
        Ok(errs.iter().sum::<f64>() / errs.len() as f64)
    }

    pub fn to_checkpoint(&self, config_hash: &str) -> Checkpoint {
        let mut ckpt = Checkpoint::new(json!({
            "kind": "autoencoder",
            "config_hash": config_hash,
            "variant": self.variant,
            "model_config": self.config,
            "network_spec": self.network.spec(),
            "error_averaging": "per-element within window, then per-window",
        }));
        ckpt.insert_all("ae.", self.network.named_tensors());
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let field = |key: &str| {
            ckpt.meta
                .get(key)
                .cloned()
                .ok_or_else(|| AsdError::Data(format!("checkpoint has no '{key}'")))
        };
        let config: AeConfig =
            serde_json::from_value(field("model_config")?).map_err(|e| AsdError::Parse(format!("ae config: {e}")))?;
        let variant: AeVariant =
            serde_json::from_value(field("variant")?).map_err(|e| AsdError::Parse(format!("ae variant: {e}")))?;
        let mut model = Self::new(config, variant, &mut rng_for(0, "unused", 0))?;
        model.network.load_tensors(&ckpt.tensors, "ae.")?;
        Ok(model)
    }
}

/// Trains the autoencoder to reconstruct the variant's eligible windows.
pub fn train_ae(
    clips: &[FeatureMatrix],
    variant: AeVariant,
    config: AeConfig,
    train: &AeTrainConfig,
    seed: u64,
) -> Result<(AeModel, AeTrainingLog)> {
    if train.batch_size == 0 {
        return Err(AsdError::Config("batch size must be positive".into()));
    }
    let mut pool = Vec::new();
    for clip in clips {
        if clip.n_frames < config.window_len {
            log::warn!("skipping clip '{}': shorter than one window", clip.clip_id);
            continue;
        }
        if variant.uses_labels() && clip.frame_labels.is_none() {
            return Err(AsdError::Config(format!(
                "labeled autoencoder needs activity labels; clip '{}' has none",
                clip.clip_id
            )));
        }
        pool.extend(eligible_windows(clip, variant, config.window_len)?);
    }
    if pool.is_empty() {
        return Err(AsdError::Data(format!("no eligible training windows for the {variant} autoencoder")));
    }
    let mut model = AeModel::new(config, variant, &mut rng_for(seed, "init", 1))?;
    let mut adam = Adam::new(train.adam);
    let mut rng = rng_for(seed, "batching", 1);
    let per_epoch = train.windows_per_epoch.map_or(pool.len(), |n| n.min(pool.len()));
    let mut log = AeTrainingLog {
        windows_per_epoch: per_epoch,
        eligible_windows: pool.len(),
        ..AeTrainingLog::default()
    };
    let mut order: Vec<usize> = (0..pool.len()).collect();
    for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let visit = &order[..per_epoch];
        let mut loss_sum = 0.0;
        let ranges = batch_ranges(visit.len(), train.batch_size);
        for &(s, e) in &ranges {
            let batch: Vec<FeatureWindow<'_>> = visit[s..e].iter().map(|&i| pool[i]).collect();
            let x = model.stack(&batch)?;
            model.network.zero_grad();
            let y = model.network.forward(&x, Mode::Train)?;
            let (loss, grad) = mse(&y, &x)?;
            model.network.backward(&grad)?;
            adam.step(&mut model.network.params_mut())?;
            loss_sum += loss;
        }
        let epoch_loss = loss_sum / ranges.len() as f64;
        log::info!("{variant} autoencoder epoch {}: loss {epoch_loss:.5}", epoch + 1);
        log.epoch_loss.push(epoch_loss);
    }
    Ok((model, log))
}
