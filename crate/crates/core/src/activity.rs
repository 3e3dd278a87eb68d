//! Activity-detection model: a residual CNN embeds each frame of an
//! L-frame window, a bias-free two-way linear softmax classifies each
//! embedding as inactive/active, and the summed cross entropy against the
//! ground-truth frame labels is both the training loss and the anomaly
//! score.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{AsdError, Result};
use crate::features::{windows, FeatureMatrix, FeatureWindow};
use crate::nn::{Adam, AdamConfig, Checkpoint, LayerSpec, Mode, Network, NetworkSpec, Param, Tensor};
use crate::util::rng_for;

/// Windows per inference batch.
const INFER_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityModelConfig {
    pub window_len: usize,
    pub n_mels: usize,
    pub channels: usize,
    pub residual_blocks: usize,
    pub embed_dim: usize,
}

impl Default for ActivityModelConfig {
    fn default() -> Self {
        Self {
            window_len: 5,
            n_mels: 128,
            channels: 32,
            residual_blocks: 3,
            embed_dim: 64,
        }
    }
}

impl ActivityModelConfig {
    /// conv(1->C, 3x3, pad 1) + ReLU, residual blocks, then a frame-wise
    /// shared fully connected layer from C*F to D.
    pub fn embedder_spec(&self) -> NetworkSpec {
        let c = self.channels;
        let mut layers = vec![
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: c,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::Relu,
        ];
        layers.extend((0..self.residual_blocks).map(|_| LayerSpec::Residual { channels: c, kernel: 3 }));
        layers.push(LayerSpec::FrameFlatten);
        layers.push(LayerSpec::Linear {
            in_features: c * self.n_mels,
            out_features: self.embed_dim,
            bias: true,
        });
        NetworkSpec {
            input_shape: vec![1, self.window_len, self.n_mels],
            layers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Windows drawn per clip per epoch; `None` visits every window.
    pub windows_per_clip: Option<usize>,
    /// Evaluate the exact training cost after every epoch.
    pub exact_cost_each_epoch: bool,
}

impl Default for ActivityTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            adam: AdamConfig::default(),
            windows_per_clip: None,
            exact_cost_each_epoch: false,
        }
    }
}

/// L x D frame embeddings of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub values: Vec<f64>,
    pub dim: usize,
}

impl EmbeddingSequence {
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn frame(&self, l: usize) -> &[f64] {
        &self.values[l * self.dim..(l + 1) * self.dim]
    }
}

/// Per-frame `[p_inactive, p_active]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSequence(pub Vec<[f64; 2]>);

#[derive(Debug, Clone)]
pub struct ActivityModel {
    pub config: ActivityModelConfig,
    pub embedder: Network,
    /// `[2, D]`: row 0 is w1 (inactive), row 1 is w2 (active).
    pub classifier: Param,
}

fn logits(x: &[f64], w: &[f64], dim: usize) -> [f64; 2] {
    let dot = |row: &[f64]| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    [dot(&w[..dim]), dot(&w[dim..2 * dim])]
}

fn two_way_softmax(z: [f64; 2]) -> [f64; 2] {
    let lo = f64::MIN_POSITIVE;
    let hi = 1.0 - f64::EPSILON;
    // sigma(z2 - z1) without overflow
    let d = z[1] - z[0];
    let p_active = if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    };
    let p_active = p_active.clamp(lo, hi);
    [1.0 - p_active, p_active]
}

/// `-ln softmax(z)[label]`, evaluated in the log domain.
fn frame_loss(z: [f64; 2], label: u8) -> f64 {
    let max = z[0].max(z[1]);
    let lse = max + ((z[0] - max).exp() + (z[1] - max).exp()).ln();
    lse - z[label as usize]
}

/// Applies the linear-softmax classifier to every embedding row.
pub fn classify(embeddings: &EmbeddingSequence, classifier: &Tensor) -> Result<PosteriorSequence> {
    let dim = embeddings.dim;
    classifier.expect_shape(&[2, dim], "classifier weights")?;
    Ok(PosteriorSequence(
        (0..embeddings.len())
            .map(|l| two_way_softmax(logits(embeddings.frame(l), classifier.data(), dim)))
            .collect(),
    ))
}

/// Summed cross entropy `-sum_l ln p_l[y_l]` of posteriors against labels.
pub fn detection_loss(posteriors: &PosteriorSequence, labels: &[u8]) -> Result<f64> {
    if posteriors.0.len() != labels.len() {
        return Err(AsdError::Contract(format!(
            "{} posteriors for {} labels",
            posteriors.0.len(),
            labels.len()
        )));
    }
    Ok(posteriors
        .0
        .iter()
        .zip(labels)
        .map(|(p, &y)| -p[y as usize].ln())
        .sum())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Weighted mean window loss over the windows visited this epoch.
    pub sampled_cost: f64,
    pub exact_cost: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub initial_cost: Option<f64>,
    pub epochs: Vec<EpochLog>,
    pub skipped_clips: Vec<String>,
}

/// One row of an activity trace: window start `t` and offset `l`, both 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub l: usize,
    pub p_active: f64,
}

impl ActivityModel {
    pub fn new<R: Rng + ?Sized>(config: ActivityModelConfig, rng: &mut R) -> Result<Self> {
        let embedder = Network::new(config.embedder_spec(), rng)?;
        // zero init: w1 = w2, so every posterior starts at [0.5, 0.5]
        let classifier = Param::zeros(vec![2, config.embed_dim]);
        Ok(Self {
            config,
            embedder,
            classifier,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.embedder.parameter_count() + self.classifier.len()
    }

    fn batch_tensor(&self, wins: &[FeatureWindow<'_>]) -> Result<Tensor> {
        let (l, f) = (self.config.window_len, self.config.n_mels);
        let mut data = Vec::with_capacity(wins.len() * l * f);
        for w in wins {
            if w.len != l || w.n_mels != f {
                return Err(AsdError::Contract(format!(
                    "window is {}x{}, model expects {l}x{f}",
                    w.len, w.n_mels
                )));
            }
            data.extend_from_slice(w.data);
        }
        Tensor::new(vec![wins.len(), 1, l, f], data)
    }

    /// `[B * L, D]` embeddings for a batch of windows (evaluation mode).
    pub fn embed_windows(&self, wins: &[FeatureWindow<'_>]) -> Result<Tensor> {
        let mut out = Vec::with_capacity(wins.len() * self.config.window_len * self.embed_dim());
        for chunk in wins.chunks(INFER_BATCH) {
            out.extend_from_slice(self.embedder.infer(&self.batch_tensor(chunk)?)?.data());
        }
        Tensor::new(vec![wins.len() * self.config.window_len, self.embed_dim()], out)
    }

    pub fn embed(&self, window: &FeatureWindow<'_>) -> Result<EmbeddingSequence> {
        let t = self.embed_windows(std::slice::from_ref(window))?;
        Ok(EmbeddingSequence {
            values: t.into_data(),
            dim: self.embed_dim(),
        })
    }

    pub fn classify(&self, embeddings: &EmbeddingSequence) -> Result<PosteriorSequence> {
        classify(embeddings, &self.classifier.value)
    }

    /// Embeddings of every window of the clip, window-major: row
    /// `(t - 1) * L + (l - 1)` holds frame `l` of window `t`.
    pub fn clip_embeddings(&self, features: &FeatureMatrix) -> Result<Tensor> {
        let wins = windows(features, self.config.window_len)?;
        self.embed_windows(&wins)
    }

    /// Per-window detection error given precomputed clip embeddings.
    pub fn window_losses_from_embeddings(&self, features: &FeatureMatrix, embeddings: &Tensor) -> Result<Vec<f64>> {
        let labels = features.frame_labels.as_deref().ok_or_else(|| {
            AsdError::Contract(format!(
                "clip '{}' has no activity labels; label-free scoring uses the embedding outlier detector",
                features.clip_id
            ))
        })?;
        let (l, d) = (self.config.window_len, self.embed_dim());
        let n_windows = features.n_frames + 1 - l;
        embeddings.expect_shape(&[n_windows * l, d], "clip embeddings")?;
        let w = self.classifier.value.data();
        Ok((0..n_windows)
            .map(|t| {
                (0..l)
                    .map(|j| frame_loss(logits(embeddings.row(t * l + j), w, d), labels[t + j]))
                    .sum()
            })
            .collect())
    }

    pub fn window_losses(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        if features.frame_labels.is_none() {
            return self.window_losses_from_embeddings(features, &Tensor::zeros(vec![1]));
        }
        let emb = self.clip_embeddings(features)?;
        self.window_losses_from_embeddings(features, &emb)
    }

    /// Mean detection error over all T - L + 1 windows of a labeled clip.
    pub fn anomaly_score(&self, features: &FeatureMatrix) -> Result<f64> {
        let losses = self.window_losses(features)?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// Posterior of activity for every (window, offset) pair.
    pub fn activity_trace(&self, features: &FeatureMatrix) -> Result<Vec<TraceRow>> {
        let emb = self.clip_embeddings(features)?;
        let (l, d) = (self.config.window_len, self.embed_dim());
        let w = self.classifier.value.data();
        Ok((0..emb.rows())
            .map(|r| TraceRow {
                t: r / l + 1,
                l: r % l + 1,
                p_active: two_way_softmax(logits(emb.row(r), w, d))[1],
            })
            .collect())
    }

    /// Mean over clips of each clip's mean window loss.
    pub fn training_cost(&self, clips: &[FeatureMatrix]) -> Result<f64> {
        let scores = clips
            .par_iter()
            .filter(|c| c.n_frames >= self.config.window_len)
            .map(|c| self.anomaly_score(c))
            .collect::<Result<Vec<_>>>()?;
        if scores.is_empty() {
            return Err(AsdError::DegenerateInput("no clip holds a full window".into()));
        }
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }

    /// One optimizer step on a weighted batch; returns the weighted loss sum.
    fn train_step(&mut self, adam: &mut Adam, batch: &[(FeatureWindow<'_>, f64)]) -> Result<f64> {
        let total = self.batch_gradients(batch)?;
        let mut params = self.embedder.params_mut();
        params.push(&mut self.classifier);
        adam.step(&mut params)?;
        Ok(total)
    }

    /// Fills parameter gradients of the batch loss
    /// `(1/B) * sum_i weight_i * loss_i` and returns `sum_i weight_i * loss_i`.
    fn batch_gradients(&mut self, batch: &[(FeatureWindow<'_>, f64)]) -> Result<f64> {
        let (l, d) = (self.config.window_len, self.embed_dim());
        let wins: Vec<FeatureWindow<'_>> = batch.iter().map(|(w, _)| *w).collect();
        let x = self.batch_tensor(&wins)?;
        self.embedder.zero_grad();
        self.classifier.zero_grad();
        let emb = self.embedder.forward(&x, Mode::Train)?;
        let w = self.classifier.value.data().to_vec();
        let scale = 1.0 / batch.len() as f64;
        let mut demb = vec![0.0; emb.len()];
        let mut total = 0.0;
        for (bi, (win, weight)) in batch.iter().enumerate() {
            let labels = win
                .labels
                .ok_or_else(|| AsdError::Contract("training window without labels".into()))?;
            for (j, &y) in labels.iter().enumerate() {
                let r = bi * l + j;
                let xr = emb.row(r);
                let z = logits(xr, &w, d);
                total += weight * frame_loss(z, y);
                let p = two_way_softmax(z);
                let g = [
                    weight * scale * (p[0] - f64::from(y == 0)),
                    weight * scale * (p[1] - f64::from(y == 1)),
                ];
                for c in 0..2 {
                    let gw = &mut self.classifier.grad[c * d..(c + 1) * d];
                    for (gw, xv) in gw.iter_mut().zip(xr) {
                        *gw += g[c] * xv;
                    }
                }
                let dx = &mut demb[r * d..(r + 1) * d];
                for (k, v) in dx.iter_mut().enumerate() {
                    *v = g[0] * w[k] + g[1] * w[d + k];
                }
            }
        }
        self.embedder.backward(&Tensor::new(emb.shape().to_vec(), demb)?)?;
        Ok(total)
    }

    pub fn to_checkpoint(&self, config_hash: &str) -> Checkpoint {
        let mut ckpt = Checkpoint::new(json!({
            "kind": "activity",
            "config_hash": config_hash,
            "model_config": self.config,
            "embedder_spec": self.embedder.spec(),
            "embed_dim": self.embed_dim(),
        }));
        ckpt.insert_all("embedder.", self.embedder.named_tensors());
        ckpt.tensors.insert("classifier.w".into(), self.classifier.value.clone());
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: ActivityModelConfig = serde_json::from_value(
            ckpt.meta
                .get("model_config")
                .cloned()
                .ok_or_else(|| AsdError::Data("checkpoint has no activity model config".into()))?,
        )
        .map_err(|e| AsdError::Parse(format!("activity model config: {e}")))?;
        let mut model = Self::new(config, &mut rng_for(0, "unused", 0))?;
        model.embedder.load_tensors(&ckpt.tensors, "embedder.")?;
        let w = ckpt.tensor("classifier.w")?;
        w.expect_shape(&[2, model.embed_dim()], "classifier.w")?;
        model.classifier = Param::new(w.clone());
        Ok(model)
    }
}

/// Writes the trace as CSV with header `t,l,p_active`.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("t,l,p_active\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.t, r.l, r.p_active).expect("write to string");
    }
    out
}

/// Fraction of trace rows whose thresholded posterior matches the label of
/// the frame it describes.
pub fn trace_accuracy(rows: &[TraceRow], frame_labels: &[u8]) -> f64 {
    let hits = rows
        .iter()
        .filter(|r| u8::from(r.p_active >= 0.5) == frame_labels[r.t + r.l - 2])
        .count();
    hits as f64 / rows.len() as f64
}

/// Trains on labeled normal clips, minimizing the per-clip mean window
/// loss averaged over clips.
///
/// Each epoch draws `windows_per_clip` windows from every clip (or all of
/// them), so each clip carries equal weight; when clips contribute unequal
/// window counts the per-window losses are reweighted to keep that balance.
pub fn train_activity_model(
    clips: &[FeatureMatrix],
    model_config: ActivityModelConfig,
    train: &ActivityTrainConfig,
    seed: u64,
) -> Result<(ActivityModel, TrainingLog)> {
    let l = model_config.window_len;
    let mut log = TrainingLog::default();
    let mut usable = Vec::new();
    for clip in clips {
        if clip.frame_labels.is_none() {
            return Err(AsdError::Config(format!(
                "training clip '{}' has no activity labels",
                clip.clip_id
            )));
        }
        if clip.n_frames < l {
            log::warn!("skipping clip '{}': {} frames < window {l}", clip.clip_id, clip.n_frames);
            log.skipped_clips.push(clip.clip_id.clone());
        } else {
            usable.push(clip);
        }
    }
    if usable.is_empty() {
        return Err(AsdError::Data("every training clip is shorter than one window".into()));
    }
    if train.batch_size == 0 {
        return Err(AsdError::Config("batch size must be positive".into()));
    }
    let mut model = ActivityModel::new(model_config, &mut rng_for(seed, "init", 0))?;
    let mut adam = Adam::new(train.adam);
    let mut rng = rng_for(seed, "batching", 0);
    let per_clip: Vec<Vec<FeatureWindow<'_>>> = usable
        .iter()
        .map(|c| windows(c, l))
        .collect::<Result<_>>()?;
    let owned: Vec<FeatureMatrix> = if train.exact_cost_each_epoch {
        usable.iter().map(|c| (*c).clone()).collect()
    } else {
        Vec::new()
    };
    if train.exact_cost_each_epoch {
        log.initial_cost = Some(model.training_cost(&owned)?);
    }

    for epoch in 0..train.epochs {
        let mut plan: Vec<(FeatureWindow<'_>, f64)> = Vec::new();
        let counts: Vec<usize> = per_clip
            .iter()
            .map(|w| train.windows_per_clip.map_or(w.len(), |n| n.min(w.len())))
            .collect();
        let total: usize = counts.iter().sum();
        let mean_count = total as f64 / per_clip.len() as f64;
        for (wins, &count) in per_clip.iter().zip(&counts) {
            let weight = mean_count / count as f64;
            if count == wins.len() {
                plan.extend(wins.iter().map(|w| (*w, weight)));
            } else {
                plan.extend(wins.choose_multiple(&mut rng, count).map(|w| (*w, weight)));
            }
        }
        plan.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in plan.chunks(train.batch_size) {
            sum += model.train_step(&mut adam, batch)?;
        }
        let sampled_cost = sum / plan.len() as f64;
        let exact_cost = if train.exact_cost_each_epoch {
            Some(model.training_cost(&owned)?)
        } else {
            None
        };
        log::info!("activity epoch {}: cost {sampled_cost:.5}", epoch + 1);
        log.epochs.push(EpochLog {
            epoch: epoch + 1,
            sampled_cost,
            exact_cost,
        });
    }
    Ok((model, log))
}
