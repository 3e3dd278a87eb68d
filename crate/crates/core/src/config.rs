//! Experiment configuration: one TOML document covering corpus, features
//! and every method's hyperparameters, with dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::activity::{ActivityModelConfig, ActivityTrainConfig};
use crate::audio::GenerationConfig;
use crate::baseline::{AeConfig, AeTrainConfig};
use crate::error::{AsdError, Result};
use crate::eval::Method;
use crate::features::FeatureConfig;
use crate::gmm::GmmConfig;
use crate::nn::AdamConfig;
use crate::util::short_hash;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub frame_size: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub window_len: usize,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            frame_size: 1024,
            hop: 512,
            n_mels: 128,
            window_len: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SadSection {
    pub channels: usize,
    pub residual_blocks: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Windows sampled per clip per epoch; 0 visits all of them.
    pub windows_per_clip: usize,
    pub epsilon: f64,
}

impl Default for SadSection {
    fn default() -> Self {
        Self {
            channels: 32,
            residual_blocks: 3,
            embed_dim: 64,
            epochs: 20,
            lr: 1e-3,
            batch_size: 64,
            windows_per_clip: 0,
            epsilon: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmSection {
    pub components: usize,
    pub max_iter: usize,
    pub tolerance: f64,
    pub max_samples: usize,
    pub epsilon: f64,
}

impl Default for GmmSection {
    fn default() -> Self {
        let g = GmmConfig::default();
        Self {
            components: g.n_components,
            max_iter: g.max_iter,
            tolerance: g.tolerance,
            max_samples: g.max_samples,
            epsilon: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeSection {
    pub hidden_dim: usize,
    pub bottleneck_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Windows sampled per epoch; 0 visits all of them.
    pub windows_per_epoch: usize,
    pub epsilon_labeled: f64,
    pub epsilon_unlabeled: f64,
}

impl Default for AeSection {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            bottleneck_dim: 8,
            epochs: 100,
            lr: 1e-3,
            batch_size: 64,
            windows_per_epoch: 0,
            epsilon_labeled: 0.0,
            epsilon_unlabeled: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: GenerationConfig,
    pub features: FeatureSection,
    pub sad: SadSection,
    pub gmm: GmmSection,
    pub ae: AeSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            corpus: GenerationConfig::default(),
            features: FeatureSection::default(),
            sad: SadSection::default(),
            gmm: GmmSection::default(),
            ae: AeSection::default(),
        }
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| AsdError::Config(format!("bad key '{key}'")))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| AsdError::Config(format!("'{p}' in '{key}' is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string (so `out_dir=runs/a` works unquoted).
fn parse_override_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl ExperimentConfig {
    /// Named starting points: `full` is the reference setting; `desk`
    /// shrinks the embedder and subsamples windows so a run fits in minutes
    /// on one CPU core.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::default()),
            "desk" => {
                let mut c = Self::default();
                c.out_dir = PathBuf::from("runs/desk");
                c.sad.channels = 4;
                c.sad.embed_dim = 16;
                c.sad.windows_per_clip = 16;
                c.ae.epochs = 30;
                c.ae.windows_per_epoch = 2048;
                Ok(c)
            }
            other => Err(AsdError::Config(format!("unknown preset '{other}' (expected full or desk)"))),
        }
    }

    /// Preset, then the optional config file, then `key=value` overrides.
    pub fn load(preset: &str, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = Self::preset(preset)?;
        let mut table = toml::Table::try_from(&base).map_err(|e| AsdError::Config(e.to_string()))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| AsdError::io(path, e))?;
            let over: toml::Table = text
                .parse()
                .map_err(|e| AsdError::Config(format!("{}: {e}", path.display())))?;
            merge(&mut table, over);
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| AsdError::Config(format!("override '{o}' is not key=value")))?;
            set_dotted(&mut table, k.trim(), parse_override_value(v.trim()))?;
        }
        let seed_in_corpus = table
            .get("corpus")
            .and_then(|c| c.get("seed"))
            .and_then(toml::Value::as_integer);
        let mut config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| AsdError::Config(e.to_string()))?;
        if seed_in_corpus.is_some_and(|s| s as u64 != config.seed && s as u64 != base.corpus.seed) {
            return Err(AsdError::Config("set the top-level seed, not corpus.seed".into()));
        }
        config.corpus.seed = config.seed;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.features;
        if f.window_len == 0 || f.n_mels == 0 || f.hop == 0 || f.frame_size == 0 {
            return Err(AsdError::Config("feature sizes must be positive".into()));
        }
        if self.sad.channels == 0 || self.sad.embed_dim == 0 || self.sad.batch_size == 0 {
            return Err(AsdError::Config("sad channels, embed_dim and batch_size must be positive".into()));
        }
        if self.ae.batch_size == 0 || self.ae.hidden_dim == 0 || self.ae.bottleneck_dim == 0 {
            return Err(AsdError::Config("ae sizes must be positive".into()));
        }
        if self.gmm.components == 0 {
            return Err(AsdError::Config("gmm.components must be positive".into()));
        }
        for m in Method::ALL {
            let e = self.epsilon(m);
            if !(e >= 0.0) || !e.is_finite() {
                return Err(AsdError::Config(format!("epsilon for {m} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Content hash of everything that affects results (the output directory
    /// does not).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        short_hash(&serde_json::to_vec(&c).expect("config serializes"))
    }

    /// Hash with the seed removed, shared by the runs of a multi-seed study.
    pub fn protocol_hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.seed = 0;
        c.corpus.seed = 0;
        short_hash(&serde_json::to_vec(&c).expect("config serializes"))
    }

    pub fn generation_config(&self) -> GenerationConfig {
        GenerationConfig {
            seed: self.seed,
            min_samples: self.features.frame_size + (self.features.window_len - 1) * self.features.hop,
            ..self.corpus.clone()
        }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            sample_rate: self.corpus.sample_rate,
            frame_size: self.features.frame_size,
            hop: self.features.hop,
            n_mels: self.features.n_mels,
            window_len: self.features.window_len,
            ..FeatureConfig::default()
        }
    }

    pub fn activity_model_config(&self) -> ActivityModelConfig {
        ActivityModelConfig {
            window_len: self.features.window_len,
            n_mels: self.features.n_mels,
            channels: self.sad.channels,
            residual_blocks: self.sad.residual_blocks,
            embed_dim: self.sad.embed_dim,
        }
    }

    pub fn activity_train_config(&self) -> ActivityTrainConfig {
        ActivityTrainConfig {
            epochs: self.sad.epochs,
            batch_size: self.sad.batch_size,
            adam: AdamConfig {
                lr: self.sad.lr,
                ..AdamConfig::default()
            },
            windows_per_clip: (self.sad.windows_per_clip > 0).then_some(self.sad.windows_per_clip),
            exact_cost_each_epoch: false,
        }
    }

    pub fn gmm_config(&self) -> GmmConfig {
        GmmConfig {
            n_components: self.gmm.components,
            max_iter: self.gmm.max_iter,
            tolerance: self.gmm.tolerance,
            max_samples: self.gmm.max_samples,
            ..GmmConfig::default()
        }
    }

    pub fn ae_config(&self) -> AeConfig {
        AeConfig {
            window_len: self.features.window_len,
            n_mels: self.features.n_mels,
            hidden_dim: self.ae.hidden_dim,
            bottleneck_dim: self.ae.bottleneck_dim,
            ..AeConfig::default()
        }
    }

    pub fn ae_train_config(&self) -> AeTrainConfig {
        AeTrainConfig {
            epochs: self.ae.epochs,
            batch_size: self.ae.batch_size,
            adam: AdamConfig {
                lr: self.ae.lr,
                ..AdamConfig::default()
            },
            windows_per_epoch: (self.ae.windows_per_epoch > 0).then_some(self.ae.windows_per_epoch),
        }
    }

    pub fn epsilon(&self, method: Method) -> f64 {
        match method {
            Method::Sad => self.sad.epsilon,
            Method::OdSad => self.gmm.epsilon,
            Method::AeLabeled => self.ae.epsilon_labeled,
            Method::AeUnlabeled => self.ae.epsilon_unlabeled,
        }
    }
}
