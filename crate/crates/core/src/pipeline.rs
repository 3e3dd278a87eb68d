//! The experiment pipeline behind the `asd` subcommands. Every artifact
//! lives under the config's output directory and carries the config hash.
//!
//! ```text
//! <out_dir>/config.toml
//! <out_dir>/corpus/manifest.json, audio/, labels/
//! <out_dir>/models/<method>.ckpt, <method>.log.json
//! <out_dir>/scores/<method>_<split>.csv, <method>.stats.json
//! <out_dir>/report/report.json, report.txt
//! <out_dir>/traces/<clip_id>.csv
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use crate::activity::{train_activity_model, ActivityModel, TraceRow};
use crate::audio::{generate_corpus, read_wav, CorpusManifest, ManifestEntry, Split};
use crate::baseline::{train_ae, AeModel, AeVariant};
use crate::config::ExperimentConfig;
use crate::error::{AsdError, Result};
use crate::eval::{fit_standardizer, read_scores, run_evaluation, scores_csv, EvalReport, Method, ScoreRecord, SeedScores, StandardizationStats};
use crate::features::{frame_labels, FeatureMatrix, LogMelExtractor};
use crate::gmm::{collect_embeddings, fit_gmm, store_gmm, GmmModel};
use crate::nn::Checkpoint;
use crate::util::write_atomic;

pub fn manifest_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("corpus").join("manifest.json")
}

pub fn model_path(cfg: &ExperimentConfig, method: Method) -> PathBuf {
    cfg.out_dir.join("models").join(format!("{method}.ckpt"))
}

pub fn scores_path(cfg: &ExperimentConfig, method: Method, split: Split) -> PathBuf {
    cfg.out_dir.join("scores").join(format!("{method}_{split}.csv"))
}

pub fn stats_path(cfg: &ExperimentConfig, method: Method) -> PathBuf {
    cfg.out_dir.join("scores").join(format!("{method}.stats.json"))
}

pub fn report_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("report")
}

pub fn trace_path(cfg: &ExperimentConfig, clip_id: &str) -> PathBuf {
    cfg.out_dir.join("traces").join(format!("{clip_id}.csv"))
}

fn to_json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s.into_bytes()
}

fn save_config(cfg: &ExperimentConfig) -> Result<()> {
    write_atomic(&cfg.out_dir.join("config.toml"), cfg.to_toml().as_bytes())
}

/// Generates the synthetic corpus for this experiment.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<CorpusManifest> {
    save_config(cfg)?;
    let dir = cfg.out_dir.join("corpus");
    generate_corpus(&cfg.generation_config(), &dir, &cfg.hash())
}

/// Loads the manifest and checks it was generated from this corpus config.
pub fn load_manifest(cfg: &ExperimentConfig) -> Result<CorpusManifest> {
    let path = manifest_path(cfg);
    if !path.exists() {
        return Err(AsdError::Data(format!(
            "no manifest at {}; run gen-data first",
            path.display()
        )));
    }
    let manifest = CorpusManifest::load(&path)?;
    let expected = cfg.generation_config().hash();
    if manifest.generator_config_hash != expected {
        return Err(AsdError::Config(format!(
            "corpus at {} was generated from corpus config {}, current config is {expected}; rerun gen-data",
            path.display(),
            manifest.generator_config_hash
        )));
    }
    Ok(manifest)
}

/// Log-mel features for the given entries, with frame labels attached
/// whenever the entry carries activity intervals.
pub fn extract_features(cfg: &ExperimentConfig, manifest: &CorpusManifest, entries: &[&ManifestEntry]) -> Result<Vec<FeatureMatrix>> {
    let fcfg = cfg.feature_config();
    let extractor = LogMelExtractor::new(fcfg.clone())?;
    entries
        .par_iter()
        .map(|e| {
            let clip = read_wav(&manifest.entry_path(e))?;
            let mut f = extractor.extract(&clip)?;
            f.clip_id = e.clip_id.clone();
            match &e.activity {
                Some(a) => f.with_labels(frame_labels(a, clip.len(), &fcfg)),
                None => Ok(f),
            }
        })
        .collect()
}

fn split_features(cfg: &ExperimentConfig, manifest: &CorpusManifest, split: Split) -> Result<(Vec<ManifestEntry>, Vec<FeatureMatrix>)> {
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    let feats = extract_features(cfg, manifest, &entries)?;
    Ok((entries.into_iter().cloned().collect(), feats))
}

fn require_training_labels(manifest: &CorpusManifest, method: Method) -> Result<()> {
    if method.needs_training_labels() && !manifest.has_labels(Split::Train) {
        return Err(AsdError::Config(format!(
            "{method} needs activity labels for training, but the manifest's train split has none"
        )));
    }
    Ok(())
}

fn checkpoint_meta_insert(ckpt: &mut Checkpoint, key: &str, value: serde_json::Value) {
    if let Some(m) = ckpt.meta.as_object_mut() {
        m.insert(key.into(), value);
    }
}

fn check_hash(ckpt: &Checkpoint, cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let hash = ckpt.meta_str("config_hash")?;
    if hash != cfg.hash() {
        return Err(AsdError::Config(format!(
            "{} was produced under config {hash}, current config is {}",
            path.display(),
            cfg.hash()
        )));
    }
    Ok(())
}

fn train_activity(cfg: &ExperimentConfig, train: &[FeatureMatrix]) -> Result<(ActivityModel, serde_json::Value)> {
    let (model, log) = train_activity_model(train, cfg.activity_model_config(), &cfg.activity_train_config(), cfg.seed)?;
    let cost = model.training_cost(train)?;
    log::info!("activity model trained, final cost {cost:.5}");
    Ok((model, json!({ "epochs": log.epochs, "skipped_clips": log.skipped_clips, "final_cost": cost })))
}

/// Trains one method and writes its checkpoint. For `od-sad`, `reuse` may
/// name an existing `sad` checkpoint so only the mixture is fitted.
pub fn train(cfg: &ExperimentConfig, method: Method, reuse: Option<&Path>) -> Result<PathBuf> {
    let manifest = load_manifest(cfg)?;
    require_training_labels(&manifest, method)?;
    save_config(cfg)?;
    let (_, feats) = split_features(cfg, &manifest, Split::Train)?;
    let hash = cfg.hash();
    let (mut ckpt, log, count) = match method {
        Method::Sad | Method::OdSad => {
            let (model, mut log) = match reuse {
                Some(path) if method == Method::OdSad => {
                    let ckpt = Checkpoint::load(path)?;
                    check_hash(&ckpt, cfg, path)?;
                    log::info!("reusing activity model from {}", path.display());
                    (ActivityModel::from_checkpoint(&ckpt)?, json!({ "reused": path.display().to_string() }))
                }
                Some(_) => return Err(AsdError::Config("--reuse only applies to od-sad".into())),
                None => train_activity(cfg, &feats)?,
            };
            let mut ckpt = model.to_checkpoint(&hash);
            let mut count = model.parameter_count();
            if method == Method::OdSad {
                let emb = collect_embeddings(&model, &feats)?;
                let (gmm, fit) = fit_gmm(&emb, &cfg.gmm_config(), cfg.seed)?;
                count += gmm.weights.len() + gmm.means.len() + gmm.variances.len();
                store_gmm(&mut ckpt, &gmm, &fit);
                log["gmm"] = json!(fit);
            }
            (ckpt, log, count)
        }
        Method::AeLabeled | Method::AeUnlabeled => {
            let variant = if method == Method::AeLabeled { AeVariant::WithLabels } else { AeVariant::WithoutLabels };
            let (model, log) = train_ae(&feats, variant, cfg.ae_config(), &cfg.ae_train_config(), cfg.seed)?;
            let count = model.parameter_count();
            (model.to_checkpoint(&hash), json!(log), count)
        }
    };
    checkpoint_meta_insert(&mut ckpt, "method", json!(method));
    checkpoint_meta_insert(&mut ckpt, "parameter_count", json!(count));
    let path = model_path(cfg, method);
    ckpt.save(&path)?;
    let log = json!({ "config_hash": hash, "method": method, "log": log });
    write_atomic(&path.with_extension("log.json"), &to_json(&log))?;
    Ok(path)
}

/// A trained method ready for scoring.
#[derive(Debug, Clone)]
pub enum Scorer {
    Sad(ActivityModel),
    OdSad(ActivityModel, GmmModel),
    Ae(AeModel),
}

impl Scorer {
    pub fn parameter_count(&self) -> usize {
        match self {
            Scorer::Sad(m) => m.parameter_count(),
            Scorer::OdSad(m, g) => m.parameter_count() + g.weights.len() + g.means.len() + g.variances.len(),
            Scorer::Ae(m) => m.parameter_count(),
        }
    }
}

pub fn load_scorer(cfg: &ExperimentConfig, method: Method) -> Result<Scorer> {
    let path = model_path(cfg, method);
    if !path.exists() {
        return Err(AsdError::Data(format!("no checkpoint at {}; run train --method {method}", path.display())));
    }
    let ckpt = Checkpoint::load(&path)?;
    check_hash(&ckpt, cfg, &path)?;
    Ok(match method {
        Method::Sad => Scorer::Sad(ActivityModel::from_checkpoint(&ckpt)?),
        Method::OdSad => Scorer::OdSad(ActivityModel::from_checkpoint(&ckpt)?, GmmModel::from_checkpoint(&ckpt)?),
        Method::AeLabeled | Method::AeUnlabeled => Scorer::Ae(AeModel::from_checkpoint(&ckpt)?),
    })
}

enum Head {
    Sad,
    OdSad(GmmModel),
    Ae(AeModel),
}

/// Scoring plan with each distinct activity embedder listed once, so a
/// clip is embedded once even when both `sad` and `od-sad` are requested.
struct ScorePlan {
    embedders: Vec<ActivityModel>,
    heads: Vec<(Method, Option<usize>, Head)>,
}

impl ScorePlan {
    fn new(scorers: Vec<(Method, Scorer)>) -> Self {
        let mut embedders: Vec<ActivityModel> = Vec::new();
        let mut index_of = |m: ActivityModel| {
            let tensors = m.embedder.named_tensors();
            match embedders
                .iter()
                .position(|e| e.config == m.config && e.classifier.value == m.classifier.value && e.embedder.named_tensors() == tensors)
            {
                Some(i) => i,
                None => {
                    embedders.push(m);
                    embedders.len() - 1
                }
            }
        };
        let heads = scorers
            .into_iter()
            .map(|(method, s)| match s {
                Scorer::Sad(m) => (method, Some(index_of(m)), Head::Sad),
                Scorer::OdSad(m, g) => (method, Some(index_of(m)), Head::OdSad(g)),
                Scorer::Ae(m) => (method, None, Head::Ae(m)),
            })
            .collect();
        Self { embedders, heads }
    }

    fn score_clip(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        let mut cache: Vec<Option<crate::nn::Tensor>> = vec![None; self.embedders.len()];
        let mut out = Vec::with_capacity(self.heads.len());
        for (method, idx, head) in &self.heads {
            if let Some(i) = *idx {
                if cache[i].is_none() {
                    cache[i] = Some(self.embedders[i].clip_embeddings(features)?);
                }
            }
            let emb = idx.and_then(|i| cache[i].as_ref());
            let value = match (head, emb) {
                (Head::Ae(m), _) => m.score(features),
                (Head::Sad, Some(e)) => self.embedders[idx.unwrap_or(0)]
                    .window_losses_from_embeddings(features, e)
                    .map(|l| l.iter().sum::<f64>() / l.len() as f64),
                (Head::OdSad(g), Some(e)) => g.mean_score(e),
                _ => unreachable!("activity heads always have embeddings"),
            };
            out.push(value.map_err(|e| {
                log::warn!("{method}: clip '{}' could not be scored: {e}", features.clip_id);
                e
            })?);
        }
        Ok(out)
    }
}

/// What to score.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreTarget {
    Split(Split),
    Clip(String),
}

/// Scores the target with each method. Scoring the train split also fits
/// and stores each method's standardizer; other targets use a stored
/// standardizer when one exists. Split targets write one CSV per method.
pub fn score(cfg: &ExperimentConfig, methods: &[Method], target: &ScoreTarget) -> Result<Vec<ScoreRecord>> {
    let manifest = load_manifest(cfg)?;
    let entries: Vec<&ManifestEntry> = match target {
        ScoreTarget::Split(s) => manifest.split(*s).collect(),
        ScoreTarget::Clip(id) => vec![manifest
            .find(id)
            .ok_or_else(|| AsdError::Data(format!("clip '{id}' is not in the manifest")))?],
    };
    for &m in methods {
        if m.needs_inference_labels() {
            if let Some(e) = entries.iter().find(|e| e.activity.is_none()) {
                return Err(AsdError::Config(format!(
                    "{m} needs activity labels at inference; clip '{}' has none",
                    e.clip_id
                )));
            }
        }
    }
    let scorers = methods
        .iter()
        .map(|&m| load_scorer(cfg, m).map(|s| (m, s)))
        .collect::<Result<Vec<_>>>()?;
    let plan = ScorePlan::new(scorers);
    let feats = extract_features(cfg, &manifest, &entries)?;
    let raw: Vec<Vec<f64>> = feats
        .par_iter()
        .map(|f| plan.score_clip(f))
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    for (k, &method) in methods.iter().enumerate() {
        let values: Vec<f64> = raw.iter().map(|r| r[k]).collect();
        let stats = match target {
            ScoreTarget::Split(Split::Train) => {
                let stats = fit_standardizer(&values, cfg.epsilon(method))?;
                let doc = json!({ "config_hash": cfg.hash(), "method": method, "stats": stats });
                write_atomic(&stats_path(cfg, method), &to_json(&doc))?;
                Some(stats)
            }
            _ => load_stats(cfg, method)?,
        };
        let method_records: Vec<ScoreRecord> = entries
            .iter()
            .zip(&values)
            .map(|(e, &raw)| ScoreRecord {
                clip_id: e.clip_id.clone(),
                method,
                snr_db: e.snr_db,
                condition: e.condition,
                raw,
                standardized: stats.map(|s| s.standardize(raw)),
            })
            .collect();
        if let ScoreTarget::Split(split) = target {
            write_atomic(&scores_path(cfg, method, *split), scores_csv(&method_records, &cfg.hash()).as_bytes())?;
        }
        records.extend(method_records);
    }
    Ok(records)
}

fn load_stats(cfg: &ExperimentConfig, method: Method) -> Result<Option<StandardizationStats>> {
    let path = stats_path(cfg, method);
    if !path.exists() {
        log::warn!("no standardizer for {method}; score the train split first to fill the standardized column");
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| AsdError::io(&path, e))?;
    let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| AsdError::Parse(format!("{}: {e}", path.display())))?;
    if doc["config_hash"] != json!(cfg.hash()) {
        return Err(AsdError::Config(format!("{} belongs to a different config", path.display())));
    }
    serde_json::from_value(doc["stats"].clone())
        .map(Some)
        .map_err(|e| AsdError::Parse(format!("{}: {e}", path.display())))
}

/// Builds the report from the persisted test-split scores of one or more
/// runs that differ only in seed.
pub fn evaluate(runs: &[ExperimentConfig]) -> Result<EvalReport> {
    let first = runs.first().ok_or_else(|| AsdError::Config("no runs to evaluate".into()))?;
    let mut seeds = Vec::new();
    let mut counts = BTreeMap::new();
    for cfg in runs {
        if cfg.protocol_hash() != first.protocol_hash() {
            return Err(AsdError::Config(format!(
                "runs in {} and {} differ in more than the seed",
                first.out_dir.display(),
                cfg.out_dir.display()
            )));
        }
        let mut records = Vec::new();
        for m in Method::ALL {
            let path = scores_path(cfg, m, Split::Test);
            if !path.exists() {
                continue;
            }
            let (hash, recs) = read_scores(&path)?;
            if hash != cfg.hash() {
                return Err(AsdError::Config(format!(
                    "{} has config hash {hash}, expected {}; refusing to mix runs",
                    path.display(),
                    cfg.hash()
                )));
            }
            if cfg == first {
                if let Ok(ckpt) = Checkpoint::load(&model_path(cfg, m)) {
                    if let Some(n) = ckpt.meta.get("parameter_count").and_then(|v| v.as_u64()) {
                        counts.insert(m.id().to_string(), n as usize);
                    }
                }
            }
            records.extend(recs);
        }
        if records.is_empty() {
            return Err(AsdError::Data(format!("no test scores under {}", cfg.out_dir.join("scores").display())));
        }
        seeds.push(SeedScores { seed: cfg.seed, records });
    }
    let manifest = load_manifest(first)?;
    let hash = runs.iter().map(ExperimentConfig::hash).collect::<Vec<_>>().join("+");
    run_evaluation(&manifest, &seeds, &hash, counts)
}

pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    write_atomic(&dir.join("report.json"), &to_json(report))?;
    write_atomic(&dir.join("report.txt"), report.to_text().as_bytes())
}

/// Activity trace of one clip from the `sad` checkpoint.
pub fn trace(cfg: &ExperimentConfig, clip_id: &str) -> Result<(Vec<TraceRow>, FeatureMatrix)> {
    let manifest = load_manifest(cfg)?;
    let entry = manifest
        .find(clip_id)
        .ok_or_else(|| AsdError::Data(format!("clip '{clip_id}' is not in the manifest")))?;
    let model = match load_scorer(cfg, Method::Sad)? {
        Scorer::Sad(m) => m,
        _ => unreachable!(),
    };
    let feats = extract_features(cfg, &manifest, &[entry])?.remove(0);
    let rows = model.activity_trace(&feats)?;
    Ok((rows, feats))
}

/// gen-data, train x4, score train and test, evaluate.
pub fn run_all(cfg: &ExperimentConfig) -> Result<EvalReport> {
    gen_data(cfg)?;
    let sad = train(cfg, Method::Sad, None)?;
    train(cfg, Method::OdSad, Some(&sad))?;
    train(cfg, Method::AeLabeled, None)?;
    train(cfg, Method::AeUnlabeled, None)?;
    score(cfg, &Method::ALL, &ScoreTarget::Split(Split::Train))?;
    score(cfg, &Method::ALL, &ScoreTarget::Split(Split::Test))?;
    let report = evaluate(std::slice::from_ref(cfg))?;
    write_report(&report_dir(cfg), &report)?;
    Ok(report)
}
