//! Corpus generation and the JSON manifest that indexes it.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mix::{mix_at_snr, SnrReference};
use super::synth::{synth_machine_clip, synth_noise, AnomalyKind, NoiseKind, SynthSpec};
use super::wav::{read_wav, write_wav};
use super::{ActivityIntervals, DEFAULT_SAMPLE_RATE};
use crate::error::{AsdError, Result};
use crate::util::{derive_seed, rng_for, short_hash, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = AsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(AsdError::Config(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Normal,
    Anomalous,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Normal => "normal",
            Condition::Anomalous => "anomalous",
        })
    }
}

impl std::str::FromStr for Condition {
    type Err = AsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Condition::Normal),
            "anomalous" => Ok(Condition::Anomalous),
            other => Err(AsdError::Data(format!("unknown condition '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub sample_rate: u32,
    pub clip_seconds: f64,
    pub snr_list: Vec<f64>,
    pub n_train: usize,
    /// Normal and anomalous clips each, per (noise kind, SNR) test condition.
    pub n_test_per_condition: usize,
    pub noise_kinds: Vec<NoiseKind>,
    pub seed: u64,
    pub machine_fundamental_hz: f64,
    pub n_harmonics: usize,
    pub duty_cycle: f64,
    /// Measure signal power over active samples only instead of the whole clip.
    pub snr_active_region: bool,
    /// Minimum clip length in samples (2 * L * hop of the feature config).
    pub min_samples: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            clip_seconds: 4.0,
            snr_list: vec![6.0, 0.0, -6.0, -12.0],
            n_train: 120,
            n_test_per_condition: 30,
            noise_kinds: vec![NoiseKind::SimilarMachine],
            seed: 0,
            machine_fundamental_hz: 310.0,
            n_harmonics: 8,
            duty_cycle: 0.5,
            snr_active_region: false,
            min_samples: 2 * 5 * 512,
        }
    }
}

impl GenerationConfig {
    pub fn hash(&self) -> String {
        short_hash(&serde_json::to_vec(self).expect("config serializes"))
    }

    fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return Err(AsdError::Config("n_train must be positive".into()));
        }
        if self.n_test_per_condition == 0 {
            return Err(AsdError::Config("n_test_per_condition must be positive".into()));
        }
        if self.snr_list.is_empty() || self.snr_list.iter().any(|s| !s.is_finite()) {
            return Err(AsdError::Config("snr_list must hold finite values".into()));
        }
        if self.noise_kinds.is_empty() {
            return Err(AsdError::Config("noise_kind must name at least one kind".into()));
        }
        self.synth_spec(AnomalyKind::None, 0).validate(self.min_samples)
    }

    fn synth_spec(&self, anomaly_kind: AnomalyKind, seed: u64) -> SynthSpec {
        SynthSpec {
            sample_rate_hz: self.sample_rate,
            clip_seconds: self.clip_seconds,
            machine_fundamental_hz: self.machine_fundamental_hz,
            n_harmonics: self.n_harmonics,
            duty_cycle: self.duty_cycle,
            noise_kind: self.noise_kinds[0],
            anomaly_kind,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    /// Relative to the manifest's directory.
    pub file_path: String,
    pub split: Split,
    pub condition: Condition,
    pub anomaly_kind: AnomalyKind,
    /// Ground-truth activity; `None` in label-free manifests.
    pub activity: Option<ActivityIntervals>,
    pub snr_db: f64,
    pub noise_profile_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub config_hash: String,
    pub generator_config_hash: String,
    pub seed: u64,
    pub sample_rate_hz: u32,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AsdError::io(path, e))?;
        let mut manifest: CorpusManifest = serde_json::from_str(&text)
            .map_err(|e| AsdError::Parse(format!("{}: {e}", path.display())))?;
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.check_entries()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(path, json.as_bytes())
    }

    pub fn entry_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.file_path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn find(&self, clip_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.clip_id == clip_id)
    }

    /// Drops every ground-truth activity annotation.
    pub fn without_labels(&self) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.activity = None;
        }
        out
    }

    pub fn has_labels(&self, split: Split) -> bool {
        self.split(split).all(|e| e.activity.is_some())
    }

    /// Structural invariants: unique ids, normal-only training split.
    pub fn check_entries(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.clip_id.as_str()) {
                return Err(AsdError::Data(format!("duplicate clip_id '{}'", e.clip_id)));
            }
            if e.split == Split::Train && e.condition != Condition::Normal {
                return Err(AsdError::Data(format!(
                    "training clip '{}' is not normal",
                    e.clip_id
                )));
            }
        }
        Ok(())
    }

    /// Structural checks plus: every referenced file exists and parses.
    pub fn validate(&self) -> Result<()> {
        self.check_entries()?;
        for e in &self.entries {
            let clip = read_wav(&self.entry_path(e))?;
            if clip.sample_rate_hz != self.sample_rate_hz {
                return Err(AsdError::Data(format!(
                    "{}: sample rate {} differs from corpus rate {}",
                    e.clip_id, clip.sample_rate_hz, self.sample_rate_hz
                )));
            }
            if let Some(activity) = &e.activity {
                activity.check_within(clip.len())?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ActivityFile {
    clip_id: String,
    intervals: ActivityIntervals,
}

pub fn write_activity_json(path: &Path, clip_id: &str, activity: &ActivityIntervals) -> Result<()> {
    let json = serde_json::to_string(&ActivityFile {
        clip_id: clip_id.to_string(),
        intervals: activity.clone(),
    })
    .expect("activity serializes");
    write_atomic(path, json.as_bytes())
}

pub fn read_activity_json(path: &Path) -> Result<(String, ActivityIntervals)> {
    let text = fs::read_to_string(path).map_err(|e| AsdError::io(path, e))?;
    let file: ActivityFile = serde_json::from_str(&text)
        .map_err(|e| AsdError::Parse(format!("{}: {e}", path.display())))?;
    Ok((file.clip_id, file.intervals))
}

struct ClipJob {
    index: u64,
    clip_id: String,
    split: Split,
    anomaly_kind: AnomalyKind,
    snr_db: f64,
    noise_kind: NoiseKind,
}

fn snr_tag(snr_db: f64) -> String {
    format!("{snr_db}dB")
}

fn plan_jobs(config: &GenerationConfig) -> Vec<ClipJob> {
    let mut jobs = Vec::new();
    let n_snr = config.snr_list.len();
    for i in 0..config.n_train {
        let snr_db = config.snr_list[i % n_snr];
        let noise_kind = config.noise_kinds[(i / n_snr) % config.noise_kinds.len()];
        jobs.push(ClipJob {
            index: jobs.len() as u64,
            clip_id: format!("train_{i:04}"),
            split: Split::Train,
            anomaly_kind: AnomalyKind::None,
            snr_db,
            noise_kind,
        });
    }
    for &noise_kind in &config.noise_kinds {
        for &snr_db in &config.snr_list {
            for i in 0..config.n_test_per_condition {
                for anomalous in [false, true] {
                    let (anomaly_kind, tag) = if anomalous {
                        (AnomalyKind::ANOMALOUS[i % 3], "anomalous")
                    } else {
                        (AnomalyKind::None, "normal")
                    };
                    jobs.push(ClipJob {
                        index: jobs.len() as u64,
                        clip_id: format!("test_{noise_kind}_{}_{tag}_{i:03}", snr_tag(snr_db)),
                        split: Split::Test,
                        anomaly_kind,
                        snr_db,
                        noise_kind,
                    });
                }
            }
        }
    }
    jobs
}

/// Synthesizes, mixes and writes the whole corpus under `out_dir`, then
/// writes `out_dir/manifest.json` last.
///
/// Output is a pure function of `config`: clip `i` draws every random value
/// from sub-seeds of `config.seed` keyed by `i`.
pub fn generate_corpus(
    config: &GenerationConfig,
    out_dir: &Path,
    config_hash: &str,
) -> Result<CorpusManifest> {
    config.validate()?;
    let jobs = plan_jobs(config);
    let entries = jobs
        .par_iter()
        .map(|job| render_job(config, job, out_dir))
        .collect::<Result<Vec<_>>>()?;
    let manifest = CorpusManifest {
        config_hash: config_hash.to_string(),
        generator_config_hash: config.hash(),
        seed: config.seed,
        sample_rate_hz: config.sample_rate,
        entries,
        root: out_dir.to_path_buf(),
    };
    manifest.check_entries()?;
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

fn render_job(config: &GenerationConfig, job: &ClipJob, out_dir: &Path) -> Result<ManifestEntry> {
    let spec = SynthSpec {
        noise_kind: job.noise_kind,
        ..config.synth_spec(job.anomaly_kind, derive_seed(config.seed, "corpus/machine", job.index))
    };
    let machine = synth_machine_clip(&spec)?;
    let noise = synth_noise(
        job.noise_kind,
        machine.clip.len(),
        config.sample_rate,
        config.machine_fundamental_hz,
        config.n_harmonics,
        derive_seed(config.seed, "corpus/noise", job.index),
    )?;
    let reference = if config.snr_active_region {
        SnrReference::ActiveRegion(&machine.activity)
    } else {
        SnrReference::WholeClip
    };
    let mut rng = rng_for(config.seed, "corpus/mix", job.index);
    let mixed = mix_at_snr(&machine.clip, &noise, job.snr_db, reference, &mut rng)?;

    let rel_wav = format!("audio/{}/{}.wav", job.split, job.clip_id);
    let rel_json = format!("labels/{}/{}.json", job.split, job.clip_id);
    write_wav(&mixed, &out_dir.join(&rel_wav))?;
    write_activity_json(&out_dir.join(&rel_json), &job.clip_id, &machine.activity)?;
    Ok(ManifestEntry {
        clip_id: job.clip_id.clone(),
        file_path: rel_wav,
        split: job.split,
        condition: machine.condition,
        anomaly_kind: job.anomaly_kind,
        activity: Some(machine.activity),
        snr_db: job.snr_db,
        noise_profile_id: job.noise_kind.to_string(),
    })
}
