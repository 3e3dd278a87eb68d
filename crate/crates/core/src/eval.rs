//! Score standardization, ensembles, AUC and the evaluation report.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{Condition, CorpusManifest, Split};
use crate::error::{AsdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ae-labeled")]
    AeLabeled,
    #[serde(rename = "sad")]
    Sad,
    #[serde(rename = "ae-unlabeled")]
    AeUnlabeled,
    #[serde(rename = "od-sad")]
    OdSad,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::AeLabeled, Method::Sad, Method::AeUnlabeled, Method::OdSad];

    pub fn id(self) -> &'static str {
        match self {
            Method::AeLabeled => "ae-labeled",
            Method::Sad => "sad",
            Method::AeUnlabeled => "ae-unlabeled",
            Method::OdSad => "od-sad",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::AeLabeled => "(i) UASD w/ labels",
            Method::Sad => "(ii) UASD-SAD",
            Method::AeUnlabeled => "(iii) UASD w/o labels",
            Method::OdSad => "(iv) UASD-OD-SAD",
        }
    }

    pub fn needs_training_labels(self) -> bool {
        self != Method::AeUnlabeled
    }

    pub fn needs_inference_labels(self) -> bool {
        matches!(self, Method::AeLabeled | Method::Sad)
    }

    pub fn default_epsilon(self) -> f64 {
        if self == Method::Sad {
            1000.0
        } else {
            0.0
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = AsdError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| AsdError::Config(format!("unknown method '{s}' (expected sad, od-sad, ae-labeled or ae-unlabeled)")))
    }
}

/// The two ensembles of the report: labeled AE with SAD, unlabeled AE with OD-SAD.
pub const ENSEMBLES: [[Method; 2]; 2] = [[Method::AeLabeled, Method::Sad], [Method::AeUnlabeled, Method::OdSad]];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mu: f64,
    pub sigma2: f64,
    pub epsilon: f64,
}

/// Population mean and variance of training-split scores.
pub fn fit_standardizer(scores: &[f64], epsilon: f64) -> Result<StandardizationStats> {
    if scores.len() < 2 {
        return Err(AsdError::DegenerateInput(format!(
            "standardization needs at least 2 training scores, got {}",
            scores.len()
        )));
    }
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(AsdError::Config(format!("epsilon must be finite and non-negative, got {epsilon}")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(AsdError::Numeric("non-finite training score".into()));
    }
    let n = scores.len() as f64;
    let mu = scores.iter().sum::<f64>() / n;
    let sigma2 = scores.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / n;
    if sigma2 + epsilon <= 0.0 {
        return Err(AsdError::DegenerateInput(
            "training scores are constant and epsilon is 0, so the standardized score is undefined".into(),
        ));
    }
    Ok(StandardizationStats { mu, sigma2, epsilon })
}

impl StandardizationStats {
    pub fn standardize(&self, score: f64) -> f64 {
        (score - self.mu) / (self.sigma2 + self.epsilon).sqrt()
    }
}

pub fn standardize(score: f64, stats: &StandardizationStats) -> f64 {
    stats.standardize(score)
}

/// Sum of standardized member scores.
pub fn ensemble(members: &[Option<f64>]) -> Result<f64> {
    if members.is_empty() {
        return Err(AsdError::Contract("ensemble needs at least one member".into()));
    }
    members
        .iter()
        .map(|m| m.ok_or_else(|| AsdError::Contract("ensemble member score missing".into())))
        .sum()
}

/// Mann-Whitney estimate of P(anomalous > normal), ties counted half.
pub fn auc(normal: &[f64], anomalous: &[f64]) -> Result<f64> {
    if normal.is_empty() || anomalous.is_empty() {
        return Err(AsdError::DegenerateInput("AUC needs both normal and anomalous scores".into()));
    }
    if normal.iter().chain(anomalous).any(|s| s.is_nan()) {
        return Err(AsdError::Numeric("NaN score".into()));
    }
    let mut all: Vec<(f64, bool)> = normal
        .iter()
        .map(|&s| (s, false))
        .chain(anomalous.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // twice the rank sum, to stay in integers for tie blocks
    let mut rank2_sum: u64 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let rank2 = (i + 1 + j) as u64;
        rank2_sum += rank2 * all[i..j].iter().filter(|e| e.1).count() as u64;
        i = j;
    }
    let (na, nn) = (anomalous.len() as u64, normal.len() as u64);
    let u2 = rank2_sum - na * (na + 1);
    Ok(u2 as f64 / (2 * na * nn) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub clip_id: String,
    pub method: Method,
    pub snr_db: f64,
    pub condition: Condition,
    pub raw: f64,
    pub standardized: Option<f64>,
}

pub const SCORE_HEADER: &str = "clip_id,method,snr_db,condition,raw,standardized";

pub fn scores_csv(records: &[ScoreRecord], config_hash: &str) -> String {
    let mut out = format!("# config_hash={config_hash}\n{SCORE_HEADER}\n");
    for r in records {
        let std = r.standardized.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{},{}", r.clip_id, r.method, r.snr_db, r.condition, r.raw, std).expect("string write");
    }
    out
}

/// Parses a score file, returning its config hash and records.
pub fn parse_scores_csv(text: &str) -> Result<(String, Vec<ScoreRecord>)> {
    let mut lines = text.lines();
    let hash = lines
        .next()
        .and_then(|l| l.strip_prefix("# config_hash="))
        .ok_or_else(|| AsdError::Parse("score file must start with '# config_hash='".into()))?
        .to_string();
    if lines.next() != Some(SCORE_HEADER) {
        return Err(AsdError::Parse(format!("score file header must be '{SCORE_HEADER}'")));
    }
    let num = |s: &str, what: &str, line: usize| {
        s.parse::<f64>()
            .map_err(|_| AsdError::Parse(format!("line {line}: bad {what} '{s}'")))
    };
    let mut records = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let n = i + 3;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(AsdError::Parse(format!("line {n}: expected 6 fields, got {}", f.len())));
        }
        let raw = num(f[4], "raw score", n)?;
        if !raw.is_finite() {
            return Err(AsdError::Parse(format!("line {n}: raw score must be finite")));
        }
        records.push(ScoreRecord {
            clip_id: f[0].to_string(),
            method: f[1].parse()?,
            snr_db: num(f[2], "snr", n)?,
            condition: f[3].parse()?,
            raw,
            standardized: if f[5].is_empty() { None } else { Some(num(f[5], "standardized score", n)?) },
        });
    }
    Ok((hash, records))
}

pub fn read_scores(path: &Path) -> Result<(String, Vec<ScoreRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| AsdError::io(path, e))?;
    parse_scores_csv(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucCell {
    pub noise_profile: String,
    pub snr_db: f64,
    /// Mean over seeds.
    pub auc: f64,
    pub per_seed: Vec<f64>,
    pub n_normal: usize,
    pub n_anomalous: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub label: String,
    pub needs_inference_labels: bool,
    pub cells: Vec<AucCell>,
}

impl ReportRow {
    pub fn cell(&self, noise_profile: &str, snr_db: f64) -> Option<&AucCell> {
        self.cells.iter().find(|c| c.noise_profile == noise_profile && c.snr_db == snr_db)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub parameter_counts: BTreeMap<String, usize>,
    pub rows: Vec<ReportRow>,
}

/// Scores of one seed's run: test-split records plus the seed.
#[derive(Debug, Clone)]
pub struct SeedScores {
    pub seed: u64,
    pub records: Vec<ScoreRecord>,
}

fn row_id(members: &[Method]) -> String {
    members.iter().map(|m| m.id()).collect::<Vec<_>>().join("+")
}

fn row_label(members: &[Method]) -> String {
    match members {
        [m] => m.label().to_string(),
        _ => {
            let tags: Vec<&str> = members
                .iter()
                .map(|m| m.label().split(' ').next().unwrap_or("").trim_matches(|c| c == '(' || c == ')'))
                .collect();
            format!("Ensemble of ({}) and ({})", tags[0], tags[1..].join(") and ("))
        }
    }
}

/// Builds the report: one row per method plus one per ensemble, with an AUC per (noise profile, SNR) averaged across seeds.
pub fn run_evaluation(
    manifest: &CorpusManifest,
    runs: &[SeedScores],
    config_hash: &str,
    parameter_counts: BTreeMap<String, usize>,
) -> Result<EvalReport> {
    if runs.is_empty() {
        return Err(AsdError::Config("no score sets to evaluate".into()));
    }
    if !manifest.has_labels(Split::Test) {
        for run in runs {
            if let Some(r) = run.records.iter().find(|r| r.method.needs_inference_labels()) {
                return Err(AsdError::Config(format!(
                    "method {} needs activity labels at inference but the manifest has none",
                    r.method
                )));
            }
        }
    }
    let noise_of: HashMap<&str, &str> = manifest
        .entries
        .iter()
        .map(|e| (e.clip_id.as_str(), e.noise_profile_id.as_str()))
        .collect();

    // each ensemble row follows its members
    let mut row_members: Vec<Vec<Method>> = Vec::new();
    for e in ENSEMBLES {
        row_members.extend(e.iter().map(|&m| vec![m]));
        row_members.push(e.to_vec());
    }

    let mut rows = Vec::new();
    for members in &row_members {
        // (noise, snr bits) -> per-seed AUC and counts
        let mut cells: BTreeMap<(String, i64), (f64, Vec<f64>, usize, usize)> = BTreeMap::new();
        for run in runs {
            // clip -> (snr, condition, member scores)
            let mut clips: BTreeMap<&str, (f64, Condition, Vec<Option<f64>>)> = BTreeMap::new();
            for r in &run.records {
                let Some(k) = members.iter().position(|&m| m == r.method) else {
                    continue;
                };
                let value = if members.len() == 1 { Some(r.raw) } else { r.standardized };
                let slot = clips
                    .entry(r.clip_id.as_str())
                    .or_insert_with(|| (r.snr_db, r.condition, vec![None; members.len()]));
                slot.2[k] = value;
            }
            if clips.is_empty() {
                continue;
            }
            let mut groups: BTreeMap<(String, i64), (f64, Vec<f64>, Vec<f64>)> = BTreeMap::new();
            for (clip, (snr, cond, vals)) in clips {
                let score = ensemble(&vals).map_err(|_| {
                    AsdError::Contract(format!(
                        "clip '{clip}' lacks a standardized score for every member of {}",
                        row_id(members)
                    ))
                })?;
                let noise = noise_of
                    .get(clip)
                    .ok_or_else(|| AsdError::Data(format!("clip '{clip}' is not in the manifest")))?;
                let g = groups
                    .entry((noise.to_string(), (snr * 1000.0).round() as i64))
                    .or_insert((snr, Vec::new(), Vec::new()));
                match cond {
                    Condition::Normal => g.1.push(score),
                    Condition::Anomalous => g.2.push(score),
                }
            }
            for (key, (snr, normal, anomalous)) in groups {
                let a = auc(&normal, &anomalous)?;
                let c = cells.entry(key).or_insert((snr, Vec::new(), normal.len(), anomalous.len()));
                c.1.push(a);
            }
        }
        if cells.is_empty() {
            continue;
        }
        rows.push(ReportRow {
            method: row_id(members),
            label: row_label(members),
            needs_inference_labels: members.iter().any(|m| m.needs_inference_labels()),
            cells: cells
                .into_iter()
                .map(|((noise, _), (snr, per_seed, n_normal, n_anomalous))| AucCell {
                    noise_profile: noise,
                    snr_db: snr,
                    auc: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
                    per_seed,
                    n_normal,
                    n_anomalous,
                })
                .collect(),
        });
    }
    Ok(EvalReport {
        config_hash: config_hash.to_string(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        parameter_counts,
        rows,
    })
}

impl EvalReport {
    pub fn row(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Aligned table, one block per noise profile, AUC in percent.
    pub fn to_text(&self) -> String {
        let mut profiles: Vec<String> = Vec::new();
        let mut snrs: BTreeSet<i64> = BTreeSet::new();
        for c in self.rows.iter().flat_map(|r| &r.cells) {
            if !profiles.contains(&c.noise_profile) {
                profiles.push(c.noise_profile.clone());
            }
            snrs.insert((c.snr_db * 1000.0).round() as i64);
        }
        let snrs: Vec<f64> = snrs.into_iter().rev().map(|s| s as f64 / 1000.0).collect();
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(6).max(6);
        let mut out = format!(
            "AUC (%)  config {}  seeds {:?}\n",
            self.config_hash, self.seeds
        );
        for profile in &profiles {
            write!(out, "\nnoise: {profile}\n{:<width$}", "method").unwrap();
            for s in &snrs {
                write!(out, " {:>7}", format!("{s}dB")).unwrap();
            }
            out.push('\n');
            let mut labeled = None;
            for row in &self.rows {
                if labeled != Some(row.needs_inference_labels) {
                    labeled = Some(row.needs_inference_labels);
                    let head = if row.needs_inference_labels {
                        "-- labels required at inference"
                    } else {
                        "-- no labels at inference"
                    };
                    writeln!(out, "{head}").unwrap();
                }
                write!(out, "{:<width$}", row.label).unwrap();
                for &s in &snrs {
                    match row.cell(profile, s) {
                        Some(c) => write!(out, " {:>7.1}", 100.0 * c.auc).unwrap(),
                        None => write!(out, " {:>7}", "-").unwrap(),
                    }
                }
                out.push('\n');
            }
        }
        if !self.parameter_counts.is_empty() {
            out.push_str("\nparameters:");
            for (k, v) in &self.parameter_counts {
                write!(out, " {k}={v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}
