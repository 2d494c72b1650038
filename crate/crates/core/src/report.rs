//! Retention reports, length-bias tables and experiment manifests.
//!
//! Everything here is a pure function of scored sentences; nothing is
//! re-translated.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bleu;
use crate::error::ArgumentError;
use crate::filter::{FilterResult, PipelineConfig, SentenceScore, Threshold};

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Argument(#[from] ArgumentError),
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), ReportError> {
    std::fs::write(path, contents).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub language: String,
    pub pre_count: u64,
    pub post_count: u64,
    pub retention_rate: f64,
    pub threshold: Threshold,
    /// `None` (JSON `null`) when the retained set is empty.
    pub mean_len_retained: Option<f64>,
    /// `None` (JSON `null`) when nothing was rejected.
    pub mean_len_rejected: Option<f64>,
    pub mean_len_all: Option<f64>,
    /// Counts over 20 equal-width bins of [0, 1]; 1.0 falls in the last bin.
    pub score_histogram: Vec<u64>,
}

fn mean_len<'a>(scores: impl Iterator<Item = &'a SentenceScore>) -> Option<f64> {
    let (n, total) = scores.fold((0u64, 0u64), |(n, t), s| (n + 1, t + s.token_count as u64));
    (n > 0).then(|| total as f64 / n as f64)
}

pub fn histogram_bin(score: f64) -> usize {
    ((score * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1)
}

/// Report over scored sentences whose `retained` flags are already set.
pub fn report_from_scores(language: &str, scores: &[SentenceScore], threshold: Threshold) -> FilterReport {
    let mut histogram = vec![0u64; HISTOGRAM_BINS];
    for s in scores {
        histogram[histogram_bin(s.score)] += 1;
    }
    let post = scores.iter().filter(|s| s.retained).count() as u64;
    let pre = scores.len() as u64;
    FilterReport {
        language: language.to_owned(),
        pre_count: pre,
        post_count: post,
        retention_rate: if pre > 0 { post as f64 / pre as f64 } else { 0.0 },
        threshold,
        mean_len_retained: mean_len(scores.iter().filter(|s| s.retained)),
        mean_len_rejected: mean_len(scores.iter().filter(|s| !s.retained)),
        mean_len_all: mean_len(scores.iter()),
        score_histogram: histogram,
    }
}

pub fn retention_report(result: &FilterResult) -> FilterReport {
    report_from_scores(result.language(), &result.scores, result.threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBiasRow {
    pub threshold: f64,
    pub retained: u64,
    pub retention: f64,
    pub mean_len_retained: Option<f64>,
}

/// Re-filters stored scores at each threshold and tabulates the mean length
/// of what survives.
pub fn length_bias_report(
    scores: &[SentenceScore],
    thresholds: &[f64],
) -> Result<Vec<LengthBiasRow>, ArgumentError> {
    thresholds
        .iter()
        .map(|&t| {
            if !(0.0..=1.0).contains(&t) {
                return Err(ArgumentError::new(format!("threshold {t} is outside [0, 1]")));
            }
            let kept = || scores.iter().filter(move |s| s.score >= t);
            let retained = kept().count() as u64;
            Ok(LengthBiasRow {
                threshold: t,
                retained,
                retention: if scores.is_empty() {
                    0.0
                } else {
                    retained as f64 / scores.len() as f64
                },
                mean_len_retained: mean_len(kept()),
            })
        })
        .collect()
}

/// 0, the mean, the run's own threshold, and mean + 0.1 / + 0.2, clamped to
/// [0, 1], sorted and deduplicated.
pub fn default_bias_thresholds(result: &FilterResult) -> Vec<f64> {
    bias_thresholds_around(&result.threshold)
}

pub fn bias_thresholds_around(t: &Threshold) -> Vec<f64> {
    let m = t.mean_score;
    let mut v: Vec<f64> = [0.0, m, t.value, m + 0.1, m + 0.2]
        .into_iter()
        .map(|x| x.clamp(0.0, 1.0))
        .collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Published pre/post-filter monolingual sentence counts obtained with real
/// NMT models. Shown beside local results for orientation only; these
/// numbers cannot be reproduced with the simulator backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedRetention {
    pub language: String,
    pub pre_filter: String,
    pub post_filter: String,
    pub retention_rate: f64,
}

pub fn published_retention() -> Vec<PublishedRetention> {
    const ROWS: [(&str, &str, f64, &str, f64); 8] = [
        ("hi", "4M", 4_000_000.0, "140K", 140_000.0),
        ("pa", "58K", 58_000.0, "7K", 7_000.0),
        ("mr", "178K", 178_000.0, "58K", 58_000.0),
        ("gu", "370K", 370_000.0, "39K", 39_000.0),
        ("ta", "88K", 88_000.0, "34K", 34_000.0),
        ("ur", "400K", 400_000.0, "105K", 105_000.0),
        ("ml", "178K", 178_000.0, "52K", 52_000.0),
        ("od", "221K", 221_000.0, "64K", 64_000.0),
    ];
    ROWS.iter()
        .map(|&(lang, pre, pre_n, post, post_n)| PublishedRetention {
            language: lang.into(),
            pre_filter: pre.into(),
            post_filter: post.into(),
            retention_rate: post_n / pre_n,
        })
        .collect()
}

/// The full report file: summary, length-bias table, scorer configuration
/// and the published reference counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    #[serde(flatten)]
    pub report: FilterReport,
    pub length_bias: Vec<LengthBiasRow>,
    pub scorer: String,
    pub published_reference_not_reproducible: Vec<PublishedRetention>,
}

impl ReportDocument {
    pub fn new(report: &FilterReport, result: &FilterResult, thresholds: &[f64]) -> Self {
        Self::from_scores(report, &result.scores, thresholds)
    }

    pub fn from_scores(report: &FilterReport, scores: &[SentenceScore], thresholds: &[f64]) -> Self {
        let valid: Vec<f64> = thresholds
            .iter()
            .copied()
            .filter(|t| (0.0..=1.0).contains(t))
            .collect();
        ReportDocument {
            report: report.clone(),
            length_bias: length_bias_report(scores, &valid).expect("thresholds filtered"),
            scorer: bleu::CONFIG_DESCRIPTION.to_owned(),
            published_reference_not_reproducible: published_retention(),
        }
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_owned(), |v| format!("{v:.2}"))
}

/// Aligned plain-text rendering of a report document.
pub fn render_text(doc: &ReportDocument) -> String {
    let r = &doc.report;
    let mut s = String::new();
    let _ = writeln!(s, "language          {}", r.language);
    let _ = writeln!(s, "pre-filter        {}", r.pre_count);
    let _ = writeln!(s, "post-filter       {}", r.post_count);
    let _ = writeln!(s, "retention         {:.4}", r.retention_rate);
    let _ = writeln!(s, "mean score        {:.6}", r.threshold.mean_score);
    let _ = writeln!(s, "threshold         {:.6}", r.threshold.value);
    let _ = writeln!(s, "mean len all      {}", opt(r.mean_len_all));
    let _ = writeln!(s, "mean len kept     {}", opt(r.mean_len_retained));
    let _ = writeln!(s, "mean len rejected {}", opt(r.mean_len_rejected));
    let _ = writeln!(s, "scorer            {}", doc.scorer);
    let _ = writeln!(s);
    let _ = writeln!(s, "score histogram");
    let peak = r.score_histogram.iter().copied().max().unwrap_or(0).max(1);
    for (i, &count) in r.score_histogram.iter().enumerate() {
        let lo = i as f64 / HISTOGRAM_BINS as f64;
        let hi = (i + 1) as f64 / HISTOGRAM_BINS as f64;
        let bar = "#".repeat((count * 40 / peak) as usize);
        let _ = writeln!(s, "  [{lo:.2}, {hi:.2}{}  {count:>8}  {bar}", if i + 1 == HISTOGRAM_BINS { "]" } else { ")" });
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:>10}  {:>10}  {:>10}  {:>14}", "threshold", "retained", "retention", "mean len kept");
    for row in &doc.length_bias {
        let _ = writeln!(
            s,
            "{:>10.6}  {:>10}  {:>10.4}  {:>14}",
            row.threshold,
            row.retained,
            row.retention,
            opt(row.mean_len_retained)
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "published reference (real NMT models; not reproducible here)");
    let _ = writeln!(s, "{:>8}  {:>10}  {:>11}  {:>10}", "language", "pre-filter", "post-filter", "retention");
    for p in &doc.published_reference_not_reproducible {
        let _ = writeln!(
            s,
            "{:>8}  {:>10}  {:>11}  {:>10.4}",
            p.language, p.pre_filter, p.post_filter, p.retention_rate
        );
    }
    s
}

pub fn write_report(doc: &ReportDocument, json_path: &Path, text_path: &Path) -> Result<(), ReportError> {
    let mut json = serde_json::to_vec_pretty(doc)?;
    json.push(b'\n');
    write_file(json_path, &json)?;
    write_file(text_path, render_text(doc).as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseName {
    Pretrain,
    BtFilter,
    Posttrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: PhaseName,
    pub inputs: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: Option<u64>,
    pub toolkit_version: String,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    pub created_unix: u64,
}

/// The three-phase experiment: fine-tune on genuine parallel data, train on
/// the filtered synthetic corpus, fine-tune on genuine parallel data again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub phases: Vec<Phase>,
    pub provenance: Provenance,
}

impl ExperimentManifest {
    pub fn validate(&self) -> Result<(), ReportError> {
        let names: Vec<PhaseName> = self.phases.iter().map(|p| p.name).collect();
        if names != [PhaseName::Pretrain, PhaseName::BtFilter, PhaseName::Posttrain] {
            return Err(ReportError::Manifest(format!(
                "phases must be pretrain, bt_filter, posttrain; got {names:?}"
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        let m: ExperimentManifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}

fn paths(list: &[std::path::PathBuf]) -> Vec<String> {
    list.iter().map(|p| p.display().to_string()).collect()
}

/// Builds the manifest from a configuration and the summary of its run.
pub fn build_manifest(config: &PipelineConfig, report: &FilterReport, created_unix: u64) -> ExperimentManifest {
    let r = config.resolved();
    let backward = r.backward.clone().expect("resolved");
    let pivot = &r.forward.tgt_lang;

    let mut bt = BTreeMap::new();
    let mut put = |k: &str, v: Value| {
        bt.insert(k.to_owned(), v);
    };
    put("scheme", serde_json::to_value(r.filter.scheme).expect("scheme"));
    put("language", Value::from(r.corpus.language.clone()));
    put("pivot", Value::from(pivot.clone()));
    put("delta", Value::from(r.filter.delta));
    if let Some(t) = r.filter.threshold {
        put("fixed_threshold", Value::from(t));
    }
    put("mean_score", Value::from(report.threshold.mean_score));
    put("threshold", Value::from(report.threshold.value));
    put("pre_count", Value::from(report.pre_count));
    put("post_count", Value::from(report.post_count));
    put("retention_rate", Value::from(report.retention_rate));
    put("forward", serde_json::to_value(&r.forward).expect("spec"));
    put("backward", serde_json::to_value(&backward).expect("spec"));
    put("scorer", Value::from(bleu::CONFIG_DESCRIPTION));

    ExperimentManifest {
        phases: vec![
            Phase {
                name: PhaseName::Pretrain,
                inputs: paths(&r.phases.pretrain),
                outputs: Vec::new(),
                params: BTreeMap::new(),
            },
            Phase {
                name: PhaseName::BtFilter,
                inputs: vec![r.corpus.path.display().to_string()],
                outputs: vec![
                    r.output_path(&r.corpus.language).display().to_string(),
                    r.output_path(pivot).display().to_string(),
                ],
                params: bt,
            },
            Phase {
                name: PhaseName::Posttrain,
                inputs: paths(&r.phases.posttrain),
                outputs: Vec::new(),
                params: BTreeMap::new(),
            },
        ],
        provenance: Provenance {
            config_hash: config.hash(),
            seed: r.seed.or(r.forward.seed),
            toolkit_version: env!("CARGO_PKG_VERSION").to_owned(),
            created_unix,
        },
    }
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Builds the manifest for a finished run and writes it to `path`.
pub fn emit_manifest(
    config: &PipelineConfig,
    result: &FilterResult,
    path: &Path,
) -> Result<ExperimentManifest, ReportError> {
    let manifest = build_manifest(config, &retention_report(result), now_unix());
    write_file(path, manifest.to_json().as_bytes())?;
    Ok(manifest)
}

/// Like [`emit_manifest`], from a report read back from disk.
pub fn emit_manifest_from_report(
    config: &PipelineConfig,
    report: &FilterReport,
    path: &Path,
) -> Result<ExperimentManifest, ReportError> {
    let manifest = build_manifest(config, report, now_unix());
    write_file(path, manifest.to_json().as_bytes())?;
    Ok(manifest)
}
