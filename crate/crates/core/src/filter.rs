//! Cyclic-consistency filtering of back-translated data.
//!
//! Each monolingual sentence is translated into the pivot language and back
//! again; the round trip is scored against the original with sentence BLEU.
//! Sentences scoring at least `mean + delta` (clamped to 1) are kept, paired
//! with their pivot translation, as synthetic parallel data.
//!
//! The default scheme starts from the non-English side (XX -> EN -> XX).
//! The reverse scheme (EN -> XX -> EN) is available for comparison; it puts
//! the weaker into-XX direction first, so its errors feed the second leg.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bleu::{sentence_bleu, BleuBreakdown};
use crate::corpus::{self, CorpusError, MonoRecord, ParallelCorpus, ReadOptions, Subset};
use crate::error::{ArgumentError, ErrorKind};
use crate::report::{self, ExperimentManifest, FilterReport};
use crate::textnorm::TokenSeq;
use crate::translate::{invert, Registry, TranslateError, Translator, TranslatorSpec};

pub const DEFAULT_DELTA: f64 = 0.02;
pub const DEFAULT_CHUNK_SIZE: usize = 1024;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Corpus {
        stage: &'static str,
        #[source]
        source: CorpusError,
    },
    #[error("{stage} translation of lines {first_line}..={last_line}: {source}")]
    Translate {
        stage: &'static str,
        first_line: u64,
        last_line: u64,
        #[source]
        source: TranslateError,
    },
    #[error("{stage}: {path}: {source}")]
    Io {
        stage: &'static str,
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Argument(#[from] ArgumentError),
}

impl PipelineError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            PipelineError::Config(_) | PipelineError::Argument(_) => ErrorKind::Usage,
            PipelineError::Corpus { .. } | PipelineError::Io { .. } => ErrorKind::Data,
            PipelineError::Translate { source, .. } => source.kind(),
        }
    }

    fn io<'p>(stage: &'static str, path: &'p Path) -> impl FnOnce(io::Error) -> Self + 'p {
        move |source| PipelineError::Io {
            stage,
            path: path.to_owned(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTripRecord {
    pub line_no: u64,
    pub original: TokenSeq,
    pub intermediate: TokenSeq,
    pub roundtrip: TokenSeq,
    /// Round trip (hypothesis) scored against the original (reference).
    pub score: BleuBreakdown,
}

/// Which side the round trip starts from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Non-pivot -> pivot -> non-pivot.
    #[default]
    #[serde(rename = "xx-en-xx")]
    XxEnXx,
    /// Pivot -> non-pivot -> pivot.
    #[serde(rename = "en-xx-en")]
    EnXxEn,
}

/// Checks that `fwd` and `bwd` form a round trip from `language` through
/// the pivot, in the orientation `scheme` asks for.
pub fn check_directions(
    language: &str,
    pivot: &str,
    scheme: Scheme,
    fwd: &TranslatorSpec,
    bwd: &TranslatorSpec,
) -> Result<(), PipelineError> {
    let bad = |msg: String| Err(PipelineError::Config(msg));
    match scheme {
        Scheme::XxEnXx if language == pivot => {
            return bad(format!(
                "xx-en-xx starts from a non-pivot corpus, but the corpus is {language:?}"
            ))
        }
        Scheme::EnXxEn if language != pivot => {
            return bad(format!(
                "en-xx-en starts from the pivot language {pivot:?}, but the corpus is {language:?}"
            ))
        }
        _ => {}
    }
    if fwd.src_lang != language {
        return bad(format!(
            "forward translator reads {:?}, corpus is {language:?}",
            fwd.src_lang
        ));
    }
    if fwd.src_lang == fwd.tgt_lang {
        return bad("forward translator has identical source and target".into());
    }
    if bwd.src_lang != fwd.tgt_lang || bwd.tgt_lang != language {
        return bad(format!(
            "backward translator must go {} -> {language}, got {} -> {}",
            fwd.tgt_lang, bwd.src_lang, bwd.tgt_lang
        ));
    }
    if scheme == Scheme::XxEnXx && fwd.tgt_lang != pivot {
        return bad(format!(
            "forward translator must target the pivot {pivot:?}, got {:?}",
            fwd.tgt_lang
        ));
    }
    Ok(())
}

/// Streams round-trip records, translating `chunk_size` sentences at a time.
pub struct RoundTrip<'t, I> {
    source: I,
    forward: &'t dyn Translator,
    backward: &'t dyn Translator,
    chunk_size: usize,
    next_index: u64,
    ready: VecDeque<RoundTripRecord>,
    done: bool,
}

/// Round-trips every record of `mono` through `forward` then `backward`.
pub fn roundtrip<'t, I>(
    mono: I,
    forward: &'t dyn Translator,
    backward: &'t dyn Translator,
    chunk_size: usize,
) -> RoundTrip<'t, I::IntoIter>
where
    I: IntoIterator<Item = Result<MonoRecord, CorpusError>>,
{
    RoundTrip {
        source: mono.into_iter(),
        forward,
        backward,
        chunk_size: chunk_size.max(1),
        next_index: 0,
        ready: VecDeque::new(),
        done: false,
    }
}

impl<I> RoundTrip<'_, I>
where
    I: Iterator<Item = Result<MonoRecord, CorpusError>>,
{
    fn fill(&mut self) -> Result<(), PipelineError> {
        let mut chunk = Vec::with_capacity(self.chunk_size);
        for record in self.source.by_ref().take(self.chunk_size) {
            chunk.push(record.map_err(|source| PipelineError::Corpus {
                stage: "read corpus",
                source,
            })?);
        }
        if chunk.is_empty() {
            self.done = true;
            return Ok(());
        }
        let first_index = self.next_index;
        self.next_index += chunk.len() as u64;
        let (first_line, last_line) = (chunk[0].line_no, chunk[chunk.len() - 1].line_no);
        let wrap = |stage| {
            move |source| PipelineError::Translate {
                stage,
                first_line,
                last_line,
                source,
            }
        };

        let originals: Vec<TokenSeq> = chunk.iter().map(|r| r.seq.clone()).collect();
        let intermediates = self
            .forward
            .translate(first_index, &originals)
            .map_err(wrap("forward"))?;
        let roundtrips = self
            .backward
            .translate(first_index, &intermediates)
            .map_err(wrap("backward"))?;
        if intermediates.len() != chunk.len() || roundtrips.len() != chunk.len() {
            return Err(wrap("round trip")(TranslateError::Protocol {
                batch: 0,
                message: "translator returned a different number of sentences".into(),
            }));
        }

        let records: Vec<RoundTripRecord> = chunk
            .into_par_iter()
            .zip(intermediates)
            .zip(roundtrips)
            .map(|((record, intermediate), roundtrip)| {
                let score = sentence_bleu(&roundtrip, &record.seq);
                RoundTripRecord {
                    line_no: record.line_no,
                    original: record.seq,
                    intermediate,
                    roundtrip,
                    score,
                }
            })
            .collect();
        self.ready.extend(records);
        Ok(())
    }
}

impl<I> Iterator for RoundTrip<'_, I>
where
    I: Iterator<Item = Result<MonoRecord, CorpusError>>,
{
    type Item = Result<RoundTripRecord, PipelineError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.ready.is_empty() && !self.done {
            if let Err(e) = self.fill() {
                self.done = true;
                return Some(Err(e));
            }
        }
        self.ready.pop_front().map(Ok)
    }
}

/// Compensated running sum, so the mean does not drift with corpus size.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanAccumulator {
    sum: f64,
    compensation: f64,
    count: u64,
}

impl MeanAccumulator {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
        self.count += 1;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| (self.sum + self.compensation) / self.count as f64)
    }
}

impl FromIterator<f64> for MeanAccumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = MeanAccumulator::default();
        iter.into_iter().for_each(|x| acc.add(x));
        acc
    }
}

/// The retention cutoff: `value = min(mean_score + delta, 1)`.
///
/// For a fixed cutoff `delta` holds the (possibly negative) offset of the
/// cutoff from the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub mean_score: f64,
    pub delta: f64,
    pub value: f64,
}

/// Mean of `scores` plus `delta`, clamped to 1.
pub fn compute_threshold(scores: &[f64], delta: f64) -> Result<Threshold, ArgumentError> {
    let acc: MeanAccumulator = scores.iter().copied().collect();
    threshold_from_mean(acc.mean(), delta)
}

fn threshold_from_mean(mean: Option<f64>, delta: f64) -> Result<Threshold, ArgumentError> {
    let mean = mean.ok_or_else(|| ArgumentError::new("cannot threshold an empty score list"))?;
    if delta.is_nan() || delta < 0.0 {
        return Err(ArgumentError::new(format!("delta must be >= 0, got {delta}")));
    }
    Ok(Threshold {
        mean_score: mean,
        delta,
        value: (mean + delta).min(1.0),
    })
}

/// A fixed cutoff; `delta` records its distance from the mean.
pub fn fixed_threshold(mean: Option<f64>, value: f64) -> Result<Threshold, ArgumentError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(ArgumentError::new(format!(
            "fixed threshold must be in [0, 1], got {value}"
        )));
    }
    let mean_score = mean.unwrap_or(0.0);
    Ok(Threshold {
        mean_score,
        delta: value - mean_score,
        value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub line_no: u64,
    pub score: f64,
    /// Token count of the original sentence.
    pub token_count: usize,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    /// Pairs of (original sentence, its pivot translation).
    pub retained: ParallelCorpus,
    pub rejected_count: u64,
    pub threshold: Threshold,
    pub scores: Vec<SentenceScore>,
    pub retention_rate: f64,
}

impl FilterResult {
    pub fn language(&self) -> &str {
        &self.retained.src_language
    }

    pub fn scored_count(&self) -> u64 {
        self.scores.len() as u64
    }
}

struct ResultBuilder {
    retained: ParallelCorpus,
    rejected: u64,
    scores: Vec<SentenceScore>,
    threshold: Threshold,
}

impl ResultBuilder {
    fn new(src: &str, tgt: &str, threshold: Threshold) -> Result<Self, ArgumentError> {
        Ok(ResultBuilder {
            retained: ParallelCorpus::new(src, tgt)?,
            rejected: 0,
            scores: Vec::new(),
            threshold,
        })
    }

    /// Returns whether the record was kept.
    fn add(&mut self, line_no: u64, original: TokenSeq, intermediate: TokenSeq, score: f64) -> bool {
        let keep = score >= self.threshold.value;
        self.scores.push(SentenceScore {
            line_no,
            score,
            token_count: original.token_count(),
            retained: keep,
        });
        if keep {
            self.retained.push(line_no, original, intermediate, "bt-filtered");
        } else {
            self.rejected += 1;
        }
        keep
    }

    fn finish(self) -> FilterResult {
        let kept = self.retained.len() as f64;
        let total = kept + self.rejected as f64;
        FilterResult {
            retention_rate: if total > 0.0 { kept / total } else { 0.0 },
            retained: self.retained,
            rejected_count: self.rejected,
            threshold: self.threshold,
            scores: self.scores,
        }
    }
}

/// Keeps records scoring at least `threshold.value`, in input order.
///
/// `languages` is `(original, pivot)`. Pivot translations with no tokens
/// are kept in the score list but cannot enter a parallel corpus; they count
/// as rejected.
pub fn filter_corpus<I>(
    records: I,
    threshold: Threshold,
    languages: (&str, &str),
) -> Result<FilterResult, PipelineError>
where
    I: IntoIterator<Item = Result<RoundTripRecord, PipelineError>>,
{
    if !(0.0..=1.0).contains(&threshold.value) {
        return Err(ArgumentError::new(format!(
            "threshold must be in [0, 1], got {}",
            threshold.value
        ))
        .into());
    }
    let mut builder = ResultBuilder::new(languages.0, languages.1, threshold)?;
    for record in records {
        let r = record?;
        let score = effective_score(&r.intermediate, r.score.score);
        builder.add(r.line_no, r.original, r.intermediate, score);
    }
    Ok(builder.finish())
}

/// An empty pivot translation cannot form a training pair, whatever its
/// round trip scored.
fn effective_score(intermediate: &TokenSeq, score: f64) -> f64 {
    if intermediate.is_empty() {
        0.0
    } else {
        score
    }
}

fn default_source_tag() -> String {
    "mono".into()
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_pivot() -> String {
    "en".into()
}
fn default_chunk_size() -> usize {
    DEFAULT_CHUNK_SIZE
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("btfilter-out")
}
fn default_stem() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSection {
    pub path: PathBuf,
    pub language: String,
    #[serde(default = "default_source_tag")]
    pub source_tag: String,
    #[serde(default)]
    pub strict_utf8: bool,
    #[serde(default)]
    pub dedup: bool,
    /// `head:N` or `random:N:SEED`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSection {
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// A fixed cutoff replacing `mean + delta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_pivot")]
    pub pivot: String,
    #[serde(default)]
    pub write_rejects: bool,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            delta: DEFAULT_DELTA,
            threshold: None,
            scheme: Scheme::default(),
            pivot: default_pivot(),
            write_rejects: false,
            chunk_size: DEFAULT_CHUNK_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_stem")]
    pub stem: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_out_dir(),
            stem: default_stem(),
        }
    }
}

/// Genuine parallel data used before and after training on the filtered
/// synthetic corpus. Only recorded in the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseSection {
    #[serde(default)]
    pub pretrain: Vec<PathBuf>,
    #[serde(default)]
    pub posttrain: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub corpus: CorpusSection,
    pub forward: TranslatorSpec,
    /// Defaults to the inverse of `forward`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backward: Option<TranslatorSpec>,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub phases: PhaseSection,
}

impl PipelineConfig {
    /// Parses JSON (`.json`) or TOML (anything else).
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(PipelineError::io("read config", path))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json {
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
        }
    }

    /// Replaces the global seed and every translator seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.forward.seed = Some(seed);
        if let Some(b) = &mut self.backward {
            b.seed = Some(seed);
        }
    }

    /// Fills derived values: a missing backward spec becomes the inverse of
    /// the forward spec, and missing translator seeds take the global seed.
    pub fn resolved(&self) -> PipelineConfig {
        let mut c = self.clone();
        if c.forward.seed.is_none() {
            c.forward.seed = c.seed;
        }
        let mut backward = c.backward.take().unwrap_or_else(|| invert(&c.forward));
        if backward.seed.is_none() {
            backward.seed = c.seed;
        }
        c.backward = Some(backward);
        c
    }

    /// Hex SHA-256 of the resolved configuration's canonical JSON.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(&self.resolved()).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn backward_spec(&self) -> TranslatorSpec {
        self.backward.clone().unwrap_or_else(|| invert(&self.forward))
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        let r = self.resolved();
        check_directions(
            &r.corpus.language,
            &r.filter.pivot,
            r.filter.scheme,
            &r.forward,
            r.backward.as_ref().expect("resolved"),
        )?;
        if r.filter.delta.is_nan() || r.filter.delta < 0.0 {
            return Err(PipelineError::Config(format!(
                "filter.delta must be >= 0, got {}",
                r.filter.delta
            )));
        }
        if let Some(t) = r.filter.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(PipelineError::Config(format!(
                    "filter.threshold must be in [0, 1], got {t}"
                )));
            }
        }
        if r.filter.chunk_size == 0 {
            return Err(PipelineError::Config("filter.chunk_size must be >= 1".into()));
        }
        if let Some(s) = &r.corpus.subset {
            s.parse::<Subset>()?;
        }
        Ok(())
    }

    pub fn output_path(&self, suffix: &str) -> PathBuf {
        self.output.dir.join(format!("{}.{suffix}", self.output.stem))
    }

    pub fn scores_path(&self) -> PathBuf {
        self.output.dir.join("scores.tsv")
    }

    pub fn rejects_path(&self) -> PathBuf {
        self.output.dir.join("rejects.tsv")
    }

    pub fn report_json_path(&self) -> PathBuf {
        self.output.dir.join("report.json")
    }

    pub fn report_text_path(&self) -> PathBuf {
        self.output.dir.join("report.txt")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.output.dir.join("manifest.json")
    }
}

type MonoStream = Box<dyn Iterator<Item = Result<MonoRecord, CorpusError>> + Send>;

/// Opens the configured corpus with dedup and subsetting applied.
pub fn open_corpus(section: &CorpusSection) -> Result<MonoStream, PipelineError> {
    let corpus_err = |source| PipelineError::Corpus {
        stage: "open corpus",
        source,
    };
    let options = ReadOptions {
        strict: section.strict_utf8,
    };
    let mut mono = corpus::load_mono(&section.path, &section.language, &section.source_tag, options)
        .map_err(corpus_err)?;
    if section.dedup {
        mono = mono.dedup();
    }
    match &section.subset {
        None => Ok(Box::new(mono)),
        Some(s) => {
            let how: Subset = s.parse()?;
            let records = corpus::subset(mono, how).map_err(corpus_err)?;
            Ok(Box::new(records.into_iter().map(Ok)))
        }
    }
}

type TranslatorPair = (Box<dyn Translator>, Box<dyn Translator>);

/// Builds the two translators of a resolved configuration.
pub fn build_translators(
    config: &PipelineConfig,
    registry: &Registry,
) -> Result<TranslatorPair, PipelineError> {
    let wrap = |stage| {
        move |source| PipelineError::Translate {
            stage,
            first_line: 0,
            last_line: 0,
            source,
        }
    };
    let r = config.resolved();
    let fwd = registry.build(&r.forward).map_err(wrap("forward setup"))?;
    let bwd = registry
        .build(r.backward.as_ref().expect("resolved"))
        .map_err(wrap("backward setup"))?;
    Ok((fwd, bwd))
}

/// Summary of a scoring pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub count: u64,
    pub mean_score: Option<f64>,
}

fn write_score_line(out: &mut impl Write, line_no: u64, score: f64) -> io::Result<()> {
    writeln!(out, "{line_no}\t{score:.6}")
}

pub const SCORES_HEADER: &str = "line_no\tscore";

/// Scoring pass: round-trips the corpus, calls `sink` with each record in
/// order and returns the running mean. Memory use is bounded by the chunk
/// size.
pub fn score_pass(
    config: &PipelineConfig,
    registry: &Registry,
    mut sink: impl FnMut(&RoundTripRecord) -> Result<(), PipelineError>,
) -> Result<ScoreSummary, PipelineError> {
    config.check()?;
    let config = config.resolved();
    let (fwd, bwd) = build_translators(&config, registry)?;
    let mono = open_corpus(&config.corpus)?;
    let mut acc = MeanAccumulator::default();
    for record in roundtrip(mono, fwd.as_ref(), bwd.as_ref(), config.filter.chunk_size) {
        let record = record?;
        acc.add(effective_score(&record.intermediate, record.score.score));
        sink(&record)?;
    }
    Ok(ScoreSummary {
        count: acc.count(),
        mean_score: acc.mean(),
    })
}

/// Runs only the scoring pass and writes the scores sidecar.
pub fn score_to_sidecar(
    config: &PipelineConfig,
    registry: &Registry,
    sidecar: &Path,
) -> Result<ScoreSummary, PipelineError> {
    let file = File::create(sidecar).map_err(PipelineError::io("write scores", sidecar))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{SCORES_HEADER}").map_err(PipelineError::io("write scores", sidecar))?;
    let summary = score_pass(config, registry, |r| {
        write_score_line(&mut out, r.line_no, effective_score(&r.intermediate, r.score.score))
            .map_err(PipelineError::io("write scores", sidecar))
    })?;
    out.flush().map_err(PipelineError::io("write scores", sidecar))?;
    Ok(summary)
}

/// Everything a pipeline run produced.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub result: FilterResult,
    pub report: FilterReport,
    pub manifest: ExperimentManifest,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct Spilled {
    line_no: u64,
    original: String,
    intermediate: String,
    roundtrip: String,
    score: f64,
}

/// Two-pass filtering run.
///
/// Pass 1 round-trips and scores every sentence, spilling records to a
/// temporary file in the output directory. The threshold is then computed
/// over all scores. Pass 2 re-reads the spill and writes the synthetic
/// corpus, the scores sidecar, the report and the manifest.
pub fn run_pipeline(config: &PipelineConfig, registry: &Registry) -> Result<PipelineOutput, PipelineError> {
    config.check()?;
    let resolved = config.resolved();
    let dir = &resolved.output.dir;
    std::fs::create_dir_all(dir).map_err(PipelineError::io("create output dir", dir))?;

    let spill = tempfile::NamedTempFile::new_in(dir).map_err(PipelineError::io("spill", dir))?;
    let spill_path = spill.path().to_owned();
    let sidecar_path = resolved.scores_path();
    let mut spill_out = BufWriter::new(spill.as_file());
    let mut sidecar = BufWriter::new(
        File::create(&sidecar_path).map_err(PipelineError::io("write scores", &sidecar_path))?,
    );
    writeln!(sidecar, "{SCORES_HEADER}").map_err(PipelineError::io("write scores", &sidecar_path))?;

    let summary = score_pass(&resolved, registry, |r| {
        let score = effective_score(&r.intermediate, r.score.score);
        write_score_line(&mut sidecar, r.line_no, score)
            .map_err(PipelineError::io("write scores", &sidecar_path))?;
        let line = serde_json::to_string(&Spilled {
            line_no: r.line_no,
            original: r.original.surface.clone(),
            intermediate: r.intermediate.surface.clone(),
            roundtrip: r.roundtrip.surface.clone(),
            score,
        })
        .expect("spill record serializes");
        writeln!(spill_out, "{line}").map_err(PipelineError::io("spill", &spill_path))
    })?;
    spill_out.flush().map_err(PipelineError::io("spill", &spill_path))?;
    drop(spill_out);
    sidecar.flush().map_err(PipelineError::io("write scores", &sidecar_path))?;

    let threshold = match resolved.filter.threshold {
        Some(value) => fixed_threshold(summary.mean_score, value)?,
        None => threshold_from_mean(summary.mean_score, resolved.filter.delta).map_err(|_| {
            PipelineError::Config(format!(
                "corpus {} has no scorable sentences",
                resolved.corpus.path.display()
            ))
        })?,
    };

    let language = resolved.corpus.language.clone();
    let pivot = resolved.forward.tgt_lang.clone();
    let src_path = resolved.output_path(&language);
    let tgt_path = resolved.output_path(&pivot);
    let create = |p: &Path| {
        File::create(p)
            .map(BufWriter::new)
            .map_err(PipelineError::io("write corpus", p))
    };
    let mut src_out = create(&src_path)?;
    let mut tgt_out = create(&tgt_path)?;
    let rejects_path = resolved.rejects_path();
    let mut rejects = if resolved.filter.write_rejects {
        let mut w = create(&rejects_path)?;
        writeln!(w, "line_no\tscore\toriginal\troundtrip").map_err(PipelineError::io("write rejects", &rejects_path))?;
        Some(w)
    } else {
        None
    };

    let mut builder = ResultBuilder::new(&language, &pivot, threshold)?;
    let reader = BufReader::new(File::open(&spill_path).map_err(PipelineError::io("spill", &spill_path))?);
    for line in reader.lines() {
        let line = line.map_err(PipelineError::io("spill", &spill_path))?;
        let s: Spilled = serde_json::from_str(&line).map_err(|e| PipelineError::Io {
            stage: "spill",
            path: spill_path.clone(),
            source: io::Error::new(io::ErrorKind::InvalidData, e),
        })?;
        let original = crate::textnorm::tokenize(&s.original);
        let intermediate = crate::textnorm::tokenize(&s.intermediate);
        let (src_text, tgt_text) = (original.normalized(), intermediate.normalized());
        if builder.add(s.line_no, original, intermediate, s.score) {
            writeln!(src_out, "{src_text}").map_err(PipelineError::io("write corpus", &src_path))?;
            writeln!(tgt_out, "{tgt_text}").map_err(PipelineError::io("write corpus", &tgt_path))?;
        } else if let Some(w) = &mut rejects {
            let roundtrip = crate::textnorm::normalize(&s.roundtrip);
            writeln!(w, "{}\t{:.6}\t{src_text}\t{roundtrip}", s.line_no, s.score)
                .map_err(PipelineError::io("write rejects", &rejects_path))?;
        }
    }
    src_out.flush().map_err(PipelineError::io("write corpus", &src_path))?;
    tgt_out.flush().map_err(PipelineError::io("write corpus", &tgt_path))?;
    if let Some(w) = &mut rejects {
        w.flush().map_err(PipelineError::io("write rejects", &rejects_path))?;
    }
    drop(spill);

    let result = builder.finish();
    let report = report::retention_report(&result);
    let report_doc = report::ReportDocument::new(&report, &result, &report::default_bias_thresholds(&result));
    report::write_report(&report_doc, &resolved.report_json_path(), &resolved.report_text_path())
        .map_err(|e| PipelineError::Io {
            stage: "write report",
            path: resolved.report_json_path(),
            source: io::Error::other(e),
        })?;
    let manifest = report::emit_manifest(config, &result, &resolved.manifest_path()).map_err(|e| {
        PipelineError::Io {
            stage: "write manifest",
            path: resolved.manifest_path(),
            source: io::Error::other(e),
        }
    })?;

    let mut files = vec![
        src_path,
        tgt_path,
        sidecar_path,
        resolved.report_json_path(),
        resolved.report_text_path(),
        resolved.manifest_path(),
    ];
    if resolved.filter.write_rejects {
        files.push(rejects_path);
    }
    Ok(PipelineOutput {
        result,
        report,
        manifest,
        files,
    })
}

/// Reads a scores file: `line_no<TAB>score` rows or bare scores, one per
/// line. A non-numeric first line is treated as a header.
pub fn read_scores(path: &Path) -> Result<Vec<(u64, f64)>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(PipelineError::io("read scores", path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let parsed = match cols.as_slice() {
            [score] => score.parse::<f64>().ok().map(|s| (i as u64 + 1, s)),
            [line_no, score, ..] => line_no
                .parse::<u64>()
                .ok()
                .zip(score.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some(pair) => out.push(pair),
            None if i == 0 => continue,
            None => {
                return Err(PipelineError::Io {
                    stage: "read scores",
                    path: path.to_owned(),
                    source: io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("line {}: cannot parse {line:?}", i + 1),
                    ),
                })
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textnorm::tokenize;

    fn record(line_no: u64, score: f64) -> Result<RoundTripRecord, PipelineError> {
        let original = tokenize(&format!("s{line_no} a"));
        Ok(RoundTripRecord {
            line_no,
            intermediate: tokenize(&format!("e{line_no} A")),
            roundtrip: original.clone(),
            original,
            score: BleuBreakdown {
                precisions: Vec::new(),
                effective_order: 1,
                brevity_penalty: 1.0,
                score,
                hyp_len: 2,
                ref_len: 2,
            },
        })
    }

    #[test]
    fn threshold_arithmetic() {
        let t = compute_threshold(&[0.2, 0.4, 0.6], 0.02).unwrap();
        assert_eq!(t.value, 0.42);
        assert_eq!(compute_threshold(&[1.0; 4], 0.02).unwrap().value, 1.0);
        assert_eq!(compute_threshold(&[0.5], 0.0).unwrap().value, 0.5);
        assert!(compute_threshold(&[], 0.02).is_err());
        assert!(compute_threshold(&[0.5], -0.1).is_err());
    }

    #[test]
    fn mean_accumulator_compensates() {
        let mut acc = MeanAccumulator::default();
        for _ in 0..10 {
            acc.add(0.1);
        }
        assert_eq!(acc.mean().unwrap(), 0.1);
    }

    #[test]
    fn filter_keeps_at_or_above() {
        let t = Threshold {
            mean_score: 0.4,
            delta: 0.02,
            value: 0.42,
        };
        let r = filter_corpus(vec![record(1, 0.3), record(2, 0.5), record(3, 0.9)], t, ("hi", "en")).unwrap();
        assert_eq!(r.retained.len(), 2);
        assert_eq!(r.rejected_count, 1);
        assert_eq!(r.retained.records[0].line_no, 2);
        assert!((r.retention_rate - 2.0 / 3.0).abs() < 1e-15);

        let perfect = compute_threshold(&[1.0, 1.0], DEFAULT_DELTA).unwrap();
        let r = filter_corpus(vec![record(1, 1.0), record(2, 1.0)], perfect, ("hi", "en")).unwrap();
        assert_eq!(r.retention_rate, 1.0);
    }

    #[test]
    fn filter_monotone_in_threshold() {
        let scores = [0.1, 0.7, 0.35, 0.9, 0.42, 0.0, 1.0];
        let run = |v: f64| {
            let t = Threshold { mean_score: 0.5, delta: v - 0.5, value: v };
            filter_corpus(scores.iter().enumerate().map(|(i, &s)| record(i as u64 + 1, s)), t, ("hi", "en"))
                .unwrap()
                .retained
                .records
                .into_iter()
                .map(|r| r.line_no)
                .collect::<Vec<_>>()
        };
        let mut prev = run(0.0);
        for v in [0.1, 0.35, 0.5, 0.9, 1.0] {
            let cur = run(v);
            assert!(cur.iter().all(|l| prev.contains(l)));
            prev = cur;
        }
    }

    #[test]
    fn direction_checks() {
        let fwd = TranslatorSpec::new("table", "hi", "en");
        let bwd = invert(&fwd);
        check_directions("hi", "en", Scheme::XxEnXx, &fwd, &bwd).unwrap();
        assert!(check_directions("ta", "en", Scheme::XxEnXx, &fwd, &bwd).is_err());
        assert!(check_directions("hi", "en", Scheme::EnXxEn, &fwd, &bwd).is_err());
        assert!(check_directions("hi", "en", Scheme::XxEnXx, &fwd, &fwd).is_err());

        let en_fwd = TranslatorSpec::new("table", "en", "hi");
        check_directions("en", "en", Scheme::EnXxEn, &en_fwd, &invert(&en_fwd)).unwrap();
        assert!(check_directions("en", "en", Scheme::XxEnXx, &en_fwd, &invert(&en_fwd)).is_err());
    }

    #[test]
    fn scheme_serde_names() {
        assert_eq!(serde_json::to_string(&Scheme::EnXxEn).unwrap(), "\"en-xx-en\"");
        let s: Scheme = serde_json::from_str("\"xx-en-xx\"").unwrap();
        assert_eq!(s, Scheme::XxEnXx);
    }
}
