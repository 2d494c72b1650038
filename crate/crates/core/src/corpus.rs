//! Corpus ingestion, validation, deduplication and collation.
//!
//! Monolingual corpora are streamed: [`MonoCorpus`] is an iterator that holds
//! one line at a time. Parallel corpora are loaded into memory, since
//! collation and deduplication need the full set anyway.
//!
//! Every record that does not make it into a corpus is accounted for in
//! [`Counters`], so that `records + dropped == raw lines` holds after any
//! chain of operations.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ArgumentError;
use crate::textnorm::{tokenize, TokenSeq};

pub const DEFAULT_MAX_RATIO: f64 = 9.0;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line_no}: invalid UTF-8")]
    InvalidUtf8 { path: PathBuf, line_no: u64 },
    #[error("{path}:{line_no}: expected 2 tab-separated columns, found {found}")]
    MalformedRow {
        path: PathBuf,
        line_no: u64,
        found: usize,
    },
    #[error("parallel files are not aligned: {src_lines} source lines vs {tgt_lines} target lines")]
    Alignment { src_lines: u64, tgt_lines: u64 },
    #[error(transparent)]
    Argument(#[from] ArgumentError),
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadOptions {
    /// Abort on the first invalid UTF-8 line (or malformed TSV row) instead
    /// of counting and skipping it.
    pub strict: bool,
}

/// Running record accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub raw_lines: u64,
    pub records: u64,
    pub dropped_empty: u64,
    pub dropped_invalid: u64,
    pub dropped_dedup: u64,
    pub dropped_ratio: u64,
}

impl Counters {
    pub fn dropped(&self) -> u64 {
        self.dropped_empty + self.dropped_invalid + self.dropped_dedup + self.dropped_ratio
    }

    fn merge(&mut self, other: &Counters) {
        self.raw_lines += other.raw_lines;
        self.records += other.records;
        self.dropped_empty += other.dropped_empty;
        self.dropped_invalid += other.dropped_invalid;
        self.dropped_dedup += other.dropped_dedup;
        self.dropped_ratio += other.dropped_ratio;
    }
}

/// Summary statistics, serialized with exactly these field names.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub record_count: u64,
    pub dropped_empty: u64,
    pub dropped_dedup: u64,
    pub dropped_ratio: u64,
    pub dropped_invalid: u64,
    pub token_count_histogram: BTreeMap<usize, u64>,
    pub per_source_counts: BTreeMap<String, u64>,
}

impl CorpusStats {
    fn from_counters(c: &Counters) -> Self {
        CorpusStats {
            record_count: c.records,
            dropped_empty: c.dropped_empty,
            dropped_dedup: c.dropped_dedup,
            dropped_ratio: c.dropped_ratio,
            dropped_invalid: c.dropped_invalid,
            ..Default::default()
        }
    }

    pub fn histogram_mass(&self) -> u64 {
        self.token_count_histogram.values().sum()
    }
}

/// Reads raw lines as bytes so invalid UTF-8 can be reported per line.
struct LineReader<R> {
    inner: R,
    buf: Vec<u8>,
}

impl<R: BufRead> LineReader<R> {
    fn new(inner: R) -> Self {
        LineReader {
            inner,
            buf: Vec::with_capacity(256),
        }
    }

    /// `Ok(None)` at EOF, `Ok(Some(Err(())))` for a non-UTF-8 line.
    fn next_line(&mut self) -> io::Result<Option<Result<String, ()>>> {
        self.buf.clear();
        if self.inner.read_until(b'\n', &mut self.buf)? == 0 {
            return Ok(None);
        }
        if self.buf.last() == Some(&b'\n') {
            self.buf.pop();
            if self.buf.last() == Some(&b'\r') {
                self.buf.pop();
            }
        }
        Ok(Some(
            String::from_utf8(std::mem::take(&mut self.buf)).map_err(|_| ()),
        ))
    }

    fn count_remaining(&mut self) -> io::Result<u64> {
        let mut n = 0;
        while self.next_line()?.is_some() {
            n += 1;
        }
        Ok(n)
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CorpusError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonoRecord {
    pub line_no: u64,
    pub seq: TokenSeq,
}

/// A streaming monolingual corpus. Yields normalized, non-empty records in
/// file order; `line_no` is the 1-based physical line number.
pub struct MonoCorpus<R = BufReader<File>> {
    pub language: String,
    pub source_tag: String,
    path: PathBuf,
    lines: LineReader<R>,
    options: ReadOptions,
    counters: Counters,
    seen: Option<HashSet<String>>,
    failed: bool,
}

/// Opens `path` as a monolingual corpus.
pub fn load_mono(
    path: impl AsRef<Path>,
    language: &str,
    source_tag: &str,
    options: ReadOptions,
) -> Result<MonoCorpus, CorpusError> {
    let path = path.as_ref();
    let reader = open(path)?;
    Ok(MonoCorpus::from_reader(reader, path, language, source_tag, options))
}

impl<R: BufRead> MonoCorpus<R> {
    pub fn from_reader(
        reader: R,
        path: impl Into<PathBuf>,
        language: &str,
        source_tag: &str,
        options: ReadOptions,
    ) -> Self {
        MonoCorpus {
            language: language.to_owned(),
            source_tag: source_tag.to_owned(),
            path: path.into(),
            lines: LineReader::new(reader),
            options,
            counters: Counters::default(),
            seen: None,
            failed: false,
        }
    }

    /// Drops exact repeats of a normalized sentence, keeping the first.
    /// The index grows with the number of distinct records.
    pub fn dedup(mut self) -> Self {
        self.seen.get_or_insert_with(HashSet::new);
        self
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    /// Consumes the rest of the stream into statistics.
    pub fn stats(mut self) -> Result<CorpusStats, CorpusError> {
        let mut histogram = BTreeMap::new();
        for record in &mut self {
            *histogram.entry(record?.seq.token_count()).or_insert(0) += 1;
        }
        let mut stats = CorpusStats::from_counters(&self.counters);
        stats.token_count_histogram = histogram;
        stats
            .per_source_counts
            .insert(self.source_tag.clone(), self.counters.records);
        Ok(stats)
    }
}

impl<R: BufRead> Iterator for MonoCorpus<R> {
    type Item = Result<MonoRecord, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = match self.lines.next_line() {
                Ok(Some(line)) => line,
                Ok(None) => return None,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(CorpusError::io(&self.path, e)));
                }
            };
            self.counters.raw_lines += 1;
            let line_no = self.counters.raw_lines;
            let Ok(line) = line else {
                if self.options.strict {
                    self.failed = true;
                    return Some(Err(CorpusError::InvalidUtf8 {
                        path: self.path.clone(),
                        line_no,
                    }));
                }
                log::debug!("{}:{line_no}: skipping invalid UTF-8", self.path.display());
                self.counters.dropped_invalid += 1;
                continue;
            };
            let seq = tokenize(&line);
            if seq.is_empty() {
                self.counters.dropped_empty += 1;
                continue;
            }
            if let Some(seen) = &mut self.seen {
                if !seen.insert(seq.normalized()) {
                    self.counters.dropped_dedup += 1;
                    continue;
                }
            }
            self.counters.records += 1;
            return Some(Ok(MonoRecord { line_no, seq }));
        }
    }
}

/// How to draw a subset of a monolingual corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Subset {
    /// The first `n` records.
    Head { n: usize },
    /// `n` records drawn uniformly without replacement (reservoir sampling),
    /// returned in corpus order.
    Random { n: usize, seed: u64 },
}

impl std::str::FromStr for Subset {
    type Err = ArgumentError;

    /// Parses `head:N` or `random:N:SEED`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| {
            p.parse()
                .map_err(|_| ArgumentError::new(format!("bad number {p:?} in subset {s:?}")))
        };
        match parts.as_slice() {
            ["head", n] => Ok(Subset::Head { n: num(n)? }),
            ["random", n, seed] => Ok(Subset::Random {
                n: num(n)?,
                seed: num(seed)? as u64,
            }),
            _ => Err(ArgumentError::new(format!(
                "subset must be head:N or random:N:SEED, got {s:?}"
            ))),
        }
    }
}

/// Applies a subset selection to a record stream.
pub fn subset<I>(records: I, how: Subset) -> Result<Vec<MonoRecord>, CorpusError>
where
    I: IntoIterator<Item = Result<MonoRecord, CorpusError>>,
{
    match how {
        Subset::Head { n } => records.into_iter().take(n).collect(),
        Subset::Random { n, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut reservoir: Vec<MonoRecord> = Vec::with_capacity(n);
            for (i, record) in records.into_iter().enumerate() {
                let record = record?;
                if reservoir.len() < n {
                    reservoir.push(record);
                } else {
                    let j = rng.random_range(0..=i);
                    if j < n {
                        reservoir[j] = record;
                    }
                }
            }
            reservoir.sort_by_key(|r| r.line_no);
            Ok(reservoir)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelRecord {
    pub line_no: u64,
    pub src: TokenSeq,
    pub tgt: TokenSeq,
    pub source_tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pub src_language: String,
    pub tgt_language: String,
    pub records: Vec<ParallelRecord>,
    pub counters: Counters,
}

fn check_pair(src: &str, tgt: &str) -> Result<(), ArgumentError> {
    if src == tgt {
        return Err(ArgumentError::new(format!(
            "source and target language are both {src:?}"
        )));
    }
    Ok(())
}

impl ParallelCorpus {
    pub fn new(src_language: &str, tgt_language: &str) -> Result<Self, ArgumentError> {
        check_pair(src_language, tgt_language)?;
        Ok(ParallelCorpus {
            src_language: src_language.to_owned(),
            tgt_language: tgt_language.to_owned(),
            records: Vec::new(),
            counters: Counters::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends a pair, counting it as one raw line. Pairs with an empty side
    /// are dropped.
    pub fn push(&mut self, line_no: u64, src: TokenSeq, tgt: TokenSeq, source_tag: &str) {
        self.counters.raw_lines += 1;
        if src.is_empty() || tgt.is_empty() {
            self.counters.dropped_empty += 1;
            return;
        }
        self.counters.records += 1;
        self.records.push(ParallelRecord {
            line_no,
            src,
            tgt,
            source_tag: source_tag.to_owned(),
        });
    }

    fn set_records(&mut self, records: Vec<ParallelRecord>) {
        self.records = records;
        self.counters.records = self.records.len() as u64;
    }

    /// Removes exact duplicate pairs (by normalized text), keeping the first.
    pub fn dedup(mut self) -> Self {
        let mut seen = HashSet::new();
        let before = self.records.len();
        let kept: Vec<_> = std::mem::take(&mut self.records)
            .into_iter()
            .filter(|r| seen.insert((r.src.normalized(), r.tgt.normalized())))
            .collect();
        self.counters.dropped_dedup += (before - kept.len()) as u64;
        self.set_records(kept);
        self
    }

    /// Drops pairs whose longer side exceeds `max_ratio` times the shorter
    /// side, in tokens. `f64::INFINITY` disables the filter.
    pub fn length_ratio_filter(mut self, max_ratio: f64) -> Result<Self, ArgumentError> {
        if max_ratio.is_nan() || max_ratio < 1.0 {
            return Err(ArgumentError::new(format!(
                "max_ratio must be >= 1, got {max_ratio}"
            )));
        }
        let before = self.records.len();
        let kept: Vec<_> = std::mem::take(&mut self.records)
            .into_iter()
            .filter(|r| {
                let (a, b) = (r.src.token_count(), r.tgt.token_count());
                a.max(b) as f64 / a.min(b) as f64 <= max_ratio
            })
            .collect();
        self.counters.dropped_ratio += (before - kept.len()) as u64;
        self.set_records(kept);
        Ok(self)
    }

    /// Statistics over the corpus. The histogram is over source-side lengths.
    pub fn stats(&self) -> CorpusStats {
        let mut stats = CorpusStats::from_counters(&self.counters);
        for r in &self.records {
            *stats
                .token_count_histogram
                .entry(r.src.token_count())
                .or_insert(0) += 1;
            *stats
                .per_source_counts
                .entry(r.source_tag.clone())
                .or_insert(0) += 1;
        }
        stats
    }

    pub fn per_source_counts(&self) -> BTreeMap<String, u64> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.source_tag.clone()).or_insert(0) += 1;
        }
        counts
    }
}

/// Loads two line-aligned files as a parallel corpus.
pub fn load_parallel(
    src_path: impl AsRef<Path>,
    tgt_path: impl AsRef<Path>,
    src_language: &str,
    tgt_language: &str,
    source_tag: &str,
    options: ReadOptions,
) -> Result<ParallelCorpus, CorpusError> {
    let (src_path, tgt_path) = (src_path.as_ref(), tgt_path.as_ref());
    let mut corpus = ParallelCorpus::new(src_language, tgt_language)?;
    let mut src = LineReader::new(open(src_path)?);
    let mut tgt = LineReader::new(open(tgt_path)?);
    let mut line_no = 0u64;
    loop {
        let a = src.next_line().map_err(|e| CorpusError::io(src_path, e))?;
        let b = tgt.next_line().map_err(|e| CorpusError::io(tgt_path, e))?;
        let (a, b) = match (a, b) {
            (None, None) => break,
            (Some(_), None) => {
                let rest = src.count_remaining().map_err(|e| CorpusError::io(src_path, e))?;
                return Err(CorpusError::Alignment {
                    src_lines: line_no + 1 + rest,
                    tgt_lines: line_no,
                });
            }
            (None, Some(_)) => {
                let rest = tgt.count_remaining().map_err(|e| CorpusError::io(tgt_path, e))?;
                return Err(CorpusError::Alignment {
                    src_lines: line_no,
                    tgt_lines: line_no + 1 + rest,
                });
            }
            (Some(a), Some(b)) => (a, b),
        };
        line_no += 1;
        match (a, b) {
            (Ok(a), Ok(b)) => corpus.push(line_no, tokenize(&a), tokenize(&b), source_tag),
            (a, _) => {
                let path = if a.is_err() { src_path } else { tgt_path };
                invalid_line(&mut corpus, options, path, line_no, |p, l| {
                    CorpusError::InvalidUtf8 { path: p, line_no: l }
                })?;
            }
        }
    }
    Ok(corpus)
}

fn invalid_line(
    corpus: &mut ParallelCorpus,
    options: ReadOptions,
    path: &Path,
    line_no: u64,
    err: impl FnOnce(PathBuf, u64) -> CorpusError,
) -> Result<(), CorpusError> {
    if options.strict {
        return Err(err(path.to_owned(), line_no));
    }
    corpus.counters.raw_lines += 1;
    corpus.counters.dropped_invalid += 1;
    Ok(())
}

/// Loads a two-column, tab-separated file (no quoting) as a parallel corpus.
pub fn load_parallel_tsv(
    path: impl AsRef<Path>,
    src_language: &str,
    tgt_language: &str,
    source_tag: &str,
    options: ReadOptions,
) -> Result<ParallelCorpus, CorpusError> {
    let path = path.as_ref();
    let mut corpus = ParallelCorpus::new(src_language, tgt_language)?;
    let mut lines = LineReader::new(open(path)?);
    let mut line_no = 0u64;
    while let Some(line) = lines.next_line().map_err(|e| CorpusError::io(path, e))? {
        line_no += 1;
        let Ok(line) = line else {
            invalid_line(&mut corpus, options, path, line_no, |p, l| {
                CorpusError::InvalidUtf8 { path: p, line_no: l }
            })?;
            continue;
        };
        let columns: Vec<&str> = line.split('\t').collect();
        if let [a, b] = columns.as_slice() {
            corpus.push(line_no, tokenize(a), tokenize(b), source_tag);
        } else {
            let found = columns.len();
            invalid_line(&mut corpus, options, path, line_no, |p, l| {
                CorpusError::MalformedRow {
                    path: p,
                    line_no: l,
                    found,
                }
            })?;
        }
    }
    Ok(corpus)
}

/// Per-source counts before and after cross-source deduplication.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollationReport {
    pub pre_dedup_total: u64,
    pub post_dedup_total: u64,
    pub pre_dedup_per_source: BTreeMap<String, u64>,
    pub post_dedup_per_source: BTreeMap<String, u64>,
}

/// Concatenates corpora in argument order, then removes duplicates across
/// sources (first occurrence wins).
pub fn collate(
    corpora: Vec<ParallelCorpus>,
) -> Result<(ParallelCorpus, CollationReport), ArgumentError> {
    let Some(first) = corpora.first() else {
        return Err(ArgumentError::new("collate needs at least one corpus"));
    };
    let (src, tgt) = (first.src_language.clone(), first.tgt_language.clone());
    let mut merged = ParallelCorpus::new(&src, &tgt)?;
    for c in corpora {
        if c.src_language != src || c.tgt_language != tgt {
            return Err(ArgumentError::new(format!(
                "cannot collate {}-{} with {src}-{tgt}",
                c.src_language, c.tgt_language
            )));
        }
        merged.counters.merge(&c.counters);
        merged.records.extend(c.records);
    }
    let pre_dedup_per_source = merged.per_source_counts();
    let pre_dedup_total = merged.records.len() as u64;
    let merged = merged.dedup();
    let report = CollationReport {
        pre_dedup_total,
        post_dedup_total: merged.records.len() as u64,
        pre_dedup_per_source,
        post_dedup_per_source: merged.per_source_counts(),
    };
    Ok((merged, report))
}
