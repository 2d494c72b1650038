//! `btfilter`: round-trip filtering of back-translated corpora.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod failure;

use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "btfilter", version, about = "Filter back-translated corpora by round-trip BLEU")]
struct Cli {
    /// Pipeline configuration (TOML, or JSON by extension).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the configured seed of the run and of every translator.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for scoring and simulated translation: a number or `auto`.
    #[arg(long, global = true, default_value = "auto", value_parser = parse_threads)]
    threads: Threads,

    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    log_level: LogLevel,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy)]
enum Threads {
    Auto,
    Count(usize),
}

fn parse_threads(s: &str) -> Result<Threads, String> {
    if s == "auto" {
        return Ok(Threads::Auto);
    }
    match s.parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("expected a positive integer or `auto`, got {s:?}")),
        Ok(n) => Ok(Threads::Count(n)),
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl From<LogLevel> for log::LevelFilter {
    fn from(l: LogLevel) -> Self {
        match l {
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
            LogLevel::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sentence BLEU of each hypothesis line against the reference line,
    /// then corpus BLEU.
    Bleu(BleuArgs),
    /// Round-trip and score a corpus, writing only the scores sidecar.
    Roundtrip(RoundtripArgs),
    /// Full two-pass run: score, threshold, write the synthetic corpus,
    /// sidecar, report and manifest.
    Filter(FilterArgs),
    /// Mean-plus-delta threshold of a scores file.
    Threshold(ThresholdArgs),
    /// Merge parallel corpora and remove duplicates across them.
    Collate(CollateArgs),
    /// Corpus statistics as JSON.
    Stats(StatsArgs),
    /// Re-render a filtering report from a scores sidecar.
    Report(ReportArgs),
    /// Write the experiment manifest for a configuration and its report.
    Manifest(ManifestArgs),
    /// Run a local translation server speaking the wire protocol.
    ServeStub(ServeStubArgs),
}

#[derive(Args, Debug)]
struct BleuArgs {
    /// Hypothesis file, one sentence per line.
    hyp: PathBuf,
    /// Reference file, line-aligned with the hypotheses.
    reference: PathBuf,
    /// Write the per-line TSV here instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RoundtripArgs {
    /// Score this corpus instead of the configured one.
    #[arg(long, value_name = "PATH")]
    corpus: Option<PathBuf>,
    /// Sidecar path; defaults to scores.tsv in the output directory.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FilterArgs {
    /// Output directory, overriding the configured one.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Threshold margin above the mean score.
    #[arg(long, conflicts_with = "threshold")]
    delta: Option<f64>,
    /// Fixed threshold in [0, 1], replacing mean + delta.
    #[arg(long)]
    threshold: Option<f64>,
    /// Also write rejected sentences to rejects.tsv.
    #[arg(long)]
    write_rejects: bool,
}

#[derive(Args, Debug)]
struct ThresholdArgs {
    /// Scores file: `line_no<TAB>score` rows (header optional) or one score per line.
    scores: PathBuf,
    #[arg(long, default_value_t = btfilter::filter::DEFAULT_DELTA)]
    delta: f64,
}

#[derive(Args, Debug)]
struct CollateArgs {
    /// Sources as `TAG=SRC_FILE,TGT_FILE` or `TAG=FILE.tsv`.
    #[arg(required = true, value_name = "SPEC")]
    specs: Vec<String>,
    #[arg(long)]
    src_lang: String,
    #[arg(long)]
    tgt_lang: String,
    /// Write the merged corpus to PREFIX.<src_lang> and PREFIX.<tgt_lang>.
    #[arg(long, value_name = "PREFIX")]
    out: Option<PathBuf>,
    /// Drop pairs whose token-length ratio exceeds this; `inf` disables.
    #[arg(long, default_value_t = btfilter::corpus::DEFAULT_MAX_RATIO)]
    max_ratio: f64,
    /// Fail on invalid UTF-8 or malformed rows instead of skipping them.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// Monolingual line file, source side of a parallel pair, or a TSV file.
    corpus: PathBuf,
    #[arg(long, default_value = "und")]
    language: String,
    /// Target side: makes the input a line-aligned parallel corpus.
    #[arg(long, value_name = "PATH", conflicts_with = "tsv")]
    tgt: Option<PathBuf>,
    /// Treat the input as a two-column TSV parallel corpus.
    #[arg(long)]
    tsv: bool,
    /// Target language of a parallel corpus.
    #[arg(long, default_value = "und-x-tgt")]
    tgt_language: String,
    #[arg(long)]
    dedup: bool,
    /// Length-ratio filter for parallel input.
    #[arg(long)]
    max_ratio: Option<f64>,
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Scores sidecar; defaults to the configured one.
    #[arg(long, value_name = "PATH")]
    scores: Option<PathBuf>,
    /// The scored corpus, for sentence lengths; defaults to the configured one.
    #[arg(long, value_name = "PATH")]
    corpus: Option<PathBuf>,
    /// Corpus language; defaults to the configured one.
    #[arg(long)]
    language: Option<String>,
    #[arg(long, conflicts_with = "threshold")]
    delta: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Comma-separated thresholds for the length-bias table.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Write report.json and report.txt here instead of printing.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ManifestArgs {
    /// Report of the run; defaults to report.json in the output directory.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Defaults to manifest.json in the output directory.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Behavior {
    Echo,
    Table,
    InjectFault,
}

#[derive(Args, Debug)]
struct ServeStubArgs {
    /// 0 picks a free port; the bound address is printed.
    #[arg(long, default_value_t = 0)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, value_enum, default_value_t = Behavior::Echo)]
    behavior: Behavior,
    /// Dictionary TSV for `table`.
    #[arg(long, value_name = "PATH", required_if_eq("behavior", "table"))]
    dictionary: Option<PathBuf>,
    #[arg(long, default_value = "xx")]
    src_lang: String,
    #[arg(long, default_value = "en")]
    tgt_lang: String,
    /// Comma-separated schedule for `inject-fault`: HTTP codes, `ok`,
    /// `short` or `delay:MS`.
    #[arg(long, value_delimiter = ',')]
    faults: Vec<String>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Threads::Count(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
    let ctx = commands::Context {
        config: cli.config,
        seed: cli.seed,
    };
    pool.install(|| match cli.command {
        Command::Bleu(a) => commands::bleu(a),
        Command::Roundtrip(a) => commands::roundtrip(&ctx, a),
        Command::Filter(a) => commands::filter(&ctx, a),
        Command::Threshold(a) => commands::threshold(a),
        Command::Collate(a) => commands::collate(a),
        Command::Stats(a) => commands::stats(a),
        Command::Report(a) => commands::report(&ctx, a),
        Command::Manifest(a) => commands::manifest(&ctx, a),
        Command::ServeStub(a) => commands::serve_stub(a),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level.into())
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("btfilter: {} error: {}", f.kind, f.message);
            ExitCode::from(f.exit_code())
        }
    }
}
