use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use btfilter::bleu::{corpus_bleu, sentence_bleu};
use btfilter::corpus::{self, collate as collate_corpora, CorpusStats, ParallelCorpus, ReadOptions};
use btfilter::filter::{self, compute_threshold, fixed_threshold, PipelineConfig, SentenceScore, DEFAULT_DELTA};
use btfilter::report::{self, ReportDocument};
use btfilter::textnorm::{tokenize, TokenSeq};
use btfilter::translate::stub::{serve_stub as start_stub, Fault, StubBehavior};
use btfilter::translate::{Dictionary, Registry};
use serde::Serialize;

use crate::failure::Failure;
use crate::{
    Behavior, BleuArgs, CollateArgs, FilterArgs, ManifestArgs, ReportArgs, RoundtripArgs, ServeStubArgs, StatsArgs,
    ThresholdArgs,
};

pub struct Context {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Context {
    fn config(&self) -> Result<PipelineConfig, Failure> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Failure::usage("this command needs --config"))?;
        self.load(path)
    }

    fn config_opt(&self) -> Result<Option<PipelineConfig>, Failure> {
        self.config.as_ref().map(|p| self.load(p)).transpose()
    }

    fn load(&self, path: &Path) -> Result<PipelineConfig, Failure> {
        let mut config = PipelineConfig::load(path)?;
        if let Some(seed) = self.seed {
            config.override_seed(seed);
        }
        Ok(config)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, Failure> {
    let file = File::open(path).map_err(|e| Failure::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<io::Result<_>>()
        .map_err(|e| Failure::io(path, e))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::data(e.to_string()))?;
    println!("{text}");
    Ok(())
}

pub fn bleu(args: BleuArgs) -> Result<(), Failure> {
    let hyps = read_lines(&args.hyp)?;
    let refs = read_lines(&args.reference)?;
    if hyps.len() != refs.len() {
        return Err(btfilter::corpus::CorpusError::Alignment {
            src_lines: hyps.len() as u64,
            tgt_lines: refs.len() as u64,
        }
        .into());
    }
    let pairs: Vec<(TokenSeq, TokenSeq)> = hyps.iter().zip(&refs).map(|(h, r)| (tokenize(h), tokenize(r))).collect();

    let stdout = io::stdout();
    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(BufWriter::new(stdout.lock())),
    };
    let target = args.out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    let write_err = |e| Failure::io(&target, e);
    writeln!(out, "{}", filter::SCORES_HEADER).map_err(write_err)?;
    for (i, (h, r)) in pairs.iter().enumerate() {
        writeln!(out, "{}\t{:.6}", i + 1, sentence_bleu(h, r).score).map_err(write_err)?;
    }
    out.flush().map_err(write_err)?;
    drop(out);

    if !pairs.is_empty() {
        let corpus = corpus_bleu(pairs.iter().map(|(h, r)| (h, r)))?;
        println!("corpus\t{:.6}", corpus.score);
    }
    Ok(())
}

pub fn roundtrip(ctx: &Context, args: RoundtripArgs) -> Result<(), Failure> {
    let mut config = ctx.config()?;
    if let Some(corpus) = args.corpus {
        config.corpus.path = corpus;
    }
    let sidecar = args.out.unwrap_or_else(|| config.scores_path());
    ensure_parent(&sidecar)?;
    let summary = filter::score_to_sidecar(&config, &Registry::with_builtins(), &sidecar)?;
    match summary.mean_score {
        Some(mean) => println!("scored {} sentences, mean {mean:.6}", summary.count),
        None => println!("scored 0 sentences"),
    }
    Ok(())
}

pub fn filter(ctx: &Context, args: FilterArgs) -> Result<(), Failure> {
    let mut config = ctx.config()?;
    if let Some(dir) = args.out {
        config.output.dir = dir;
    }
    if let Some(delta) = args.delta {
        config.filter.delta = delta;
    }
    if args.threshold.is_some() {
        config.filter.threshold = args.threshold;
    }
    if args.write_rejects {
        config.filter.write_rejects = true;
    }
    let out = filter::run_pipeline(&config, &Registry::with_builtins())?;
    let r = &out.report;
    println!(
        "{}: kept {} of {} ({:.4}) at threshold {:.6}",
        r.language, r.post_count, r.pre_count, r.retention_rate, r.threshold.value
    );
    for f in &out.files {
        log::info!("wrote {}", f.display());
    }
    Ok(())
}

pub fn threshold(args: ThresholdArgs) -> Result<(), Failure> {
    let scores: Vec<f64> = filter::read_scores(&args.scores)?.into_iter().map(|(_, s)| s).collect();
    let t = compute_threshold(&scores, args.delta)?;
    println!("{:.6}", t.value);
    log::info!("mean {:.6} over {} scores, delta {}", t.mean_score, scores.len(), t.delta);
    Ok(())
}

fn parse_source(spec: &str, args: &CollateArgs) -> Result<ParallelCorpus, Failure> {
    let (tag, files) = spec
        .split_once('=')
        .filter(|(t, f)| !t.is_empty() && !f.is_empty())
        .ok_or_else(|| Failure::usage(format!("source {spec:?} is not TAG=SRC,TGT or TAG=FILE.tsv")))?;
    let options = ReadOptions { strict: args.strict };
    let corpus = match files.split_once(',') {
        Some((src, tgt)) => corpus::load_parallel(src, tgt, &args.src_lang, &args.tgt_lang, tag, options)?,
        None => corpus::load_parallel_tsv(files, &args.src_lang, &args.tgt_lang, tag, options)?,
    };
    Ok(corpus)
}

#[derive(Serialize)]
struct CollateSummary {
    #[serde(flatten)]
    report: corpus::CollationReport,
    dropped_ratio: u64,
    final_count: u64,
}

pub fn collate(args: CollateArgs) -> Result<(), Failure> {
    let sources = args
        .specs
        .iter()
        .map(|s| parse_source(s, &args))
        .collect::<Result<Vec<_>, _>>()?;
    let (merged, report) = collate_corpora(sources)?;
    let merged = merged.length_ratio_filter(args.max_ratio)?;
    if let Some(prefix) = &args.out {
        let path = |lang: &str| PathBuf::from(format!("{}.{lang}", prefix.display()));
        let (src_path, tgt_path) = (path(&args.src_lang), path(&args.tgt_lang));
        ensure_parent(&src_path)?;
        let mut src = create(&src_path)?;
        let mut tgt = create(&tgt_path)?;
        for r in &merged.records {
            writeln!(src, "{}", r.src.normalized()).map_err(|e| Failure::io(&src_path, e))?;
            writeln!(tgt, "{}", r.tgt.normalized()).map_err(|e| Failure::io(&tgt_path, e))?;
        }
        src.flush().map_err(|e| Failure::io(&src_path, e))?;
        tgt.flush().map_err(|e| Failure::io(&tgt_path, e))?;
    }
    print_json(&CollateSummary {
        report,
        dropped_ratio: merged.counters.dropped_ratio,
        final_count: merged.len() as u64,
    })
}

pub fn stats(args: StatsArgs) -> Result<(), Failure> {
    let options = ReadOptions { strict: args.strict };
    let parallel = |mut c: ParallelCorpus| -> Result<CorpusStats, Failure> {
        if args.dedup {
            c = c.dedup();
        }
        if let Some(r) = args.max_ratio {
            c = c.length_ratio_filter(r)?;
        }
        Ok(c.stats())
    };
    let stats = if let Some(tgt) = &args.tgt {
        parallel(corpus::load_parallel(
            &args.corpus,
            tgt,
            &args.language,
            &args.tgt_language,
            "input",
            options,
        )?)?
    } else if args.tsv {
        parallel(corpus::load_parallel_tsv(
            &args.corpus,
            &args.language,
            &args.tgt_language,
            "input",
            options,
        )?)?
    } else {
        if args.max_ratio.is_some() {
            return Err(Failure::usage("--max-ratio applies to parallel corpora (--tgt or --tsv)"));
        }
        let mut mono = corpus::load_mono(&args.corpus, &args.language, "input", options)?;
        if args.dedup {
            mono = mono.dedup();
        }
        mono.stats()?
    };
    print_json(&stats)
}

pub fn report(ctx: &Context, args: ReportArgs) -> Result<(), Failure> {
    let config = ctx.config_opt()?;
    let from_config = |what: &str| Failure::usage(format!("--{what} is required without --config"));
    let scores_path = match (&args.scores, &config) {
        (Some(p), _) => p.clone(),
        (None, Some(c)) => c.scores_path(),
        (None, None) => return Err(from_config("scores")),
    };
    let corpus_path = match (&args.corpus, &config) {
        (Some(p), _) => p.clone(),
        (None, Some(c)) => c.corpus.path.clone(),
        (None, None) => return Err(from_config("corpus")),
    };
    let language = match (&args.language, &config) {
        (Some(l), _) => l.clone(),
        (None, Some(c)) => c.corpus.language.clone(),
        (None, None) => return Err(from_config("language")),
    };
    let configured = config.as_ref().map(|c| &c.filter);
    let fixed = args.threshold.or(if args.delta.is_none() { configured.and_then(|f| f.threshold) } else { None });
    let delta = args.delta.or(configured.map(|f| f.delta)).unwrap_or(DEFAULT_DELTA);

    let raw = filter::read_scores(&scores_path)?;
    let values: Vec<f64> = raw.iter().map(|&(_, s)| s).collect();
    let threshold = match fixed {
        Some(v) => fixed_threshold(values.iter().copied().collect::<filter::MeanAccumulator>().mean(), v)?,
        None => compute_threshold(&values, delta)?,
    };

    // Sidecar rows are in corpus order; walk the corpus once alongside them.
    let strict = config.as_ref().is_some_and(|c| c.corpus.strict_utf8);
    let mut records = corpus::load_mono(&corpus_path, &language, "report", ReadOptions { strict })?;
    let mut scores = Vec::with_capacity(raw.len());
    for (line_no, score) in raw {
        let token_count = loop {
            match records.next().transpose()? {
                Some(r) if r.line_no == line_no => break r.seq.token_count(),
                Some(r) if r.line_no < line_no => continue,
                _ => {
                    return Err(Failure::data(format!(
                        "{}: line {line_no} of the scores has no matching corpus line in {}",
                        scores_path.display(),
                        corpus_path.display()
                    )))
                }
            }
        };
        scores.push(SentenceScore {
            line_no,
            score,
            token_count,
            retained: score >= threshold.value,
        });
    }

    let summary = report::report_from_scores(&language, &scores, threshold);
    let thresholds = args
        .thresholds
        .unwrap_or_else(|| report::bias_thresholds_around(&threshold));
    if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Failure::usage(format!("--thresholds: {t} is outside [0, 1]")));
    }
    let doc = ReportDocument::from_scores(&summary, &scores, &thresholds);
    match args.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
            report::write_report(&doc, &dir.join("report.json"), &dir.join("report.txt"))?;
        }
        None => print!("{}", report::render_text(&doc)),
    }
    Ok(())
}

pub fn manifest(ctx: &Context, args: ManifestArgs) -> Result<(), Failure> {
    let config = ctx.config()?;
    let report_path = args.report.unwrap_or_else(|| config.report_json_path());
    let text = std::fs::read_to_string(&report_path).map_err(|e| Failure::io(&report_path, e))?;
    let summary: report::FilterReport = serde_json::from_str(&text)
        .map_err(|e| Failure::data(format!("{}: {e}", report_path.display())))?;
    let out = args.out.unwrap_or_else(|| config.manifest_path());
    ensure_parent(&out)?;
    report::emit_manifest_from_report(&config, &summary, &out)?;
    println!("{}", out.display());
    Ok(())
}

pub fn serve_stub(args: ServeStubArgs) -> Result<(), Failure> {
    let behavior = match args.behavior {
        Behavior::Echo => StubBehavior::Echo,
        Behavior::Table => {
            let path = args.dictionary.as_ref().expect("required by clap");
            StubBehavior::Table {
                dictionary: Dictionary::load(path)?,
                src_lang: args.src_lang.clone(),
                tgt_lang: args.tgt_lang.clone(),
            }
        }
        Behavior::InjectFault => StubBehavior::InjectFault {
            schedule: args
                .faults
                .iter()
                .map(|f| f.parse::<Fault>().map_err(|e| Failure::usage(format!("--faults: {e}"))))
                .collect::<Result<_, _>>()?,
        },
    };
    let server = start_stub(&args.host, args.port, behavior)?;
    println!("listening on {}", server.url());
    io::stdout().flush().map_err(|e| Failure::io(Path::new("<stdout>"), e))?;
    server.wait();
    Ok(())
}
