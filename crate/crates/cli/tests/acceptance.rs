//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each and exits non-zero if any failed.
//!
//! `cargo test --test acceptance` runs everything; a non-flag argument
//! selects criteria whose name contains it.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use btfilter::bleu::sentence_bleu;
use btfilter::corpus::{collate, ParallelCorpus};
use btfilter::filter::{compute_threshold, run_pipeline, PipelineConfig};
use btfilter::report::length_bias_report;
use btfilter::synth;
use btfilter::textnorm::{tokenize, TokenSeq};
use btfilter::translate::stub::{serve_stub, Fault, StubBehavior};
use btfilter::translate::{invert, Registry, RemoteTranslator, Translator, TranslatorSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

const BIN: &str = env!("CARGO_BIN_EXE_btfilter");

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn criteria() -> Vec<Criterion> {
    let c = |id, name, secs, run| Criterion {
        id,
        name,
        budget: Duration::from_secs(secs),
        run,
    };
    vec![
        c(1, "bleu_oracle_equivalence", 5, ac1_bleu_oracle),
        c(2, "perfect_translator_totality", 10, ac2_totality),
        c(3, "noise_retention_monotonicity", 60, ac3_monotonicity),
        c(4, "analytic_roundtrip_precision", 30, ac4_analytic),
        c(5, "length_bias", 60, ac5_length_bias),
        c(6, "threshold_arithmetic", 1, ac6_threshold),
        c(7, "collation_conservation", 5, ac7_collation),
        c(8, "wire_protocol_goldens", 30, ac8_wire),
        c(9, "determinism_across_threads", 120, ac9_determinism),
        c(10, "streaming_scale", 300, ac10_streaming),
    ]
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.get(1).map(String::as_str) == Some(MEASURE_FLAG) {
        measure_child(&args[2..]);
    }
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut ran = 0;
    for c in criteria() {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; over the {:?} budget", c.budget)),
            other => other,
        };
        let secs = elapsed.as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {:>2} {:<30} {secs:>7.2}s  {detail}", c.id, c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>2} {:<30} {secs:>7.2}s  {why}", c.id, c.name);
            }
        }
    }
    println!("\n{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// helpers

fn seq(tokens: &[String]) -> TokenSeq {
    TokenSeq::from_tokens(tokens.to_vec())
}

fn write_config(path: &Path, text: &str) -> PipelineConfig {
    std::fs::write(path, text).unwrap();
    PipelineConfig::load(path).unwrap()
}

/// Synthetic monolingual corpus plus a bijective hi->en dictionary.
fn fixture(dir: &Path, n: usize, lengths: std::ops::RangeInclusive<usize>, vocab: u64, seed: u64) -> (PathBuf, PathBuf) {
    let mono = dir.join("mono.hi");
    let dict = dir.join("dict.tsv");
    synth::write_lines(&mono, synth::sentence_stream("hi", lengths, vocab, seed).take(n)).unwrap();
    synth::write_dictionary(&dict, &synth::dictionary("hi", "en", vocab)).unwrap();
    (mono, dict)
}

fn config_text(mono: &Path, dict: &Path, out: &Path, forward_extra: &str, filter_extra: &str) -> String {
    format!(
        r#"
seed = 2024

[corpus]
path = "{}"
language = "hi"

[forward]
src_lang = "hi"
tgt_lang = "en"
dictionary = "{}"
{forward_extra}

[filter]
{filter_extra}

[output]
dir = "{}"
"#,
        mono.display(),
        dict.display(),
        out.display()
    )
}

// ---------------------------------------------------------------------------
// 1

/// Reference BLEU: string-keyed n-gram maps, direct product of precisions.
fn oracle_bleu(hyp: &[String], reference: &[String]) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let grams = |t: &[String], n: usize| {
        let mut m: BTreeMap<String, i64> = BTreeMap::new();
        for w in t.windows(n) {
            *m.entry(w.join(" ")).or_default() += 1;
        }
        m
    };
    let order = hyp.len().min(4);
    let mut product = 1.0;
    for n in 1..=order {
        let (h, r) = (grams(hyp, n), grams(reference, n));
        let total: i64 = h.values().sum();
        let matched: i64 = h.iter().map(|(g, c)| (*c).min(*r.get(g).unwrap_or(&0))).sum();
        let numerator = if matched == 0 && n > 1 { 0.1 } else { matched as f64 };
        product *= numerator / total as f64;
    }
    let (c, r) = (hyp.len() as f64, reference.len() as f64);
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    bp * product.powf(1.0 / order as f64)
}

fn ac1_bleu_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let vocab = rng.random_range(1..=500u32);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<String> {
            let len = rng.random_range(0..=50);
            (0..len).map(|_| format!("w{}", rng.random_range(0..vocab))).collect()
        };
        let hyp = draw(&mut rng);
        // Half the references are perturbed copies so high orders match.
        let reference = if rng.random_bool(0.5) {
            hyp.iter()
                .map(|t| if rng.random_bool(0.15) { format!("w{}", rng.random_range(0..vocab)) } else { t.clone() })
                .collect()
        } else {
            draw(&mut rng)
        };
        let got = sentence_bleu(&seq(&hyp), &seq(&reference)).score;
        let want = oracle_bleu(&hyp, &reference);
        worst = worst.max((got - want).abs());
    }
    ensure!(worst <= 1e-6, "max deviation from oracle {worst:e}");

    let hand = [
        ("a b c d", "a b c d", 1.0),
        ("a b c d", "a b c e", 0.3976),
        ("a b", "a b c d e", 0.2231),
    ];
    for (h, r, want) in hand {
        let got = sentence_bleu(&tokenize(h), &tokenize(r)).score;
        ensure!((got - want).abs() <= 1e-4, "{h:?} vs {r:?}: {got} != {want}");
    }
    Ok(format!("200 pairs, max |diff| {worst:.1e}; hand examples ok"))
}

// ---------------------------------------------------------------------------
// 2

fn ac2_totality() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (mono, dict) = fixture(dir.path(), 5_000, 1..=30, 1_000, 2);
    let config = write_config(
        &dir.path().join("c.toml"),
        &config_text(&mono, &dict, &dir.path().join("out"), "backend = \"table\"", ""),
    );
    let out = run_pipeline(&config, &Registry::with_builtins()).map_err(|e| e.to_string())?;
    let r = &out.result;
    ensure!(r.retention_rate == 1.0, "retention {}", r.retention_rate);
    ensure!(r.retained.len() == 5_000, "retained {}", r.retained.len());
    ensure!(r.threshold.value == 1.0, "threshold {}", r.threshold.value);
    Ok("5000/5000 retained, threshold clamped to 1.0".into())
}

// ---------------------------------------------------------------------------
// 3

fn ac3_monotonicity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (mono, dict) = fixture(dir.path(), 2_000, 3..=30, 1_000, 3);
    let mut rates = Vec::new();
    for p in [0.0, 0.1, 0.2, 0.4] {
        let out = dir.path().join(format!("out{p}"));
        let text = config_text(
            &mono,
            &dict,
            &out,
            &format!("backend = \"noise\"\nvocab_size = 1000\np_sub = {p}"),
            "threshold = 0.5",
        );
        let config = write_config(&dir.path().join(format!("c{p}.toml")), &text);
        let run = run_pipeline(&config, &Registry::with_builtins()).map_err(|e| e.to_string())?;
        rates.push(run.result.retention_rate);
    }
    ensure!(rates[0] == 1.0, "retention at p=0 is {}", rates[0]);
    ensure!(rates.windows(2).all(|w| w[0] >= w[1]), "not non-increasing: {rates:?}");
    ensure!(rates[3] < rates[1], "retention(0.4) {} !< retention(0.1) {}", rates[3], rates[1]);
    Ok(format!("retention {rates:.4?}"))
}

// ---------------------------------------------------------------------------
// 4

fn ac4_analytic() -> Outcome {
    const V: u64 = 10_000;
    let p = 0.1;
    let fwd_spec = TranslatorSpec::noise("hi", "en", synth::dictionary("hi", "en", V), p, 0.0, 4);
    let registry = Registry::with_builtins();
    let fwd = registry.build(&fwd_spec).map_err(|e| e.to_string())?;
    let bwd = registry.build(&invert(&fwd_spec)).map_err(|e| e.to_string())?;
    let xs: Vec<TokenSeq> = synth::sentences("hi", 2_000, 10..=10, V, 4).iter().map(|s| tokenize(s)).collect();
    let mid = fwd.translate(0, &xs).map_err(|e| e.to_string())?;
    let back = bwd.translate(0, &mid).map_err(|e| e.to_string())?;
    let p1: Vec<f64> = back
        .iter()
        .zip(&xs)
        .map(|(h, r)| sentence_bleu(h, r).precisions[0].value())
        .collect();
    let n = p1.len() as f64;
    let mean = p1.iter().sum::<f64>() / n;
    let se = (p1.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let expected = (1.0 - p) * (1.0 - p);
    ensure!((mean - expected).abs() <= 3.0 * se, "mean {mean:.5}, expected {expected} +- 3*{se:.5}");
    Ok(format!("20000 tokens: mean p1 {mean:.5} vs {expected} (se {se:.5})"))
}

// ---------------------------------------------------------------------------
// 5

fn ac5_length_bias() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (mono, dict) = fixture(dir.path(), 5_000, 3..=40, 2_000, 5);
    let text = config_text(
        &mono,
        &dict,
        &dir.path().join("out"),
        "backend = \"noise\"\nvocab_size = 2000\np_sub = 0.15",
        "",
    );
    let config = write_config(&dir.path().join("c.toml"), &text);
    let out = run_pipeline(&config, &Registry::with_builtins()).map_err(|e| e.to_string())?;
    let scores = &out.result.scores;
    let mean_score = out.result.threshold.mean_score;
    let corpus_len = scores.iter().map(|s| s.token_count as f64).sum::<f64>() / scores.len() as f64;

    let high = (mean_score + 0.2).min(1.0);
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).chain([mean_score, high]).collect();
    let mut grid = grid;
    grid.sort_by(f64::total_cmp);
    let rows = length_bias_report(scores, &grid).map_err(|e| e.to_string())?;
    ensure!(
        rows.windows(2).all(|w| w[0].retention >= w[1].retention),
        "retention not monotone in threshold"
    );
    let at_high = rows.iter().find(|r| r.threshold == high).unwrap();
    let kept_len = at_high.mean_len_retained.ok_or("nothing retained at mean + 0.2")?;
    ensure!(kept_len < corpus_len, "mean retained length {kept_len:.2} !< corpus mean {corpus_len:.2}");
    Ok(format!(
        "threshold {high:.4}: kept {} with mean length {kept_len:.2} < {corpus_len:.2}",
        at_high.retained
    ))
}

// ---------------------------------------------------------------------------
// 6

fn ac6_threshold() -> Outcome {
    let t = compute_threshold(&[0.2, 0.4, 0.6], 0.02).map_err(|e| e.to_string())?;
    ensure!(t.value == 0.42, "got {:?}", t.value);
    let ones = compute_threshold(&[1.0; 7], 0.02).map_err(|e| e.to_string())?;
    ensure!(ones.value == 1.0, "all-1.0 scores gave {}", ones.value);
    Ok("0.42 exactly; clamp to 1.0".into())
}

// ---------------------------------------------------------------------------
// 7

fn source(tag: &str, n: usize, shared: &[usize]) -> ParallelCorpus {
    let mut c = ParallelCorpus::new("hi", "en").unwrap();
    for i in 0..n {
        let (s, t) = if shared.contains(&i) {
            (format!("common {i}"), format!("COMMON {i}"))
        } else {
            (format!("{tag} {i}"), format!("{tag} T{i}"))
        };
        c.push(i as u64 + 1, tokenize(&s), tokenize(&t), tag);
    }
    c
}

fn ac7_collation() -> Outcome {
    let a = source("a", 150, &[0, 1, 2]);
    let b = source("b", 20, &[0, 1]);
    let c = source("c", 5, &[2]);
    let (merged, report) = collate(vec![a.clone(), b.clone(), c.clone()]).map_err(|e| e.to_string())?;
    ensure!(report.pre_dedup_total == 175, "pre {}", report.pre_dedup_total);
    ensure!(report.post_dedup_total == 172, "post {}", report.post_dedup_total);
    ensure!(merged.len() == 172, "merged {}", merged.len());
    let expected: BTreeMap<String, u64> = [("a", 150), ("b", 20), ("c", 5)].map(|(k, v)| (k.into(), v)).into();
    ensure!(report.pre_dedup_per_source == expected, "{:?}", report.pre_dedup_per_source);

    let set = |c: &ParallelCorpus| -> BTreeSet<(String, String)> {
        c.records.iter().map(|r| (r.src.normalized(), r.tgt.normalized())).collect()
    };
    let ab = collate(vec![a.clone(), b.clone()]).unwrap().0;
    let ba = collate(vec![b, a]).unwrap().0;
    ensure!(set(&ab) == set(&ba), "collate(A,B) and collate(B,A) differ");
    Ok(format!("175 -> 172, per source {:?}", report.post_dedup_per_source))
}

// ---------------------------------------------------------------------------
// 8

fn remote_spec(url: &str, batch_size: usize) -> TranslatorSpec {
    let mut spec = TranslatorSpec::remote("hi", "en", url);
    spec.batch_size = batch_size;
    spec.retry.base_ms = 10;
    spec
}

fn ac8_wire() -> Outcome {
    let inputs: Vec<TokenSeq> = synth::sentences("hi", 257, 1..=10, 100, 8).iter().map(|s| tokenize(s)).collect();

    let stub = serve_stub("127.0.0.1", 0, StubBehavior::Echo).map_err(|e| e.to_string())?;
    let client = RemoteTranslator::from_spec(&remote_spec(&stub.url(), 100)).map_err(|e| e.to_string())?;
    let out = client.translate(0, &inputs).map_err(|e| e.to_string())?;
    ensure!(out == inputs, "reassembled batch differs from input");
    let mut sizes: Vec<usize> = stub.requests().iter().map(|r| r.texts).collect();
    sizes.sort();
    ensure!(sizes == [57, 100, 100], "request sizes {sizes:?}");

    let schedule = vec![Fault::Status(503), Fault::Status(500), Fault::Pass];
    let stub = serve_stub("127.0.0.1", 0, StubBehavior::InjectFault { schedule }).map_err(|e| e.to_string())?;
    let mut spec = remote_spec(&stub.url(), 100);
    spec.retry.max_attempts = 3;
    let client = RemoteTranslator::from_spec(&spec).map_err(|e| e.to_string())?;
    let out = client.translate(0, &inputs[..50]).map_err(|e| e.to_string())?;
    ensure!(out == inputs[..50], "retried batch differs");
    ensure!(client.requests_sent() == 3, "{} attempts", client.requests_sent());

    let stub = serve_stub("127.0.0.1", 0, StubBehavior::InjectFault { schedule: vec![Fault::Truncate] })
        .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let mono = dir.path().join("mono.hi");
    synth::write_lines(&mono, synth::sentences("hi", 20, 1..=5, 50, 8)).unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(
        &config,
        format!(
            "[corpus]\npath = \"{}\"\nlanguage = \"hi\"\n[forward]\nbackend = \"remote\"\nsrc_lang = \"hi\"\ntgt_lang = \"en\"\nendpoint = \"{}\"\n[output]\ndir = \"{}\"\n",
            mono.display(),
            stub.url(),
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let status = Command::new(BIN)
        .args(["--config", config.to_str().unwrap(), "filter"])
        .env_remove("BTFILTER_ENDPOINT")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .unwrap();
    ensure!(status.code() == Some(3), "length mismatch exit code {:?}", status.code());
    Ok("3 requests (100/100/57) in order; 3 attempts; mismatch exits 3".into())
}

// ---------------------------------------------------------------------------
// 9

fn without_timestamp(manifest: &[u8]) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(manifest).unwrap();
    v["provenance"]
        .as_object_mut()
        .unwrap()
        .remove("created_unix");
    v
}

fn ac9_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (mono, dict) = fixture(dir.path(), 20_000, 1..=35, 800, 9);
    let out = dir.path().join("out");
    let config = dir.path().join("c.toml");
    let text = config_text(
        &mono,
        &dict,
        &out,
        "backend = \"noise\"\nvocab_size = 800\np_sub = 0.12\np_del = 0.05",
        "chunk_size = 333",
    );
    std::fs::write(&config, text).unwrap();

    let files = ["synthetic.hi", "synthetic.en", "scores.tsv", "report.json", "report.txt", "manifest.json"];
    let mut runs: Vec<Vec<Vec<u8>>> = Vec::new();
    for threads in ["1", "8"] {
        let o = Command::new(BIN)
            .args(["--config", config.to_str().unwrap(), "--threads", threads, "filter"])
            .output()
            .unwrap();
        ensure!(o.status.success(), "--threads {threads}: {}", String::from_utf8_lossy(&o.stderr));
        runs.push(files.iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect());
    }
    for (i, name) in files.iter().enumerate() {
        let same = if *name == "manifest.json" {
            without_timestamp(&runs[0][i]) == without_timestamp(&runs[1][i])
        } else {
            runs[0][i] == runs[1][i]
        };
        ensure!(same, "{name} differs between --threads 1 and --threads 8");
    }
    let kept = runs[0][0].iter().filter(|&&b| b == b'\n').count();
    ensure!(kept > 0 && kept < 20_000, "degenerate run: kept {kept}");
    Ok(format!("6 outputs byte-identical; kept {kept} of 20000"))
}

// ---------------------------------------------------------------------------
// 10

const MEASURE_FLAG: &str = "--measure-child";

/// Launcher mode: run the CLI with `args`, pass its stdout through, and
/// report its peak RSS on stderr.
///
/// Linux carries the spawning process's RSS high-water mark into the child
/// across exec, so the CLI must be spawned from a fresh, small process
/// rather than from a test process that has just built large fixtures.
fn measure_child(args: &[String]) -> ! {
    let child = Command::new(BIN).args(args).stderr(Stdio::null()).spawn().unwrap();
    let mut status = 0;
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    let pid = unsafe { libc::wait4(child.id() as libc::pid_t, &mut status, 0, &mut usage) };
    assert!(pid > 0, "wait4 failed");
    eprintln!("maxrss_kib={}", usage.ru_maxrss);
    let code = if libc::WIFEXITED(status) { libc::WEXITSTATUS(status) } else { 128 };
    std::process::exit(code);
}

/// Runs the CLI and returns (stdout, peak RSS in KiB of the CLI process).
fn run_measured(args: &[&str]) -> Result<(String, u64), String> {
    let o = Command::new(std::env::current_exe().unwrap())
        .arg(MEASURE_FLAG)
        .args(args)
        .output()
        .unwrap();
    ensure!(o.status.success(), "{args:?} failed with {}", o.status);
    let stderr = String::from_utf8_lossy(&o.stderr);
    let rss = stderr
        .lines()
        .find_map(|l| l.strip_prefix("maxrss_kib="))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| format!("no RSS report in {stderr:?}"))?;
    Ok((String::from_utf8(o.stdout).unwrap(), rss))
}

/// Peak RSS allowed for stats and table round-trip scoring, at any size.
const MEMORY_BUDGET_KIB: u64 = 48 * 1024;
/// Allowed peak growth from 100K to 1M lines.
const MEMORY_GROWTH_KIB: u64 = 4 * 1024;

fn ac10_streaming() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut peaks = Vec::new();
    for n in [100_000usize, 1_000_000] {
        let sub = dir.path().join(n.to_string());
        std::fs::create_dir(&sub).unwrap();
        let (mono, dict) = fixture(&sub, n, 1..=12, 1_000, 10);
        let config = sub.join("c.toml");
        std::fs::write(&config, config_text(&mono, &dict, &sub.join("out"), "backend = \"table\"", "")).unwrap();

        let (stats, stats_rss) = run_measured(&["stats", mono.to_str().unwrap(), "--language", "hi"])?;
        let stats: serde_json::Value = serde_json::from_str(&stats).map_err(|e| e.to_string())?;
        ensure!(stats["record_count"] == n as u64, "stats counted {}", stats["record_count"]);

        let sidecar = sub.join("scores.tsv");
        let (_, rt_rss) = run_measured(&[
            "--config",
            config.to_str().unwrap(),
            "roundtrip",
            "--out",
            sidecar.to_str().unwrap(),
        ])?;
        let rows = std::fs::read_to_string(&sidecar).unwrap().lines().count() - 1;
        ensure!(rows == n, "sidecar has {rows} rows");
        peaks.push((n, stats_rss, rt_rss));
    }
    for &(n, s, r) in &peaks {
        ensure!(
            s <= MEMORY_BUDGET_KIB && r <= MEMORY_BUDGET_KIB,
            "{n} lines: peak RSS stats {s} KiB, roundtrip {r} KiB over {MEMORY_BUDGET_KIB} KiB"
        );
    }
    let (small, large) = (peaks[0], peaks[1]);
    ensure!(
        large.1 <= small.1 + MEMORY_GROWTH_KIB && large.2 <= small.2 + MEMORY_GROWTH_KIB,
        "peak RSS grows with line count: {peaks:?}"
    );
    let detail = peaks
        .iter()
        .map(|(n, s, r)| format!("{n} lines: stats {:.1} MiB, roundtrip {:.1} MiB", *s as f64 / 1024.0, *r as f64 / 1024.0))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(detail)
}
