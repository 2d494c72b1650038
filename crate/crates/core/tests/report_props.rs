use btfilter::filter::{compute_threshold, SentenceScore};
use btfilter::report::{
    build_manifest, length_bias_report, report_from_scores, ExperimentManifest, HISTOGRAM_BINS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scores(n: usize, seed: u64) -> Vec<SentenceScore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| SentenceScore {
            line_no: i as u64 + 1,
            score: rng.random(),
            token_count: rng.random_range(1..=40),
            retained: false,
        })
        .collect()
}

fn mark(mut s: Vec<SentenceScore>, t: f64) -> Vec<SentenceScore> {
    for x in &mut s {
        x.retained = x.score >= t;
    }
    s
}

#[test]
fn uniform_scores_fill_bins_evenly() {
    let n = 20_000;
    let s = scores(n, 1);
    let t = compute_threshold(&s.iter().map(|x| x.score).collect::<Vec<_>>(), 0.02).unwrap();
    let s = mark(s, t.value);
    let report = report_from_scores("hi", &s, t);
    assert_eq!(report.score_histogram.len(), HISTOGRAM_BINS);
    assert_eq!(report.score_histogram.iter().sum::<u64>(), n as u64);
    let p = 1.0 / HISTOGRAM_BINS as f64;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in report.score_histogram.iter().enumerate() {
        assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "bin {i}: {c}");
    }
}

#[test]
fn perfect_scores_land_in_last_bin() {
    let s: Vec<_> = (0..10)
        .map(|i| SentenceScore { line_no: i, score: 1.0, token_count: 3, retained: true })
        .collect();
    let t = compute_threshold(&[1.0; 10], 0.02).unwrap();
    assert_eq!(t.value, 1.0);
    let r = report_from_scores("hi", &s, t);
    assert_eq!(r.score_histogram[HISTOGRAM_BINS - 1], 10);
    assert_eq!(r.retention_rate, 1.0);
}

#[test]
fn length_bias_at_own_threshold_matches_report() {
    let s = scores(5_000, 2);
    let t = compute_threshold(&s.iter().map(|x| x.score).collect::<Vec<_>>(), 0.02).unwrap();
    let s = mark(s, t.value);
    let report = report_from_scores("hi", &s, t);
    let rows = length_bias_report(&s, &[0.0, t.value, 0.9]).unwrap();
    assert_eq!(rows[0].retention, 1.0);
    assert_eq!(rows[1].retention, report.retention_rate);
    assert_eq!(rows[1].retained, report.post_count);
    assert_eq!(rows[1].mean_len_retained, report.mean_len_retained);
    assert!(rows.windows(2).all(|w| w[0].retention >= w[1].retention));
    assert!(length_bias_report(&s, &[1.5]).is_err());
}

#[test]
fn manifest_round_trips_and_is_deterministic() {
    let text = r#"
seed = 7
[corpus]
path = "mono.hi"
language = "hi"
[forward]
backend = "table"
src_lang = "hi"
tgt_lang = "en"
[phases]
pretrain = ["pmi.hi-en"]
posttrain = ["pmi.hi-en"]
"#;
    let config: btfilter::filter::PipelineConfig = toml::from_str(text).unwrap();
    let s = mark(scores(100, 3), 0.5);
    let t = compute_threshold(&s.iter().map(|x| x.score).collect::<Vec<_>>(), 0.02).unwrap();
    let report = report_from_scores("hi", &s, t);
    let a = build_manifest(&config, &report, 1);
    let b = build_manifest(&config, &report, 2);
    assert_ne!(a, b);
    let mut b2 = b.clone();
    b2.provenance.created_unix = 1;
    assert_eq!(a.to_json(), b2.to_json());
    assert_eq!(ExperimentManifest::from_json(&a.to_json()).unwrap(), a);
    assert_eq!(a.phases[0].inputs, ["pmi.hi-en"]);
    assert_eq!(a.provenance.seed, Some(7));

    let mut broken = a.clone();
    broken.phases.swap(0, 2);
    assert!(ExperimentManifest::from_json(&broken.to_json()).is_err());
}
