//! Smoothed sentence-level BLEU and pooled corpus BLEU.
//!
//! Configuration, which is also recorded in every report:
//! - single reference, clipped n-gram precision, orders 1..=4;
//! - effective order is `min(4, hypothesis length)`;
//! - for orders n >= 2 with zero matches the numerator is floored to 0.1
//!   (denominator unchanged);
//! - brevity penalty `exp(1 - r/c)` when `c < r`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::ArgumentError;
use crate::textnorm::TokenSeq;

pub const MAX_ORDER: usize = 4;
pub const ZERO_MATCH_FLOOR: f64 = 0.1;

/// Self-description of the scorer, embedded in reports.
pub const CONFIG_DESCRIPTION: &str =
    "sentence-bleu: whitespace tokens over NFC text, max order 4, effective order min(4, hyp_len), zero-match floor 0.1 for n>=2, single reference";

/// One modified n-gram precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fraction {
    /// Clipped match count, or the smoothing floor when it replaced a zero.
    pub numerator: f64,
    pub denominator: u64,
}

impl Fraction {
    pub fn value(&self) -> f64 {
        if self.denominator == 0 {
            0.0
        } else {
            self.numerator / self.denominator as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuBreakdown {
    pub precisions: Vec<Fraction>,
    pub effective_order: usize,
    pub brevity_penalty: f64,
    pub score: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuBreakdown {
    fn degenerate(hyp_len: usize, ref_len: usize) -> Self {
        BleuBreakdown {
            precisions: vec![Fraction {
                numerator: 0.0,
                denominator: 0,
            }],
            effective_order: 1,
            brevity_penalty: brevity_penalty(hyp_len, ref_len),
            score: 0.0,
            hyp_len,
            ref_len,
        }
    }
}

pub type NgramCounts<'a> = HashMap<&'a [String], u64>;

/// Counts every contiguous window of `n` tokens.
pub fn ngram_counts(seq: &TokenSeq, n: usize) -> Result<NgramCounts<'_>, ArgumentError> {
    if !(1..=MAX_ORDER).contains(&n) {
        return Err(ArgumentError::new(format!(
            "n-gram order must be in 1..={MAX_ORDER}, got {n}"
        )));
    }
    Ok(count_windows(&seq.tokens, n))
}

fn count_windows(tokens: &[String], n: usize) -> NgramCounts<'_> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_matches(hyp: &[String], reference: &[String], n: usize) -> (u64, u64) {
    let hyp_counts = count_windows(hyp, n);
    let ref_counts = count_windows(reference, n);
    let total = hyp.len().saturating_sub(n - 1) as u64;
    let matches = hyp_counts
        .iter()
        .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    (matches, total)
}

/// `1` when the hypothesis is at least as long as the reference, otherwise
/// `exp(1 - ref_len / hyp_len)`. A zero-length hypothesis gets 0.
pub fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len >= ref_len {
        1.0
    } else if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

fn smoothed(order: usize, matches: u64, total: u64) -> Fraction {
    let numerator = if order >= 2 && matches == 0 {
        ZERO_MATCH_FLOOR
    } else {
        matches as f64
    };
    Fraction {
        numerator,
        denominator: total,
    }
}

fn compose(precisions: &[Fraction], brevity_penalty: f64) -> f64 {
    if precisions.iter().any(|p| p.value() <= 0.0) {
        return 0.0;
    }
    let order = precisions.len() as f64;
    let log_mean = precisions.iter().map(|p| p.value().ln()).sum::<f64>() / order;
    (brevity_penalty * log_mean.exp()).clamp(0.0, 1.0)
}

/// Smoothed BLEU of one hypothesis against one reference.
pub fn sentence_bleu(hypothesis: &TokenSeq, reference: &TokenSeq) -> BleuBreakdown {
    let hyp = &hypothesis.tokens;
    let reference = &reference.tokens;
    if hyp.is_empty() || reference.is_empty() {
        return BleuBreakdown::degenerate(hyp.len(), reference.len());
    }

    let effective_order = hyp.len().min(MAX_ORDER);
    let precisions: Vec<Fraction> = (1..=effective_order)
        .map(|n| {
            let (matches, total) = clipped_matches(hyp, reference, n);
            smoothed(n, matches, total)
        })
        .collect();
    let bp = brevity_penalty(hyp.len(), reference.len());

    BleuBreakdown {
        score: compose(&precisions, bp),
        precisions,
        effective_order,
        brevity_penalty: bp,
        hyp_len: hyp.len(),
        ref_len: reference.len(),
    }
}

/// Corpus BLEU with match and total counts pooled over all pairs.
///
/// When an order n >= 2 has no pooled matches, its numerator is the sum of
/// the per-pair floors: 0.1 for each pair with at least one n-gram of that
/// order. A single pair therefore scores exactly as [`sentence_bleu`].
pub fn corpus_bleu<'a, I>(pairs: I) -> Result<BleuBreakdown, ArgumentError>
where
    I: IntoIterator<Item = (&'a TokenSeq, &'a TokenSeq)>,
{
    let mut matches = [0u64; MAX_ORDER];
    let mut totals = [0u64; MAX_ORDER];
    let mut contributing = [0u64; MAX_ORDER];
    let (mut hyp_len, mut ref_len, mut max_hyp) = (0usize, 0usize, 0usize);
    let mut seen = 0usize;

    for (hyp, reference) in pairs {
        seen += 1;
        hyp_len += hyp.token_count();
        ref_len += reference.token_count();
        max_hyp = max_hyp.max(hyp.token_count());
        for n in 1..=MAX_ORDER {
            let (m, t) = clipped_matches(&hyp.tokens, &reference.tokens, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
            contributing[n - 1] += u64::from(t > 0);
        }
    }

    if seen == 0 {
        return Err(ArgumentError::new("corpus_bleu needs at least one pair"));
    }
    if hyp_len == 0 || ref_len == 0 {
        return Ok(BleuBreakdown::degenerate(hyp_len, ref_len));
    }

    let effective_order = max_hyp.min(MAX_ORDER);
    let precisions: Vec<Fraction> = (1..=effective_order)
        .map(|n| {
            let mut p = smoothed(n, matches[n - 1], totals[n - 1]);
            if matches[n - 1] == 0 && n >= 2 {
                p.numerator = ZERO_MATCH_FLOOR * contributing[n - 1] as f64;
            }
            p
        })
        .collect();
    let bp = brevity_penalty(hyp_len, ref_len);
    Ok(BleuBreakdown {
        score: compose(&precisions, bp),
        precisions,
        effective_order,
        brevity_penalty: bp,
        hyp_len,
        ref_len,
    })
}
