//! Seeded synthetic corpora over the same token vocabulary the noise
//! backend substitutes from, so simulated round trips have known statistics.

use std::collections::BTreeMap;
use std::io::{self, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::translate::vocab_token;

/// Bijective dictionary `src{k} -> tgt{k}` for `k < vocab`.
pub fn dictionary(src: &str, tgt: &str, vocab: u64) -> BTreeMap<String, String> {
    (0..vocab)
        .map(|k| (vocab_token(src, k), vocab_token(tgt, k)))
        .collect()
}

/// `n` sentences with lengths uniform on `lengths` and tokens uniform over
/// the first `vocab` tokens of `lang`.
pub fn sentences(lang: &str, n: usize, lengths: RangeInclusive<usize>, vocab: u64, seed: u64) -> Vec<String> {
    sentence_stream(lang, lengths, vocab, seed).take(n).collect()
}

/// The endless stream [`sentences`] takes its prefix from.
pub fn sentence_stream(
    lang: &str,
    lengths: RangeInclusive<usize>,
    vocab: u64,
    seed: u64,
) -> impl Iterator<Item = String> + '_ {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::iter::repeat_with(move || {
        let len = rng.random_range(lengths.clone());
        (0..len)
            .map(|_| vocab_token(lang, rng.random_range(0..vocab)))
            .collect::<Vec<_>>()
            .join(" ")
    })
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: impl IntoIterator<Item = S>) -> io::Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for line in lines {
        writeln!(out, "{}", line.as_ref())?;
    }
    out.flush()
}

pub fn write_dictionary(path: &Path, dict: &BTreeMap<String, String>) -> io::Result<()> {
    write_lines(path, dict.iter().map(|(a, b)| format!("{a}\t{b}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_in_range() {
        let a = sentences("hi", 50, 3..=7, 100, 1);
        assert_eq!(a, sentences("hi", 50, 3..=7, 100, 1));
        assert_ne!(a, sentences("hi", 50, 3..=7, 100, 2));
        assert!(a.iter().all(|s| (3..=7).contains(&s.split(' ').count())));
        assert_eq!(dictionary("hi", "en", 3)["hi2"], "en2");
        let streamed: Vec<String> = sentence_stream("hi", 3..=7, 100, 1).take(50).collect();
        assert_eq!(streamed, a);
    }
}
