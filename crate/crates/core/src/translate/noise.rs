//! Noisy-channel translator simulator.
//!
//! Applies the dictionary, then corrupts each output token independently:
//! deleted with probability `p_del`, otherwise replaced by a uniformly drawn
//! vocabulary token with probability `p_sub`. The vocabulary is the `V`
//! synthetic target-language tokens produced by [`vocab_token`].
//!
//! Randomness is counter-based: the draws for token `j` of sentence `i` come
//! from a ChaCha stream keyed by `(seed, direction)`, stream `i`, word
//! offset `j * WORDS_PER_TOKEN`. Output therefore does not depend on batch
//! boundaries, call order or thread count.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{Dictionary, TableTranslator, TranslateError, Translator, TranslatorSpec};
use crate::textnorm::TokenSeq;

const WORDS_PER_TOKEN: u128 = 16;

/// The `k`-th token of the synthetic vocabulary for `lang`.
pub fn vocab_token(lang: &str, k: u64) -> String {
    format!("{lang}{k}")
}

pub struct NoiseTranslator {
    table: TableTranslator,
    tgt_lang: String,
    vocab_size: u64,
    p_sub: f64,
    p_del: f64,
    base: ChaCha8Rng,
}

fn direction_key(seed: u64, src: &str, tgt: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(src.as_bytes());
    h.update([0]);
    h.update(tgt.as_bytes());
    h.finalize().into()
}

impl NoiseTranslator {
    pub fn from_spec(spec: &TranslatorSpec) -> Result<Self, TranslateError> {
        let seed = spec
            .seed
            .ok_or_else(|| TranslateError::Config("noise backend requires a seed".into()))?;
        Ok(NoiseTranslator {
            table: TableTranslator::new(Dictionary::from_spec(spec)?),
            tgt_lang: spec.tgt_lang.clone(),
            vocab_size: spec.vocab_size as u64,
            p_sub: spec.p_sub,
            p_del: spec.p_del,
            base: ChaCha8Rng::from_seed(direction_key(seed, &spec.src_lang, &spec.tgt_lang)),
        })
    }

    fn corrupt(&self, sentence_index: u64, seq: &TokenSeq) -> TokenSeq {
        let mapped = self.table.map_tokens(seq);
        if self.p_sub == 0.0 && self.p_del == 0.0 {
            return TokenSeq::from_tokens(mapped);
        }
        let mut rng = self.base.clone();
        rng.set_stream(sentence_index);
        let mut out = Vec::with_capacity(mapped.len());
        for (j, token) in mapped.into_iter().enumerate() {
            rng.set_word_pos(j as u128 * WORDS_PER_TOKEN);
            let u_del: f64 = rng.random();
            let u_sub: f64 = rng.random();
            let pick = rng.next_u64() % self.vocab_size;
            if u_del < self.p_del {
                continue;
            }
            if u_sub < self.p_sub {
                out.push(vocab_token(&self.tgt_lang, pick));
            } else {
                out.push(token);
            }
        }
        TokenSeq::from_tokens(out)
    }
}

impl Translator for NoiseTranslator {
    fn translate(&self, first_index: u64, inputs: &[TokenSeq]) -> Result<Vec<TokenSeq>, TranslateError> {
        Ok(inputs
            .par_iter()
            .enumerate()
            .map(|(i, s)| self.corrupt(first_index + i as u64, s))
            .collect())
    }
}
