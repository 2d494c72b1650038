use rayon::prelude::*;

use super::{Dictionary, TranslateError, Translator, TranslatorSpec};
use crate::textnorm::TokenSeq;

/// Token-by-token dictionary lookup. Unknown tokens pass through.
#[derive(Debug, Clone)]
pub struct TableTranslator {
    dictionary: Dictionary,
}

impl TableTranslator {
    pub fn new(dictionary: Dictionary) -> Self {
        TableTranslator { dictionary }
    }

    pub fn from_spec(spec: &TranslatorSpec) -> Result<Self, TranslateError> {
        Ok(Self::new(Dictionary::from_spec(spec)?))
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dictionary
    }

    pub fn map_tokens(&self, seq: &TokenSeq) -> Vec<String> {
        seq.tokens
            .iter()
            .map(|t| self.dictionary.map(t).to_owned())
            .collect()
    }
}

impl Translator for TableTranslator {
    fn translate(&self, _first_index: u64, inputs: &[TokenSeq]) -> Result<Vec<TokenSeq>, TranslateError> {
        Ok(inputs
            .par_iter()
            .map(|s| TokenSeq::from_tokens(self.map_tokens(s)))
            .collect())
    }
}
