//! Text normalization and whitespace tokenization.
//!
//! Every path that scores or ingests text goes through [`normalize`] and
//! [`tokenize`], so scores computed from files, from translators and from the
//! wire all agree on what a token is.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// A normalized, whitespace-tokenized sentence.
///
/// `surface` keeps the input line with its trailing newline removed. The
/// tokens are derived from the normalized form of that line.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq {
    pub surface: String,
    pub tokens: Vec<String>,
}

impl TokenSeq {
    /// Builds a sequence from already-clean tokens. The surface is their
    /// single-space join, which is also the normalized form.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let surface = tokens.join(" ");
        TokenSeq { surface, tokens }
    }

    pub fn empty() -> Self {
        TokenSeq {
            surface: String::new(),
            tokens: Vec::new(),
        }
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Normalized text: tokens joined by single spaces.
    pub fn normalized(&self) -> String {
        self.tokens.join(" ")
    }
}

fn is_invisible(c: char) -> bool {
    matches!(
        c,
        '\u{200B}' // zero width space
            | '\u{200C}' // zero width non-joiner
            | '\u{200D}' // zero width joiner
            | '\u{2060}' // word joiner
            | '\u{FEFF}' // BOM / zero width no-break space
    )
}

/// NFC-normalizes a line, removes zero-width and BOM characters, trims it
/// and collapses internal whitespace runs to one space.
///
/// ZWNJ and ZWJ are removed along with the other zero-width characters even
/// though they can be orthographically meaningful in some Indic scripts.
pub fn normalize(line: &str) -> String {
    let composed: String = line.chars().filter(|c| !is_invisible(*c)).nfc().collect();
    let mut out = String::with_capacity(composed.len());
    for word in composed.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Normalizes `line` and splits it on single spaces.
pub fn tokenize(line: &str) -> TokenSeq {
    let surface = line.strip_suffix('\n').unwrap_or(line);
    let surface = surface.strip_suffix('\r').unwrap_or(surface);
    let normalized = normalize(surface);
    let tokens = if normalized.is_empty() {
        Vec::new()
    } else {
        normalized.split(' ').map(str::to_owned).collect()
    };
    TokenSeq {
        surface: surface.to_owned(),
        tokens,
    }
}
