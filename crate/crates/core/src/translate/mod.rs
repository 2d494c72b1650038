//! Translator backends behind a common trait, selected by name.
//!
//! A [`TranslatorSpec`] names a backend (`table`, `noise` or `remote`) and
//! carries its parameters. The [`Registry`] maps backend names to factories,
//! so new backends can be plugged in without touching the pipeline.

mod dictionary;
mod noise;
mod remote;
pub mod stub;
mod table;
pub mod wire;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ErrorKind;
use crate::textnorm::TokenSeq;

pub use dictionary::Dictionary;
pub use noise::{vocab_token, NoiseTranslator};
pub use remote::{resolve_endpoint, RemoteTranslator, ENDPOINT_ENV};
pub use table::TableTranslator;

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error("translator configuration: {0}")]
    Config(String),
    #[error("unknown translator backend {name:?} (known: {known})")]
    UnknownBackend { name: String, known: String },
    #[error("cannot start stub server on {addr}: {source}")]
    Startup {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("batch {batch}: transport failure after {attempts} attempt(s): {message}")]
    Transport {
        batch: usize,
        attempts: u32,
        message: String,
    },
    #[error("batch {batch}: protocol error: {message}")]
    Protocol { batch: usize, message: String },
}

impl TranslateError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            TranslateError::Config(_) => ErrorKind::Data,
            TranslateError::UnknownBackend { .. } => ErrorKind::Usage,
            TranslateError::Startup { .. }
            | TranslateError::Transport { .. }
            | TranslateError::Protocol { .. } => ErrorKind::Transport,
        }
    }
}

/// Exponential backoff with full jitter: the wait before attempt `k` (k >= 2)
/// is uniform on `[0, base_ms * factor^(k-2)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_ms: u64,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_ms: 200,
            factor: 2.0,
        }
    }
}

fn default_vocab_size() -> usize {
    10_000
}
fn default_batch_size() -> usize {
    64
}
fn default_max_in_flight() -> usize {
    4
}
fn default_timeout_ms() -> u64 {
    30_000
}

/// Selects and parameterizes a translator backend.
///
/// Fields that do not apply to the chosen backend are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatorSpec {
    pub backend: String,
    pub src_lang: String,
    pub tgt_lang: String,

    /// Two-column TSV dictionary file (source token, target token).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<PathBuf>,
    /// Inline dictionary entries; merged with the file, if any.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub entries: BTreeMap<String, String>,
    /// Use the dictionary right-to-left.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub inverted: bool,

    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default)]
    pub p_sub: f64,
    #[serde(default)]
    pub p_del: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Sent as `Authorization: Bearer <token>` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
}

impl TranslatorSpec {
    pub fn new(backend: &str, src_lang: &str, tgt_lang: &str) -> Self {
        TranslatorSpec {
            backend: backend.to_owned(),
            src_lang: src_lang.to_owned(),
            tgt_lang: tgt_lang.to_owned(),
            dictionary: None,
            entries: BTreeMap::new(),
            inverted: false,
            vocab_size: default_vocab_size(),
            p_sub: 0.0,
            p_del: 0.0,
            seed: None,
            endpoint: None,
            batch_size: default_batch_size(),
            max_in_flight: default_max_in_flight(),
            timeout_ms: default_timeout_ms(),
            retry: RetryPolicy::default(),
            auth_token: None,
        }
    }

    pub fn table(src_lang: &str, tgt_lang: &str, entries: BTreeMap<String, String>) -> Self {
        TranslatorSpec {
            entries,
            ..Self::new("table", src_lang, tgt_lang)
        }
    }

    pub fn noise(
        src_lang: &str,
        tgt_lang: &str,
        entries: BTreeMap<String, String>,
        p_sub: f64,
        p_del: f64,
        seed: u64,
    ) -> Self {
        TranslatorSpec {
            entries,
            p_sub,
            p_del,
            seed: Some(seed),
            ..Self::new("noise", src_lang, tgt_lang)
        }
    }

    pub fn remote(src_lang: &str, tgt_lang: &str, endpoint: &str) -> Self {
        TranslatorSpec {
            endpoint: Some(endpoint.to_owned()),
            ..Self::new("remote", src_lang, tgt_lang)
        }
    }

    /// Checks the parameter ranges shared by all backends.
    pub fn validate(&self) -> Result<(), TranslateError> {
        let bad = |msg: String| Err(TranslateError::Config(msg));
        if self.src_lang.is_empty() || self.tgt_lang.is_empty() {
            return bad("src_lang and tgt_lang are required".into());
        }
        for (name, p) in [("p_sub", self.p_sub), ("p_del", self.p_del)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be >= 1".into());
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be >= 1".into());
        }
        if self.retry.max_attempts == 0 {
            return bad("retry.max_attempts must be >= 1".into());
        }
        Ok(())
    }
}

/// The reverse-direction spec.
///
/// Table and noise specs use the inverse dictionary; noise parameters carry
/// over unchanged. Remote specs just swap the language codes in requests.
pub fn invert(spec: &TranslatorSpec) -> TranslatorSpec {
    let mut inv = spec.clone();
    std::mem::swap(&mut inv.src_lang, &mut inv.tgt_lang);
    if spec.backend != "remote" {
        inv.inverted = !spec.inverted;
    }
    inv
}

/// A translation engine for one direction.
///
/// `first_index` is the corpus-wide index of `inputs[0]`; stochastic
/// backends key their randomness on it so results do not depend on how a
/// corpus is split into calls.
pub trait Translator: Send + Sync {
    fn translate(
        &self,
        first_index: u64,
        inputs: &[TokenSeq],
    ) -> Result<Vec<TokenSeq>, TranslateError>;
}

pub type Factory = fn(&TranslatorSpec) -> Result<Box<dyn Translator>, TranslateError>;

/// Backend name to factory.
#[derive(Clone)]
pub struct Registry {
    factories: BTreeMap<String, Factory>,
}

impl Registry {
    pub fn empty() -> Self {
        Registry {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("table", |spec| Ok(Box::new(TableTranslator::from_spec(spec)?)));
        r.register("noise", |spec| Ok(Box::new(NoiseTranslator::from_spec(spec)?)));
        r.register("remote", |spec| Ok(Box::new(RemoteTranslator::from_spec(spec)?)));
        r
    }

    pub fn register(&mut self, name: &str, factory: Factory) {
        self.factories.insert(name.to_owned(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, spec: &TranslatorSpec) -> Result<Box<dyn Translator>, TranslateError> {
        spec.validate()?;
        let factory = self.factories.get(&spec.backend).ok_or_else(|| {
            TranslateError::UnknownBackend {
                name: spec.backend.clone(),
                known: self.names().collect::<Vec<_>>().join(", "),
            }
        })?;
        factory(spec)
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

/// Inputs with their aligned translations.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationBatch {
    pub inputs: Vec<TokenSeq>,
    pub outputs: Vec<TokenSeq>,
}

/// One-shot translation of `inputs` with a backend built from `spec`.
pub fn translate_batch(
    spec: &TranslatorSpec,
    inputs: Vec<TokenSeq>,
) -> Result<TranslationBatch, TranslateError> {
    if inputs.is_empty() {
        return Err(TranslateError::Config("empty translation batch".into()));
    }
    let translator = Registry::with_builtins().build(spec)?;
    let outputs = translator.translate(0, &inputs)?;
    Ok(TranslationBatch { inputs, outputs })
}
