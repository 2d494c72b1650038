use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::{TranslateError, TranslatorSpec};

/// A bijective token dictionary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    map: HashMap<String, String>,
}

fn check_token(tok: &str) -> Result<(), TranslateError> {
    if tok.is_empty() || tok.chars().any(char::is_whitespace) {
        return Err(TranslateError::Config(format!(
            "dictionary token {tok:?} is empty or contains whitespace"
        )));
    }
    Ok(())
}

impl Dictionary {
    /// Builds a dictionary, rejecting duplicate keys, duplicate values and
    /// tokens that could not survive tokenization.
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self, TranslateError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut map = HashMap::new();
        let mut values = HashMap::new();
        for (k, v) in pairs {
            let (k, v): (String, String) = (k.into(), v.into());
            check_token(&k)?;
            check_token(&v)?;
            if let Some(prev) = values.insert(v.clone(), k.clone()) {
                return Err(TranslateError::Config(format!(
                    "dictionary is not bijective: {prev:?} and {k:?} both map to {v:?}"
                )));
            }
            if map.insert(k.clone(), v).is_some() {
                return Err(TranslateError::Config(format!(
                    "dictionary is not bijective: {k:?} has several translations"
                )));
            }
        }
        Ok(Dictionary { map })
    }

    /// Reads a TSV file of `source<TAB>target` lines. Blank lines are skipped.
    pub fn load(path: &Path) -> Result<Self, TranslateError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            TranslateError::Config(format!("cannot read dictionary {}: {e}", path.display()))
        })?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match line.split('\t').collect::<Vec<_>>().as_slice() {
                [a, b] => pairs.push((a.trim().to_owned(), b.trim().to_owned())),
                _ => {
                    return Err(TranslateError::Config(format!(
                        "{}:{}: expected two tab-separated columns",
                        path.display(),
                        i + 1
                    )))
                }
            }
        }
        Self::from_pairs(pairs)
    }

    /// The dictionary a spec describes: file entries plus inline entries,
    /// inverted if the spec says so.
    pub fn from_spec(spec: &TranslatorSpec) -> Result<Self, TranslateError> {
        let mut pairs: Vec<(String, String)> = match &spec.dictionary {
            Some(path) => Self::load(path)?.map.into_iter().collect(),
            None => Vec::new(),
        };
        pairs.extend(spec.entries.iter().map(|(k, v)| (k.clone(), v.clone())));
        let dict = Self::from_pairs(pairs)?;
        Ok(if spec.inverted { dict.inverse() } else { dict })
    }

    pub fn inverse(&self) -> Self {
        Dictionary {
            map: self.map.iter().map(|(k, v)| (v.clone(), k.clone())).collect(),
        }
    }

    /// Maps a token, passing unknown tokens through unchanged.
    pub fn map<'a>(&'a self, token: &'a str) -> &'a str {
        self.map.get(token).map_or(token, String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn to_btree(&self) -> BTreeMap<String, String> {
        self.map.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }
}
