//! JSON bodies of the `POST {endpoint}/translate` protocol.
//!
//! Request: `{"src_lang": "..", "tgt_lang": "..", "texts": [..]}`.
//! Response (200): `{"translations": [..]}`, same length and order as `texts`.

use serde::{Deserialize, Serialize};

pub const PATH: &str = "/translate";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslateRequest {
    pub src_lang: String,
    pub tgt_lang: String,
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslateResponse {
    pub translations: Vec<String>,
}
