//! Batched HTTP client for the translation wire protocol.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use futures::stream::{self, StreamExt};
use rand::Rng;
use reqwest::StatusCode;

use super::wire::{TranslateRequest, TranslateResponse, PATH};
use super::{RetryPolicy, TranslateError, Translator, TranslatorSpec};
use crate::textnorm::{tokenize, TokenSeq};

/// Overrides the configured endpoint of every remote translator.
pub const ENDPOINT_ENV: &str = "BTFILTER_ENDPOINT";

/// The endpoint to use, preferring a non-empty `env_override`.
pub fn resolve_endpoint(spec: &TranslatorSpec, env_override: Option<String>) -> Option<String> {
    env_override
        .filter(|e| !e.trim().is_empty())
        .or_else(|| spec.endpoint.clone())
}

pub struct RemoteTranslator {
    url: String,
    src_lang: String,
    tgt_lang: String,
    batch_size: usize,
    max_in_flight: usize,
    retry: RetryPolicy,
    auth_token: Option<String>,
    client: reqwest::Client,
    runtime: tokio::runtime::Runtime,
    requests_sent: AtomicU64,
}

enum Failure {
    Retryable(String),
    Fatal(String),
}

impl RemoteTranslator {
    pub fn from_spec(spec: &TranslatorSpec) -> Result<Self, TranslateError> {
        let endpoint = resolve_endpoint(spec, std::env::var(ENDPOINT_ENV).ok()).ok_or_else(|| {
            TranslateError::Config(format!(
                "remote backend needs an endpoint (config or {ENDPOINT_ENV})"
            ))
        })?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(spec.timeout_ms))
            .build()
            .map_err(|e| TranslateError::Config(format!("http client: {e}")))?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .map_err(|e| TranslateError::Config(format!("async runtime: {e}")))?;
        Ok(RemoteTranslator {
            url: format!("{}{PATH}", endpoint.trim_end_matches('/')),
            src_lang: spec.src_lang.clone(),
            tgt_lang: spec.tgt_lang.clone(),
            batch_size: spec.batch_size,
            max_in_flight: spec.max_in_flight,
            retry: spec.retry.clone(),
            auth_token: spec.auth_token.clone(),
            client,
            runtime,
            requests_sent: AtomicU64::new(0),
        })
    }

    /// Total HTTP requests issued, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.requests_sent.load(Ordering::Relaxed)
    }

    async fn attempt(&self, texts: &[String]) -> Result<Vec<String>, Failure> {
        self.requests_sent.fetch_add(1, Ordering::Relaxed);
        let body = TranslateRequest {
            src_lang: self.src_lang.clone(),
            tgt_lang: self.tgt_lang.clone(),
            texts: texts.to_vec(),
        };
        let mut request = self.client.post(&self.url).json(&body);
        if let Some(token) = &self.auth_token {
            request = request.bearer_auth(token);
        }
        let response = request
            .send()
            .await
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = response.status();
        if status != StatusCode::OK {
            let msg = format!("HTTP {status}");
            return Err(
                if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
                    Failure::Retryable(msg)
                } else {
                    Failure::Fatal(msg)
                },
            );
        }
        let bytes = response
            .bytes()
            .await
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        let parsed: TranslateResponse = serde_json::from_slice(&bytes)
            .map_err(|e| Failure::Fatal(format!("malformed response: {e}")))?;
        if parsed.translations.len() != texts.len() {
            return Err(Failure::Fatal(format!(
                "sent {} texts, received {} translations",
                texts.len(),
                parsed.translations.len()
            )));
        }
        Ok(parsed.translations)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let cap = self.retry.base_ms as f64 * self.retry.factor.powi(attempt as i32 - 2);
        let ms = rand::rng().random_range(0.0..=cap.max(0.0));
        Duration::from_micros((ms * 1000.0) as u64)
    }

    async fn send_batch(&self, batch: usize, texts: Vec<String>) -> Result<Vec<String>, TranslateError> {
        let mut attempt = 1;
        loop {
            match self.attempt(&texts).await {
                Ok(out) => {
                    if attempt > 1 {
                        log::info!("batch {batch} succeeded on attempt {attempt}");
                    }
                    return Ok(out);
                }
                Err(Failure::Fatal(message)) => {
                    return Err(TranslateError::Protocol { batch, message })
                }
                Err(Failure::Retryable(message)) => {
                    if attempt >= self.retry.max_attempts {
                        return Err(TranslateError::Transport {
                            batch,
                            attempts: attempt,
                            message,
                        });
                    }
                    log::warn!("batch {batch} attempt {attempt} failed: {message}");
                    attempt += 1;
                    tokio::time::sleep(self.backoff(attempt)).await;
                }
            }
        }
    }
}

impl Translator for RemoteTranslator {
    fn translate(&self, _first_index: u64, inputs: &[TokenSeq]) -> Result<Vec<TokenSeq>, TranslateError> {
        let batches: Vec<Vec<String>> = inputs
            .chunks(self.batch_size)
            .map(|c| c.iter().map(TokenSeq::normalized).collect())
            .collect();
        let mut slots: Vec<Option<Vec<String>>> = vec![None; batches.len()];

        self.runtime.block_on(async {
            let mut pending = stream::iter(batches.into_iter().enumerate())
                .map(|(i, texts)| async move { (i, self.send_batch(i, texts).await) })
                .buffer_unordered(self.max_in_flight);
            while let Some((i, result)) = pending.next().await {
                slots[i] = Some(result?);
            }
            Ok::<_, TranslateError>(())
        })?;

        Ok(slots
            .into_iter()
            .flat_map(Option::unwrap_or_default)
            .map(|t| tokenize(&t))
            .collect())
    }
}
