//! A local server speaking the translation wire protocol, for tests and
//! dry runs of the remote backend.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use super::wire::{TranslateRequest, TranslateResponse, PATH};
use super::{Dictionary, TranslateError};
use crate::textnorm::tokenize;

/// One scripted response of the fault-injecting stub.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    /// Answer normally (echo).
    Pass,
    /// Answer with this HTTP status and no translations.
    Status(u16),
    /// Sleep this many milliseconds, then answer normally.
    Delay(u64),
    /// Answer 200 with one translation missing.
    Truncate,
}

impl std::str::FromStr for Fault {
    type Err = String;

    /// `ok`, `short`, `delay:MS` or an HTTP status code.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "ok" | "pass" => Ok(Fault::Pass),
            "short" | "truncate" => Ok(Fault::Truncate),
            other => {
                if let Some(ms) = other.strip_prefix("delay:") {
                    return ms
                        .parse()
                        .map(Fault::Delay)
                        .map_err(|_| format!("bad delay {other:?}"));
                }
                other
                    .parse::<u16>()
                    .ok()
                    .filter(|c| (100..600).contains(c))
                    .map(Fault::Status)
                    .ok_or_else(|| format!("unknown fault {other:?}"))
            }
        }
    }
}

pub enum StubBehavior {
    /// Returns inputs verbatim.
    Echo,
    /// Applies `dictionary` for `src_lang -> tgt_lang` requests and its
    /// inverse for the reverse direction.
    Table {
        dictionary: Dictionary,
        src_lang: String,
        tgt_lang: String,
    },
    /// Plays `schedule` one request at a time, then echoes.
    InjectFault { schedule: Vec<Fault> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedRequest {
    pub src_lang: String,
    pub tgt_lang: String,
    pub texts: usize,
    pub status: u16,
}

struct Shared {
    behavior: StubBehavior,
    faults: Mutex<VecDeque<Fault>>,
    log: Mutex<Vec<LoggedRequest>>,
}

pub struct StubServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL suitable as a remote translator endpoint.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<LoggedRequest> {
        self.shared.log.lock().unwrap().clone()
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn respond(shared: &Shared, req: &TranslateRequest) -> Result<Vec<String>, StatusCode> {
    match &shared.behavior {
        StubBehavior::Echo | StubBehavior::InjectFault { .. } => Ok(req.texts.clone()),
        StubBehavior::Table {
            dictionary,
            src_lang,
            tgt_lang,
        } => {
            let inverse;
            let dict = if (&req.src_lang, &req.tgt_lang) == (src_lang, tgt_lang) {
                dictionary
            } else if (&req.src_lang, &req.tgt_lang) == (tgt_lang, src_lang) {
                inverse = dictionary.inverse();
                &inverse
            } else {
                return Err(StatusCode::BAD_REQUEST);
            };
            Ok(req
                .texts
                .iter()
                .map(|t| {
                    tokenize(t)
                        .tokens
                        .iter()
                        .map(|tok| dict.map(tok))
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect())
        }
    }
}

async fn handle(State(shared): State<Arc<Shared>>, Json(req): Json<TranslateRequest>) -> Response {
    let fault = shared
        .faults
        .lock()
        .unwrap()
        .pop_front()
        .unwrap_or(Fault::Pass);
    if let Fault::Delay(ms) = fault {
        tokio::time::sleep(Duration::from_millis(ms)).await;
    }
    let result = match fault {
        Fault::Status(code) => Err(StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)),
        _ => respond(&shared, &req),
    };
    let status = match &result {
        Ok(_) => StatusCode::OK,
        Err(code) => *code,
    };
    shared.log.lock().unwrap().push(LoggedRequest {
        src_lang: req.src_lang.clone(),
        tgt_lang: req.tgt_lang.clone(),
        texts: req.texts.len(),
        status: status.as_u16(),
    });
    match result {
        Ok(mut translations) => {
            if fault == Fault::Truncate {
                translations.pop();
            }
            Json(TranslateResponse { translations }).into_response()
        }
        Err(code) => (code, "injected failure").into_response(),
    }
}

/// Starts a stub server on `host:port` (port 0 picks a free port).
pub fn serve_stub(host: &str, port: u16, behavior: StubBehavior) -> Result<StubServer, TranslateError> {
    let addr_text = format!("{host}:{port}");
    let startup = |source| TranslateError::Startup {
        addr: addr_text.clone(),
        source,
    };
    let listener = std::net::TcpListener::bind(&addr_text).map_err(startup)?;
    listener.set_nonblocking(true).map_err(startup)?;
    let addr = listener.local_addr().map_err(startup)?;

    let schedule = match &behavior {
        StubBehavior::InjectFault { schedule } => schedule.iter().copied().collect(),
        _ => VecDeque::new(),
    };
    let shared = Arc::new(Shared {
        behavior,
        faults: Mutex::new(schedule),
        log: Mutex::new(Vec::new()),
    });

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(startup)?;
    let listener = {
        let _guard = runtime.enter();
        tokio::net::TcpListener::from_std(listener).map_err(startup)?
    };
    let app = Router::new()
        .route(PATH, post(handle))
        .with_state(Arc::clone(&shared));
    let (tx, rx) = oneshot::channel();
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            let server = axum::serve(listener, app).with_graceful_shutdown(async {
                let _ = rx.await;
            });
            if let Err(e) = server.await {
                log::error!("stub server stopped: {e}");
            }
        });
    });

    Ok(StubServer {
        addr,
        shared,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
