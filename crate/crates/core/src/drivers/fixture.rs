//! Local HTTP server replaying recorded chat-completion exchanges in order.
//!
//! Fixture files are JSON lines of `{"request": ..., "response": {"status", "body"}}`.
//! A `null` request matches anything; otherwise mismatches are counted but the
//! recorded response is still served so a test can report every divergence.

use std::fs;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use parking_lot::Mutex;
use serde_json::Value;

use super::client::{envelope, Exchange, RecordedResponse};

#[derive(Debug, Default)]
struct Shared {
    received: Vec<Value>,
    mismatches: Vec<usize>,
}

pub struct FixtureServer {
    port: u16,
    shared: Arc<Mutex<Shared>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for FixtureServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FixtureServer")
            .field("port", &self.port)
            .finish()
    }
}

/// An exchange answering any request with `content` wrapped in a success envelope.
pub fn reply(content: &str) -> Exchange {
    Exchange {
        request: Value::Null,
        response: RecordedResponse {
            status: 200,
            body: envelope(content),
        },
    }
}

pub fn status(code: u16, body: &str) -> Exchange {
    Exchange {
        request: Value::Null,
        response: RecordedResponse {
            status: code,
            body: body.to_string(),
        },
    }
}

pub fn load_exchanges(path: &Path) -> io::Result<Vec<Exchange>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
            })
        })
        .collect()
}

impl FixtureServer {
    pub fn start(exchanges: Vec<Exchange>) -> io::Result<Self> {
        let server = tiny_http::Server::http("127.0.0.1:0").map_err(io::Error::other)?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| io::Error::other("fixture server has no IP address"))?;
        let shared = Arc::new(Mutex::new(Shared::default()));
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let shared = Arc::clone(&shared);
            let stop = Arc::clone(&stop);
            thread::spawn(move || serve(server, exchanges, shared, stop))
        };
        Ok(Self {
            port,
            shared,
            stop,
            handle: Some(handle),
        })
    }

    pub fn from_file(path: &Path) -> io::Result<Self> {
        Self::start(load_exchanges(path)?)
    }

    /// Base URL to put in an endpoint config.
    pub fn base_url(&self) -> String {
        format!("http://127.0.0.1:{}/v1", self.port)
    }

    /// Request bodies received so far, in arrival order.
    pub fn received(&self) -> Vec<Value> {
        self.shared.lock().received.clone()
    }

    /// Indices of requests that differed from the recording.
    pub fn mismatches(&self) -> Vec<usize> {
        self.shared.lock().mismatches.clone()
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(
    server: tiny_http::Server,
    exchanges: Vec<Exchange>,
    shared: Arc<Mutex<Shared>>,
    stop: Arc<AtomicBool>,
) {
    let mut next = 0usize;
    while !stop.load(Ordering::SeqCst) {
        let mut request = match server.recv_timeout(Duration::from_millis(20)) {
            Ok(Some(r)) => r,
            Ok(None) => continue,
            Err(_) => break,
        };
        let mut body = String::new();
        let _ = request.as_reader().read_to_string(&mut body);
        let parsed: Value = serde_json::from_str(&body).unwrap_or(Value::String(body));
        let (code, text) = match exchanges.get(next) {
            Some(ex) => {
                let mut s = shared.lock();
                if !ex.request.is_null() && ex.request != parsed {
                    s.mismatches.push(next);
                }
                (ex.response.status, ex.response.body.clone())
            }
            None => (500, "{\"error\": \"fixture exhausted\"}".to_string()),
        };
        shared.lock().received.push(parsed);
        next += 1;
        let header = tiny_http::Header::from_bytes("Content-Type", "application/json")
            .expect("static header");
        let response = tiny_http::Response::from_string(text)
            .with_status_code(code)
            .with_header(header);
        let _ = request.respond(response);
    }
}
