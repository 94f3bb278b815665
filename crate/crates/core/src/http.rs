//! Blocking JSON-over-HTTP client with bounded retry, shared by the
//! embedding, log-probability and rewriter clients.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Environment variable holding a bearer token for remote endpoints.
pub const API_KEY_ENV: &str = "MEMTRACE_API_KEY";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_retries() -> usize {
    3
}
fn default_backoff_ms() -> u64 {
    200
}
fn default_timeout_ms() -> u64 {
    60_000
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into(),
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            timeout_ms: default_timeout_ms(),
        }
    }

    /// POSTs `body` and parses the JSON reply, retrying transport and
    /// status failures with exponential backoff.
    pub fn post_json(&self, body: &Value) -> Result<Value> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(self.timeout_ms)))
            .build()
            .into();
        let key = std::env::var(API_KEY_ENV).ok();
        let attempts = self.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.backoff_ms << (attempt - 1).min(10)));
            }
            let mut req = agent.post(&self.url).header("content-type", "application/json");
            if let Some(k) = &key {
                req = req.header("authorization", format!("Bearer {k}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => match resp.body_mut().read_json::<Value>() {
                    Ok(v) => return Ok(v),
                    Err(e) => last = format!("unreadable response: {e}"),
                },
                Err(e) => last = e.to_string(),
            }
            log::debug!("POST {} attempt {} failed: {}", self.url, attempt + 1, last);
        }
        Err(Error::Transport {
            attempts,
            message: last,
        })
    }
}

#[cfg(test)]
pub(crate) mod testing {
    //! A single-threaded HTTP responder for exercising the clients.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    use serde_json::Value;

    pub struct TestServer {
        pub url: String,
        pub requests: Arc<Mutex<Vec<Value>>>,
    }

    /// Serves up to `max_requests` requests; `reply` returns `(status, body)`.
    pub fn serve<F>(max_requests: usize, reply: F) -> TestServer
    where
        F: Fn(usize, &Value) -> (u16, Value) + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&requests);
        std::thread::spawn(move || {
            for (i, stream) in listener.incoming().take(max_requests).enumerate() {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let l = line.trim_end();
                    if l.is_empty() {
                        break;
                    }
                    if let Some(v) = l.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                let req: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                let (status, resp) = reply(i, &req);
                seen.lock().unwrap().push(req);
                let payload = resp.to_string();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                    payload.len()
                )
                .unwrap();
            }
        });
        TestServer { url, requests }
    }
}
