//! Streaming chat completions over server-sent events.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::prompt::PromptBundle;
use crate::config::ToolConfig;

pub const DISCLAIMER: &str = "Here is an AI generated explanation. Be careful - it may be wrong!";
const DONE: &str = "[DONE]";
const READ_CHUNK: usize = 4096;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HelpError {
    #[error("AI help is disabled in exam mode")]
    ExamMode,
    #[error("no API key: set the {0} environment variable")]
    MissingApiKey(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("the API rejected the credentials: {0}")]
    Auth(String),
    #[error("the API returned an error: {0}")]
    Api(String),
    #[error("the reply was cut off")]
    StreamInterrupted { partial: String },
}

/// What the transport reports when a request cannot be started.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Worth retrying: connection failures, timeouts, 429 and 5xx.
    #[error("{0}")]
    Network(String),
    #[error("{0}")]
    Auth(String),
    #[error("{0}")]
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub url: String,
    pub api_key: Option<String>,
    pub body: Value,
    /// Key of the prompt, see [`PromptBundle::hash`].
    pub prompt_hash: String,
}

pub trait Transport {
    /// Starts the request and returns the raw event stream.
    fn open(&self, request: &CompletionRequest) -> Result<Box<dyn Read + Send>, TransportError>;
}

/// Chunks passed to the caller's sink, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamEvent<'a> {
    Disclaimer(&'a str),
    Delta(&'a str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 2,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

/// Incremental server-sent-events decoder. Bytes may arrive split anywhere,
/// including inside a UTF-8 sequence.
#[derive(Debug, Default)]
pub struct SseParser {
    buf: Vec<u8>,
    data: Option<String>,
    skip_lf: bool,
}

impl SseParser {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds bytes and returns the `data` payloads of completed events.
    pub fn feed(&mut self, bytes: &[u8]) -> Vec<String> {
        let mut events = Vec::new();
        for &b in bytes {
            if self.skip_lf {
                self.skip_lf = false;
                if b == b'\n' {
                    continue;
                }
            }
            match b {
                b'\r' | b'\n' => {
                    self.skip_lf = b == b'\r';
                    let line = std::mem::take(&mut self.buf);
                    self.line(&String::from_utf8_lossy(&line), &mut events);
                }
                _ => self.buf.push(b),
            }
        }
        events
    }

    fn line(&mut self, line: &str, events: &mut Vec<String>) {
        if line.is_empty() {
            if let Some(data) = self.data.take() {
                events.push(data);
            }
            return;
        }
        if line.starts_with(':') {
            return;
        }
        let (field, value) = match line.split_once(':') {
            Some((field, value)) => (field, value.strip_prefix(' ').unwrap_or(value)),
            None => (line, ""),
        };
        if field == "data" {
            match &mut self.data {
                Some(data) => {
                    data.push('\n');
                    data.push_str(value);
                }
                None => self.data = Some(value.to_string()),
            }
        }
    }
}

enum Payload {
    Delta(String),
    Done,
    Error(String),
    Ignore,
}

fn decode_payload(data: &str) -> Payload {
    if data.trim() == DONE {
        return Payload::Done;
    }
    let Ok(value) = serde_json::from_str::<Value>(data) else {
        return Payload::Ignore;
    };
    if let Some(err) = value.get("error") {
        let message = err
            .get("message")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| err.to_string());
        return Payload::Error(message);
    }
    match value.pointer("/choices/0/delta/content").and_then(Value::as_str) {
        Some(text) if !text.is_empty() => Payload::Delta(text.to_string()),
        _ => Payload::Ignore,
    }
}

pub fn request_body(bundle: &PromptBundle, config: &ToolConfig) -> Value {
    json!({
        "model": config.model_name,
        "messages": [
            {"role": "system", "content": bundle.system_message},
            {"role": "user", "content": bundle.user_message},
        ],
        "stream": true,
        "temperature": config.temperature,
    })
}

/// Sends `bundle` and forwards the reply to `sink` as it arrives. The sink
/// sees the disclaimer first, then every content delta in order; the return
/// value is the concatenation of the deltas.
pub fn stream_completion(
    bundle: &PromptBundle,
    config: &ToolConfig,
    transport: &dyn Transport,
    api_key: Option<String>,
    retry: RetryPolicy,
    sink: &mut dyn FnMut(StreamEvent<'_>),
) -> Result<String, HelpError> {
    if config.exam_mode {
        return Err(HelpError::ExamMode);
    }
    let request = CompletionRequest {
        url: format!("{}/chat/completions", config.api_base_url.trim_end_matches('/')),
        api_key,
        body: request_body(bundle, config),
        prompt_hash: bundle.hash(),
    };
    let mut backoff = retry.initial_backoff;
    let mut attempt = 0;
    loop {
        let err = match transport.open(&request) {
            Ok(stream) => match relay(stream, sink) {
                Ok(text) => return Ok(text),
                Err(Relay::Failed(err)) => return Err(err),
                Err(Relay::BeforeFirstChunk(err)) => err,
            },
            Err(TransportError::Auth(msg)) => return Err(HelpError::Auth(msg)),
            Err(TransportError::Rejected(msg)) => return Err(HelpError::Api(msg)),
            Err(TransportError::Network(msg)) => msg,
        };
        if attempt >= retry.retries {
            return Err(HelpError::Network(err));
        }
        attempt += 1;
        std::thread::sleep(backoff);
        backoff *= 2;
    }
}

enum Relay {
    /// Nothing reached the sink yet, so the request may be retried.
    BeforeFirstChunk(String),
    Failed(HelpError),
}

fn relay(mut stream: Box<dyn Read + Send>, sink: &mut dyn FnMut(StreamEvent<'_>)) -> Result<String, Relay> {
    let mut parser = SseParser::new();
    let mut text = String::new();
    let mut started = false;
    let mut buf = [0u8; READ_CHUNK];
    loop {
        let n = match stream.read(&mut buf) {
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) if !started => return Err(Relay::BeforeFirstChunk(e.to_string())),
            Err(_) => return Err(Relay::Failed(HelpError::StreamInterrupted { partial: text })),
        };
        if n == 0 {
            return Err(if started {
                Relay::Failed(HelpError::StreamInterrupted { partial: text })
            } else {
                Relay::BeforeFirstChunk("connection closed before any reply".into())
            });
        }
        for data in parser.feed(&buf[..n]) {
            match decode_payload(&data) {
                Payload::Delta(delta) => {
                    if !started {
                        started = true;
                        sink(StreamEvent::Disclaimer(DISCLAIMER));
                    }
                    sink(StreamEvent::Delta(&delta));
                    text.push_str(&delta);
                }
                Payload::Done => {
                    if !started {
                        sink(StreamEvent::Disclaimer(DISCLAIMER));
                    }
                    return Ok(text);
                }
                Payload::Error(msg) if !started => return Err(Relay::Failed(HelpError::Api(msg))),
                Payload::Error(_) => {
                    return Err(Relay::Failed(HelpError::StreamInterrupted { partial: text }))
                }
                Payload::Ignore => {}
            }
        }
    }
}

/// HTTPS transport for OpenAI-compatible chat-completion endpoints.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Result<Self, HelpError> {
        let client = reqwest::blocking::Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .timeout(Duration::from_secs(180))
            .build()
            .map_err(|e| HelpError::Network(e.to_string()))?;
        Ok(HttpTransport { client })
    }
}

impl Transport for HttpTransport {
    fn open(&self, request: &CompletionRequest) -> Result<Box<dyn Read + Send>, TransportError> {
        let mut builder = self
            .client
            .post(&request.url)
            .header("Accept", "text/event-stream")
            .json(&request.body);
        if let Some(key) = &request.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = response.status();
        if status.is_success() {
            return Ok(Box::new(response));
        }
        let body = response.text().unwrap_or_default();
        let detail = serde_json::from_str::<Value>(&body)
            .ok()
            .and_then(|v| v.pointer("/error/message")?.as_str().map(str::to_string))
            .unwrap_or_else(|| body.chars().take(200).collect());
        let msg = format!("HTTP {}: {detail}", status.as_u16());
        Err(match status.as_u16() {
            401 | 403 => TransportError::Auth(msg),
            408 | 429 | 500..=599 => TransportError::Network(msg),
            _ => TransportError::Rejected(msg),
        })
    }
}

/// How a canned reply is delivered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockReply {
    /// A complete event stream, sent in pieces of the given sizes (the last
    /// size repeats). Empty sizes send everything at once.
    Raw { body: Vec<u8>, chunk_sizes: Vec<usize> },
    /// Fails before any bytes are sent.
    Fail(TransportError),
}

impl MockReply {
    /// Encodes `deltas` as a well-formed event stream.
    pub fn from_deltas(deltas: &[&str]) -> Self {
        MockReply::Raw {
            body: sse_body(deltas, true),
            chunk_sizes: Vec::new(),
        }
    }
}

/// Builds an event stream carrying `deltas`, with or without the final
/// `[DONE]` event.
pub fn sse_body(deltas: &[&str], done: bool) -> Vec<u8> {
    let mut body = String::new();
    for delta in deltas {
        let event = json!({"choices": [{"index": 0, "delta": {"content": delta}}]});
        body.push_str(&format!("data: {event}\n\n"));
    }
    if done {
        body.push_str("data: [DONE]\n\n");
    }
    body.into_bytes()
}

/// Offline backend replaying canned replies keyed by prompt hash. Every call
/// is counted, so tests can assert that no request was made.
#[derive(Debug, Clone, Default)]
pub struct MockTransport {
    replies: Arc<Mutex<HashMap<String, Vec<MockReply>>>>,
    fallback: Option<MockReply>,
    calls: Arc<AtomicUsize>,
    requests: Arc<Mutex<Vec<CompletionRequest>>>,
}

impl MockTransport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues `reply` for prompts with `hash`. Several replies for one hash
    /// are used in order; the last one repeats.
    pub fn reply(self, hash: impl Into<String>, reply: MockReply) -> Self {
        self.replies
            .lock()
            .unwrap()
            .entry(hash.into())
            .or_default()
            .push(reply);
        self
    }

    pub fn fallback(mut self, reply: MockReply) -> Self {
        self.fallback = Some(reply);
        self
    }

    /// Loads `<hash>.txt` files from `dir`; `default.txt` answers any other
    /// prompt. Each reply is streamed a few words at a time.
    pub fn from_dir(dir: &Path) -> io::Result<Self> {
        let mut mock = MockTransport::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
                continue;
            };
            let text = fs::read_to_string(&path)?;
            let words: Vec<&str> = text.split_inclusive(' ').collect();
            let reply = MockReply::from_deltas(&words);
            mock = if stem == "default" {
                mock.fallback(reply)
            } else {
                mock.reply(stem, reply)
            };
        }
        Ok(mock)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl Transport for MockTransport {
    fn open(&self, request: &CompletionRequest) -> Result<Box<dyn Read + Send>, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests.lock().unwrap().push(request.clone());
        let reply = {
            let mut replies = self.replies.lock().unwrap();
            match replies.get_mut(&request.prompt_hash) {
                Some(queue) if queue.len() > 1 => Some(queue.remove(0)),
                Some(queue) => queue.first().cloned(),
                None => self.fallback.clone(),
            }
        };
        match reply {
            Some(MockReply::Raw { body, chunk_sizes }) => Ok(Box::new(ChunkedReader {
                body,
                pos: 0,
                sizes: chunk_sizes,
                next: 0,
            })),
            Some(MockReply::Fail(err)) => Err(err),
            None => Err(TransportError::Rejected(format!(
                "no canned reply for prompt {}",
                request.prompt_hash
            ))),
        }
    }
}

struct ChunkedReader {
    body: Vec<u8>,
    pos: usize,
    sizes: Vec<usize>,
    next: usize,
}

impl Read for ChunkedReader {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let left = self.body.len() - self.pos;
        let size = match self.sizes.get(self.next).or(self.sizes.last()) {
            Some(&s) => s.max(1),
            None => left,
        };
        self.next += 1;
        let n = size.min(left).min(buf.len());
        buf[..n].copy_from_slice(&self.body[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parser_handles_comments_multiline_and_crlf() {
        let mut p = SseParser::new();
        let events = p.feed(b": keepalive\r\ndata: a\r\ndata: b\r\n\r\nevent: x\ndata:c\n\n");
        assert_eq!(events, ["a\nb", "c"]);
    }

    #[test]
    fn parser_split_inside_utf8() {
        let body = sse_body(&["caf\u{e9} \u{2713}"], true);
        let mut p = SseParser::new();
        let mut events = Vec::new();
        for b in &body {
            events.extend(p.feed(std::slice::from_ref(b)));
        }
        assert!(events[0].contains("caf\u{e9} \u{2713}"));
        assert_eq!(events[1], "[DONE]");
    }

    proptest! {
        #[test]
        fn parser_is_split_invariant(
            deltas in proptest::collection::vec("[a-z \u{e9}\n]{0,8}", 0..10),
            sizes in proptest::collection::vec(1usize..9, 1..5),
        ) {
            let refs: Vec<&str> = deltas.iter().map(String::as_str).collect();
            let body = sse_body(&refs, true);
            let whole = SseParser::new().feed(&body);
            let mut p = SseParser::new();
            let mut pieces = Vec::new();
            let (mut pos, mut i) = (0, 0);
            while pos < body.len() {
                let n = sizes[i % sizes.len()].min(body.len() - pos);
                pieces.extend(p.feed(&body[pos..pos + n]));
                pos += n;
                i += 1;
            }
            prop_assert_eq!(pieces, whole);
        }
    }
}
