//! Text-generation backends shared by extraction and subtask planning.
//!
//! A backend turns a prompt into a response string. Three flavours exist:
//! the remote HTTP client, a recorder that wraps any backend and captures
//! `(prompt hash -> response)` pairs into a cassette, and a replayer that
//! answers purely from a cassette so test runs stay hermetic.
//!
//! Remote wire protocol: `POST <endpoint>` with body
//! `{"model": ..., "prompt": ..., "max_output": ..., "temperature": 0}`,
//! optional `Authorization: Bearer <key>`, answered by `{"response": ...}`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const ENV_URL: &str = "BACKEND_URL";
pub const ENV_KEY: &str = "BACKEND_KEY";
pub const CASSETTE_FORMAT: &str = "eventnav-cassette/1";

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend reply: {0}")]
    Protocol(String),
    #[error("no cassette entry for prompt {0}")]
    CassetteMiss(String),
    #[error("missing configuration: {0}")]
    Config(String),
}

pub trait ProposalBackend: Send + Sync {
    fn identity(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
}

impl<B: ProposalBackend + ?Sized> ProposalBackend for &B {
    fn identity(&self) -> &str {
        (**self).identity()
    }
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        (**self).complete(prompt)
    }
}

impl<B: ProposalBackend + ?Sized> ProposalBackend for Box<B> {
    fn identity(&self) -> &str {
        (**self).identity()
    }
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        (**self).complete(prompt)
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Serialize)]
pub struct CompletionRequest<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub max_output: usize,
    pub temperature: f64,
}

#[derive(Debug, Deserialize)]
pub struct CompletionReply {
    pub response: String,
}

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    endpoint: String,
    key: Option<String>,
    model: String,
    max_output: usize,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>, key: Option<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            key,
            model: model.into(),
            max_output: 256,
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build(),
        }
    }

    /// Reads the endpoint and credential from `BACKEND_URL` / `BACKEND_KEY`.
    pub fn from_env(model: impl Into<String>) -> Result<Self, BackendError> {
        let endpoint = std::env::var(ENV_URL).map_err(|_| BackendError::Config(format!("{ENV_URL} is not set")))?;
        Ok(Self::new(endpoint, std::env::var(ENV_KEY).ok(), model))
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.agent = ureq::AgentBuilder::new().timeout(timeout).build();
        self
    }

    pub fn with_max_output(mut self, max_output: usize) -> Self {
        self.max_output = max_output;
        self
    }
}

impl ProposalBackend for RemoteBackend {
    fn identity(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let body = CompletionRequest {
            model: &self.model,
            prompt,
            max_output: self.max_output,
            temperature: 0.0,
        };
        let mut req = self.agent.post(&self.endpoint).set("Content-Type", "application/json");
        if let Some(key) = &self.key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let reply = match req.send_json(&body) {
            Ok(resp) => resp,
            Err(ureq::Error::Status(status, resp)) => {
                return Err(BackendError::Status {
                    status,
                    body: resp.into_string().unwrap_or_default(),
                })
            }
            Err(e) => return Err(BackendError::Transport(e.to_string())),
        };
        let reply: CompletionReply = reply
            .into_json()
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        Ok(reply.response)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub prompt_hash: String,
    pub prompt: String,
    pub response: String,
}

/// Recorded prompt/response pairs, keyed by prompt hash.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Cassette {
    pub backend: String,
    entries: BTreeMap<String, CassetteEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum CassetteLine {
    Header { format: String, backend: String },
    Entry(CassetteEntry),
}

impl Cassette {
    pub fn new(backend: impl Into<String>) -> Self {
        Self {
            backend: backend.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &CassetteEntry> {
        self.entries.values()
    }

    pub fn get(&self, prompt: &str) -> Option<&str> {
        self.entries.get(&prompt_hash(prompt)).map(|e| e.response.as_str())
    }

    pub fn insert(&mut self, prompt: &str, response: &str) {
        let hash = prompt_hash(prompt);
        self.entries.entry(hash.clone()).or_insert_with(|| CassetteEntry {
            prompt_hash: hash,
            prompt: prompt.to_string(),
            response: response.to_string(),
        });
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()
    }

    pub fn write_to(&self, out: &mut impl Write) -> io::Result<()> {
        let header = CassetteLine::Header {
            format: CASSETTE_FORMAT.to_string(),
            backend: self.backend.clone(),
        };
        serde_json::to_writer(&mut *out, &header)?;
        out.write_all(b"\n")?;
        for entry in self.entries.values() {
            serde_json::to_writer(&mut *out, &CassetteLine::Entry(entry.clone()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> io::Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn read_from(reader: impl BufRead) -> io::Result<Self> {
        let invalid = |line: usize, msg: String| io::Error::new(io::ErrorKind::InvalidData, format!("line {line}: {msg}"));
        let mut cassette: Option<Cassette> = None;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CassetteLine = serde_json::from_str(&line).map_err(|e| invalid(idx + 1, e.to_string()))?;
            match (parsed, cassette.as_mut()) {
                (CassetteLine::Header { format, backend }, None) => {
                    if format != CASSETTE_FORMAT {
                        return Err(invalid(idx + 1, format!("unsupported format {format:?}")));
                    }
                    cassette = Some(Cassette::new(backend));
                }
                (CassetteLine::Entry(entry), Some(c)) => {
                    if prompt_hash(&entry.prompt) != entry.prompt_hash {
                        return Err(invalid(idx + 1, "prompt hash does not match prompt".into()));
                    }
                    c.entries.insert(entry.prompt_hash.clone(), entry);
                }
                _ => return Err(invalid(idx + 1, "header must come first and only once".into())),
            }
        }
        cassette.ok_or_else(|| invalid(1, "missing header".into()))
    }
}

/// Wraps a backend and records every exchange.
pub struct Recorder<B> {
    inner: B,
    cassette: Mutex<Cassette>,
}

impl<B: ProposalBackend> Recorder<B> {
    pub fn new(inner: B) -> Self {
        let cassette = Mutex::new(Cassette::new(inner.identity()));
        Self { inner, cassette }
    }

    pub fn cassette(&self) -> Cassette {
        self.cassette.lock().expect("cassette lock poisoned").clone()
    }

    pub fn into_cassette(self) -> Cassette {
        self.cassette.into_inner().expect("cassette lock poisoned")
    }
}

impl<B: ProposalBackend> ProposalBackend for Recorder<B> {
    fn identity(&self) -> &str {
        self.inner.identity()
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let response = self.inner.complete(prompt)?;
        self.cassette
            .lock()
            .expect("cassette lock poisoned")
            .insert(prompt, &response);
        Ok(response)
    }
}

/// Answers only from a cassette; unknown prompts are errors.
#[derive(Debug, Clone)]
pub struct Replay {
    cassette: Cassette,
}

impl Replay {
    pub fn new(cassette: Cassette) -> Self {
        Self { cassette }
    }
}

impl ProposalBackend for Replay {
    fn identity(&self) -> &str {
        &self.cassette.backend
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        self.cassette
            .get(prompt)
            .map(str::to_string)
            .ok_or_else(|| BackendError::CassetteMiss(prompt_hash(prompt)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;

    impl ProposalBackend for Echo {
        fn identity(&self) -> &str {
            "echo"
        }
        fn complete(&self, prompt: &str) -> Result<String, BackendError> {
            Ok(format!("NEXT: {}", prompt.len()))
        }
    }

    #[test]
    fn record_then_replay() {
        let rec = Recorder::new(Echo);
        let a = rec.complete("alpha").unwrap();
        let b = rec.complete("beta\nwith lines").unwrap();
        let replay = Replay::new(rec.into_cassette());
        assert_eq!(replay.identity(), "echo");
        assert_eq!(replay.complete("alpha").unwrap(), a);
        assert_eq!(replay.complete("beta\nwith lines").unwrap(), b);
        assert!(matches!(replay.complete("gamma"), Err(BackendError::CassetteMiss(_))));
    }

    #[test]
    fn tampered_entry_rejected() {
        let mut c = Cassette::new("x");
        c.insert("p", "r");
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("\"prompt\":\"p\"", "\"prompt\":\"q\"");
        assert!(Cassette::read_from(text.as_bytes()).is_err());
    }

    #[test]
    fn unreachable_remote_is_transport_error() {
        let backend = RemoteBackend::new("http://127.0.0.1:9/complete", None, "m").with_timeout(Duration::from_millis(500));
        assert!(matches!(backend.complete("hi"), Err(BackendError::Transport(_))));
    }
}
