//! Chat oracles: the transport abstraction behind the pricing agent.
//!
//! Scripted oracles are first-class test fixtures; live experiments go
//! through [`HttpOracle`], and every call can be recorded to an append-only
//! transcript and replayed byte-for-byte.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::llm::prompt::format_response;
use crate::{Error, Result};

/// A chat endpoint: prompt in, text out. Scripted implementations are
/// deterministic given `(prompt, seed)`.
pub trait ChatOracle {
    fn send(&mut self, prompt: &str, seed: u64) -> Result<String>;
    fn name(&self) -> String;
    fn deterministic(&self) -> bool;
}

/// Always answers with the same price.
pub struct ConstantOracle {
    pub price: f64,
}

impl ChatOracle for ConstantOracle {
    fn send(&mut self, _prompt: &str, _seed: u64) -> Result<String> {
        Ok(format_response(
            "Holding the fixed price.",
            "Keep the current price.",
            "The price stays constant.",
            self.price,
        ))
    }

    fn name(&self) -> String {
        format!("scripted:constant:{}", self.price)
    }

    fn deterministic(&self) -> bool {
        true
    }
}

/// Alternates between two prices on successive calls.
pub struct AlternatingOracle {
    pub prices: [f64; 2],
    pub calls: usize,
}

impl ChatOracle for AlternatingOracle {
    fn send(&mut self, _prompt: &str, _seed: u64) -> Result<String> {
        let price = self.prices[self.calls % 2];
        self.calls += 1;
        Ok(format_response("Alternating.", "", "", price))
    }

    fn name(&self) -> String {
        "scripted:alternating".into()
    }

    fn deterministic(&self) -> bool {
        true
    }
}

/// Text-level tit-for-tat: echoes the co-participant's price from the
/// previous round as reported in the prompt, or answers `fallback` when the
/// prompt carries no history.
pub struct TitForTatOracle {
    pub fallback: f64,
}

impl ChatOracle for TitForTatOracle {
    fn send(&mut self, prompt: &str, _seed: u64) -> Result<String> {
        let price = prompt
            .split("the co-participant chose ")
            .nth(1)
            .and_then(|rest| rest.split_whitespace().next())
            .and_then(|tok| tok.trim_end_matches('.').parse::<f64>().ok())
            .unwrap_or(self.fallback);
        Ok(format_response(
            "Matching the co-participant's last price.",
            "Mirror the co-participant.",
            "Start cooperative, retaliate in kind.",
            price,
        ))
    }

    fn name(&self) -> String {
        "scripted:tit-for-tat".into()
    }

    fn deterministic(&self) -> bool {
        true
    }
}

/// One recorded oracle exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seed: u64,
    pub prompt: String,
    pub response: String,
}

/// Persist a transcript as append-only JSON lines.
pub fn append_transcript(path: &Path, entries: &[TranscriptEntry]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    for entry in entries {
        serde_json::to_writer(&mut file, entry)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_transcript(path: &Path) -> Result<Vec<TranscriptEntry>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Wraps another oracle and records every exchange.
pub struct RecordingOracle<O: ChatOracle> {
    pub inner: O,
    pub transcript: Vec<TranscriptEntry>,
}

impl<O: ChatOracle> RecordingOracle<O> {
    pub fn new(inner: O) -> Self {
        RecordingOracle {
            inner,
            transcript: Vec::new(),
        }
    }
}

impl<O: ChatOracle> ChatOracle for RecordingOracle<O> {
    fn send(&mut self, prompt: &str, seed: u64) -> Result<String> {
        let response = self.inner.send(prompt, seed)?;
        self.transcript.push(TranscriptEntry {
            seed,
            prompt: prompt.to_string(),
            response: response.clone(),
        });
        Ok(response)
    }

    fn name(&self) -> String {
        format!("recording:{}", self.inner.name())
    }

    fn deterministic(&self) -> bool {
        self.inner.deterministic()
    }
}

/// Replays a stored transcript, verifying each incoming prompt
/// byte-for-byte against the recording.
pub struct ReplayOracle {
    entries: Vec<TranscriptEntry>,
    cursor: usize,
    tag: String,
}

impl ReplayOracle {
    pub fn new(entries: Vec<TranscriptEntry>) -> Self {
        ReplayOracle {
            entries,
            cursor: 0,
            tag: "memory".into(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(ReplayOracle {
            entries: load_transcript(path)?,
            cursor: 0,
            tag: path.display().to_string(),
        })
    }

    pub fn exhausted(&self) -> bool {
        self.cursor >= self.entries.len()
    }
}

impl ChatOracle for ReplayOracle {
    fn send(&mut self, prompt: &str, _seed: u64) -> Result<String> {
        let entry = self
            .entries
            .get(self.cursor)
            .ok_or_else(|| Error::Oracle(format!("replay transcript exhausted at call {}", self.cursor)))?;
        if entry.prompt != prompt {
            return Err(Error::Oracle(format!(
                "replay prompt mismatch at call {}: live prompt diverges from the transcript",
                self.cursor
            )));
        }
        self.cursor += 1;
        Ok(entry.response.clone())
    }

    fn name(&self) -> String {
        format!("scripted:replay:{}", self.tag)
    }

    fn deterministic(&self) -> bool {
        true
    }
}

#[derive(Serialize)]
struct HttpRequest<'a> {
    prompt: &'a str,
    seed: u64,
    metadata: HttpMetadata<'a>,
}

#[derive(Serialize)]
struct HttpMetadata<'a> {
    client: &'a str,
}

#[derive(Deserialize)]
struct HttpResponse {
    text: String,
}

/// Client for a single-endpoint chat bridge accepting
/// `{prompt, seed, metadata}` and returning `{text}`.
pub struct HttpOracle {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpOracle {
    pub fn new(endpoint: impl Into<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Oracle(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpOracle {
            endpoint: endpoint.into(),
            client,
        })
    }
}

impl ChatOracle for HttpOracle {
    fn send(&mut self, prompt: &str, seed: u64) -> Result<String> {
        let request = HttpRequest {
            prompt,
            seed,
            metadata: HttpMetadata { client: "cartel" },
        };
        let response = self
            .client
            .post(&self.endpoint)
            .json(&request)
            .send()
            .map_err(|e| Error::Oracle(format!("HTTP send failed: {e}")))?;
        if !response.status().is_success() {
            return Err(Error::Oracle(format!("HTTP status {}", response.status())));
        }
        let body: HttpResponse = response
            .json()
            .map_err(|e| Error::Oracle(format!("malformed HTTP response: {e}")))?;
        Ok(body.text)
    }

    fn name(&self) -> String {
        format!("http:{}", self.endpoint)
    }

    fn deterministic(&self) -> bool {
        false
    }
}

/// Parse an oracle spec: `scripted:constant:<price>`,
/// `scripted:tit-for-tat:<fallback>`, `scripted:replay:<path>`, or
/// `http:<endpoint>`.
pub fn oracle_from_spec(spec: &str) -> Result<Box<dyn ChatOracle>> {
    if let Some(rest) = spec.strip_prefix("scripted:constant:") {
        let price: f64 = rest
            .parse()
            .map_err(|_| Error::Config(format!("bad constant oracle price '{rest}'")))?;
        return Ok(Box::new(ConstantOracle { price }));
    }
    if let Some(rest) = spec.strip_prefix("scripted:tit-for-tat:") {
        let fallback: f64 = rest
            .parse()
            .map_err(|_| Error::Config(format!("bad tit-for-tat fallback '{rest}'")))?;
        return Ok(Box::new(TitForTatOracle { fallback }));
    }
    if let Some(rest) = spec.strip_prefix("scripted:replay:") {
        return Ok(Box::new(ReplayOracle::from_file(Path::new(rest))?));
    }
    if let Some(rest) = spec.strip_prefix("http:") {
        return Ok(Box::new(HttpOracle::new(format!("http:{rest}"))?));
    }
    Err(Error::Config(format!("unknown oracle spec '{spec}'")))
}
