use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::QueryScorer;
use crate::error::{Error, Result};
use crate::model::{Query, TaskInstance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    /// OpenAI-compatible chat completions URL.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_concurrency: usize,
    pub max_retries: u32,
    /// Base delay; attempt `n` waits `backoff_ms * 2^n`.
    pub backoff_ms: u64,
    pub cache_path: Option<PathBuf>,
    pub provenance_path: Option<PathBuf>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8080/v1/chat/completions".into(),
            model: "scorer".into(),
            api_key_env: "TIGLOAD_API_KEY".into(),
            timeout_secs: 60,
            max_concurrency: 4,
            max_retries: 3,
            backoff_ms: 500,
            cache_path: None,
            provenance_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportError(pub String);

/// Sends one prompt and returns the model's text reply.
pub trait Transport: Send + Sync {
    fn complete(&self, prompt: &str) -> std::result::Result<String, TransportError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(cfg: &RemoteConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            client,
            endpoint: cfg.endpoint.clone(),
            model: cfg.model.clone(),
            api_key: std::env::var(&cfg.api_key_env).ok(),
        })
    }
}

impl Transport for HttpTransport {
    fn complete(&self, prompt: &str) -> std::result::Result<String, TransportError> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(TransportError(format!("HTTP {status}")));
        }
        let v: serde_json::Value = resp.json().map_err(|e| TransportError(e.to_string()))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| TransportError("response has no choices[0].message.content".into()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub ambiguity: f64,
    pub distraction: f64,
    pub raw: String,
}

/// Append-only JSONL score cache keyed by `scorer|task|query`.
pub struct ScoreCache {
    entries: Mutex<HashMap<String, CacheEntry>>,
    file: Mutex<File>,
}

impl ScoreCache {
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: CacheEntry = serde_json::from_str(&line)?;
                entries.insert(e.key.clone(), e);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries: Mutex::new(entries),
            file: Mutex::new(file),
        })
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        self.entries.lock().unwrap().get(key).cloned()
    }

    pub fn insert(&self, entry: CacheEntry) -> Result<()> {
        let line = serde_json::to_string(&entry)?;
        {
            let mut f = self.file.lock().unwrap();
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        self.entries.lock().unwrap().insert(entry.key.clone(), entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn build_prompt(task: &TaskInstance, query: &Query) -> String {
    let mut p = String::new();
    p.push_str("You rate how hard a user request is to act on with the tools below.\n\n");
    p.push_str("Available tools:\n");
    for t in &task.tools {
        p.push_str(&format!("- {}: {}\n", t.name, t.description));
    }
    p.push_str("\nConversation so far:\n");
    for q in task.queries.iter().take(query.index) {
        p.push_str(&format!("[{}] {}\n", q.index, q.text));
    }
    p.push_str(&format!("\nRequest to rate:\n[{}] {}\n\n", query.index, query.text));
    p.push_str(
        "Give two scores between 0 and 1:\n\
         - ambiguity: how underspecified or unclear the request is\n\
         - distraction: how likely irrelevant but plausible tools are to be chosen\n\n\
         Answer with exactly this block and nothing else inside it:\n\
         ```scores\nambiguity: <decimal>\ndistraction: <decimal>\n```\n",
    );
    p
}

/// Extracts `(ambiguity, distraction)` from the single ```` ```scores ````
/// block of a reply. Anything other than exactly those two lines is an error.
pub fn parse_scores(raw: &str) -> std::result::Result<(f64, f64), String> {
    let lines: Vec<&str> = raw.lines().map(str::trim).collect();
    let starts: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == "```scores")
        .map(|(i, _)| i)
        .collect();
    let start = match starts.as_slice() {
        [s] => *s,
        [] => return Err("no ```scores block".into()),
        _ => return Err("more than one ```scores block".into()),
    };
    let end = lines[start + 1..]
        .iter()
        .position(|l| *l == "```")
        .map(|o| start + 1 + o)
        .ok_or("unterminated ```scores block")?;
    let body: Vec<&str> = lines[start + 1..end].iter().copied().filter(|l| !l.is_empty()).collect();
    if body.len() != 2 {
        return Err(format!("expected 2 score lines, found {}", body.len()));
    }
    let field = |line: &str, name: &str| -> std::result::Result<f64, String> {
        let (k, v) = line.split_once(':').ok_or_else(|| format!("bad line `{line}`"))?;
        if k.trim() != name {
            return Err(format!("expected `{name}`, found `{}`", k.trim()));
        }
        let v = v.trim();
        if v.is_empty() || !v.chars().all(|c| c.is_ascii_digit() || c == '.' || c == '-') {
            return Err(format!("`{v}` is not a decimal"));
        }
        let x = v.parse::<f64>().map_err(|e| format!("`{v}`: {e}"))?;
        if !(0.0..=1.0).contains(&x) {
            return Err(format!("{name} {x} outside [0, 1]"));
        }
        Ok(x)
    };
    Ok((field(body[0], "ambiguity")?, field(body[1], "distraction")?))
}

pub struct RemoteScorer {
    cfg: RemoteConfig,
    transport: Box<dyn Transport>,
    cache: Option<ScoreCache>,
    provenance: Option<Mutex<File>>,
}

impl RemoteScorer {
    pub fn from_config(cfg: RemoteConfig) -> Result<Self> {
        let transport = Box::new(HttpTransport::new(&cfg)?);
        Self::with_transport(cfg, transport)
    }

    pub fn with_transport(cfg: RemoteConfig, transport: Box<dyn Transport>) -> Result<Self> {
        let cache = cfg.cache_path.as_deref().map(ScoreCache::open).transpose()?;
        let provenance = match &cfg.provenance_path {
            Some(p) => Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?)),
            None => None,
        };
        Ok(Self {
            cfg,
            transport,
            cache,
            provenance,
        })
    }

    pub fn cache(&self) -> Option<&ScoreCache> {
        self.cache.as_ref()
    }

    fn log(&self, key: &str, attempt: u32, outcome: std::result::Result<&str, &str>) -> Result<()> {
        if let Some(f) = &self.provenance {
            let rec = match outcome {
                Ok(raw) => json!({"key": key, "attempt": attempt, "raw": raw}),
                Err(err) => json!({"key": key, "attempt": attempt, "error": err}),
            };
            let mut f = f.lock().unwrap();
            writeln!(f, "{rec}")?;
        }
        Ok(())
    }

    fn fetch(&self, key: &str, prompt: &str) -> Result<String> {
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let delay = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(delay));
            }
            match self.transport.complete(prompt) {
                Ok(raw) => {
                    self.log(key, attempt, Ok(&raw))?;
                    return Ok(raw);
                }
                Err(TransportError(e)) => {
                    self.log(key, attempt, Err(&e))?;
                    last = e;
                }
            }
        }
        Err(Error::ScorerUnavailable {
            attempts: self.cfg.max_retries + 1,
            reason: last,
        })
    }
}

impl QueryScorer for RemoteScorer {
    fn id(&self) -> String {
        format!("remote/{}", self.cfg.model)
    }

    fn score(&self, task: &TaskInstance, query: &Query) -> Result<(f64, f64)> {
        let key = format!("{}|{}|{}", self.id(), task.id, query.index);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok((hit.ambiguity, hit.distraction));
        }
        let raw = self.fetch(&key, &build_prompt(task, query))?;
        let (a, d) = parse_scores(&raw).map_err(|reason| Error::MalformedScore {
            key: key.clone(),
            reason,
        })?;
        if let Some(c) = &self.cache {
            c.insert(CacheEntry {
                key,
                ambiguity: a,
                distraction: d,
                raw,
            })?;
        }
        Ok((a, d))
    }

    fn max_in_flight(&self) -> Option<usize> {
        Some(self.cfg.max_concurrency.max(1))
    }
}
