//! Append-only records produced by the gateway: token usage observed on
//! responses, and one JSON line per routing decision.

use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use semrouter_core::RoutingDecision;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub decision_id: String,
    /// `None` when the response had no readable usage object.
    pub total_tokens: Option<u64>,
}

#[derive(Debug, Default)]
pub struct UsageSink {
    records: Mutex<Vec<UsageRecord>>,
}

impl UsageSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, decision_id: impl Into<String>, total_tokens: Option<u64>) {
        let rec = UsageRecord {
            decision_id: decision_id.into(),
            total_tokens,
        };
        tracing::debug!(decision_id = %rec.decision_id, tokens = ?rec.total_tokens, "usage recorded");
        self.records.lock().expect("usage sink poisoned").push(rec);
    }

    pub fn records(&self) -> Vec<UsageRecord> {
        self.records.lock().expect("usage sink poisoned").clone()
    }

    pub fn get(&self, decision_id: &str) -> Option<UsageRecord> {
        self.records
            .lock()
            .expect("usage sink poisoned")
            .iter()
            .find(|r| r.decision_id == decision_id)
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("usage sink poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Read `usage.total_tokens` from a chat-completion response body.
pub fn total_tokens(body: &[u8]) -> Option<u64> {
    let v: serde_json::Value = serde_json::from_slice(body).ok()?;
    v.get("usage")?.get("total_tokens")?.as_u64()
}

/// JSON-lines decision log.
#[derive(Clone)]
pub struct DecisionLog {
    out: Option<Arc<Mutex<Box<dyn Write + Send>>>>,
}

impl std::fmt::Debug for DecisionLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DecisionLog").field("enabled", &self.out.is_some()).finish()
    }
}

impl DecisionLog {
    pub fn disabled() -> Self {
        Self { out: None }
    }

    pub fn to_writer(w: impl Write + Send + 'static) -> Self {
        Self {
            out: Some(Arc::new(Mutex::new(Box::new(w)))),
        }
    }

    pub fn stdout() -> Self {
        Self::to_writer(io::stdout())
    }

    /// Append to `path`, creating it if needed.
    pub fn to_file(path: impl AsRef<Path>) -> io::Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self::to_writer(f))
    }

    pub fn log(&self, decision: &RoutingDecision) {
        let Some(out) = &self.out else { return };
        let mut line = decision.log_record().to_string();
        line.push('\n');
        let mut w = out.lock().expect("decision log poisoned");
        if let Err(e) = w.write_all(line.as_bytes()).and_then(|_| w.flush()) {
            tracing::warn!(error = %e, "decision log write failed");
        }
    }
}
