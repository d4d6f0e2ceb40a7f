//! Deterministic stand-in for an LLM backend.
//!
//! Each (category, reasoning mode) cell of a [`CostModel`] gives mean latency,
//! mean token usage and the probability of a correct answer. A response is a
//! pure function of `(seed, request_id)` and the cell: the per-request draws
//! do not depend on the mode, so ON and OFF answers for one request differ
//! only through their cells.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::classifier::ReasoningMode;
use crate::embedding::tokenize;
use crate::policy::RequestEnvelope;

/// Jitter bounds applied to the cell means.
pub const JITTER_MIN: f64 = 0.8;
pub const JITTER_MAX: f64 = 1.2;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("invalid cost model at {key}: {message}")]
    Invalid { key: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse cost model: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostCell {
    pub mean_latency_ms: f64,
    pub mean_tokens: f64,
    pub accuracy_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryCells {
    pub on: CostCell,
    pub off: CostCell,
}

impl CategoryCells {
    pub fn cell(&self, mode: ReasoningMode) -> &CostCell {
        match mode {
            ReasoningMode::On => &self.on,
            ReasoningMode::Off => &self.off,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    #[serde(default)]
    pub seed: u64,
    pub categories: BTreeMap<String, CategoryCells>,
}

impl CostModel {
    pub fn from_yaml_str(text: &str) -> Result<Self, SimError> {
        let model: Self = serde_yaml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn from_json_str(text: &str) -> Result<Self, SimError> {
        let model: Self = serde_json::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    /// Load by extension: `.json` is JSON, anything else is read as YAML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json_str(&text)
        } else {
            Self::from_yaml_str(&text)
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.categories.is_empty() {
            return Err(SimError::Invalid {
                key: "categories".into(),
                message: "at least one category is required".into(),
            });
        }
        for (name, cells) in &self.categories {
            for (mode, cell) in [("on", &cells.on), ("off", &cells.off)] {
                let key = |f: &str| format!("categories.{name}.{mode}.{f}");
                if !(0.0..=1.0).contains(&cell.accuracy_prob) {
                    return Err(SimError::Invalid {
                        key: key("accuracy_prob"),
                        message: format!("{} is outside [0, 1]", cell.accuracy_prob),
                    });
                }
                for (field, v) in [("mean_latency_ms", cell.mean_latency_ms), ("mean_tokens", cell.mean_tokens)] {
                    if !(v.is_finite() && v > 0.0) {
                        return Err(SimError::Invalid {
                            key: key(field),
                            message: format!("{v} must be positive"),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn cells(&self, category: &str) -> Result<&CategoryCells, SimError> {
        self.categories
            .get(category)
            .ok_or_else(|| SimError::UnknownCategory(category.to_string()))
    }

    /// Fail if any of `categories` lacks cells.
    pub fn ensure_covers<'a>(&self, categories: impl IntoIterator<Item = &'a str>) -> Result<(), SimError> {
        let missing: BTreeSet<&str> = categories
            .into_iter()
            .filter(|c| !self.categories.contains_key(*c))
            .collect();
        match missing.into_iter().next() {
            None => Ok(()),
            Some(c) => Err(SimError::UnknownCategory(c.to_string())),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimMeta {
    pub category_label: String,
    pub reasoning_mode: ReasoningMode,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResponse {
    pub answer_correct: bool,
    pub total_tokens: u64,
    pub latency_ms: f64,
    pub body: Value,
}

impl SimResponse {
    pub fn body_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.body).expect("body serializes")
    }
}

/// The per-request draws, fixed by `(seed, request_id)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draws {
    pub correctness: f64,
    pub token_factor: f64,
    pub latency_factor: f64,
    pub key: u64,
}

pub fn request_key(seed: u64, request_id: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&seed.to_le_bytes());
    h.write(request_id.as_bytes());
    h.finish()
}

pub fn draws(seed: u64, request_id: &str) -> Draws {
    let key = request_key(seed, request_id);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let span = JITTER_MAX - JITTER_MIN;
    Draws {
        correctness: rng.gen::<f64>(),
        token_factor: JITTER_MIN + span * rng.gen::<f64>(),
        latency_factor: JITTER_MIN + span * rng.gen::<f64>(),
        key,
    }
}

pub fn simulate(request: &RequestEnvelope, meta: &SimMeta, model: &CostModel) -> Result<SimResponse, SimError> {
    let cell = model.cells(&meta.category_label)?.cell(meta.reasoning_mode);
    let d = draws(model.seed, &meta.request_id);
    let answer_correct = d.correctness < cell.accuracy_prob;
    let total_tokens = ((cell.mean_tokens * d.token_factor).round() as u64).max(1);
    let latency_ms = cell.mean_latency_ms * d.latency_factor;
    let prompt_tokens = (tokenize(&request.user_prompt()).len() as u64).min(total_tokens);
    let body = json!({
        "id": format!("chatcmpl-sim-{:016x}", d.key),
        "object": "chat.completion",
        "created": 0,
        "model": request.model,
        "choices": [{
            "index": 0,
            "message": {
                "role": "assistant",
                "content": if answer_correct { "simulated answer (correct)" } else { "simulated answer (incorrect)" },
            },
            "finish_reason": "stop",
        }],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": total_tokens - prompt_tokens,
            "total_tokens": total_tokens,
        },
        "simulation": {
            "category": meta.category_label,
            "reasoning_mode": meta.reasoning_mode,
            "request_id": meta.request_id,
            "answer_correct": answer_correct,
            "latency_ms": latency_ms,
        },
    });
    Ok(SimResponse {
        answer_correct,
        total_tokens,
        latency_ms,
        body,
    })
}
