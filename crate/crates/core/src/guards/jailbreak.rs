//! Jailbreak screening: similarity to a centroid of known jailbreak prompts,
//! plus an exact-phrase blocklist.

use serde::{Deserialize, Serialize};

use crate::classifier::centroid;
use crate::embedding::{cosine, Embedding, SharedEncoder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JailbreakVerdict {
    pub flagged: bool,
    pub score: f64,
    /// Closest exemplar (score hits) or the blocklist phrase that matched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_exemplar: Option<String>,
}

impl JailbreakVerdict {
    pub fn clear() -> Self {
        Self {
            flagged: false,
            score: 0.0,
            matched_exemplar: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JailbreakTable {
    encoder: SharedEncoder,
    centroid: Option<Embedding>,
    exemplars: Vec<(String, Embedding)>,
    blocklist: Vec<String>,
    threshold: f64,
}

impl JailbreakTable {
    pub fn build(encoder: SharedEncoder, exemplars: &[String], blocklist: &[String], threshold: f64) -> Self {
        let (centroid, embedded) = match centroid(encoder.as_ref(), exemplars) {
            Some((c, e)) => (Some(c), exemplars.iter().cloned().zip(e).collect()),
            None => (None, Vec::new()),
        };
        Self {
            encoder,
            centroid,
            exemplars: embedded,
            blocklist: blocklist
                .iter()
                .map(|p| p.trim().to_lowercase())
                .filter(|p| !p.is_empty())
                .collect(),
            threshold,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn centroid(&self) -> Option<&Embedding> {
        self.centroid.as_ref()
    }

    pub fn encoder(&self) -> &SharedEncoder {
        &self.encoder
    }

    /// Score an already-encoded text; `text` is still needed for the blocklist.
    pub fn check_embedded(&self, text: &str, embedding: &Embedding) -> JailbreakVerdict {
        let score = self
            .centroid
            .as_ref()
            .and_then(|c| cosine(embedding, c).ok())
            .unwrap_or(0.0);
        if self.centroid.is_some() && score >= self.threshold {
            let nearest = self
                .exemplars
                .iter()
                .map(|(text, e)| (text, cosine(embedding, e).unwrap_or(f64::NEG_INFINITY)))
                .fold(None::<(&String, f64)>, |best, (t, s)| match best {
                    Some((_, b)) if b >= s => best,
                    _ => Some((t, s)),
                })
                .map(|(t, _)| t.clone());
            return JailbreakVerdict {
                flagged: true,
                score,
                matched_exemplar: nearest,
            };
        }
        let lowered = text.to_lowercase();
        if let Some(phrase) = self.blocklist.iter().find(|p| lowered.contains(p.as_str())) {
            return JailbreakVerdict {
                flagged: true,
                score,
                matched_exemplar: Some(phrase.clone()),
            };
        }
        JailbreakVerdict {
            flagged: false,
            score,
            matched_exemplar: None,
        }
    }
}

pub fn detect_jailbreak(text: &str, table: &JailbreakTable) -> JailbreakVerdict {
    let embedding = table.encoder.encode(text);
    table.check_embedded(text, &embedding)
}
