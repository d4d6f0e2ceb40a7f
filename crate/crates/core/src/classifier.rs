//! Nearest-centroid intent classification over a configured route table.

use std::collections::BTreeMap;
use std::fmt;
use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{RouteConfig, RoutingConfig};
use crate::embedding::{cosine, tokenize, Embedding, EmbeddingError, Encoder, SharedEncoder};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifierError {
    #[error("route table is empty")]
    EmptyTable,
    #[error("route {0:?} has no utterance with any word characters")]
    NoValidUtterances(String),
    #[error("duplicate route name {0:?}")]
    DuplicateRoute(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningMode {
    On,
    Off,
}

impl ReasoningMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::On => "on",
            Self::Off => "off",
        }
    }

    pub fn is_on(self) -> bool {
        self == Self::On
    }
}

impl fmt::Display for ReasoningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ReasoningMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "on" | "true" => Ok(Self::On),
            "off" | "false" => Ok(Self::Off),
            other => Err(format!("unknown reasoning mode {other:?}")),
        }
    }
}

/// How a prompt is scored against a route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Cosine against the normalized mean of the route's utterance embeddings.
    #[default]
    Centroid,
    /// Best cosine against any single utterance of the route.
    MaxUtterance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub name: String,
    pub utterances: Vec<String>,
    pub centroid: Embedding,
    pub threshold: f64,
    pub target_model: String,
    pub reasoning_mode: ReasoningMode,
    utterance_embeddings: Vec<Embedding>,
}

impl Route {
    pub fn utterance_embeddings(&self) -> &[Embedding] {
        &self.utterance_embeddings
    }

    fn score(&self, prompt: &Embedding, mode: MatchMode) -> Result<f64, EmbeddingError> {
        match mode {
            MatchMode::Centroid => cosine(prompt, &self.centroid),
            MatchMode::MaxUtterance => {
                let mut best = f64::NEG_INFINITY;
                for e in &self.utterance_embeddings {
                    best = best.max(cosine(prompt, e)?);
                }
                Ok(best)
            }
        }
    }
}

/// Where unmatched prompts go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FallbackRoute {
    pub name: String,
    /// `None` keeps whatever model the request asked for.
    pub target_model: Option<String>,
    pub reasoning_mode: ReasoningMode,
}

/// Model and reasoning mode a classification resolves to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolved<'a> {
    pub name: &'a str,
    pub target_model: Option<&'a str>,
    pub reasoning_mode: ReasoningMode,
}

/// Normalized mean of the embeddings of `texts`, or `None` when no text has
/// any tokens. Hash collisions can still cancel a mean out to zero; that
/// centroid is kept and simply scores 0 against everything.
pub fn centroid<E: Encoder + ?Sized>(encoder: &E, texts: &[String]) -> Option<(Embedding, Vec<Embedding>)> {
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let embeddings = encoder.encode_batch(&refs);
    let mut sum = vec![0.0; encoder.dimension()];
    for e in &embeddings {
        for (acc, v) in sum.iter_mut().zip(e.values()) {
            *acc += v;
        }
    }
    let n = embeddings.len().max(1) as f64;
    sum.iter_mut().for_each(|v| *v /= n);
    if texts.iter().all(|t| tokenize(t).is_empty()) {
        return None;
    }
    Some((Embedding::normalized(sum), embeddings))
}

/// Immutable snapshot of routes, sorted by name, with their centroids.
#[derive(Debug, Clone)]
pub struct RouteTable {
    routes: Vec<Route>,
    fallback: FallbackRoute,
    match_mode: MatchMode,
    encoder: SharedEncoder,
    built_at: SystemTime,
}

impl RouteTable {
    pub fn build(
        specs: &[RouteConfig],
        fallback: FallbackRoute,
        match_mode: MatchMode,
        encoder: SharedEncoder,
    ) -> Result<Self, ClassifierError> {
        if specs.is_empty() {
            return Err(ClassifierError::EmptyTable);
        }
        let mut routes = Vec::with_capacity(specs.len());
        for spec in specs {
            let (centroid, utterance_embeddings) = centroid(encoder.as_ref(), &spec.utterances)
                .ok_or_else(|| ClassifierError::NoValidUtterances(spec.name.clone()))?;
            routes.push(Route {
                name: spec.name.clone(),
                utterances: spec.utterances.clone(),
                centroid,
                threshold: spec.threshold,
                target_model: spec.target_model.clone(),
                reasoning_mode: spec.reasoning_mode,
                utterance_embeddings,
            });
        }
        routes.sort_by(|a, b| a.name.cmp(&b.name));
        if let Some(w) = routes.windows(2).find(|w| w[0].name == w[1].name) {
            return Err(ClassifierError::DuplicateRoute(w[0].name.clone()));
        }
        Ok(Self {
            routes,
            fallback,
            match_mode,
            encoder,
            built_at: SystemTime::now(),
        })
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    pub fn route(&self, name: &str) -> Option<&Route> {
        self.routes
            .binary_search_by(|r| r.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.routes[i])
    }

    pub fn fallback(&self) -> &FallbackRoute {
        &self.fallback
    }

    pub fn match_mode(&self) -> MatchMode {
        self.match_mode
    }

    pub fn encoder(&self) -> &SharedEncoder {
        &self.encoder
    }

    pub fn dimension(&self) -> usize {
        self.encoder.dimension()
    }

    pub fn built_at(&self) -> SystemTime {
        self.built_at
    }

    /// Target model and reasoning mode for a classification outcome.
    pub fn resolve<'a>(&'a self, decision: &'a CategoryDecision) -> Resolved<'a> {
        match decision.matched.then(|| self.route(&decision.category)).flatten() {
            Some(route) => Resolved {
                name: &route.name,
                target_model: Some(&route.target_model),
                reasoning_mode: route.reasoning_mode,
            },
            None => Resolved {
                name: &self.fallback.name,
                target_model: self.fallback.target_model.as_deref(),
                reasoning_mode: self.fallback.reasoning_mode,
            },
        }
    }
}

/// Build a route table from a validated config.
pub fn build_route_table(config: &RoutingConfig) -> Result<RouteTable, ClassifierError> {
    let encoder = config
        .encoder()
        .map_err(|e| ClassifierError::Config(e.to_string()))?;
    build_route_table_with(config, encoder)
}

/// Like [`build_route_table`], with a caller-supplied encoder.
pub fn build_route_table_with(config: &RoutingConfig, encoder: SharedEncoder) -> Result<RouteTable, ClassifierError> {
    let fallback = match &config.policy.fallback_route {
        Some(name) => {
            let spec = config
                .routes
                .iter()
                .find(|r| &r.name == name)
                .ok_or_else(|| ClassifierError::Config(format!("fallback route {name:?} is not configured")))?;
            FallbackRoute {
                name: spec.name.clone(),
                target_model: Some(spec.target_model.clone()),
                reasoning_mode: spec.reasoning_mode,
            }
        }
        None => FallbackRoute {
            name: config.fallback.name.clone(),
            target_model: config.fallback.target_model.clone(),
            reasoning_mode: config.fallback.reasoning_mode,
        },
    };
    RouteTable::build(&config.routes, fallback, config.match_mode, encoder)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryDecision {
    /// Winning route, or the fallback name when the winner missed its threshold.
    pub category: String,
    /// Best score over all routes.
    pub score: f64,
    pub matched: bool,
    pub all_scores: BTreeMap<String, f64>,
}

impl CategoryDecision {
    /// Route with the highest score, regardless of threshold.
    pub fn best_route(&self) -> Option<&str> {
        let mut best: Option<(&str, f64)> = None;
        for (name, score) in &self.all_scores {
            if best.map_or(true, |(_, s)| *score > s) {
                best = Some((name, *score));
            }
        }
        best.map(|(n, _)| n)
    }
}

/// Pick the route whose score against `prompt` is highest.
///
/// Ties go to the lexicographically smallest route name. The decision is
/// matched only if the winner's score reaches its own threshold; otherwise it
/// carries the fallback category.
pub fn classify(prompt: &Embedding, table: &RouteTable) -> Result<CategoryDecision, ClassifierError> {
    if table.routes.is_empty() {
        return Err(ClassifierError::EmptyTable);
    }
    let mut all_scores = BTreeMap::new();
    let mut winner: Option<(&Route, f64)> = None;
    // routes are sorted by name, so a strict comparison keeps the smallest
    // name among equal scores
    for route in &table.routes {
        let score = route.score(prompt, table.match_mode)?;
        all_scores.insert(route.name.clone(), score);
        if winner.map_or(true, |(_, best)| score > best) {
            winner = Some((route, score));
        }
    }
    let (route, score) = winner.expect("table is non-empty");
    let matched = score >= route.threshold;
    Ok(CategoryDecision {
        category: if matched {
            route.name.clone()
        } else {
            table.fallback.name.clone()
        },
        score,
        matched,
        all_scores,
    })
}
