//! Router configuration: schema, defaults, strict loading and validation.
//!
//! Every struct rejects unknown keys. Errors name the offending key path
//! (`routes[3].threshold`, `guards.jailbreak.exemplars`, ...) so a broken
//! deployment file can be fixed without guessing.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use arc_swap::ArcSwap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{MatchMode, ReasoningMode};
use crate::embedding::{tokenize, EmbeddingError, HashingEncoder, SharedEncoder};
use crate::guards::GuardConfig;
use crate::policy::{MutationConfig, PolicyConfig};
use crate::router::Router;

pub const DEFAULT_ROUTE_THRESHOLD: f64 = 0.10;
pub const DEFAULT_FALLBACK_NAME: &str = "fallback";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported config format for {0} (expected .yaml, .yml or .json)")]
    UnsupportedFormat(PathBuf),
    #[error("{key}: {message}")]
    Parse { key: String, message: String },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error("duplicate route name {name:?} at {first} and {second}")]
    DuplicateRoute {
        name: String,
        first: String,
        second: String,
    },
}

impl ConfigError {
    fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Invalid {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Key path the error refers to, when there is one.
    pub fn key(&self) -> Option<&str> {
        match self {
            Self::Parse { key, .. } | Self::Invalid { key, .. } => Some(key),
            Self::DuplicateRoute { second, .. } => Some(second),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    #[default]
    Hashing,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Hashing => f.write_str("hashing"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    #[serde(default)]
    pub kind: EncoderKind,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
}

fn default_dimension() -> usize {
    crate::embedding::DEFAULT_DIMENSION
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Hashing,
            dimension: default_dimension(),
        }
    }
}

impl EncoderConfig {
    pub fn build(&self) -> Result<SharedEncoder, EmbeddingError> {
        match self.kind {
            EncoderKind::Hashing => Ok(Arc::new(HashingEncoder::new(self.dimension)?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteConfig {
    pub name: String,
    pub utterances: Vec<String>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub target_model: String,
    pub reasoning_mode: ReasoningMode,
}

fn default_threshold() -> f64 {
    DEFAULT_ROUTE_THRESHOLD
}

/// Inline default route used when `policy.fallback_route` is not set.
///
/// A missing `target_model` leaves the request's own model in place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FallbackConfig {
    #[serde(default = "default_fallback_name")]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_model: Option<String>,
    #[serde(default = "default_fallback_mode")]
    pub reasoning_mode: ReasoningMode,
}

fn default_fallback_name() -> String {
    DEFAULT_FALLBACK_NAME.to_string()
}

fn default_fallback_mode() -> ReasoningMode {
    ReasoningMode::On
}

impl Default for FallbackConfig {
    fn default() -> Self {
        Self {
            name: default_fallback_name(),
            target_model: None,
            reasoning_mode: default_fallback_mode(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingConfig {
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default, rename = "match")]
    pub match_mode: MatchMode,
    pub routes: Vec<RouteConfig>,
    #[serde(default)]
    pub fallback: FallbackConfig,
    #[serde(default)]
    pub guards: GuardConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub mutation: MutationConfig,
}

impl RoutingConfig {
    pub fn from_yaml_str(text: &str) -> Result<Self, ConfigError> {
        let de = serde_yaml::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            key: path_or_root(e.path().to_string()),
            message: e.inner().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let config: Self =
            serde_path_to_error::deserialize(&mut de).map_err(|e| ConfigError::Parse {
                key: path_or_root(e.path().to_string()),
                message: e.inner().to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_yaml_string(&self) -> String {
        serde_yaml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.encoder.dimension == 0 {
            return Err(ConfigError::invalid("encoder.dimension", "must be greater than 0"));
        }
        if self.routes.is_empty() {
            return Err(ConfigError::invalid("routes", "at least one route is required"));
        }
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, route) in self.routes.iter().enumerate() {
            let key = |field: &str| format!("routes[{i}].{field}");
            if route.name.trim().is_empty() {
                return Err(ConfigError::invalid(key("name"), "must not be empty"));
            }
            if let Some(first) = seen.insert(route.name.as_str(), i) {
                return Err(ConfigError::DuplicateRoute {
                    name: route.name.clone(),
                    first: format!("routes[{first}].name"),
                    second: key("name"),
                });
            }
            if route.utterances.is_empty() {
                return Err(ConfigError::invalid(key("utterances"), "must contain at least one utterance"));
            }
            if route.utterances.iter().all(|u| tokenize(u).is_empty()) {
                return Err(ConfigError::invalid(
                    key("utterances"),
                    format!("route {:?} has no utterance with any word characters", route.name),
                ));
            }
            if !(0.0..=1.0).contains(&route.threshold) {
                return Err(ConfigError::invalid(
                    key("threshold"),
                    format!("{} is outside the allowed range [0, 1]", route.threshold),
                ));
            }
            if route.target_model.trim().is_empty() {
                return Err(ConfigError::invalid(key("target_model"), "must not be empty"));
            }
        }

        match &self.policy.fallback_route {
            Some(name) if !seen.contains_key(name.as_str()) => {
                return Err(ConfigError::invalid(
                    "policy.fallback_route",
                    format!("references unknown route {name:?}"),
                ));
            }
            Some(_) => {}
            None => {
                if self.fallback.name.trim().is_empty() {
                    return Err(ConfigError::invalid("fallback.name", "must not be empty"));
                }
                if seen.contains_key(self.fallback.name.as_str()) {
                    return Err(ConfigError::invalid(
                        "fallback.name",
                        format!(
                            "{:?} collides with a configured route; set policy.fallback_route to reuse it",
                            self.fallback.name
                        ),
                    ));
                }
                if matches!(&self.fallback.target_model, Some(m) if m.trim().is_empty()) {
                    return Err(ConfigError::invalid("fallback.target_model", "must not be empty"));
                }
            }
        }

        self.guards.validate()?;
        self.mutation.validate()?;
        Ok(())
    }

    pub fn encoder(&self) -> Result<SharedEncoder, ConfigError> {
        self.encoder
            .build()
            .map_err(|e| ConfigError::invalid("encoder", e.to_string()))
    }
}

fn path_or_root(path: String) -> String {
    if path == "." || path.is_empty() {
        "<root>".to_string()
    } else {
        path
    }
}

pub(crate) fn invalid(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::invalid(key, message)
}

/// Load and validate a config file, choosing YAML or JSON by extension.
pub fn load_config(path: impl AsRef<Path>) -> Result<RoutingConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("yaml" | "yml") => RoutingConfig::from_yaml_str(&text),
        Some("json") => RoutingConfig::from_json_str(&text),
        _ => Err(ConfigError::UnsupportedFormat(path.to_path_buf())),
    }
}

/// The published router snapshot plus the file it was loaded from.
///
/// Readers call [`ConfigStore::snapshot`] once per request and keep the
/// returned `Arc` for the whole request, so a concurrent reload never changes
/// a decision halfway through.
#[derive(Debug)]
pub struct ConfigStore {
    path: PathBuf,
    current: ArcSwap<Router>,
}

impl ConfigStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, ConfigError> {
        let path = path.into();
        let router = Router::from_config(load_config(&path)?)?;
        Ok(Self {
            path,
            current: ArcSwap::from_pointee(router),
        })
    }

    pub fn from_router(path: impl Into<PathBuf>, router: Router) -> Self {
        Self {
            path: path.into(),
            current: ArcSwap::from_pointee(router),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn snapshot(&self) -> Arc<Router> {
        self.current.load_full()
    }

    /// Re-read the config file. A valid file replaces the snapshot; an invalid
    /// one is rejected and the previous snapshot stays live.
    pub fn reload(&self) -> Result<Arc<Router>, ConfigError> {
        reload(&self.path, &self.current)
    }
}

pub fn reload(path: &Path, current: &ArcSwap<Router>) -> Result<Arc<Router>, ConfigError> {
    match load_config(path).and_then(Router::from_config) {
        Ok(router) => {
            let router = Arc::new(router);
            current.store(Arc::clone(&router));
            tracing::info!(path = %path.display(), "config reloaded");
            Ok(router)
        }
        Err(err) => {
            tracing::warn!(path = %path.display(), error = %err, "config reload rejected; keeping previous snapshot");
            Err(err)
        }
    }
}
