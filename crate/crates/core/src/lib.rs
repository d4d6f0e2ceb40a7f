//! Semantic request routing with selective reasoning.
//!
//! Prompts are embedded with a hashing encoder, matched against route
//! centroids, screened for PII and jailbreak attempts, and turned into a
//! [`RoutingDecision`] that picks the target model and whether reasoning is
//! enabled. [`mutate_request`] applies a decision to a chat-completion body.

pub mod classifier;
pub mod config;
pub mod embedding;
pub mod guards;
pub mod harness;
pub mod policy;
pub mod router;
pub mod samples;
pub mod sim;

pub use classifier::{classify, CategoryDecision, ClassifierError, MatchMode, ReasoningMode, Route, RouteTable};
pub use config::{load_config, ConfigError, ConfigStore, RoutingConfig};
pub use embedding::{cosine, embed, tokenize, Embedding, Encoder, HashingEncoder, SharedEncoder};
pub use guards::{detect_jailbreak, detect_pii, redact, GuardAction, GuardConfig, GuardVerdict, PiiKind, PiiSpan};
pub use harness::{load_dataset, run_bench, BenchQuery, MetricsReport};
pub use policy::{decide, mutate_request, MutationConfig, RequestEnvelope, RoutingDecision};
pub use router::Router;
pub use sim::{simulate, CostModel, SimResponse};
