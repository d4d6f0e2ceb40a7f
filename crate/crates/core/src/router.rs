//! The assembled request path: one immutable snapshot of route table, guards
//! and policy built from a [`RoutingConfig`].

use std::time::Instant;

use crate::classifier::{build_route_table_with, RouteTable};
use crate::config::{invalid, ConfigError, RoutingConfig};
use crate::embedding::SharedEncoder;
use crate::guards::Guards;
use crate::policy::{decide_embedded, mutate_request, MutationError, RequestEnvelope, RoutingDecision, Stage};

#[derive(Debug, Clone)]
pub struct Router {
    config: RoutingConfig,
    table: RouteTable,
    guards: Guards,
}

impl Router {
    pub fn from_config(config: RoutingConfig) -> Result<Self, ConfigError> {
        let encoder = config.encoder()?;
        Self::with_encoder(config, encoder)
    }

    /// Build with a caller-supplied encoder in place of the configured one.
    pub fn with_encoder(config: RoutingConfig, encoder: SharedEncoder) -> Result<Self, ConfigError> {
        config.validate()?;
        let table = build_route_table_with(&config, encoder.clone()).map_err(|e| invalid("routes", e.to_string()))?;
        let guards = Guards::build(&config.guards, encoder)?;
        Ok(Self { config, table, guards })
    }

    pub fn config(&self) -> &RoutingConfig {
        &self.config
    }

    pub fn table(&self) -> &RouteTable {
        &self.table
    }

    pub fn guards(&self) -> &Guards {
        &self.guards
    }

    pub fn encoder(&self) -> &SharedEncoder {
        self.table.encoder()
    }

    pub fn decide(&self, prompt: &str) -> RoutingDecision {
        crate::policy::decide(prompt, &self.table, &self.guards, &self.config.policy)
    }

    pub fn decide_request(&self, request: &RequestEnvelope) -> RoutingDecision {
        self.decide(&request.user_prompt())
    }

    /// Decide for several prompts with a single batched encoder call.
    pub fn decide_batch(&self, prompts: &[&str]) -> Vec<RoutingDecision> {
        let t = Instant::now();
        let embeddings = self.encoder().encode_batch(prompts);
        let share = u64::try_from(t.elapsed().as_micros()).unwrap_or(u64::MAX) / prompts.len().max(1) as u64;
        prompts
            .iter()
            .zip(&embeddings)
            .map(|(p, e)| {
                let mut d = decide_embedded(p, e, &self.table, &self.guards, &self.config.policy);
                if let Some(r) = d.trace.iter_mut().find(|r| r.stage == Stage::Classify) {
                    r.duration_us += share;
                }
                d
            })
            .collect()
    }

    pub fn mutate(&self, request: RequestEnvelope, decision: &RoutingDecision) -> Result<RequestEnvelope, MutationError> {
        mutate_request(request, decision, &self.config.mutation)
    }
}
