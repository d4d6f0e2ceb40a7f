//! Configuration and data files shipped with the crate.

/// 14-domain routing config.
pub const ROUTER_YAML: &str = include_str!("../assets/router.yaml");

/// Cost model for the simulated backend, calibrated against the sample policy.
pub const TABLE1_YAML: &str = include_str!("../assets/table1.yaml");

/// 280 labeled queries, 20 per domain of [`ROUTER_YAML`].
pub const SAMPLE_DATASET_JSONL: &str = include_str!("../assets/sample_dataset.jsonl");

/// Parameters that regenerate [`SAMPLE_DATASET_JSONL`].
pub const SAMPLE_PER_CATEGORY: usize = 20;
pub const SAMPLE_DATASET_SEED: u64 = 2024;
