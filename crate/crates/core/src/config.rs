//! One JSON document holding every tunable, with a stable digest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::ClusterParams;
use crate::error::{Error, Result};
use crate::evidence::EvidenceParams;
use crate::planner::PlannerConfig;
use crate::retrieval::GateConfig;
use crate::simeval::SimSpec;
use crate::textmodel::DEFAULT_DIM;
use crate::training::{ObjectiveWeights, PlanLossConfig, TrainingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FacetParams {
    pub z_cut: f64,
    /// How many induced extras a rule may carry.
    pub max_extras: usize,
}

impl Default for FacetParams {
    fn default() -> Self {
        Self {
            z_cut: 1.96,
            max_extras: 0,
        }
    }
}

/// What text represents a rule in the retrieval index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleTextMode {
    /// The core guidance sentence.
    #[default]
    Sentence,
    /// All rule fields concatenated.
    Document,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub timeout_ms: u64,
    pub retries: usize,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            timeout_ms: 30_000,
            retries: 1,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub embedding_dim: usize,
    pub cluster: ClusterParams,
    pub merge_topics: bool,
    pub evidence: EvidenceParams,
    pub facets: FacetParams,
    pub rule_text: RuleTextMode,
    pub gate: GateConfig,
    pub planner: PlannerConfig,
    pub plan_loss: PlanLossConfig,
    pub training: TrainingConfig,
    pub objective: ObjectiveWeights,
    pub sim: SimSpec,
    pub remote: RemoteConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            embedding_dim: DEFAULT_DIM,
            cluster: ClusterParams::default(),
            merge_topics: true,
            evidence: EvidenceParams::default(),
            facets: FacetParams::default(),
            rule_text: RuleTextMode::default(),
            gate: GateConfig::default(),
            planner: PlannerConfig::default(),
            plan_loss: PlanLossConfig::default(),
            training: TrainingConfig::default(),
            objective: ObjectiveWeights::default(),
            sim: SimSpec::default(),
            remote: RemoteConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::InvalidConfig("embedding_dim must be positive".into()));
        }
        if !self.facets.z_cut.is_finite() {
            return Err(Error::InvalidConfig("facet z_cut must be finite".into()));
        }
        if self.remote.max_in_flight == 0 {
            return Err(Error::InvalidConfig("remote.max_in_flight must be positive".into()));
        }
        self.cluster.validate()?;
        self.evidence.validate()?;
        self.gate.validate()?;
        self.planner.validate()?;
        self.plan_loss.validate()?;
        self.training.validate()?;
        self.objective.validate()?;
        self.sim.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Key-sorted compact JSON.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        value.to_string()
    }

    /// Hex sha256 of the canonical serialization.
    pub fn digest(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
