use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the experience pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("text is empty after trimming")]
    EmptyText,

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("unknown document id `{0}`")]
    UnknownDoc(String),

    #[error("cluster `{0}` has no evidence")]
    EmptyCluster(String),

    #[error("summarizer unavailable: {0}")]
    SummarizerUnavailable(String),

    #[error("citation `{source_name}` is not cited by any member of cluster `{cluster_id}`")]
    CitationLeak {
        cluster_id: String,
        source_name: String,
    },

    #[error("corpus `{0}` is empty")]
    EmptyCorpus(&'static str),

    #[error("no experiences to derive facet indicators from")]
    NoExperiences,

    #[error("stale parent: commit based on version {parent}, latest is {latest}")]
    StaleParent { parent: u64, latest: u64 },

    #[error("pipeline config changed (base {base}, current {current}); a full rebuild is required")]
    ConfigDrift { base: String, current: String },

    #[error("corrupt manifest or version file {path}: {reason}")]
    CorruptManifest { path: PathBuf, reason: String },

    #[error("version gap: {0}")]
    VersionGap(String),

    #[error("rule id `{0}` was already issued")]
    RuleIdReuse(String),

    #[error("duplicate tuple id `{0}`")]
    DuplicateId(String),

    #[error("projected vector has (near) zero norm")]
    DegenerateVector,

    #[error("token model is not normalized: {0}")]
    UnnormalizedModel(String),

    #[error("question is empty")]
    EmptyQuestion,

    #[error("plan violates invariants: {0}")]
    PlanInvalid(String),

    #[error("corpus spec infeasible: {0}")]
    SpecInfeasible(String),

    #[error("dataset lacks stress-test annotations: {0}")]
    MissingAnnotations(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("remote service error: {0}")]
    Remote(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable kind, used in structured CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyText => "EmptyText",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::UnknownDoc(_) => "UnknownDoc",
            Error::EmptyCluster(_) => "EmptyCluster",
            Error::SummarizerUnavailable(_) => "SummarizerUnavailable",
            Error::CitationLeak { .. } => "CitationLeak",
            Error::EmptyCorpus(_) => "EmptyCorpus",
            Error::NoExperiences => "NoExperiences",
            Error::StaleParent { .. } => "StaleParent",
            Error::ConfigDrift { .. } => "ConfigDrift",
            Error::CorruptManifest { .. } => "CorruptManifest",
            Error::VersionGap(_) => "VersionGap",
            Error::RuleIdReuse(_) => "RuleIdReuse",
            Error::DuplicateId(_) => "DuplicateId",
            Error::DegenerateVector => "DegenerateVector",
            Error::UnnormalizedModel(_) => "UnnormalizedModel",
            Error::EmptyQuestion => "EmptyQuestion",
            Error::PlanInvalid(_) => "PlanInvalid",
            Error::SpecInfeasible(_) => "SpecInfeasible",
            Error::MissingAnnotations(_) => "MissingAnnotations",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Remote(_) => "Remote",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
