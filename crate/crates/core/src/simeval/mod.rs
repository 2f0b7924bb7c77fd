//! Seeded synthetic web corpus, a deterministic browsing controller, the
//! metric suite, leakage stress transforms and the ablation runner.

mod bench;
mod controller;
mod corpus;
mod metrics;
mod stress;

pub use bench::{ablate, AblationRow, AblationTable, Benchmark, EvalReport, QuestionResult, Variant};
pub use controller::{plan_facet_overlap, run_controller, PageIndex, StepKind, TraceStep, Trajectory, UNKNOWN_ANSWER};
pub use corpus::{
    build_sim_corpus, training_tuples, FUSION_ALPHA, PageAnnotation, SimCorpus, SimPage, SimQuestion, SubjectFacets, ASPECTS, METRICS,
};
pub use metrics::{exact_match, f1, ndcg_at_10, normalize_answer, page_hops, qp_at_3};
pub use stress::{invert_stress, stress_transform, StressKind, StressMapping};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Corpus shape and controller limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    pub seed: u64,
    pub n_topics: usize,
    pub questions_per_topic: usize,
    pub n_pages: usize,
    pub hop_budget: usize,
    /// Pages taken from each query's ranking per round.
    pub visits_per_query: usize,
    /// Required mean hybrid-score gap between an answer page and its best
    /// distractor under the fully faceted query.
    pub min_gap: f64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            n_topics: 25,
            questions_per_topic: 8,
            n_pages: 350,
            hop_budget: 12,
            visits_per_query: 1,
            min_gap: 0.02,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_pages < 10 {
            return Err(Error::SpecInfeasible(format!("n_pages {} < 10", self.n_pages)));
        }
        if self.n_topics == 0 || self.n_pages < 2 * self.n_topics {
            return Err(Error::SpecInfeasible(format!(
                "{} pages cannot hold an answer page and a distractor for each of {} topics",
                self.n_pages, self.n_topics
            )));
        }
        if self.questions_per_topic == 0 || self.questions_per_topic > METRICS.len() {
            return Err(Error::SpecInfeasible(format!(
                "questions_per_topic must lie in 1..={}",
                METRICS.len()
            )));
        }
        if self.n_topics > corpus::max_topics() {
            return Err(Error::SpecInfeasible(format!("at most {} topics are supported", corpus::max_topics())));
        }
        if self.visits_per_query == 0 {
            return Err(Error::InvalidConfig("visits_per_query must be positive".into()));
        }
        if !self.min_gap.is_finite() {
            return Err(Error::InvalidConfig("min_gap must be finite".into()));
        }
        Ok(())
    }

    pub fn n_questions(&self) -> usize {
        self.n_topics * self.questions_per_topic
    }
}
