//! Experience retrieval, the confidence gate, and hard-negative mining.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::RuleTextMode;
use crate::error::{Error, Result};
use crate::store::ExperienceBaseVersion;
use crate::textmodel::{dot, l2_norm, EmbeddingVector, TextEncoder};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub k: usize,
    pub theta: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self { k: 5, theta: 0.3 }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("gate.k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidConfig(format!("gate.theta {} outside [0, 1]", self.theta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDecision {
    Proceed,
    Fallback,
}

/// Top-k experiences with the gate outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedExperiences {
    /// `(rule_id, score)`, score descending.
    pub items: Vec<(String, f64)>,
    pub k: usize,
    pub gate_confidence: f64,
    pub gate_decision: GateDecision,
}

impl RetrievedExperiences {
    pub fn from_ranked(mut ranked: Vec<(String, f64)>, cfg: &GateConfig) -> Self {
        ranked.truncate(cfg.k);
        let scores: Vec<f64> = ranked.iter().map(|(_, s)| *s).collect();
        let (gate_confidence, gate_decision) = gate_scores(&scores, cfg.theta);
        Self {
            items: ranked,
            k: cfg.k,
            gate_confidence,
            gate_decision,
        }
    }

    pub fn rule_ids(&self) -> Vec<&str> {
        self.items.iter().map(|(id, _)| id.as_str()).collect()
    }
}

/// Mean score and decision: fallback iff the list is empty or the mean is
/// below `theta`.
pub fn gate_scores(scores: &[f64], theta: f64) -> (f64, GateDecision) {
    if scores.is_empty() {
        return (0.0, GateDecision::Fallback);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let decision = if mean < theta {
        GateDecision::Fallback
    } else {
        GateDecision::Proceed
    };
    (mean, decision)
}

/// Recomputes and records the gate decision on `retrieved`.
pub fn gate(retrieved: &mut RetrievedExperiences, cfg: &GateConfig) -> GateDecision {
    let scores: Vec<f64> = retrieved.items.iter().map(|(_, s)| *s).collect();
    let (c, d) = gate_scores(&scores, cfg.theta);
    retrieved.gate_confidence = c;
    retrieved.gate_decision = d;
    d
}

/// Applies `P` and renormalizes.
pub fn project(x: &[f64], projection: Option<&DMatrix<f64>>) -> Result<Vec<f64>> {
    let y = match projection {
        None => x.to_vec(),
        Some(p) => {
            if p.ncols() != x.len() {
                return Err(Error::DimensionMismatch {
                    left: p.ncols(),
                    right: x.len(),
                });
            }
            (p * DVector::from_column_slice(x)).as_slice().to_vec()
        }
    };
    let n = l2_norm(&y);
    if n < 1e-12 {
        return Err(Error::DegenerateVector);
    }
    Ok(y.into_iter().map(|v| v / n).collect())
}

/// Scores every candidate against `query` after projection; sorted by score
/// descending, ties by id.
pub fn rank_vectors<'a, I>(query: &[f64], candidates: I, projection: Option<&DMatrix<f64>>) -> Result<Vec<(String, f64)>>
where
    I: IntoIterator<Item = (&'a String, &'a EmbeddingVector)>,
{
    let q = project(query, projection)?;
    let mut out = Vec::new();
    for (id, v) in candidates {
        let r = project(v.as_slice(), projection)?;
        out.push((id.clone(), dot(&q, &r)));
    }
    sort_ranked(&mut out);
    Ok(out)
}

pub(crate) fn sort_ranked(v: &mut [(String, f64)]) {
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Exact-search index over the rules of one base version.
#[derive(Debug, Clone)]
pub struct RuleIndex {
    pub ids: Vec<String>,
    pub vectors: Vec<EmbeddingVector>,
    projection: Option<DMatrix<f64>>,
    projected: Vec<Vec<f64>>,
}

impl RuleIndex {
    pub fn build(base: &ExperienceBaseVersion, encoder: &dyn TextEncoder, mode: RuleTextMode) -> Result<Self> {
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        for r in base.rules.values() {
            let text = match mode {
                RuleTextMode::Sentence => r.rule.core_guidance.clone(),
                RuleTextMode::Document => r.rule.full_text(),
            };
            ids.push(r.rule_id.clone());
            vectors.push(encoder.embed(&text)?);
        }
        Self::from_vectors(ids, vectors, None)
    }

    pub fn from_vectors(ids: Vec<String>, vectors: Vec<EmbeddingVector>, projection: Option<DMatrix<f64>>) -> Result<Self> {
        let projected = vectors
            .iter()
            .map(|v| project(v.as_slice(), projection.as_ref()))
            .collect::<Result<_>>()?;
        Ok(Self {
            ids,
            vectors,
            projection,
            projected,
        })
    }

    pub fn with_projection(self, projection: Option<DMatrix<f64>>) -> Result<Self> {
        Self::from_vectors(self.ids, self.vectors, projection)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Every rule scored against an already embedded query.
    pub fn score_all(&self, query: &EmbeddingVector) -> Result<Vec<(String, f64)>> {
        if self.is_empty() {
            return Ok(Vec::new());
        }
        let q = project(query.as_slice(), self.projection.as_ref())?;
        let mut out: Vec<(String, f64)> = self
            .ids
            .iter()
            .zip(&self.projected)
            .map(|(id, r)| (id.clone(), dot(&q, r)))
            .collect();
        sort_ranked(&mut out);
        Ok(out)
    }

    pub fn topk(&self, q: &str, encoder: &dyn TextEncoder, cfg: &GateConfig) -> Result<RetrievedExperiences> {
        if q.trim().is_empty() {
            return Err(Error::EmptyQuestion);
        }
        let ranked = self.score_all(&encoder.embed(q)?)?;
        Ok(RetrievedExperiences::from_ranked(ranked, cfg))
    }
}

/// Builds an index over `base` and returns its top-k for `q`.
pub fn topk_experiences(
    q: &str,
    base: &ExperienceBaseVersion,
    encoder: &dyn TextEncoder,
    cfg: &GateConfig,
    projection: Option<&DMatrix<f64>>,
) -> Result<RetrievedExperiences> {
    cfg.validate()?;
    let index = RuleIndex::build(base, encoder, RuleTextMode::Sentence)?.with_projection(projection.cloned())?;
    index.topk(q, encoder, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedNegatives {
    pub negatives: Vec<String>,
    /// Fewer than requested survived the filters.
    pub insufficient: bool,
}

/// From a full ranking: take the top `pool_size`, drop positives and anything
/// within `margin` of a positive's score, return the best `n_neg`.
pub fn mine_from_ranking(
    ranked: &[(String, f64)],
    positives: &BTreeSet<String>,
    pool_size: usize,
    margin: f64,
    n_neg: usize,
) -> Result<MinedNegatives> {
    if positives.is_empty() {
        return Err(Error::InvalidConfig("hard-negative mining needs at least one positive".into()));
    }
    if pool_size < n_neg {
        return Err(Error::InvalidConfig("pool_size must be at least n_neg".into()));
    }
    let positive_scores: Vec<f64> = ranked
        .iter()
        .filter(|(id, _)| positives.contains(id))
        .map(|(_, s)| *s)
        .collect();
    let negatives: Vec<String> = ranked
        .iter()
        .take(pool_size)
        .filter(|(id, s)| !positives.contains(id) && positive_scores.iter().all(|p| (s - p).abs() >= margin))
        .take(n_neg)
        .map(|(id, _)| id.clone())
        .collect();
    Ok(MinedNegatives {
        insufficient: negatives.len() < n_neg,
        negatives,
    })
}

pub fn mine_hard_negatives(
    q: &str,
    positives: &BTreeSet<String>,
    index: &RuleIndex,
    encoder: &dyn TextEncoder,
    pool_size: usize,
    margin: f64,
    n_neg: usize,
) -> Result<MinedNegatives> {
    let ranked = index.score_all(&encoder.embed(q)?)?;
    mine_from_ranking(&ranked, positives, pool_size, margin, n_neg)
}
