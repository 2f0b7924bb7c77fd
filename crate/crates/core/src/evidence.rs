//! Per-cluster evidence pools: hybrid dense/BM25 scoring, MMR diversity,
//! source caps and quote de-duplication.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::canonicalize::{QaTuple, SourceRef};
use crate::clustering::Cluster;
use crate::error::{Error, Result};
use crate::textmodel::{
    bm25_score, cosine, min_max_normalize, shingle_jaccard, tokenize, Bm25Params, CorpusStats,
    EmbeddingVector, TextEncoder,
};

/// Where an item's text came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    /// A citation carrying its own quote.
    Quote,
    /// A citation without a quote; text is the citing member's answer.
    Citation,
    /// A member answer. Never part of a rule's citation set.
    Answer,
}

impl EvidenceKind {
    pub fn is_citation(self) -> bool {
        !matches!(self, EvidenceKind::Answer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub source: SourceRef,
    pub text: String,
    pub kind: EvidenceKind,
    pub member_id: String,
    /// Min-max normalized within the pool.
    pub dense_score: f64,
    /// Min-max normalized within the pool.
    pub lexical_score: f64,
    pub fused_score: f64,
}

pub const SHINGLE_N: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvidenceParams {
    pub alpha: f64,
    pub top_n: usize,
    pub mmr_lambda: f64,
    pub mmr_n: usize,
    pub jaccard_threshold: f64,
    pub per_source_cap: usize,
}

impl Default for EvidenceParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            top_n: 32,
            mmr_lambda: 0.7,
            mmr_n: 8,
            jaccard_threshold: 0.8,
            per_source_cap: 2,
        }
    }
}

impl EvidenceParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig("evidence alpha must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.mmr_lambda) {
            return Err(Error::InvalidConfig("mmr lambda must lie in [0, 1]".into()));
        }
        if !(self.jaccard_threshold > 0.0 && self.jaccard_threshold <= 1.0) {
            return Err(Error::InvalidConfig("jaccard threshold must lie in (0, 1]".into()));
        }
        if self.top_n == 0 || self.mmr_n == 0 || self.per_source_cap == 0 {
            return Err(Error::InvalidConfig("evidence counts must be positive".into()));
        }
        Ok(())
    }
}

struct RawItem {
    source: SourceRef,
    text: String,
    kind: EvidenceKind,
    member_id: String,
    weight: f64,
}

fn pool_of(cluster: &Cluster, tuples: &BTreeMap<String, QaTuple>) -> Result<Vec<RawItem>> {
    let mut pool = Vec::new();
    for m in &cluster.members {
        let t = tuples
            .get(&m.id)
            .ok_or_else(|| Error::UnknownDoc(m.id.clone()))?;
        for c in &t.citations {
            let (text, kind) = match &c.quote {
                Some(q) if !q.trim().is_empty() => (q.clone(), EvidenceKind::Quote),
                _ => (t.answer_or_question().to_string(), EvidenceKind::Citation),
            };
            pool.push(RawItem {
                source: c.clone(),
                text,
                kind,
                member_id: t.id.clone(),
                weight: m.weight,
            });
        }
        if let Some(a) = t.answer.as_deref().filter(|a| !a.trim().is_empty()) {
            pool.push(RawItem {
                source: SourceRef::new(format!("answer:{}", t.id)),
                text: a.to_string(),
                kind: EvidenceKind::Answer,
                member_id: t.id.clone(),
                weight: m.weight,
            });
        }
    }
    Ok(pool)
}

/// Raw (pre-normalization) fusion inputs, exposed for oracle checks.
pub fn fuse_scores(dense: &[f64], lexical: &[f64], alpha: f64) -> Vec<(f64, f64, f64)> {
    let d = min_max_normalize(dense);
    let l = min_max_normalize(lexical);
    d.into_iter()
        .zip(l)
        .map(|(d, l)| (d, l, alpha * d + (1.0 - alpha) * l))
        .collect()
}

/// Scores every citation, quote and answer of the cluster's members (weighted
/// by membership) against the centroid (dense) and the medoid question
/// (BM25), fuses the normalized scores and returns the `top_n` best.
pub fn aggregate_evidence(
    cluster: &Cluster,
    tuples: &BTreeMap<String, QaTuple>,
    encoder: &dyn TextEncoder,
    alpha: f64,
    top_n: usize,
) -> Result<Vec<EvidenceItem>> {
    let pool = pool_of(cluster, tuples)?;
    if pool.is_empty() {
        return Err(Error::EmptyCluster(cluster.cluster_id.clone()));
    }
    let medoid = tuples
        .get(&cluster.medoid_id)
        .ok_or_else(|| Error::UnknownDoc(cluster.medoid_id.clone()))?;
    let query = tokenize(&medoid.question);
    let stats = CorpusStats::from_docs(pool.iter().enumerate().map(|(i, r)| (i.to_string(), &r.text)));
    let mut dense = Vec::with_capacity(pool.len());
    let mut lexical = Vec::with_capacity(pool.len());
    for (i, r) in pool.iter().enumerate() {
        let e = encoder.embed(&r.text)?;
        dense.push(cosine(&e, &cluster.centroid)? * r.weight);
        lexical.push(bm25_score(&query, &i.to_string(), &stats, Bm25Params::default())? * r.weight);
    }
    let mut items: Vec<EvidenceItem> = pool
        .into_iter()
        .zip(fuse_scores(&dense, &lexical, alpha))
        .map(|(r, (d, l, f))| EvidenceItem {
            source: r.source,
            text: r.text,
            kind: r.kind,
            member_id: r.member_id,
            dense_score: d,
            lexical_score: l,
            fused_score: f,
        })
        .collect();
    sort_by_score(&mut items);
    items.truncate(top_n);
    Ok(items)
}

fn sort_by_score(items: &mut [EvidenceItem]) {
    items.sort_by(|a, b| {
        b.fused_score
            .total_cmp(&a.fused_score)
            .then_with(|| a.source.url_or_name.cmp(&b.source.url_or_name))
            .then_with(|| a.member_id.cmp(&b.member_id))
    });
}

pub fn embed_items(items: &[EvidenceItem], encoder: &dyn TextEncoder) -> Result<Vec<EmbeddingVector>> {
    items.iter().map(|i| encoder.embed(&i.text)).collect()
}

/// Greedy MMR over `relevance` with cosine redundancy; returns chosen indices
/// in selection order. Ties go to the lower index.
pub fn mmr_indices(
    relevance: &[f64],
    embeddings: &[EmbeddingVector],
    lambda: f64,
    n: usize,
) -> Result<Vec<usize>> {
    if relevance.len() != embeddings.len() {
        return Err(Error::DimensionMismatch {
            left: relevance.len(),
            right: embeddings.len(),
        });
    }
    let mut chosen: Vec<usize> = Vec::new();
    let mut max_sim = vec![f64::NEG_INFINITY; relevance.len()];
    while chosen.len() < n.min(relevance.len()) {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..relevance.len() {
            if chosen.contains(&i) {
                continue;
            }
            let redundancy = if chosen.is_empty() { 0.0 } else { max_sim[i] };
            let score = lambda * relevance[i] - (1.0 - lambda) * redundancy;
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, i));
            }
        }
        let (_, pick) = best.expect("candidates remain");
        chosen.push(pick);
        for i in 0..relevance.len() {
            if !chosen.contains(&i) {
                let s = cosine(&embeddings[i], &embeddings[pick])?;
                max_sim[i] = max_sim[i].max(s);
            }
        }
    }
    Ok(chosen)
}

/// Maximal marginal relevance with `fused_score` as relevance.
pub fn mmr_select(
    items: &[EvidenceItem],
    embeddings: &[EmbeddingVector],
    lambda: f64,
    n: usize,
) -> Result<Vec<EvidenceItem>> {
    let rel: Vec<f64> = items.iter().map(|i| i.fused_score).collect();
    Ok(mmr_indices(&rel, embeddings, lambda, n)?
        .into_iter()
        .map(|i| items[i].clone())
        .collect())
}

/// Scans in score order, dropping near-duplicate texts and items beyond the
/// per-source cap. Citations without their own quote borrow answer text and
/// are exempt from the text check.
pub fn dedup_quotes(items: &[EvidenceItem], jaccard_threshold: f64, per_source_cap: usize) -> Result<Vec<EvidenceItem>> {
    let mut sorted = items.to_vec();
    sort_by_score(&mut sorted);
    let mut kept: Vec<EvidenceItem> = Vec::new();
    let mut per_source: HashMap<String, usize> = HashMap::new();
    for item in sorted {
        let count = per_source.entry(item.source.url_or_name.clone()).or_default();
        if *count >= per_source_cap {
            continue;
        }
        let mut duplicate = false;
        if item.kind != EvidenceKind::Citation {
            for k in kept.iter().filter(|k| k.kind != EvidenceKind::Citation) {
                if shingle_jaccard(&item.text, &k.text, SHINGLE_N)? >= jaccard_threshold {
                    duplicate = true;
                    break;
                }
            }
        }
        if !duplicate {
            *count += 1;
            kept.push(item);
        }
    }
    Ok(kept)
}

/// aggregate → dedup → MMR, the full per-cluster evidence step.
pub fn select_evidence(
    cluster: &Cluster,
    tuples: &BTreeMap<String, QaTuple>,
    encoder: &dyn TextEncoder,
    params: &EvidenceParams,
) -> Result<Vec<EvidenceItem>> {
    let pool = aggregate_evidence(cluster, tuples, encoder, params.alpha, params.top_n)?;
    let pool = dedup_quotes(&pool, params.jaccard_threshold, params.per_source_cap)?;
    let emb = embed_items(&pool, encoder)?;
    mmr_select(&pool, &emb, params.mmr_lambda, params.mmr_n)
}
