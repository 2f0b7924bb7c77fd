//! Deterministic browsing controller: rank pages per plan query, visit in
//! rounds, follow facet-aligned out-links, stop on the answer signature.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::corpus::{SimCorpus, SimPage, SimQuestion};
use crate::error::Result;
use crate::facets::{FacetIndicatorMap, FacetKind};
use crate::planner::QueryPlan;
use crate::textmodel::{bm25_score, cosine, min_max_normalize, tokenize, Bm25Params, CorpusStats, EmbeddingVector, TextEncoder};

pub const UNKNOWN_ANSWER: &str = "unknown";

/// Hybrid BM25 + dense index over the pages of one corpus.
pub struct PageIndex {
    pub ids: Vec<String>,
    stats: CorpusStats,
    vectors: Vec<EmbeddingVector>,
    pub alpha: f64,
}

impl PageIndex {
    pub fn build(corpus: &SimCorpus, encoder: &dyn TextEncoder, alpha: f64) -> Result<Self> {
        let ids: Vec<String> = corpus.pages.iter().map(|p| p.page_id.clone()).collect();
        let texts: Vec<String> = corpus.pages.iter().map(SimPage::text).collect();
        let stats = CorpusStats::from_docs(ids.iter().cloned().zip(texts.iter()));
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let vectors = encoder.embed_batch(&refs)?;
        Ok(Self {
            ids,
            stats,
            vectors,
            alpha,
        })
    }

    /// Every page by fused score, descending; ties by page id.
    pub fn rank(&self, query: &str, encoder: &dyn TextEncoder) -> Result<Vec<(String, f64)>> {
        let qv = encoder.embed(query)?;
        let terms = tokenize(query);
        let mut dense = Vec::with_capacity(self.ids.len());
        let mut lexical = Vec::with_capacity(self.ids.len());
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            dense.push(cosine(&qv, v)?);
            lexical.push(bm25_score(&terms, id, &self.stats, Bm25Params::default())?);
        }
        let (d, l) = (min_max_normalize(&dense), min_max_normalize(&lexical));
        let mut out: Vec<(String, f64)> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), self.alpha * d[i] + (1.0 - self.alpha) * l[i]))
            .collect();
        crate::retrieval::sort_ranked(&mut out);
        Ok(out)
    }
}

/// Number of active plan facets whose values the page carries.
pub fn plan_facet_overlap(page: &SimPage, phi: &FacetIndicatorMap) -> usize {
    FacetKind::ALL
        .into_iter()
        .filter(|k| {
            phi.facets
                .get(k)
                .zip(page.facets.active_value(*k))
                .is_some_and(|(f, v)| f.values.contains(&v))
        })
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// Retrieval step: a page taken from a query's ranking.
    Retrieve,
    /// Reasoning step: an out-link chosen by facet overlap.
    Follow,
    /// Answer emission.
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub kind: StepKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub qid: String,
    pub plan: Vec<String>,
    pub visits: Vec<String>,
    /// Visited pages ranked: answer page first, then facet overlap, then
    /// visit order.
    pub cited: Vec<String>,
    pub answer: String,
    pub steps: Vec<TraceStep>,
}

fn extract_answer(body: &str, qid: &str) -> Option<String> {
    let marker = format!("Record {qid}: ");
    let start = body.find(&marker)? + marker.len();
    let rest = &body[start..];
    let end = rest.find(". ").unwrap_or_else(|| rest.trim_end().trim_end_matches('.').len());
    Some(rest[..end].to_string())
}

struct Walk<'a> {
    corpus: &'a SimCorpus,
    qid: &'a str,
    phi: &'a FacetIndicatorMap,
    budget: usize,
    visits: Vec<String>,
    seen: BTreeSet<String>,
    steps: Vec<TraceStep>,
    answer: Option<(String, String)>,
}

impl Walk<'_> {
    fn done(&self) -> bool {
        self.answer.is_some() || self.seen.len() >= self.budget
    }

    fn visit(&mut self, id: &str, kind: StepKind, query: Option<usize>) {
        self.visits.push(id.to_string());
        self.seen.insert(id.to_string());
        self.steps.push(TraceStep {
            kind,
            query,
            page: Some(id.to_string()),
        });
        if let Some(a) = self.corpus.page(id).and_then(|p| extract_answer(&p.body, self.qid)) {
            self.answer = Some((id.to_string(), a));
        }
    }

    fn overlap(&self, id: &str) -> usize {
        self.corpus.page(id).map_or(0, |p| plan_facet_overlap(p, self.phi))
    }
}

/// Runs one question through the plan under a unique-visit budget.
pub fn run_controller(
    question: &SimQuestion,
    plan: &QueryPlan,
    corpus: &SimCorpus,
    index: &PageIndex,
    encoder: &dyn TextEncoder,
    hop_budget: usize,
    visits_per_query: usize,
) -> Result<Trajectory> {
    let rankings: Vec<Vec<String>> = plan
        .queries
        .iter()
        .map(|z| Ok(index.rank(z, encoder)?.into_iter().map(|(id, _)| id).collect()))
        .collect::<Result<_>>()?;
    let mut w = Walk {
        corpus,
        qid: &question.qid,
        phi: &plan.active_facets,
        budget: hop_budget,
        visits: Vec::new(),
        seen: BTreeSet::new(),
        steps: Vec::new(),
        answer: None,
    };
    let mut cursor = vec![0usize; rankings.len()];
    'outer: while !w.done() && cursor.iter().zip(&rankings).any(|(c, r)| *c < r.len()) {
        for (j, ranking) in rankings.iter().enumerate() {
            let mut taken = 0;
            while taken < visits_per_query && cursor[j] < ranking.len() {
                let id = &ranking[cursor[j]];
                cursor[j] += 1;
                if w.seen.contains(id) {
                    continue;
                }
                w.visit(id, StepKind::Retrieve, Some(j));
                taken += 1;
                if w.done() {
                    break 'outer;
                }
                let here = w.overlap(id);
                let next = ranking[cursor[j]..].iter().find(|n| !w.seen.contains(*n)).map_or(0, |n| w.overlap(n));
                if here > next {
                    let page = corpus.page(id).expect("ranked page exists");
                    let best = page
                        .out_links
                        .iter()
                        .filter(|l| !w.seen.contains(*l))
                        .map(|l| (w.overlap(l), l))
                        .max_by(|a, b| a.0.cmp(&b.0).then_with(|| b.1.cmp(a.1)));
                    if let Some((_, link)) = best {
                        let link = link.clone();
                        w.visit(&link, StepKind::Follow, Some(j));
                        if w.done() {
                            break 'outer;
                        }
                    }
                }
            }
        }
    }

    let found = w.answer.as_ref().map(|(p, _)| p.clone());
    let mut order: Vec<(usize, &String)> = w.visits.iter().enumerate().collect();
    let mut seen = BTreeSet::new();
    order.retain(|(_, v)| seen.insert((*v).clone()));
    order.sort_by_key(|(i, v)| (found.as_deref() != Some(v.as_str()), std::cmp::Reverse(w.overlap(v)), *i));
    let cited = order.into_iter().map(|(_, v)| v.clone()).collect();
    let answer = match &w.answer {
        Some((_, a)) => {
            w.steps.push(TraceStep {
                kind: StepKind::Answer,
                query: None,
                page: found.clone(),
            });
            a.clone()
        }
        None => UNKNOWN_ANSWER.to_string(),
    };
    Ok(Trajectory {
        qid: question.qid.clone(),
        plan: plan.queries.clone(),
        visits: w.visits,
        cited,
        answer,
        steps: w.steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_extraction() {
        let body = "Acme x. Record q0001: 4.2 million. Record q0002: 7.0 million.";
        assert_eq!(extract_answer(body, "q0001").as_deref(), Some("4.2 million"));
        assert_eq!(extract_answer(body, "q0002").as_deref(), Some("7.0 million"));
        assert_eq!(extract_answer(body, "q0003"), None);
    }
}
