//! Multi-query plan generation conditioned on retrieved experiences.
//!
//! The reference planner slots facet values into the question in a fixed
//! priority order (time, region, policy, industry). When the gate falls back
//! it emits generic expansions only.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::distill::ExperienceRule;
use crate::error::{Error, Result};
use crate::facets::{facet_indicators, mentions_keyword, FacetIndicatorMap, FacetKind, FacetSet, FacetTables};
use crate::remote::{endpoint_from_env, post_json, ENV_PLANNER};
use crate::retrieval::{GateDecision, RetrievedExperiences};
use crate::store::ExperienceBaseVersion;
use crate::textmodel::tokenize;
use crate::training::{coverage_score, sequence_log_prob, TokenModel};

/// Facet-free expansions used for padding and for fallback plans.
pub const GENERIC_EXPANSIONS: [&str; 5] = ["overview", "explained", "guide", "details", "examples"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    #[default]
    Reference,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub m: usize,
    pub mode: PlanMode,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            m: 3,
            mode: PlanMode::Reference,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidConfig("planner.m must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub queries: Vec<String>,
    pub m: usize,
    pub active_facets: FacetIndicatorMap,
    pub gate_decision: GateDecision,
    /// Rule ids that contributed facets, in score order.
    pub provenance: Vec<String>,
}

impl QueryPlan {
    /// Structural checks: size, `z_1 = q`, non-empty distinct queries, facet
    /// keywords in `z_2..z_M` on proceed and none added on fallback.
    pub fn validate(&self, q: &str, tables: &FacetTables) -> Result<()> {
        if self.queries.len() != self.m || self.m == 0 {
            return Err(Error::PlanInvalid(format!("expected {} queries, got {}", self.m, self.queries.len())));
        }
        if self.queries[0] != q {
            return Err(Error::PlanInvalid("first query must be the question verbatim".into()));
        }
        let mut seen = BTreeSet::new();
        for z in &self.queries {
            if z.trim().is_empty() {
                return Err(Error::PlanInvalid("empty query".into()));
            }
            if !seen.insert(z.as_str()) {
                return Err(Error::PlanInvalid(format!("duplicate query `{z}`")));
            }
        }
        match self.gate_decision {
            GateDecision::Proceed if !self.active_facets.is_empty() => {
                let kws = self.active_facets.all_keywords();
                if let Some(z) = self.queries[1..].iter().find(|z| !kws.iter().any(|k| mentions_keyword(z, k))) {
                    return Err(Error::PlanInvalid(format!("query `{z}` carries no active facet")));
                }
            }
            GateDecision::Proceed => {}
            GateDecision::Fallback => {
                if !self.active_facets.is_empty() {
                    return Err(Error::PlanInvalid("fallback plan with active facets".into()));
                }
                let base: BTreeSet<String> = tokenize(q).into_iter().collect();
                for z in &self.queries {
                    if let Some(t) = tokenize(z)
                        .into_iter()
                        .find(|t| !base.contains(t) && tables.facet_kind_of_token(t).is_some())
                    {
                        return Err(Error::PlanInvalid(format!("fallback query adds facet token `{t}`")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Retrieved rules in score order, resolved through aliases.
fn retrieved_rules<'a>(retrieved: &RetrievedExperiences, base: &'a ExperienceBaseVersion) -> Vec<&'a ExperienceRule> {
    let mut seen = BTreeSet::new();
    retrieved
        .items
        .iter()
        .filter_map(|(id, _)| base.resolve(id))
        .filter(|r| seen.insert(r.rule_id.clone()))
        .collect()
}

fn stem(q: &str) -> String {
    q.trim().trim_end_matches(['?', '.', '!']).trim_end().to_string()
}

fn compose(q: &str, parts: &[&str]) -> String {
    let mut s = stem(q);
    for p in parts {
        s.push(' ');
        s.push_str(p);
    }
    s
}

/// Facet-value combinations in slotting order; each entry is one query's
/// display strings.
fn combinations(phi: &FacetIndicatorMap) -> Vec<Vec<String>> {
    let kinds: Vec<FacetKind> = FacetKind::ALL.into_iter().filter(|k| phi.facets.contains_key(k)).collect();
    let top = |k: &FacetKind| phi.facets[k].display[0].clone();
    let mut out: Vec<Vec<String>> = Vec::new();
    out.push(kinds.iter().map(top).collect());
    if kinds.len() >= 2 {
        for drop in (0..kinds.len()).rev() {
            out.push(kinds.iter().enumerate().filter(|(i, _)| *i != drop).map(|(_, k)| top(k)).collect());
        }
    }
    for (i, k) in kinds.iter().enumerate() {
        for alt in phi.facets[k].display.iter().skip(1) {
            out.push(
                kinds
                    .iter()
                    .enumerate()
                    .map(|(j, kk)| if i == j { alt.clone() } else { top(kk) })
                    .collect(),
            );
        }
    }
    for k in &kinds {
        out.push(vec![top(k)]);
    }
    out
}

/// Deterministic template plan.
pub fn reference_plan(q: &str, phi: FacetIndicatorMap, decision: GateDecision, provenance: Vec<String>, m: usize) -> Result<QueryPlan> {
    if q.trim().is_empty() {
        return Err(Error::EmptyQuestion);
    }
    if m == 0 {
        return Err(Error::InvalidConfig("planner.m must be at least 1".into()));
    }
    let mut queries = vec![q.to_string()];
    let push = |queries: &mut Vec<String>, z: String| {
        if queries.len() < m && !queries.contains(&z) {
            queries.push(z);
        }
    };
    if decision == GateDecision::Proceed && !phi.is_empty() {
        let combos = combinations(&phi);
        for c in &combos {
            let parts: Vec<&str> = c.iter().map(String::as_str).collect();
            push(&mut queries, compose(q, &parts));
        }
        let full: Vec<&str> = combos[0].iter().map(String::as_str).collect();
        for g in GENERIC_EXPANSIONS {
            let mut parts = full.clone();
            parts.push(g);
            push(&mut queries, compose(q, &parts));
        }
    } else {
        for g in GENERIC_EXPANSIONS {
            push(&mut queries, compose(q, &[g]));
        }
    }
    let mut n = 2;
    while queries.len() < m {
        let tail = format!("{} {n}", GENERIC_EXPANSIONS[0]);
        let z = if decision == GateDecision::Proceed && !phi.is_empty() {
            let combos = combinations(&phi);
            let parts: Vec<&str> = combos[0].iter().map(String::as_str).chain([tail.as_str()]).collect();
            compose(q, &parts)
        } else {
            compose(q, &[&tail])
        };
        push(&mut queries, z);
        n += 1;
    }
    let (active_facets, provenance) = match decision {
        GateDecision::Proceed => (phi, provenance),
        GateDecision::Fallback => (FacetIndicatorMap::default(), Vec::new()),
    };
    Ok(QueryPlan {
        queries,
        m,
        active_facets,
        gate_decision: decision,
        provenance,
    })
}

#[derive(Serialize)]
struct PlanRequest<'a> {
    question: &'a str,
    rules: Vec<PlanRule<'a>>,
    facet_keywords: Vec<String>,
    #[serde(rename = "M")]
    m: usize,
}

#[derive(Serialize)]
struct PlanRule<'a> {
    text: &'a str,
    facets: &'a FacetSet,
}

#[derive(Deserialize)]
struct PlanResponse {
    queries: Vec<String>,
}

/// Plan generation for one question.
pub fn generate_plan(
    q: &str,
    retrieved: &RetrievedExperiences,
    base: &ExperienceBaseVersion,
    tables: &FacetTables,
    cfg: &PlannerConfig,
) -> Result<QueryPlan> {
    if q.trim().is_empty() {
        return Err(Error::EmptyQuestion);
    }
    cfg.validate()?;
    let rules = retrieved_rules(retrieved, base);
    let decision = if rules.is_empty() {
        GateDecision::Fallback
    } else {
        retrieved.gate_decision
    };
    let phi = match decision {
        GateDecision::Proceed => facet_indicators(&rules.iter().map(|r| (*r).clone()).collect::<Vec<_>>(), tables)?,
        GateDecision::Fallback => FacetIndicatorMap::default(),
    };
    let provenance: Vec<String> = rules.iter().map(|r| r.rule_id.clone()).collect();
    let reference = reference_plan(q, phi.clone(), decision, provenance.clone(), cfg.m)?;
    if cfg.mode == PlanMode::Reference {
        return Ok(reference);
    }
    let endpoint = endpoint_from_env(ENV_PLANNER)
        .ok_or_else(|| Error::InvalidConfig(format!("external planner mode needs {ENV_PLANNER}")))?;
    let request = PlanRequest {
        question: q,
        rules: rules
            .iter()
            .map(|r| PlanRule {
                text: r.text(),
                facets: &r.facets,
            })
            .collect(),
        facet_keywords: phi.all_keywords().into_iter().collect(),
        m: cfg.m,
    };
    for _ in 0..2 {
        let Ok(resp) = post_json::<_, PlanResponse>(&endpoint, &request, Duration::from_secs(30), 0) else {
            continue;
        };
        let plan = QueryPlan {
            queries: resp.queries,
            ..reference.clone()
        };
        if plan.validate(q, tables).is_ok() {
            return Ok(plan);
        }
    }
    Ok(reference)
}

/// Sum of query log-probabilities plus the coverage bonus.
pub fn score_plan(plan: &QueryPlan, phi: &FacetIndicatorMap, model: &dyn TokenModel) -> Result<f64> {
    model.check_normalized()?;
    let lp: f64 = plan.queries.iter().map(|z| sequence_log_prob(&tokenize(z), model)).sum();
    Ok(lp + coverage_score(&plan.queries, phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facets::TimeFacet;

    fn phi(region: &str, year: i32) -> FacetIndicatorMap {
        let mut m = FacetIndicatorMap::default();
        m.add(
            &FacetSet {
                region: Some(region.into()),
                time: Some(TimeFacet::year(year)),
                ..Default::default()
            },
            &FacetTables::default(),
        );
        m
    }

    #[test]
    fn slotting_order() {
        let q = "What capital ratio should small banks hold?";
        let p = reference_plan(q, phi("ontario", 2023), GateDecision::Proceed, vec![], 3).unwrap();
        assert_eq!(p.queries[0], q);
        assert!(p.queries[1].contains("ontario"));
        assert!(p.queries[2].contains("2023"));
        p.validate(q, &FacetTables::default()).unwrap();
    }

    #[test]
    fn every_later_query_carries_a_facet() {
        let q = "loan limits";
        for m in 2..9 {
            let p = reference_plan(q, phi("quebec", 2020), GateDecision::Proceed, vec![], m).unwrap();
            assert_eq!(p.queries.len(), m);
            p.validate(q, &FacetTables::default()).unwrap();
        }
    }

    #[test]
    fn fallback_has_no_facets() {
        let q = "How do I diversify?";
        let p = reference_plan(q, phi("ontario", 2023), GateDecision::Fallback, vec!["R000001".into()], 4).unwrap();
        assert!(p.active_facets.is_empty());
        assert!(p.provenance.is_empty());
        for z in &p.queries {
            assert!(!z.contains("ontario") && !z.contains("2023"));
        }
        p.validate(q, &FacetTables::default()).unwrap();
    }

    #[test]
    fn single_query_plan() {
        let p = reference_plan("q?", phi("ontario", 2023), GateDecision::Proceed, vec![], 1).unwrap();
        assert_eq!(p.queries, vec!["q?".to_string()]);
    }

    #[test]
    fn empty_question() {
        assert!(matches!(
            reference_plan("  ", FacetIndicatorMap::default(), GateDecision::Fallback, vec![], 3),
            Err(Error::EmptyQuestion)
        ));
    }
}
