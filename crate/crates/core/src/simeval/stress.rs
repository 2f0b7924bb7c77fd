//! Leakage stress transforms. Each returns the mapping needed to invert it.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{entity_pool, render_question, SimCorpus};
use crate::error::{Error, Result};
use crate::facets::{shift_date, FacetTables};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StressKind {
    EntityRandomized,
    TimeShifted { years: i32 },
    TemplateRemix,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StressMapping {
    pub kind: StressKind,
    /// old entity → new entity
    pub entities: BTreeMap<String, String>,
    /// page id → clause order before the transform
    pub clause_orders: BTreeMap<String, Vec<usize>>,
    /// question id → template before the transform
    pub templates: BTreeMap<String, usize>,
}

fn check_annotations(corpus: &SimCorpus) -> Result<()> {
    match corpus.pages.iter().find(|p| p.annotation.is_none()) {
        Some(p) => Err(Error::MissingAnnotations(p.page_id.clone())),
        None => Ok(()),
    }
}

fn rename_entities(corpus: &mut SimCorpus, map: &BTreeMap<String, String>, tables: &FacetTables) {
    for (e, _) in &mut corpus.subjects {
        if let Some(n) = map.get(e) {
            *e = n.clone();
        }
    }
    for p in &mut corpus.pages {
        if let Some(a) = &mut p.annotation {
            if let Some(n) = map.get(&a.entity) {
                a.entity = n.clone();
            }
        }
        p.rerender(tables);
    }
    for q in &mut corpus.questions {
        if let Some(n) = map.get(&q.entity) {
            q.entity = n.clone();
            q.text = render_question(&q.entity, &q.metric, q.template);
        }
    }
}

fn shift_years(corpus: &mut SimCorpus, years: i32, tables: &FacetTables) {
    for (_, f) in &mut corpus.subjects {
        f.year += years;
    }
    for p in &mut corpus.pages {
        if let Some(a) = &mut p.annotation {
            a.facets.year += years;
            a.filed = shift_date(a.filed, years);
        }
        p.rerender(tables);
    }
}

/// Applies one transform consistently to questions and pages; the answer
/// key is unchanged.
pub fn stress_transform(corpus: &SimCorpus, kind: StressKind, seed: u64, tables: &FacetTables) -> Result<(SimCorpus, StressMapping)> {
    check_annotations(corpus)?;
    let mut out = corpus.clone();
    let mut mapping = StressMapping {
        kind,
        entities: BTreeMap::new(),
        clause_orders: BTreeMap::new(),
        templates: BTreeMap::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        StressKind::EntityRandomized => {
            let n = corpus.subjects.len();
            let mut reserve: Vec<String> = entity_pool(corpus.seed).into_iter().skip(n).collect();
            reserve.shuffle(&mut rng);
            if reserve.len() < n {
                return Err(Error::SpecInfeasible("entity reserve pool too small".into()));
            }
            mapping.entities = corpus.subjects.iter().map(|(e, _)| e.clone()).zip(reserve).collect();
            rename_entities(&mut out, &mapping.entities, tables);
        }
        StressKind::TimeShifted { years } => shift_years(&mut out, years, tables),
        StressKind::TemplateRemix => {
            for p in &mut out.pages {
                let a = p.annotation.as_mut().expect("checked");
                mapping.clause_orders.insert(p.page_id.clone(), a.clause_order.clone());
                a.clause_order.shuffle(&mut rng);
                p.rerender(tables);
            }
            for q in &mut out.questions {
                mapping.templates.insert(q.qid.clone(), q.template);
                q.template = (q.template + 1) % 2;
                q.text = render_question(&q.entity, &q.metric, q.template);
            }
        }
    }
    out.validate()?;
    Ok((out, mapping))
}

/// Undoes [`stress_transform`] given its mapping.
pub fn invert_stress(corpus: &SimCorpus, mapping: &StressMapping, tables: &FacetTables) -> Result<SimCorpus> {
    check_annotations(corpus)?;
    let mut out = corpus.clone();
    match mapping.kind {
        StressKind::EntityRandomized => {
            let inverse: BTreeMap<String, String> = mapping.entities.iter().map(|(a, b)| (b.clone(), a.clone())).collect();
            rename_entities(&mut out, &inverse, tables);
        }
        StressKind::TimeShifted { years } => shift_years(&mut out, -years, tables),
        StressKind::TemplateRemix => {
            for p in &mut out.pages {
                if let (Some(a), Some(order)) = (p.annotation.as_mut(), mapping.clause_orders.get(&p.page_id)) {
                    a.clause_order = order.clone();
                }
                p.rerender(tables);
            }
            for q in &mut out.questions {
                if let Some(t) = mapping.templates.get(&q.qid) {
                    q.template = *t;
                    q.text = render_question(&q.entity, &q.metric, q.template);
                }
            }
        }
    }
    Ok(out)
}
