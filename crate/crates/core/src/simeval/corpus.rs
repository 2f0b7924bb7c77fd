//! Synthetic corpus: one subject per topic, an answer page carrying the
//! subject's true facets, and distractor pages that share its vocabulary but
//! differ in one or two facets.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimSpec;
use crate::canonicalize::{QaTuple, SourceRef};
use crate::error::{Error, Result};
use crate::facets::{FacetKind, FacetSet, FacetTables, TimeFacet};
use super::controller::PageIndex;
use crate::textmodel::TextEncoder;

/// Dense/lexical mix of the page ranker.
pub const FUSION_ALPHA: f64 = 0.5;

pub const METRICS: [&str; 10] = [
    "revenue",
    "net income",
    "operating margin",
    "headcount",
    "capital ratio",
    "total assets",
    "loan growth",
    "customer count",
    "free cash flow",
    "dividend payout",
];

/// Facet aspects the training tuples talk about, in facet priority order.
pub const ASPECTS: [FacetKind; 4] = [FacetKind::Time, FacetKind::Region, FacetKind::Policy, FacetKind::Industry];

const PREFIXES: [&str; 40] = [
    "Zentrix", "Quorvane", "Altheon", "Brivora", "Calvexa", "Dunmere", "Elystra", "Fenwari", "Galtrix", "Helvane",
    "Istorra", "Jovexel", "Kestrana", "Lumivar", "Morvesk", "Nexalor", "Orbisca", "Pyranth", "Quillmar", "Rovanta",
    "Solvenix", "Tarquell", "Ulvaris", "Vantrel", "Wexmoor", "Xandrel", "Yorvista", "Zephral", "Amberlyx", "Bexaton",
    "Corvalis", "Draymont", "Escavia", "Folmarin", "Grenvik", "Harrowel", "Ivoryth", "Jastrine", "Korrigan", "Lorvain",
];
const SUFFIXES: [&str; 5] = ["Holdings", "Partners", "Group", "Capital", "Works"];

const YEARS: std::ops::RangeInclusive<i32> = 2012..=2024;
const REGIONS: [&str; 20] = [
    "ontario",
    "quebec",
    "british_columbia",
    "alberta",
    "manitoba",
    "nova_scotia",
    "california",
    "texas",
    "new_york",
    "florida",
    "united_kingdom",
    "germany",
    "bavaria",
    "france",
    "japan",
    "singapore",
    "australia",
    "victoria",
    "india",
    "brazil",
];
const POLICIES: [&str; 14] = [
    "bcbs:ii", "bcbs:iii", "bcbs:iv", "ifrs:9", "ifrs:15", "ifrs:16", "ifrs:17", "eu:ii", "cfpb:z", "cfpb:b", "cfpb:e",
    "ich:e6", "ich:q9", "ich:e9",
];
const DOC_KINDS: [&str; 4] = ["annual disclosure", "financial statement", "regulatory filing", "investor update"];
const TUPLES_PER_FAMILY: usize = 3;
const FILLERS: [&str; 4] = ["per the notes", "as filed", "in the annual report", "for all segments"];

pub(super) fn max_topics() -> usize {
    PREFIXES.len() * SUFFIXES.len() / 2
}

/// Every generated entity name; the first `n_topics` are used, the rest form
/// the reserve pool for entity randomization.
pub(super) fn entity_pool(seed: u64) -> Vec<String> {
    let mut names: Vec<String> = SUFFIXES
        .iter()
        .flat_map(|s| PREFIXES.iter().map(move |p| format!("{p} {s}")))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e171);
    names.shuffle(&mut rng);
    // one name per prefix first, so subjects never share a leading token
    let mut seen = BTreeSet::new();
    let (mut first, mut rest): (Vec<String>, Vec<String>) = (Vec::new(), Vec::new());
    for n in names {
        let p = n.split(' ').next().unwrap_or_default().to_string();
        if seen.insert(p) {
            first.push(n);
        } else {
            rest.push(n);
        }
    }
    first.extend(rest);
    first
}

/// A subject's true context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectFacets {
    pub year: i32,
    pub region: String,
    pub policy: String,
    pub industry: String,
}

impl SubjectFacets {
    pub fn facet_set(&self) -> FacetSet {
        FacetSet {
            time: Some(TimeFacet::year(self.year)),
            region: Some(self.region.clone()),
            policy: Some(self.policy.clone()),
            industry: Some(self.industry.clone()),
            extras: BTreeMap::new(),
        }
    }

    /// Query surface form of one facet.
    pub fn display(&self, kind: FacetKind, tables: &FacetTables) -> String {
        match kind {
            FacetKind::Time => self.year.to_string(),
            FacetKind::Region => tables.region_display(&self.region),
            FacetKind::Policy => tables.policy_display(&self.policy),
            FacetKind::Industry => self.industry.clone(),
        }
    }

    fn differs(&self, other: &SubjectFacets) -> usize {
        (self.year != other.year) as usize
            + (self.region != other.region) as usize
            + (self.policy != other.policy) as usize
            + (self.industry != other.industry) as usize
    }
}

/// Structured content a page is rendered from; stress transforms edit this
/// and re-render.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageAnnotation {
    pub subject: usize,
    pub entity: String,
    pub doc_kind: String,
    pub facets: SubjectFacets,
    pub filed: NaiveDate,
    /// `(record id, value)`; answer pages use question ids.
    pub records: Vec<(String, String)>,
    /// Permutation of clause indices.
    pub clause_order: Vec<usize>,
}

impl PageAnnotation {
    fn clauses(&self, tables: &FacetTables) -> Vec<String> {
        let f = &self.facets;
        let mut c = vec![
            format!("{} {} for fiscal {}.", self.entity, self.doc_kind, f.year),
            format!("Operations are based in {}.", tables.region_display(&f.region)),
            format!("Prepared under {}.", tables.policy_display(&f.policy)),
            format!("Sector: {}.", f.industry),
            format!("Filed {}.", self.filed.format("%Y-%m-%d")),
            format!("Metrics covered: {}.", METRICS.join(", ")),
        ];
        c.extend(self.records.iter().map(|(id, v)| format!("Record {id}: {v}.")));
        c
    }

    pub(super) fn n_clauses(&self) -> usize {
        6 + self.records.len()
    }

    pub fn render(&self, tables: &FacetTables) -> (String, String) {
        let clauses = self.clauses(tables);
        let body = self
            .clause_order
            .iter()
            .map(|&i| clauses[i].as_str())
            .collect::<Vec<_>>()
            .join(" ");
        (format!("{} {}", self.entity, self.doc_kind), body)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPage {
    pub page_id: String,
    pub title: String,
    pub body: String,
    pub facets: FacetSet,
    pub out_links: Vec<String>,
    pub answer_for: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<PageAnnotation>,
}

impl SimPage {
    pub fn text(&self) -> String {
        format!("{} {}", self.title, self.body)
    }

    pub(super) fn rerender(&mut self, tables: &FacetTables) {
        if let Some(a) = &self.annotation {
            let (title, body) = a.render(tables);
            self.title = title;
            self.body = body;
            self.facets = a.facets.facet_set();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimQuestion {
    pub qid: String,
    pub text: String,
    pub subject: usize,
    pub entity: String,
    pub metric: String,
    pub template: usize,
}

pub(super) fn render_question(entity: &str, metric: &str, template: usize) -> String {
    match template % 2 {
        0 => format!("What {metric} did {entity} report?"),
        _ => format!("For {entity}, what {metric} was reported?"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCorpus {
    pub seed: u64,
    pub subjects: Vec<(String, SubjectFacets)>,
    pub pages: Vec<SimPage>,
    pub questions: Vec<SimQuestion>,
    /// question id → gold answer
    pub answers: BTreeMap<String, String>,
    /// Mean hybrid-score gap between an answer page and its best distractor
    /// under the fully faceted query.
    pub answer_gap: f64,
}

impl SimCorpus {
    pub fn page(&self, id: &str) -> Option<&SimPage> {
        self.pages
            .binary_search_by(|p| p.page_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.pages[i])
    }

    /// Pages whose `answer_for` lists `qid`.
    pub fn answer_pages(&self, qid: &str) -> BTreeSet<String> {
        self.pages
            .iter()
            .filter(|p| p.answer_for.iter().any(|a| a == qid))
            .map(|p| p.page_id.clone())
            .collect()
    }

    /// Query carrying every true facet of the question's subject.
    pub fn oracle_query(&self, q: &SimQuestion, tables: &FacetTables) -> String {
        let f = &self.subjects[q.subject].1;
        let mut s = q.text.trim_end_matches('?').to_string();
        for k in ASPECTS {
            s.push(' ');
            s.push_str(&f.display(k, tables));
        }
        s
    }

    /// Checks links, answer coverage and the answer key.
    pub fn validate(&self) -> Result<()> {
        let ids: BTreeSet<&str> = self.pages.iter().map(|p| p.page_id.as_str()).collect();
        if ids.len() != self.pages.len() {
            return Err(Error::SpecInfeasible("duplicate page ids".into()));
        }
        for p in &self.pages {
            if let Some(l) = p.out_links.iter().find(|l| !ids.contains(l.as_str())) {
                return Err(Error::SpecInfeasible(format!("{} links to missing page {l}", p.page_id)));
            }
        }
        for q in &self.questions {
            let gold = self
                .answers
                .get(&q.qid)
                .ok_or_else(|| Error::SpecInfeasible(format!("no answer for {}", q.qid)))?;
            let pages = self.answer_pages(&q.qid);
            if pages.is_empty() {
                return Err(Error::SpecInfeasible(format!("no answer page for {}", q.qid)));
            }
            for id in pages {
                let body = &self.page(&id).expect("listed page").body;
                if !body.contains(&format!("Record {}: {gold}.", q.qid)) {
                    return Err(Error::SpecInfeasible(format!("page {id} disagrees with the key for {}", q.qid)));
                }
            }
        }
        Ok(())
    }
}

fn pick_other<T: Clone + PartialEq>(rng: &mut ChaCha8Rng, pool: &[T], avoid: &[T]) -> T {
    let choices: Vec<&T> = pool.iter().filter(|v| !avoid.contains(v)).collect();
    (*choices.choose(rng).expect("facet pool larger than distractor count")).clone()
}

fn industries(tables: &FacetTables) -> Vec<String> {
    let mut v: Vec<String> = tables.taxonomy.values().flatten().cloned().collect();
    v.sort();
    v.dedup();
    v
}

fn random_value(rng: &mut ChaCha8Rng) -> String {
    format!("{}.{} million", rng.gen_range(1..1000), rng.gen_range(0..10))
}

fn change(rng: &mut ChaCha8Rng, f: &SubjectFacets, kind: FacetKind, used: &[SubjectFacets], inds: &[String]) -> SubjectFacets {
    let mut g = f.clone();
    match kind {
        FacetKind::Time => {
            let years: Vec<i32> = YEARS.collect();
            let avoid: Vec<i32> = used.iter().map(|u| u.year).collect();
            g.year = pick_other(rng, &years, &avoid);
        }
        FacetKind::Region => {
            let pool: Vec<String> = REGIONS.iter().map(|s| s.to_string()).collect();
            let avoid: Vec<String> = used.iter().map(|u| u.region.clone()).collect();
            g.region = pick_other(rng, &pool, &avoid);
        }
        FacetKind::Policy => {
            let pool: Vec<String> = POLICIES.iter().map(|s| s.to_string()).collect();
            let avoid: Vec<String> = used.iter().map(|u| u.policy.clone()).collect();
            g.policy = pick_other(rng, &pool, &avoid);
        }
        FacetKind::Industry => {
            let avoid: Vec<String> = used.iter().map(|u| u.industry.clone()).collect();
            g.industry = pick_other(rng, inds, &avoid);
        }
    }
    g
}

/// Seeded corpus generation.
pub fn build_sim_corpus(spec: &SimSpec, tables: &FacetTables, encoder: &dyn TextEncoder) -> Result<SimCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let inds = industries(tables);
    let names = entity_pool(spec.seed);
    let years: Vec<i32> = YEARS.collect();

    let subjects: Vec<(String, SubjectFacets)> = (0..spec.n_topics)
        .map(|i| {
            let f = SubjectFacets {
                year: *years.choose(&mut rng).expect("years"),
                region: REGIONS.choose(&mut rng).expect("regions").to_string(),
                policy: POLICIES.choose(&mut rng).expect("policies").to_string(),
                industry: inds.choose(&mut rng).expect("industries").clone(),
            };
            (names[i].clone(), f)
        })
        .collect();

    let mut questions = Vec::new();
    let mut answers = BTreeMap::new();
    for (s, (entity, _)) in subjects.iter().enumerate() {
        for metric in METRICS.iter().take(spec.questions_per_topic) {
            let qid = format!("q{:04}", questions.len() + 1);
            let template = rng.gen_range(0..2);
            answers.insert(qid.clone(), random_value(&mut rng));
            questions.push(SimQuestion {
                text: render_question(entity, metric, template),
                qid,
                subject: s,
                entity: entity.clone(),
                metric: metric.to_string(),
                template,
            });
        }
    }

    let base = spec.n_pages / spec.n_topics;
    let extra = spec.n_pages % spec.n_topics;
    let mut page_ids = BTreeSet::new();
    let mut pages: Vec<SimPage> = Vec::new();
    let mut by_subject: Vec<Vec<usize>> = vec![Vec::new(); spec.n_topics];
    for (s, (entity, truth)) in subjects.iter().enumerate() {
        let n = base + usize::from(s < extra);
        let doc_kind = DOC_KINDS.choose(&mut rng).expect("kinds").to_string();
        let qs: Vec<&SimQuestion> = questions.iter().filter(|q| q.subject == s).collect();
        let mut variants: Vec<SubjectFacets> = vec![truth.clone()];
        for j in 0..n - 1 {
            let k1 = ASPECTS[j % 4];
            let mut f = change(&mut rng, truth, k1, &variants, &inds);
            if j >= 12 {
                f = change(&mut rng, &f, ASPECTS[(j + 1) % 4], &variants, &inds);
            }
            variants.push(f);
        }
        for (v, facets) in variants.into_iter().enumerate() {
            let page_id = loop {
                let id = format!("p{:08x}", rng.gen::<u32>());
                if page_ids.insert(id.clone()) {
                    break id;
                }
            };
            let records: Vec<(String, String)> = if v == 0 {
                qs.iter().map(|q| (q.qid.clone(), answers[&q.qid].clone())).collect()
            } else {
                qs.iter()
                    .map(|_| (format!("d{:04}", rng.gen_range(0..10_000)), random_value(&mut rng)))
                    .collect()
            };
            let filed = NaiveDate::from_ymd_opt(facets.year, rng.gen_range(1..=12), rng.gen_range(1..=28)).expect("valid date");
            let mut a = PageAnnotation {
                subject: s,
                entity: entity.clone(),
                doc_kind: doc_kind.clone(),
                facets,
                filed,
                records,
                clause_order: Vec::new(),
            };
            a.clause_order = (0..a.n_clauses()).collect();
            let (title, body) = a.render(tables);
            by_subject[s].push(pages.len());
            pages.push(SimPage {
                page_id,
                title,
                body,
                facets: a.facets.facet_set(),
                out_links: Vec::new(),
                answer_for: if v == 0 { qs.iter().map(|q| q.qid.clone()).collect() } else { Vec::new() },
                annotation: Some(a),
            });
        }
    }

    for group in &by_subject {
        for &i in group {
            let fi = pages[i].annotation.as_ref().expect("annotated").facets.clone();
            let mut links: Vec<String> = group
                .iter()
                .filter(|&&j| j != i && pages[j].annotation.as_ref().expect("annotated").facets.differs(&fi) == 1)
                .map(|&j| pages[j].page_id.clone())
                .collect();
            links.sort();
            pages[i].out_links = links;
        }
    }
    pages.sort_by(|a, b| a.page_id.cmp(&b.page_id));

    let mut corpus = SimCorpus {
        seed: spec.seed,
        subjects,
        pages,
        questions,
        answers,
        answer_gap: 0.0,
    };
    corpus.answer_gap = measure_gap(&corpus, tables, encoder)?;
    if corpus.answer_gap < spec.min_gap {
        return Err(Error::SpecInfeasible(format!(
            "answer/distractor gap {:.4} below the configured {:.4}",
            corpus.answer_gap, spec.min_gap
        )));
    }
    corpus.validate()?;
    Ok(corpus)
}

/// Mean over questions of `fused(oracle query, answer page) − max fused(oracle
/// query, same-subject distractor)` under the controller's hybrid ranker.
fn measure_gap(corpus: &SimCorpus, tables: &FacetTables, encoder: &dyn TextEncoder) -> Result<f64> {
    let index = PageIndex::build(corpus, encoder, FUSION_ALPHA)?;
    let mut total = 0.0;
    for q in &corpus.questions {
        let scores: BTreeMap<String, f64> = index.rank(&corpus.oracle_query(q, tables), encoder)?.into_iter().collect();
        let answer = corpus.answer_pages(&q.qid);
        let mut best_answer = f64::NEG_INFINITY;
        let mut best_other = f64::NEG_INFINITY;
        for p in &corpus.pages {
            if p.annotation.as_ref().is_none_or(|a| a.subject != q.subject) {
                continue;
            }
            let s = scores[&p.page_id];
            if answer.contains(&p.page_id) {
                best_answer = best_answer.max(s);
            } else {
                best_other = best_other.max(s);
            }
        }
        total += best_answer - best_other;
    }
    Ok(total / corpus.questions.len().max(1) as f64)
}

/// Expert QA tuples about every subject: for each facet aspect, two
/// phrasing families of three tuples. Each family's answer mentions only that
/// aspect's facet value, padded with a seeded amount of filler.
pub fn training_tuples(corpus: &SimCorpus, tables: &FacetTables) -> Vec<QaTuple> {
    let mut rng = ChaCha8Rng::seed_from_u64(corpus.seed ^ 0x7e57_ab1e);
    let mut out = Vec::new();
    for (s, (entity, f)) in corpus.subjects.iter().enumerate() {
        let slug = entity.to_lowercase().replace(' ', "-");
        for aspect in ASPECTS {
            let v = f.display(aspect, tables);
            let (topic, answers): (&str, [String; 2]) = match aspect {
                FacetKind::Time => (
                    "Fiscal period",
                    [
                        format!("{entity} figures cover fiscal {v}"),
                        format!("{entity} results follow the {v} reporting year"),
                    ],
                ),
                FacetKind::Region => (
                    "Home market",
                    [
                        format!("{entity} operations are based in {v}"),
                        format!("{entity} treats {v} as its home market"),
                    ],
                ),
                FacetKind::Policy => (
                    "Reporting framework",
                    [
                        format!("{entity} reports under {v}"),
                        format!("{entity} discloses against {v} requirements"),
                    ],
                ),
                FacetKind::Industry => (
                    "Sector",
                    [
                        format!("{entity} operates in {v}"),
                        format!("{entity} benchmarks against {v} peers"),
                    ],
                ),
            };
            let questions = [
                format!("{topic} of {entity}?"),
                format!("{topic} of {entity} today?"),
            ];
            for (fam, base_answer) in answers.iter().enumerate() {
                let n_fill = rng.gen_range(0..=2);
                let mut fill: Vec<&str> = FILLERS.choose_multiple(&mut rng, n_fill).copied().collect();
                fill.sort_unstable();
                let mut answer = base_answer.clone();
                for x in fill {
                    answer.push(' ');
                    answer.push_str(x);
                }
                answer.push('.');
                let source = format!("https://registry.example/{slug}/{}-{fam}", aspect.as_str());
                for i in 0..TUPLES_PER_FAMILY {
                    out.push(
                        QaTuple::new(format!("t{s:03}-{}-{fam}-{i}", aspect.as_str()), questions[fam].clone())
                            .with_answer(answer.clone())
                            .with_citation(SourceRef::with_quote(source.clone(), answer.clone())),
                    );
                }
            }
        }
    }
    out
}
