//! End-to-end benchmark: build an experience base from the synthetic expert
//! tuples, then retrieve, plan and browse for every question.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::controller::{run_controller, PageIndex};
use super::corpus::{build_sim_corpus, training_tuples, SimCorpus};
use super::metrics::{exact_match, f1, ndcg_at_10, page_hops, qp_at_3};
use crate::canonicalize::QaTuple;
use crate::config::{PipelineConfig, RuleTextMode};
use crate::error::{Error, Result};
use crate::facets::{FacetIndicatorMap, FacetTables};
use crate::pipeline::Pipeline;
use crate::planner::{generate_plan, reference_plan};
use crate::retrieval::{GateDecision, RuleIndex};
use crate::store::{build_base, ExperienceBaseVersion};
use crate::textmodel::TextEncoder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoMerge,
    NoSentenceEmbed,
    K1,
    /// Full base, but every plan is the generic fallback plan.
    Generic,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::NoMerge, Variant::NoSentenceEmbed, Variant::K1, Variant::Generic];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMerge => "no_merge",
            Variant::NoSentenceEmbed => "no_sentence_embed",
            Variant::K1 => "k1",
            Variant::Generic => "generic",
        }
    }

    /// The pipeline configuration this variant runs with.
    pub fn configure(&self, base: &PipelineConfig) -> PipelineConfig {
        let mut c = base.clone();
        match self {
            Variant::Full | Variant::Generic => {}
            Variant::NoMerge => c.merge_topics = false,
            Variant::NoSentenceEmbed => c.rule_text = RuleTextMode::Document,
            Variant::K1 => c.gate.k = 1,
        }
        c
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub qid: String,
    pub gate_decision: GateDecision,
    pub gate_confidence: f64,
    pub queries: Vec<String>,
    pub answer: String,
    pub em: f64,
    pub f1: f64,
    pub qp_at_3: f64,
    pub page_hops: usize,
    pub ndcg_at_10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub seed: u64,
    pub config_digest: String,
    pub n_questions: usize,
    pub n_rules: usize,
    pub em: f64,
    pub f1: f64,
    /// Over every generated query of every question.
    pub qp_at_3: f64,
    pub page_hops: f64,
    pub ndcg_at_10: f64,
    pub fallback_rate: f64,
    pub questions: Vec<QuestionResult>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "variant        {}", self.variant.as_str()).ok();
        writeln!(s, "questions      {}", self.n_questions).ok();
        writeln!(s, "rules          {}", self.n_rules).ok();
        writeln!(s, "EM             {:.4}", self.em).ok();
        writeln!(s, "F1             {:.4}", self.f1).ok();
        writeln!(s, "QP@3           {:.4}", self.qp_at_3).ok();
        writeln!(s, "page hops      {:.3}", self.page_hops).ok();
        writeln!(s, "nDCG@10        {:.4}", self.ndcg_at_10).ok();
        writeln!(s, "fallback rate  {:.4}", self.fallback_rate).ok();
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub n_rules: usize,
    pub qp_at_3: f64,
    pub page_hops: f64,
    pub ndcg_at_10: f64,
    pub em: f64,
    pub f1: f64,
    pub fallback_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seed: u64,
    pub n_questions: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<18} {:>6} {:>7} {:>7} {:>8} {:>6} {:>6} {:>9}\n",
            "variant", "rules", "QP@3", "hops", "nDCG@10", "EM", "F1", "fallback"
        );
        for r in &self.rows {
            writeln!(
                s,
                "{:<18} {:>6} {:>7.4} {:>7.3} {:>8.4} {:>6.3} {:>6.3} {:>9.3}",
                r.variant.as_str(),
                r.n_rules,
                r.qp_at_3,
                r.page_hops,
                r.ndcg_at_10,
                r.em,
                r.f1,
                r.fallback_rate
            )
            .ok();
        }
        s
    }
}

/// A seeded corpus, its expert tuples and page index.
pub struct Benchmark {
    pub config: PipelineConfig,
    pub tables: FacetTables,
    pub encoder: Arc<dyn TextEncoder>,
    pub corpus: SimCorpus,
    pub tuples: Vec<QaTuple>,
    index: PageIndex,
}

impl Benchmark {
    /// Generates the corpus described by `config.sim` with the local encoder.
    pub fn new(config: PipelineConfig) -> Result<Self> {
        let p = Pipeline::new(config)?;
        Self::with_pipeline(&p)
    }

    /// Uses the pipeline's encoder and facet tables.
    pub fn with_pipeline(pipeline: &Pipeline) -> Result<Self> {
        let corpus = build_sim_corpus(&pipeline.config.sim, &pipeline.tables, pipeline.encoder.as_ref())?;
        Self::from_corpus(pipeline, corpus)
    }

    pub fn from_corpus(pipeline: &Pipeline, corpus: SimCorpus) -> Result<Self> {
        let tuples = training_tuples(&corpus, &pipeline.tables);
        let index = PageIndex::build(&corpus, pipeline.encoder.as_ref(), pipeline.config.evidence.alpha)?;
        Ok(Self {
            config: pipeline.config.clone(),
            tables: pipeline.tables.clone(),
            encoder: pipeline.encoder.clone(),
            corpus,
            tuples,
            index,
        })
    }

    fn pipeline(&self, config: PipelineConfig) -> Result<Pipeline> {
        Ok(Pipeline::new(config)?
            .with_encoder(self.encoder.clone())
            .with_tables(self.tables.clone()))
    }

    /// The experience base a variant browses with.
    pub fn build_base(&self, variant: Variant) -> Result<ExperienceBaseVersion> {
        let p = self.pipeline(variant.configure(&self.config))?;
        Ok(build_base(&p, self.tuples.clone())?.latest().clone())
    }

    pub fn run(&self, variant: Variant) -> Result<EvalReport> {
        let base = self.build_base(variant)?;
        self.evaluate(variant, &base, &self.corpus, &self.index)
    }

    /// Evaluates a (possibly transformed) corpus against a base built from
    /// the original tuples.
    pub fn run_on(&self, variant: Variant, base: &ExperienceBaseVersion, corpus: &SimCorpus) -> Result<EvalReport> {
        let index = PageIndex::build(corpus, self.encoder.as_ref(), self.config.evidence.alpha)?;
        self.evaluate(variant, base, corpus, &index)
    }

    fn evaluate(&self, variant: Variant, base: &ExperienceBaseVersion, corpus: &SimCorpus, index: &PageIndex) -> Result<EvalReport> {
        let cfg = variant.configure(&self.config);
        cfg.validate()?;
        let enc = self.encoder.as_ref();
        let rules = RuleIndex::build(base, enc, cfg.rule_text)?;
        let sim = &cfg.sim;
        let questions: Vec<QuestionResult> = corpus
            .questions
            .par_iter()
            .map(|q| {
                let retrieved = rules.topk(&q.text, enc, &cfg.gate)?;
                let plan = match variant {
                    Variant::Generic => reference_plan(&q.text, FacetIndicatorMap::default(), GateDecision::Fallback, Vec::new(), cfg.planner.m)?,
                    _ => generate_plan(&q.text, &retrieved, base, &self.tables, &cfg.planner)?,
                };
                let answer_pages = corpus.answer_pages(&q.qid);
                let rankings: Vec<Vec<String>> = plan
                    .queries
                    .iter()
                    .map(|z| Ok(index.rank(z, enc)?.into_iter().take(3).map(|(id, _)| id).collect()))
                    .collect::<Result<_>>()?;
                let traj = run_controller(q, &plan, corpus, index, enc, sim.hop_budget, sim.visits_per_query)?;
                let relevance: Vec<bool> = traj.cited.iter().map(|p| answer_pages.contains(p)).collect();
                let gold = &corpus.answers[&q.qid];
                Ok(QuestionResult {
                    qid: q.qid.clone(),
                    gate_decision: retrieved.gate_decision,
                    gate_confidence: retrieved.gate_confidence,
                    qp_at_3: qp_at_3(&rankings, &answer_pages),
                    page_hops: page_hops(&traj.visits),
                    ndcg_at_10: ndcg_at_10(&relevance),
                    em: exact_match(&traj.answer, gold),
                    f1: f1(&traj.answer, gold),
                    answer: traj.answer,
                    queries: plan.queries,
                })
            })
            .collect::<Result<_>>()?;
        let n = questions.len().max(1) as f64;
        let n_queries: usize = questions.iter().map(|q| q.queries.len()).sum();
        let qp_hits: f64 = questions.iter().map(|q| q.qp_at_3 * q.queries.len() as f64).sum();
        Ok(EvalReport {
            variant,
            seed: corpus.seed,
            config_digest: cfg.digest(),
            n_questions: questions.len(),
            n_rules: base.rules.len(),
            em: questions.iter().map(|q| q.em).sum::<f64>() / n,
            f1: questions.iter().map(|q| q.f1).sum::<f64>() / n,
            qp_at_3: if n_queries == 0 { 0.0 } else { qp_hits / n_queries as f64 },
            page_hops: questions.iter().map(|q| q.page_hops as f64).sum::<f64>() / n,
            ndcg_at_10: questions.iter().map(|q| q.ndcg_at_10).sum::<f64>() / n,
            fallback_rate: questions.iter().filter(|q| q.gate_decision == GateDecision::Fallback).count() as f64 / n,
            questions,
        })
    }
}

/// Runs each variant on the same seeded corpus.
pub fn ablate(config: &PipelineConfig, variants: &[Variant]) -> Result<AblationTable> {
    if variants.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one variant".into()));
    }
    let bench = Benchmark::new(config.clone())?;
    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    for v in variants {
        if !seen.insert(*v) {
            continue;
        }
        let r = bench.run(*v)?;
        rows.push(AblationRow {
            variant: *v,
            n_rules: r.n_rules,
            qp_at_3: r.qp_at_3,
            page_hops: r.page_hops,
            ndcg_at_10: r.ndcg_at_10,
            em: r.em,
            f1: r.f1,
            fallback_rate: r.fallback_rate,
        });
    }
    Ok(AblationTable {
        seed: config.sim.seed,
        n_questions: bench.corpus.questions.len(),
        rows,
    })
}
