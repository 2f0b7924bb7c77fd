//! Wires canonicalization, evidence, distillation and facets together.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;

use crate::canonicalize::{canonicalize_all, DelexRule, QaTuple};
use crate::clustering::Cluster;
use crate::config::PipelineConfig;
use crate::distill::{assemble_rule, ExperienceRule, ExtractiveSummarizer, HttpSummarizer, Summarizer, SummaryInput};
use crate::error::{Error, Result};
use crate::evidence::select_evidence;
use crate::facets::{consensus_facets, count_terms, default_background, induce_facet_vocab, FacetTables, FacetVocab, TermCounts};
use crate::remote::{endpoint_from_env, RemoteEncoder, ENV_EMBEDDER, ENV_SUMMARIZER};
use crate::textmodel::{HashedNgramEncoder, TextEncoder};

/// Everything needed to turn tuples into rules.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub encoder: Arc<dyn TextEncoder>,
    /// `None` selects the built-in extractive summarizer.
    pub summarizer: Option<Arc<dyn Summarizer>>,
    pub tables: FacetTables,
    pub background: TermCounts,
    pub delex: Vec<DelexRule>,
}

impl Pipeline {
    /// Local reference components only.
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            encoder: Arc::new(HashedNgramEncoder::new(config.embedding_dim)?),
            config,
            summarizer: None,
            tables: FacetTables::default(),
            background: default_background(),
            delex: DelexRule::defaults(),
        })
    }

    /// Like [`Pipeline::new`] but uses external embedder/summarizer endpoints
    /// when their environment variables are set.
    pub fn from_env(config: PipelineConfig) -> Result<Self> {
        let mut p = Self::new(config)?;
        let timeout = Duration::from_millis(p.config.remote.timeout_ms);
        if let Some(url) = endpoint_from_env(ENV_EMBEDDER) {
            let mut enc = RemoteEncoder::new(url, p.config.embedding_dim);
            enc.timeout = timeout;
            enc.retries = p.config.remote.retries;
            p.encoder = Arc::new(enc);
        }
        if let Some(url) = endpoint_from_env(ENV_SUMMARIZER) {
            let mut s = HttpSummarizer::new(url);
            s.timeout = timeout;
            s.retries = p.config.remote.retries;
            p.summarizer = Some(Arc::new(s));
        }
        Ok(p)
    }

    pub fn with_encoder(mut self, encoder: Arc<dyn TextEncoder>) -> Self {
        self.encoder = encoder;
        self
    }

    pub fn with_summarizer(mut self, summarizer: Arc<dyn Summarizer>) -> Self {
        self.summarizer = Some(summarizer);
        self
    }

    pub fn with_tables(mut self, tables: FacetTables) -> Self {
        self.tables = tables;
        self
    }

    pub fn canonicalize(&self, tuples: &mut [QaTuple]) -> Result<()> {
        canonicalize_all(tuples, &self.delex)
    }

    /// Facet vocabulary induced from every text field of the tuples.
    pub fn vocab<'a, I>(&self, tuples: I) -> Result<FacetVocab>
    where
        I: IntoIterator<Item = &'a QaTuple>,
    {
        let domain = count_terms(tuples.into_iter().flat_map(member_texts));
        if domain.is_empty() {
            return Ok(FacetVocab::default());
        }
        induce_facet_vocab(&domain, &self.background, self.config.facets.z_cut, &self.tables)
    }

    /// Evidence → summary → facets → rule for one cluster.
    pub fn distill_cluster(
        &self,
        cluster: &Cluster,
        tuples: &BTreeMap<String, QaTuple>,
        vocab: &FacetVocab,
        rule_id: String,
        version: u64,
    ) -> Result<ExperienceRule> {
        let evidence = select_evidence(cluster, tuples, self.encoder.as_ref(), &self.config.evidence)?;
        let input = SummaryInput::from_cluster(cluster, tuples, &evidence)?;
        let draft = match &self.summarizer {
            Some(s) => s.summarize(&input)?,
            None => ExtractiveSummarizer {
                encoder: self.encoder.as_ref(),
            }
            .summarize(&input)?,
        };
        let texts: Vec<String> = cluster
            .hard_member_ids()
            .map(|id| {
                tuples
                    .get(id)
                    .map(|t| member_texts(t).collect::<Vec<_>>().join(" "))
                    .ok_or_else(|| Error::UnknownDoc(id.to_string()))
            })
            .collect::<Result<_>>()?;
        let facets = consensus_facets(&texts, vocab, &self.tables, self.config.facets.max_extras);
        assemble_rule(draft, cluster, tuples, &evidence, facets, rule_id, version)
    }

    /// Distills many clusters in parallel; `jobs` pairs each cluster with its
    /// rule id. Output keeps job order.
    pub fn distill_many(
        &self,
        jobs: &[(&Cluster, String)],
        tuples: &BTreeMap<String, QaTuple>,
        vocab: &FacetVocab,
        version: u64,
    ) -> Result<Vec<ExperienceRule>> {
        let run = |(c, id): &(&Cluster, String)| self.distill_cluster(c, tuples, vocab, id.clone(), version);
        if self.summarizer.is_some() {
            // bounded fan-out for external calls
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.config.remote.max_in_flight)
                .build()
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            pool.install(|| jobs.par_iter().map(run).collect())
        } else {
            jobs.par_iter().map(run).collect()
        }
    }
}

fn member_texts(t: &QaTuple) -> impl Iterator<Item = &str> {
    std::iter::once(t.question.as_str())
        .chain(t.answer.as_deref())
        .chain(t.rationale.as_deref())
        .chain(t.citations.iter().filter_map(|c| c.quote.as_deref()))
}
