//! Contradiction-aware distillation of a cluster into an experience rule.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::canonicalize::{QaTuple, SourceRef};
use crate::clustering::Cluster;
use crate::error::{Error, Result};
use crate::evidence::EvidenceItem;
use crate::facets::FacetSet;
use crate::textmodel::{cosine, split_sentences, tokenize, EmbeddingVector, TextEncoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub text: String,
    pub polarity: Polarity,
    pub support_count: usize,
    pub source_ids: Vec<String>,
}

impl Claim {
    pub fn new(text: impl Into<String>, source_id: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            polarity: polarity_of(&text),
            text,
            support_count: 1,
            source_ids: vec![source_id.into()],
        }
    }

    pub fn key(&self) -> String {
        claim_key(&self.text)
    }
}

const NEGATIONS: &[&str] = &["not", "no", "never", "none", "nor", "without", "neither"];
const FILLERS: &[&str] = &[
    "do", "does", "did", "is", "are", "was", "were", "be", "been", "can", "will", "would", "should",
    "could", "may", "might", "yes", "the", "a", "an",
];

fn expand_contractions(text: &str) -> String {
    text.to_lowercase()
        .replace("n't", " not")
        .replace("n’t", " not")
        .replace("cannot", "can not")
}

fn stem(token: &str) -> String {
    if token.len() > 3 && token.ends_with('s') && !token.ends_with("ss") {
        token[..token.len() - 1].to_string()
    } else {
        token.to_string()
    }
}

/// Negation parity: odd number of negation markers means negated.
pub fn polarity_of(text: &str) -> Polarity {
    let n = tokenize(&expand_contractions(text))
        .iter()
        .filter(|t| NEGATIONS.contains(&t.as_str()))
        .count();
    if n % 2 == 1 {
        Polarity::Negated
    } else {
        Polarity::Positive
    }
}

/// Claim text with negations, auxiliaries and plural endings removed.
pub fn claim_key(text: &str) -> String {
    tokenize(&expand_contractions(text))
        .into_iter()
        .filter(|t| !NEGATIONS.contains(&t.as_str()) && !FILLERS.contains(&t.as_str()))
        .map(|t| stem(&t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// One claim per distinct (key, polarity) over the sentences of the answers.
pub fn extract_claims(answers: &[(String, String)]) -> Vec<Claim> {
    let mut by_key: BTreeMap<(String, Polarity), Claim> = BTreeMap::new();
    let mut order = Vec::new();
    for (source_id, answer) in answers {
        for sentence in split_sentences(answer) {
            let c = Claim::new(sentence, source_id.clone());
            let k = (c.key(), c.polarity);
            match by_key.get_mut(&k) {
                Some(existing) => {
                    if !existing.source_ids.contains(source_id) {
                        existing.source_ids.push(source_id.clone());
                        existing.support_count += 1;
                    }
                }
                None => {
                    order.push(k.clone());
                    by_key.insert(k, c);
                }
            }
        }
    }
    order.into_iter().map(|k| by_key.remove(&k).expect("present")).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilteredClaims {
    pub kept: Vec<Claim>,
    pub folded_caveats: Vec<Claim>,
    pub flagged: Vec<Claim>,
}

/// Groups claims by key; the majority polarity (by total support) is kept, a
/// minority with support ≥ 2 is folded into caveats, a minority with support 1
/// is flagged, and an exact tie flags everything in the group.
pub fn consistency_filter(claims: &[Claim]) -> FilteredClaims {
    let mut totals: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for c in claims {
        let e = totals.entry(c.key()).or_default();
        match c.polarity {
            Polarity::Positive => e.0 += c.support_count,
            Polarity::Negated => e.1 += c.support_count,
        }
    }
    let mut out = FilteredClaims::default();
    for c in claims {
        let (pos, neg) = totals[&c.key()];
        let majority = match pos.cmp(&neg) {
            std::cmp::Ordering::Greater => Some(Polarity::Positive),
            std::cmp::Ordering::Less => Some(Polarity::Negated),
            std::cmp::Ordering::Equal => None,
        };
        match majority {
            Some(p) if p == c.polarity => out.kept.push(c.clone()),
            Some(_) if c.support_count >= 2 => out.folded_caveats.push(c.clone()),
            _ => out.flagged.push(c.clone()),
        }
    }
    out
}

/// Structured rule text: conditions, core guidance, edge cases, failure modes
/// and caveats.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleDraft {
    pub conditions: Vec<String>,
    pub core_guidance: String,
    pub edge_cases: Vec<String>,
    pub failure_modes: Vec<String>,
    pub caveats: Vec<String>,
}

impl RuleDraft {
    pub fn validate(&self) -> Result<()> {
        if self.core_guidance.trim().is_empty() {
            return Err(Error::InvalidConfig("rule draft has empty core guidance".into()));
        }
        Ok(())
    }

    /// Every field flattened into one document.
    pub fn full_text(&self) -> String {
        std::iter::once(self.core_guidance.as_str())
            .chain(self.conditions.iter().map(String::as_str))
            .chain(self.edge_cases.iter().map(String::as_str))
            .chain(self.failure_modes.iter().map(String::as_str))
            .chain(self.caveats.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// What a summarizer sees for one cluster.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SummaryInput {
    /// `(member id, answer)` pairs.
    pub answers: Vec<(String, String)>,
    pub rationales: Vec<String>,
    pub evidence: Vec<EvidenceItem>,
}

impl SummaryInput {
    pub fn from_cluster(cluster: &Cluster, tuples: &BTreeMap<String, QaTuple>, evidence: &[EvidenceItem]) -> Result<Self> {
        let mut answers = Vec::new();
        let mut rationales = Vec::new();
        for id in cluster.hard_member_ids() {
            let t = tuples.get(id).ok_or_else(|| Error::UnknownDoc(id.to_string()))?;
            if let Some(a) = t.answer.as_deref().filter(|a| !a.trim().is_empty()) {
                answers.push((t.id.clone(), a.to_string()));
            }
            rationales.extend(t.rationale.clone());
        }
        Ok(Self {
            answers,
            rationales,
            evidence: evidence.to_vec(),
        })
    }
}

pub trait Summarizer: Send + Sync {
    fn summarize(&self, input: &SummaryInput) -> Result<RuleDraft>;
}

const CONDITION_MARKERS: &[&str] = &["when", "if", "assuming", "provided", "whenever"];
const EDGE_MARKERS: &[&str] = &["except", "unless", "however", "but", "although", "exception"];
const FAILURE_MARKERS: &[&str] = &["fail", "fails", "failure", "pitfall", "mistake", "misleading", "breaks", "overestimate", "underestimate"];

fn has_marker(sentence: &str, markers: &[&str]) -> bool {
    tokenize(sentence).iter().any(|t| markers.contains(&t.as_str()))
}

/// Deterministic extractive summarizer: the most central majority-consistent
/// answer sentence becomes the guidance; marker sentences fill the lists.
pub struct ExtractiveSummarizer<'a> {
    pub encoder: &'a dyn TextEncoder,
}

impl Summarizer for ExtractiveSummarizer<'_> {
    fn summarize(&self, input: &SummaryInput) -> Result<RuleDraft> {
        let mut sentences: Vec<(String, String)> = input
            .answers
            .iter()
            .flat_map(|(id, a)| split_sentences(a).into_iter().map(move |s| (id.clone(), s)))
            .collect();
        if sentences.is_empty() {
            sentences = input
                .evidence
                .iter()
                .flat_map(|e| split_sentences(&e.text).into_iter().map(|s| (e.member_id.clone(), s)))
                .collect();
        }
        if sentences.is_empty() {
            return Err(Error::EmptyCluster("summary input".into()));
        }
        let claims = extract_claims(&input.answers);
        let filtered = consistency_filter(&claims);
        let dissent: BTreeSet<(String, Polarity)> = filtered
            .folded_caveats
            .iter()
            .chain(&filtered.flagged)
            .map(|c| (c.key(), c.polarity))
            .collect();

        let embeddings: Vec<EmbeddingVector> = sentences
            .iter()
            .map(|(_, s)| self.encoder.embed(s))
            .collect::<Result<_>>()?;
        let centroid = EmbeddingVector::mean_of(&embeddings)?;
        let eligible: Vec<usize> = {
            let e: Vec<usize> = (0..sentences.len())
                .filter(|&i| {
                    let s = &sentences[i].1;
                    !dissent.contains(&(claim_key(s), polarity_of(s)))
                })
                .collect();
            if e.is_empty() {
                (0..sentences.len()).collect()
            } else {
                e
            }
        };
        let mut best: Option<(f64, usize)> = None;
        for &i in &eligible {
            let s = cosine(&embeddings[i], &centroid)?;
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, i));
            }
        }
        let core = sentences[best.expect("eligible non-empty").1].1.clone();

        let mut draft = RuleDraft {
            core_guidance: core.clone(),
            ..Default::default()
        };
        let mut seen = BTreeSet::new();
        for (_, s) in &sentences {
            if *s == core || !seen.insert(s.clone()) {
                continue;
            }
            if dissent.contains(&(claim_key(s), polarity_of(s))) {
                continue;
            }
            if has_marker(s, FAILURE_MARKERS) {
                draft.failure_modes.push(s.clone());
            } else if has_marker(s, EDGE_MARKERS) {
                draft.edge_cases.push(s.clone());
            } else if has_marker(s, CONDITION_MARKERS) {
                draft.conditions.push(s.clone());
            }
        }
        draft.caveats.extend(filtered.folded_caveats.iter().map(|c| format!("Minority view: {}", c.text)));
        draft.caveats.extend(filtered.flagged.iter().map(|c| format!("Unconfirmed: {}", c.text)));
        Ok(draft)
    }
}

/// Chat-completion style summarizer reached over HTTP. Request body:
/// `{answers, rationales, citations, instructions}`; response: a [`RuleDraft`].
pub struct HttpSummarizer {
    pub endpoint: String,
    pub timeout: Duration,
    pub retries: usize,
    pub instructions: String,
}

pub const SUMMARIZER_PROMPT: &str = include_str!("../data/summarizer_prompt.txt");

impl HttpSummarizer {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
            retries: 1,
            instructions: SUMMARIZER_PROMPT.to_string(),
        }
    }
}

impl Summarizer for HttpSummarizer {
    fn summarize(&self, input: &SummaryInput) -> Result<RuleDraft> {
        let citations: Vec<&SourceRef> = input
            .evidence
            .iter()
            .filter(|e| e.kind.is_citation())
            .map(|e| &e.source)
            .collect();
        let body = serde_json::json!({
            "answers": input.answers.iter().map(|(_, a)| a).collect::<Vec<_>>(),
            "rationales": input.rationales,
            "citations": citations,
            "instructions": self.instructions,
        });
        let draft: RuleDraft = crate::remote::post_json(&self.endpoint, &body, self.timeout, self.retries)
            .map_err(|e| Error::SummarizerUnavailable(e.to_string()))?;
        draft.validate().map_err(|e| Error::SummarizerUnavailable(e.to_string()))?;
        Ok(draft)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub cluster_id: String,
    pub version: u64,
}

/// A distilled rule with its citation set and facet tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceRule {
    pub rule_id: String,
    pub rule: RuleDraft,
    pub citations: Vec<SourceRef>,
    pub facets: FacetSet,
    pub coverage: f64,
    pub confidence: f64,
    pub provenance: Provenance,
}

impl ExperienceRule {
    pub fn text(&self) -> &str {
        &self.rule.core_guidance
    }

    pub fn citation_names(&self) -> BTreeSet<&str> {
        self.citations.iter().map(|c| c.url_or_name.as_str()).collect()
    }

    /// Content equality ignoring id and provenance.
    pub fn same_content(&self, other: &ExperienceRule) -> bool {
        self.rule == other.rule
            && self.citations == other.citations
            && self.facets == other.facets
            && self.coverage == other.coverage
            && self.confidence == other.confidence
    }
}

/// Builds `(r_m, c_m, g_m)`: citations come from the selected evidence and
/// must all be cited by some member of the cluster.
pub fn assemble_rule(
    draft: RuleDraft,
    cluster: &Cluster,
    tuples: &BTreeMap<String, QaTuple>,
    evidence: &[EvidenceItem],
    facets: FacetSet,
    rule_id: String,
    version: u64,
) -> Result<ExperienceRule> {
    draft.validate()?;
    let mut union: BTreeSet<&str> = BTreeSet::new();
    let mut members = Vec::new();
    for m in &cluster.members {
        let t = tuples.get(&m.id).ok_or_else(|| Error::UnknownDoc(m.id.clone()))?;
        union.extend(t.citations.iter().map(|c| c.url_or_name.as_str()));
        if !m.soft {
            members.push(t);
        }
    }
    let mut citations: BTreeMap<String, SourceRef> = BTreeMap::new();
    let mut cited_scores = Vec::new();
    for e in evidence.iter().filter(|e| e.kind.is_citation()) {
        if !union.contains(e.source.url_or_name.as_str()) {
            return Err(Error::CitationLeak {
                cluster_id: cluster.cluster_id.clone(),
                source_name: e.source.url_or_name.clone(),
            });
        }
        citations
            .entry(e.source.url_or_name.clone())
            .or_insert_with(|| SourceRef {
                url_or_name: e.source.url_or_name.clone(),
                quote: e.source.quote.clone(),
                rank: None,
            });
        cited_scores.push(e.fused_score);
    }
    let guidance_polarity = polarity_of(&draft.core_guidance);
    let consistent = members
        .iter()
        .filter(|t| polarity_of(t.answer_or_question()) == guidance_polarity)
        .count();
    let coverage = if members.is_empty() {
        0.0
    } else {
        consistent as f64 / members.len() as f64
    };
    let confidence = if cited_scores.is_empty() {
        0.0
    } else {
        (cited_scores.iter().sum::<f64>() / cited_scores.len() as f64).clamp(0.0, 1.0)
    };
    Ok(ExperienceRule {
        rule_id,
        rule: draft,
        citations: citations.into_values().collect(),
        facets,
        coverage,
        confidence,
        provenance: Provenance {
            cluster_id: cluster.cluster_id.clone(),
            version,
        },
    })
}

/// Answerless tuples, one per sentence, with ids `s-<doc>-<sentence>`.
pub fn sentence_fallback(documents: &[String]) -> Result<Vec<QaTuple>> {
    let mut out = Vec::new();
    for (d, doc) in documents.iter().enumerate() {
        for (s, sentence) in split_sentences(doc).into_iter().enumerate() {
            out.push(QaTuple::new(format!("s-{d}-{s}"), sentence));
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::EvidenceKind;
    use crate::clustering::{cluster_qa, ClusterParams, Membership, ViewTable};
    use crate::fixtures::{diversification_tuples, DIVERSIFICATION_RULE};
    use crate::textmodel::HashedNgramEncoder;

    fn answers(list: &[&str]) -> Vec<(String, String)> {
        list.iter().enumerate().map(|(i, a)| (format!("a{i}"), a.to_string())).collect()
    }

    #[test]
    fn polarity_and_keys() {
        assert_eq!(polarity_of("X does not increase Y"), Polarity::Negated);
        assert_eq!(polarity_of("X doesn't increase Y"), Polarity::Negated);
        assert_eq!(polarity_of("X increases Y"), Polarity::Positive);
        assert_eq!(claim_key("X increases Y"), claim_key("X does not increase Y"));
    }

    #[test]
    fn filter_partitions() {
        let same = vec![Claim::new("rates rise", "a"), Claim::new("rates rise", "b")];
        assert_eq!(consistency_filter(&same).kept.len(), 2);

        let two_one = vec![
            Claim::new("X increases Y", "a"),
            Claim::new("X increases Y", "b"),
            Claim::new("X does not increase Y", "c"),
        ];
        let f = consistency_filter(&two_one);
        assert_eq!(f.kept.len(), 2);
        assert_eq!(f.flagged, vec![two_one[2].clone()]);
        assert!(f.folded_caveats.is_empty());

        let tie = vec![Claim::new("X increases Y", "a"), Claim::new("X does not increase Y", "b")];
        let f = consistency_filter(&tie);
        assert_eq!(f.flagged.len(), 2);
        assert!(f.kept.is_empty());

        let mut strong_minority = extract_claims(&answers(&[
            "X increases Y.",
            "X increases Y.",
            "X increases Y.",
            "X does not increase Y.",
            "X does not increase Y.",
        ]));
        strong_minority.sort_by_key(|c| c.polarity);
        let f = consistency_filter(&strong_minority);
        assert_eq!(f.kept[0].support_count, 3);
        assert_eq!(f.folded_caveats[0].support_count, 2);
    }

    #[test]
    fn negated_minority_becomes_caveat() {
        let enc = HashedNgramEncoder::default();
        let input = SummaryInput {
            answers: answers(&["X increases Y", "X does not increase Y", "X increases Y"]),
            ..Default::default()
        };
        let d = ExtractiveSummarizer { encoder: &enc }.summarize(&input).unwrap();
        assert_eq!(d.core_guidance, "X increases Y");
        assert!(d.caveats.iter().any(|c| c.contains("X does not increase Y")));
    }

    #[test]
    fn single_answer_no_markers() {
        let enc = HashedNgramEncoder::default();
        let input = SummaryInput {
            answers: answers(&["Index funds keep costs low"]),
            ..Default::default()
        };
        let d = ExtractiveSummarizer { encoder: &enc }.summarize(&input).unwrap();
        assert_eq!(d.core_guidance, "Index funds keep costs low");
        assert!(d.conditions.is_empty() && d.edge_cases.is_empty() && d.failure_modes.is_empty() && d.caveats.is_empty());
        assert!(ExtractiveSummarizer { encoder: &enc }.summarize(&SummaryInput::default()).is_err());
    }

    #[test]
    fn table_guidance_matches_reference_rule() {
        let enc = HashedNgramEncoder::default();
        let tuples = diversification_tuples();
        let input = SummaryInput {
            answers: tuples.iter().map(|t| (t.id.clone(), t.answer.clone().unwrap())).collect(),
            ..Default::default()
        };
        let d = ExtractiveSummarizer { encoder: &enc }.summarize(&input).unwrap();
        let s = cosine(&enc.embed(&d.core_guidance).unwrap(), &enc.embed(DIVERSIFICATION_RULE).unwrap()).unwrap();
        assert!(s >= 0.4, "cosine {s}");
    }

    fn cluster_of(tuples: &[QaTuple]) -> Cluster {
        let enc = HashedNgramEncoder::default();
        let views = ViewTable::build(tuples, &enc).unwrap();
        let ids: Vec<String> = tuples.iter().map(|t| t.id.clone()).collect();
        let mut c = cluster_qa(&ids, &views, &ClusterParams::default()).unwrap().clusters.remove(0);
        c.members = ids
            .into_iter()
            .map(|id| Membership { id, weight: 1.0, soft: false })
            .collect();
        c
    }

    fn ev(source: &str, score: f64) -> EvidenceItem {
        EvidenceItem {
            source: SourceRef::new(source),
            text: "t".into(),
            kind: EvidenceKind::Citation,
            member_id: "t1".into(),
            dense_score: score,
            lexical_score: score,
            fused_score: score,
        }
    }

    #[test]
    fn assembly_checks_citations_and_scores() {
        let tuples = diversification_tuples();
        let cluster = cluster_of(&tuples);
        let map: BTreeMap<String, QaTuple> = tuples.into_iter().map(|t| (t.id.clone(), t)).collect();
        let draft = RuleDraft {
            core_guidance: "Low correlation improves diversification.".into(),
            ..Default::default()
        };
        let rule = assemble_rule(
            draft.clone(),
            &cluster,
            &map,
            &[ev("CFAI", 0.8), ev("BlackRock", 0.4)],
            FacetSet::default(),
            "R000001".into(),
            1,
        )
        .unwrap();
        assert_eq!(rule.coverage, 1.0);
        assert!((rule.confidence - 0.6).abs() < 1e-12);
        assert_eq!(rule.citation_names(), ["BlackRock", "CFAI"].into());

        let leak = assemble_rule(draft, &cluster, &map, &[ev("Wikipedia", 0.9)], FacetSet::default(), "R2".into(), 1);
        assert!(matches!(leak, Err(Error::CitationLeak { .. })));
    }

    #[test]
    fn coverage_counts_polarity_agreement() {
        let tuples: Vec<QaTuple> = [
            "Hedging reduces exposure.",
            "Hedging reduces exposure in most cases.",
            "Hedging reduces currency exposure.",
            "Hedging does not reduce exposure.",
        ]
        .iter()
        .enumerate()
        .map(|(i, a)| QaTuple::new(format!("h{i}"), "Does hedging reduce exposure?").with_answer(*a))
        .collect();
        let cluster = cluster_of(&tuples);
        let map: BTreeMap<String, QaTuple> = tuples.into_iter().map(|t| (t.id.clone(), t)).collect();
        let draft = RuleDraft {
            core_guidance: "Hedging reduces exposure.".into(),
            ..Default::default()
        };
        let rule = assemble_rule(draft, &cluster, &map, &[], FacetSet::default(), "R1".into(), 1).unwrap();
        assert_eq!(rule.coverage, 0.75);
        assert_eq!(rule.confidence, 0.0);
    }

    #[test]
    fn fallback_sentences() {
        let t = sentence_fallback(&["One fact. Two facts! Three facts?".to_string()]).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t[1].id, "s-0-1");
        assert!(t.iter().all(|t| t.answer.is_none()));
        assert!(sentence_fallback(&[]).is_err());
    }
}
