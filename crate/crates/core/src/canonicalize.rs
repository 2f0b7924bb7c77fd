//! QA tuple harvesting and question canonicalization.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textmodel::{cosine, TextEncoder};

/// A cited source: a page URL or publication name, optionally with a quote.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceRef {
    #[serde(rename = "source")]
    pub url_or_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quote: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<u32>,
}

impl SourceRef {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            url_or_name: name.into(),
            quote: None,
            rank: None,
        }
    }

    pub fn with_quote(name: impl Into<String>, quote: impl Into<String>) -> Self {
        Self {
            url_or_name: name.into(),
            quote: Some(quote.into()),
            rank: None,
        }
    }
}

/// One harvested question with its answer, rationale and citations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaTuple {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default)]
    pub citations: Vec<SourceRef>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub canonical_intent: String,
}

impl QaTuple {
    pub fn new(id: impl Into<String>, question: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            question: question.into(),
            answer: None,
            rationale: None,
            citations: Vec::new(),
            canonical_intent: String::new(),
        }
    }

    pub fn with_answer(mut self, answer: impl Into<String>) -> Self {
        self.answer = Some(answer.into());
        self
    }

    pub fn with_citation(mut self, source: SourceRef) -> Self {
        self.citations.push(source);
        self
    }

    /// Canonical intent when available, raw question otherwise.
    pub fn intent_text(&self) -> &str {
        if self.canonical_intent.is_empty() {
            &self.question
        } else {
            &self.canonical_intent
        }
    }

    /// Answer text, or the question itself for answerless (sentence) tuples.
    pub fn answer_or_question(&self) -> &str {
        self.answer.as_deref().unwrap_or(&self.question)
    }
}

/// Reads a JSON Lines QA dataset. Blank lines are skipped; ids must be unique.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<QaTuple>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: QaTuple = serde_json::from_str(&line)?;
        if t.question.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        if !seen.insert(t.id.clone()) {
            return Err(Error::DuplicateId(t.id));
        }
        out.push(t);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QaTuple>> {
    let f = std::fs::File::open(path)?;
    read_jsonl(std::io::BufReader::new(f))
}

pub fn write_jsonl<W: Write>(mut w: W, tuples: &[QaTuple]) -> Result<()> {
    for t in tuples {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// A regex substitution used for delexicalization.
#[derive(Debug, Clone)]
pub struct DelexRule {
    pub name: String,
    pub pattern: Regex,
    pub replacement: String,
}

#[derive(Deserialize)]
struct DelexRuleSpec {
    name: String,
    pattern: String,
    replacement: String,
}

const DEFAULT_DELEX: &str = include_str!("../data/delex_rules.json");

impl DelexRule {
    /// Parses a JSON list of `{name, pattern, replacement}`.
    pub fn parse_list(json: &str) -> Result<Vec<DelexRule>> {
        let specs: Vec<DelexRuleSpec> = serde_json::from_str(json)?;
        specs
            .into_iter()
            .map(|s| {
                let pattern = Regex::new(&s.pattern).map_err(|e| {
                    Error::InvalidConfig(format!("delex rule `{}`: {e}", s.name))
                })?;
                Ok(DelexRule {
                    name: s.name,
                    pattern,
                    replacement: s.replacement,
                })
            })
            .collect()
    }

    /// Quoted entities, years, then other numbers.
    pub fn defaults() -> Vec<DelexRule> {
        Self::parse_list(DEFAULT_DELEX).expect("bundled delex rules are valid")
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<[A-Z]+>").unwrap())
}

/// Delexicalizes and normalizes a question into its canonical intent.
///
/// Placeholders (`<YEAR>`, `<NUM>`, `<ENT>`) survive untouched; everything
/// else is lowercased with punctuation collapsed to single spaces. The
/// function is idempotent.
pub fn canonicalize_question(q: &str, rules: &[DelexRule]) -> Result<String> {
    if q.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    let mut text = q.to_string();
    for rule in rules {
        text = rule
            .pattern
            .replace_all(&text, format!(" {} ", rule.replacement).as_str())
            .into_owned();
    }

    let mut parts: Vec<String> = Vec::new();
    let mut last = 0;
    let push_plain = |parts: &mut Vec<String>, seg: &str| {
        let cleaned: String = seg
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { ' ' })
            .collect::<String>()
            .to_lowercase();
        parts.extend(cleaned.split_whitespace().map(str::to_string));
    };
    for m in placeholder_re().find_iter(&text) {
        push_plain(&mut parts, &text[last..m.start()]);
        parts.push(m.as_str().to_string());
        last = m.end();
    }
    push_plain(&mut parts, &text[last..]);

    if parts.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(parts.join(" "))
}

/// Fills `canonical_intent` on every tuple.
pub fn canonicalize_all(tuples: &mut [QaTuple], rules: &[DelexRule]) -> Result<()> {
    for t in tuples.iter_mut() {
        t.canonical_intent = canonicalize_question(&t.question, rules)?;
    }
    Ok(())
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index becomes root so group order follows input order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Groups tuples whose intent embeddings have cosine ≥ `threshold`
/// (transitively). Every id lands in exactly one group; groups and their
/// members are sorted by id.
pub fn mine_paraphrase_groups(
    tuples: &[QaTuple],
    threshold: f64,
    encoder: &dyn TextEncoder,
) -> Result<Vec<Vec<String>>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "paraphrase threshold {threshold} outside (0, 1]"
        )));
    }
    let mut order: Vec<usize> = (0..tuples.len()).collect();
    order.sort_by(|&a, &b| tuples[a].id.cmp(&tuples[b].id));
    let embeddings = order
        .iter()
        .map(|&i| encoder.embed(tuples[i].intent_text()))
        .collect::<Result<Vec<_>>>()?;

    let mut uf = UnionFind::new(order.len());
    for i in 0..order.len() {
        for j in (i + 1)..order.len() {
            // exact duplicates always group, independent of float rounding
            let same = tuples[order[i]].intent_text() == tuples[order[j]].intent_text();
            if same || cosine(&embeddings[i], &embeddings[j])? >= threshold {
                uf.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (pos, &i) in order.iter().enumerate() {
        let root = uf.find(pos);
        groups.entry(root).or_default().push(tuples[i].id.clone());
    }
    Ok(groups.into_values().collect())
}
