//! Schema-light facet induction and normalization.
//!
//! Facet candidates are induced from corpus statistics: a term is a candidate
//! when its log-odds ratio against a background corpus (the background counts
//! doubling as an informative Dirichlet prior) clears a z cut. Candidates are
//! routed to the four core facets (time, region, policy, L2 industry) by
//! pattern class and lookup tables; everything else lands in `extras`.
//! Normalization maps raw mentions onto canonical values: ISO date intervals,
//! gazetteer ids, `issuer:identifier` policy references, taxonomy labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use chrono::{Datelike, NaiveDate};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::distill::ExperienceRule;
use crate::error::{Error, Result};
use crate::textmodel::tokenize;

pub const REGION_UNIVERSAL: &str = "universal";

/// Core facet kinds in planner priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacetKind {
    Time,
    Region,
    Policy,
    Industry,
}

impl FacetKind {
    pub const ALL: [FacetKind; 4] = [
        FacetKind::Time,
        FacetKind::Region,
        FacetKind::Policy,
        FacetKind::Industry,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FacetKind::Time => "time",
            FacetKind::Region => "region",
            FacetKind::Policy => "policy",
            FacetKind::Industry => "industry",
        }
    }
}

impl fmt::Display for FacetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A normalized time facet: a closed date interval or the open
/// ("ongoing principle") sentinel.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeFacet {
    Open,
    Interval { start: NaiveDate, end: NaiveDate },
}

impl TimeFacet {
    pub fn interval(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidConfig(format!("time interval {start} > {end}")));
        }
        Ok(TimeFacet::Interval { start, end })
    }

    pub fn year(y: i32) -> Self {
        TimeFacet::Interval {
            start: ymd(y, 1, 1),
            end: ymd(y, 12, 31),
        }
    }

    pub fn quarter(y: i32, q: u32) -> Self {
        let start = ymd(y, 3 * (q - 1) + 1, 1);
        let end = if q == 4 {
            ymd(y, 12, 31)
        } else {
            ymd(y, 3 * q + 1, 1).pred_opt().expect("valid date")
        };
        TimeFacet::Interval { start, end }
    }

    /// ISO-8601 rendering (`start/end`) or `ongoing principle`.
    pub fn render(&self) -> String {
        match self {
            TimeFacet::Open => "ongoing principle".to_string(),
            TimeFacet::Interval { start, end } => format!("{start}/{end}"),
        }
    }

    fn exact_quarter(&self) -> Option<(i32, u32)> {
        let TimeFacet::Interval { start, end } = self else {
            return None;
        };
        if start.year() != end.year() || start.day() != 1 || (start.month() - 1) % 3 != 0 {
            return None;
        }
        let q = (start.month() - 1) / 3 + 1;
        (*self == TimeFacet::quarter(start.year(), q)).then_some((start.year(), q))
    }

    fn exact_year(&self) -> Option<i32> {
        let TimeFacet::Interval { start, .. } = self else {
            return None;
        };
        (*self == TimeFacet::year(start.year())).then_some(start.year())
    }

    /// Query surface form: `2023`, `q2 2023`, or `2019 to 2021`.
    pub fn display(&self) -> Option<String> {
        match self {
            TimeFacet::Open => None,
            TimeFacet::Interval { start, end } => Some(if let Some(y) = self.exact_year() {
                y.to_string()
            } else if let Some((y, q)) = self.exact_quarter() {
                format!("q{q} {y}")
            } else if start.year() == end.year() {
                start.year().to_string()
            } else {
                format!("{} to {}", start.year(), end.year())
            }),
        }
    }

    fn keywords(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        if let TimeFacet::Interval { start, end } = self {
            if end.year() - start.year() <= 10 {
                for y in start.year()..=end.year() {
                    out.insert(y.to_string());
                }
            }
            if let Some((y, q)) = self.exact_quarter() {
                out.insert(format!("q{q} {y}"));
            }
        }
        out
    }

    pub fn shift_years(&self, years: i32) -> Self {
        match self {
            TimeFacet::Open => TimeFacet::Open,
            TimeFacet::Interval { start, end } => TimeFacet::Interval {
                start: shift_date(*start, years),
                end: shift_date(*end, years),
            },
        }
    }
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid calendar date")
}

pub(crate) fn shift_date(d: NaiveDate, years: i32) -> NaiveDate {
    d.with_year(d.year() + years)
        .unwrap_or_else(|| ymd(d.year() + years, 2, 28))
}

/// The facet tuple `(time, region, policy, L2 industry)` plus extras.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeFacet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub industry: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, Vec<String>>,
}

impl FacetSet {
    pub fn is_empty(&self) -> bool {
        self.time.is_none()
            && self.region.is_none()
            && self.policy.is_none()
            && self.industry.is_none()
            && self.extras.is_empty()
    }

    /// Fills absent time/region with the open and universal sentinels.
    pub fn with_sentinels(mut self) -> Self {
        self.time.get_or_insert(TimeFacet::Open);
        self.region.get_or_insert_with(|| REGION_UNIVERSAL.to_string());
        self
    }

    /// Normalized value of a core facet, ignoring sentinels.
    pub fn active_value(&self, kind: FacetKind) -> Option<String> {
        match kind {
            FacetKind::Time => match &self.time {
                Some(t @ TimeFacet::Interval { .. }) => Some(t.render()),
                _ => None,
            },
            FacetKind::Region => self.region.clone().filter(|r| r != REGION_UNIVERSAL),
            FacetKind::Policy => self.policy.clone(),
            FacetKind::Industry => self.industry.clone(),
        }
    }

    /// Mention strings that normalize back to this set.
    pub fn mentions(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(t) = &self.time {
            out.push(t.render());
        }
        if let Some(r) = &self.region {
            out.push(if r == REGION_UNIVERSAL {
                "universal context".to_string()
            } else {
                r.clone()
            });
        }
        out.extend(self.policy.clone());
        out.extend(self.industry.clone());
        if let Some(u) = self.extras.get("unresolved") {
            out.extend(u.iter().cloned());
        }
        out
    }
}

/// Induced facet candidates: facet name → `(term, z)` sorted by z desc.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FacetVocab {
    pub facets: BTreeMap<String, Vec<(String, f64)>>,
}

impl FacetVocab {
    pub fn z_of(&self, term: &str) -> Option<f64> {
        let term = term.to_lowercase();
        self.facets
            .values()
            .flat_map(|v| v.iter())
            .find(|(t, _)| *t == term)
            .map(|(_, z)| *z)
    }

    pub fn terms(&self, facet: &str) -> &[(String, f64)] {
        self.facets.get(facet).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.facets.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct PolicyPattern {
    pub issuer: String,
    #[serde(with = "serde_regex_str")]
    pub pattern: Regex,
    pub surface: String,
}

mod serde_regex_str {
    use regex::Regex;
    use serde::{Deserialize, Deserializer};

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Regex, D::Error> {
        let s = String::deserialize(d)?;
        Regex::new(&s).map_err(serde::de::Error::custom)
    }
}

/// Editable normalization tables: gazetteer, L2 industry taxonomy, and
/// policy-reference patterns.
#[derive(Debug, Clone)]
pub struct FacetTables {
    /// alias (lowercase) → canonical region id
    pub gazetteer: BTreeMap<String, String>,
    /// L1 sector → L2 industries
    pub taxonomy: BTreeMap<String, Vec<String>>,
    pub policies: Vec<PolicyPattern>,
}

const GAZETTEER: &str = include_str!("../data/gazetteer.json");
const TAXONOMY: &str = include_str!("../data/industry_taxonomy.json");
const POLICIES: &str = include_str!("../data/policy_patterns.json");
const BACKGROUND: &str = include_str!("../data/background_en.txt");

impl Default for FacetTables {
    fn default() -> Self {
        Self::parse(GAZETTEER, TAXONOMY, POLICIES).expect("bundled facet tables are valid")
    }
}

impl FacetTables {
    pub fn parse(gazetteer: &str, taxonomy: &str, policies: &str) -> Result<Self> {
        let gazetteer: BTreeMap<String, String> = serde_json::from_str(gazetteer)?;
        let taxonomy: BTreeMap<String, Vec<String>> = serde_json::from_str(taxonomy)?;
        let policies: Vec<PolicyPattern> = serde_json::from_str(policies)?;
        Ok(Self {
            gazetteer: gazetteer
                .into_iter()
                .map(|(k, v)| (k.to_lowercase(), v))
                .collect(),
            taxonomy: taxonomy
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().map(|s| s.to_lowercase()).collect()))
                .collect(),
            policies,
        })
    }

    /// Loads `gazetteer.json`, `industry_taxonomy.json`, `policy_patterns.json`
    /// from a directory.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |f: &str| std::fs::read_to_string(dir.join(f));
        Self::parse(
            &read("gazetteer.json")?,
            &read("industry_taxonomy.json")?,
            &read("policy_patterns.json")?,
        )
    }

    pub fn region_id(&self, mention: &str) -> Option<String> {
        let m = mention.trim().to_lowercase();
        if let Some(id) = self.gazetteer.get(&m) {
            return Some(id.clone());
        }
        self.gazetteer.values().find(|id| **id == m).cloned()
    }

    /// All aliases of a region id, plus its spaced display form.
    pub fn region_keywords(&self, id: &str) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self
            .gazetteer
            .iter()
            .filter(|(_, v)| *v == id)
            .map(|(k, _)| k.clone())
            .collect();
        out.insert(id.replace('_', " "));
        out
    }

    pub fn region_display(&self, id: &str) -> String {
        id.replace('_', " ")
    }

    pub fn is_industry(&self, label: &str) -> bool {
        let l = label.trim().to_lowercase();
        self.taxonomy.values().any(|v| v.contains(&l))
    }

    /// First policy pattern matching anywhere in `text`, normalized to
    /// `issuer:identifier`.
    pub fn match_policy(&self, text: &str) -> Option<String> {
        let lower = text.to_lowercase();
        self.policies.iter().find_map(|p| {
            p.pattern
                .captures(&lower)
                .and_then(|c| c.get(1))
                .map(|id| format!("{}:{}", p.issuer, id.as_str()))
        })
    }

    /// Accepts an already normalized `issuer:identifier` string.
    fn parse_policy_ref(&self, text: &str) -> Option<String> {
        let t = text.trim().to_lowercase();
        let (issuer, id) = t.split_once(':')?;
        (!id.is_empty() && self.policies.iter().any(|p| p.issuer == issuer)).then_some(t)
    }

    /// Human surface form for a normalized policy reference.
    pub fn policy_display(&self, policy: &str) -> String {
        let Some((issuer, id)) = policy.split_once(':') else {
            return policy.to_string();
        };
        self.policies
            .iter()
            .filter(|p| p.issuer == issuer)
            .find(|p| {
                let surface = p.surface.replace("{id}", id);
                p.pattern.is_match(&surface)
            })
            .map(|p| p.surface.replace("{id}", id))
            .unwrap_or_else(|| format!("{issuer} {id}"))
    }

    /// Which facet a single query token looks like, if any.
    pub fn facet_kind_of_token(&self, token: &str) -> Option<FacetKind> {
        let t = token.to_lowercase();
        if year_re().is_match(&t) && t.len() == 4 || quarter_token_re().is_match(&t) {
            return Some(FacetKind::Time);
        }
        if self.gazetteer.contains_key(&t) {
            return Some(FacetKind::Region);
        }
        if self.policies.iter().any(|p| p.issuer == t) {
            return Some(FacetKind::Policy);
        }
        if self.taxonomy.values().any(|v| v.contains(&t)) {
            return Some(FacetKind::Industry);
        }
        None
    }

    /// Route a candidate term to a facet name by pattern class.
    pub fn route(&self, term: &str) -> &'static str {
        if parse_time(term).is_some() {
            "time"
        } else if self.gazetteer.contains_key(term) {
            "region"
        } else if self.match_policy(term).is_some() {
            "policy"
        } else if self.is_industry(term) {
            "industry"
        } else {
            "extras"
        }
    }
}

fn year_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:19|20)\d{2}$").unwrap())
}

fn quarter_token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[qh][1-4]$").unwrap())
}

fn time_tagger_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(concat!(
            r"\b\d{4}-\d{2}-\d{2}/\d{4}-\d{2}-\d{2}\b",
            r"|\b[qh][1-4]\s*(?:19|20)\d{2}\b",
            r"|\b(?:19|20)\d{2}\s*(?:-|–|to)\s*(?:19|20)\d{2}\b",
            r"|\b(?:19|20)\d{2}\b",
            r"|\bongoing principle\b",
        ))
        .unwrap()
    })
}

/// Parses a time mention: ISO interval, quarter, half, year range, year, or
/// the ongoing sentinel.
pub fn parse_time(mention: &str) -> Option<TimeFacet> {
    static PATTERNS: OnceLock<[Regex; 5]> = OnceLock::new();
    let [iso, quarter, half, range, year] = PATTERNS.get_or_init(|| {
        [
            Regex::new(r"^(\d{4}-\d{2}-\d{2})/(\d{4}-\d{2}-\d{2})$").unwrap(),
            Regex::new(r"^q([1-4])\s*((?:19|20)\d{2})$").unwrap(),
            Regex::new(r"^h([12])\s*((?:19|20)\d{2})$").unwrap(),
            Regex::new(r"^((?:19|20)\d{2})\s*(?:-|–|to)\s*((?:19|20)\d{2})$").unwrap(),
            Regex::new(r"^((?:19|20)\d{2})$").unwrap(),
        ]
    });
    let m = mention.trim().to_lowercase();
    if m == "ongoing principle" || m == "ongoing" {
        return Some(TimeFacet::Open);
    }
    if let Some(c) = iso.captures(&m) {
        let start = NaiveDate::parse_from_str(&c[1], "%Y-%m-%d").ok()?;
        let end = NaiveDate::parse_from_str(&c[2], "%Y-%m-%d").ok()?;
        return TimeFacet::interval(start, end).ok();
    }
    if let Some(c) = quarter.captures(&m) {
        return Some(TimeFacet::quarter(c[2].parse().ok()?, c[1].parse().ok()?));
    }
    if let Some(c) = half.captures(&m) {
        let y: i32 = c[2].parse().ok()?;
        return Some(if &c[1] == "1" {
            TimeFacet::Interval {
                start: ymd(y, 1, 1),
                end: ymd(y, 6, 30),
            }
        } else {
            TimeFacet::Interval {
                start: ymd(y, 7, 1),
                end: ymd(y, 12, 31),
            }
        });
    }
    if let Some(c) = range.captures(&m) {
        let (a, b): (i32, i32) = (c[1].parse().ok()?, c[2].parse().ok()?);
        return TimeFacet::interval(ymd(a, 1, 1), ymd(b, 12, 31)).ok();
    }
    if let Some(c) = year.captures(&m) {
        return Some(TimeFacet::year(c[1].parse().ok()?));
    }
    None
}

pub type TermCounts = BTreeMap<String, u64>;

/// Unigram and bigram counts over tokenized texts.
pub fn count_terms<I, S>(texts: I) -> TermCounts
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = TermCounts::new();
    for text in texts {
        let toks = tokenize(text.as_ref());
        for t in &toks {
            *out.entry(t.clone()).or_default() += 1;
        }
        for w in toks.windows(2) {
            *out.entry(format!("{} {}", w[0], w[1])).or_default() += 1;
        }
    }
    out
}

/// Bundled general-English background: frequency-ranked words with Zipf
/// counts `round(1e6 / rank)`.
pub fn default_background() -> TermCounts {
    BACKGROUND
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, w)| (w.to_string(), (1_000_000.0 / (i + 1) as f64).round() as u64))
        .collect()
}

/// Pseudo-count given to prior entries for terms absent from the background.
pub const PRIOR_FLOOR: f64 = 0.5;

/// Log-odds ratio of `term` in `domain` vs `background`, with the background
/// counts as an informative Dirichlet prior, divided by its approximate
/// standard deviation.
pub fn log_odds_z(term: &str, domain: &TermCounts, background: &TermCounts) -> f64 {
    let n_d: f64 = domain.values().sum::<u64>() as f64;
    let n_b: f64 = background.values().sum::<u64>() as f64;
    let alpha0 = prior_total(domain, background);
    let y_d = domain.get(term).copied().unwrap_or(0) as f64;
    let y_b = background.get(term).copied().unwrap_or(0) as f64;
    let alpha = y_b.max(PRIOR_FLOOR);
    let lo_d = ((y_d + alpha) / (n_d + alpha0 - y_d - alpha)).ln();
    let lo_b = ((y_b + alpha) / (n_b + alpha0 - y_b - alpha)).ln();
    let var = 1.0 / (y_d + alpha) + 1.0 / (y_b + alpha);
    (lo_d - lo_b) / var.sqrt()
}

fn prior_total(domain: &TermCounts, background: &TermCounts) -> f64 {
    let n_b: f64 = background.values().sum::<u64>() as f64;
    let unseen = domain.keys().filter(|k| !background.contains_key(*k)).count() as f64;
    n_b + PRIOR_FLOOR * unseen
}

/// Keeps domain terms with z ≥ `z_cut` and routes each to a facet.
pub fn induce_facet_vocab(
    domain: &TermCounts,
    background: &TermCounts,
    z_cut: f64,
    tables: &FacetTables,
) -> Result<FacetVocab> {
    if domain.values().all(|&c| c == 0) {
        return Err(Error::EmptyCorpus("domain"));
    }
    if background.values().all(|&c| c == 0) {
        return Err(Error::EmptyCorpus("background"));
    }
    let mut facets: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for (term, &count) in domain {
        if count == 0 {
            continue;
        }
        let z = log_odds_z(term, domain, background);
        if z >= z_cut {
            let term = term.to_lowercase();
            facets
                .entry(tables.route(&term).to_string())
                .or_default()
                .push((term, z));
        }
    }
    for v in facets.values_mut() {
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    }
    Ok(FacetVocab { facets })
}

/// Shallow taggers over free text: time and policy patterns, plus vocab
/// candidates (region, industry, and the top `max_extras` extras) that occur
/// as whole token sequences.
pub fn extract_mentions(
    text: &str,
    vocab: &FacetVocab,
    tables: &FacetTables,
    max_extras: usize,
) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out: Vec<String> = time_tagger_re()
        .find_iter(&lower)
        .map(|m| m.as_str().to_string())
        .collect();
    for p in &tables.policies {
        out.extend(p.pattern.find_iter(&lower).map(|m| m.as_str().to_string()));
    }
    if lower.contains("universal context") {
        out.push("universal context".into());
    }
    let padded = format!(" {} ", tokenize(&lower).join(" "));
    let contains = |term: &str| padded.contains(&format!(" {term} "));
    for facet in ["region", "industry"] {
        for (term, _) in vocab.terms(facet) {
            if contains(term) {
                out.push(term.clone());
            }
        }
    }
    out.extend(
        vocab
            .terms("extras")
            .iter()
            .filter(|(t, _)| contains(t))
            .take(max_extras)
            .map(|(t, _)| t.clone()),
    );
    let mut seen = BTreeSet::new();
    out.retain(|m| seen.insert(m.clone()));
    out
}

enum Resolved {
    Time(TimeFacet),
    Region(String),
    Policy(String),
    Industry(String),
}

fn resolve(mention: &str, tables: &FacetTables) -> Option<Resolved> {
    let m = mention.trim().to_lowercase();
    if m == "universal context" || m == REGION_UNIVERSAL {
        return Some(Resolved::Region(REGION_UNIVERSAL.into()));
    }
    if let Some(t) = parse_time(&m) {
        return Some(Resolved::Time(t));
    }
    if let Some(p) = tables.parse_policy_ref(&m).or_else(|| tables.match_policy(&m)) {
        return Some(Resolved::Policy(p));
    }
    if let Some(r) = tables.region_id(&m) {
        return Some(Resolved::Region(r));
    }
    if tables.is_industry(&m) {
        return Some(Resolved::Industry(m));
    }
    None
}

/// Normalizes raw mentions into a [`FacetSet`]. When a facet receives
/// conflicting values, the mention with the highest vocab z wins (earliest on
/// ties, sentinels last); the others are kept under `extras["<facet>.alt"]`.
/// Unresolvable mentions go to `extras["unresolved"]` verbatim.
pub fn normalize_facets(mentions: &[String], vocab: &FacetVocab, tables: &FacetTables) -> FacetSet {
    let mut candidates: BTreeMap<FacetKind, Vec<(f64, String)>> = BTreeMap::new();
    let mut set = FacetSet::default();
    for mention in mentions {
        let z = vocab.z_of(mention.trim()).unwrap_or(f64::NEG_INFINITY);
        match resolve(mention, tables) {
            Some(Resolved::Time(t)) => {
                let z = if t == TimeFacet::Open { f64::MIN } else { z };
                candidates.entry(FacetKind::Time).or_default().push((z, t.render()));
            }
            Some(Resolved::Region(r)) => {
                let z = if r == REGION_UNIVERSAL { f64::MIN } else { z };
                candidates.entry(FacetKind::Region).or_default().push((z, r));
            }
            Some(Resolved::Policy(p)) => candidates.entry(FacetKind::Policy).or_default().push((z, p)),
            Some(Resolved::Industry(i)) => {
                candidates.entry(FacetKind::Industry).or_default().push((z, i))
            }
            None => set
                .extras
                .entry("unresolved".into())
                .or_default()
                .push(mention.clone()),
        }
    }
    for (kind, mut cands) in candidates {
        let mut seen = BTreeSet::new();
        cands.retain(|(_, v)| seen.insert(v.clone()));
        // stable sort keeps first occurrence on ties
        cands.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut iter = cands.into_iter().map(|(_, v)| v);
        let winner = iter.next().expect("non-empty candidate list");
        let alts: Vec<String> = iter.collect();
        if !alts.is_empty() {
            set.extras.insert(format!("{kind}.alt"), alts);
        }
        match kind {
            FacetKind::Time => set.time = parse_time(&winner),
            FacetKind::Region => set.region = Some(winner),
            FacetKind::Policy => set.policy = Some(winner),
            FacetKind::Industry => set.industry = Some(winner),
        }
    }
    set
}

/// Facets for a group of texts (a cluster's members): each text is tagged and
/// normalized on its own, then every core facet takes its most frequent value
/// (ties to the smaller value). Absent time/region become sentinels.
pub fn consensus_facets<S: AsRef<str>>(
    texts: &[S],
    vocab: &FacetVocab,
    tables: &FacetTables,
    max_extras: usize,
) -> FacetSet {
    let mut votes: BTreeMap<FacetKind, BTreeMap<String, usize>> = BTreeMap::new();
    let mut extras: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for text in texts {
        let mentions = extract_mentions(text.as_ref(), vocab, tables, max_extras);
        let set = normalize_facets(&mentions, vocab, tables);
        for kind in FacetKind::ALL {
            if let Some(v) = set.active_value(kind) {
                *votes.entry(kind).or_default().entry(v).or_default() += 1;
            }
        }
        for (k, v) in set.extras {
            if k != "unresolved" {
                extras.entry(k).or_default().extend(v);
            }
        }
    }
    let mut out = FacetSet::default();
    for (kind, counts) in votes {
        let best = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(v, _)| v.clone())
            .expect("non-empty votes");
        let others: Vec<String> = counts.into_keys().filter(|v| *v != best).collect();
        if !others.is_empty() {
            extras.entry(format!("{kind}.alt")).or_default().extend(others);
        }
        match kind {
            FacetKind::Time => out.time = parse_time(&best),
            FacetKind::Region => out.region = Some(best),
            FacetKind::Policy => out.policy = Some(best),
            FacetKind::Industry => out.industry = Some(best),
        }
    }
    out.extras = extras.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect();
    out.with_sentinels()
}

/// Whole-token occurrence of `keyword` in `text`.
pub fn mentions_keyword(text: &str, keyword: &str) -> bool {
    let kw = tokenize(keyword);
    if kw.is_empty() {
        return false;
    }
    let toks = tokenize(text);
    toks.windows(kw.len()).any(|w| w == kw.as_slice())
}

/// One active facet: normalized values (best rule first), their query surface
/// forms, and every keyword that signals the facet.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetIndicator {
    pub values: Vec<String>,
    pub display: Vec<String>,
    pub keywords: BTreeSet<String>,
}

/// φ: active facets and keyword sets derived from retrieved experiences.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetIndicatorMap {
    pub facets: BTreeMap<FacetKind, FacetIndicator>,
}

impl FacetIndicatorMap {
    pub fn is_empty(&self) -> bool {
        self.facets.is_empty()
    }

    pub fn len(&self) -> usize {
        self.facets.len()
    }

    pub fn all_keywords(&self) -> BTreeSet<String> {
        self.facets.values().flat_map(|f| f.keywords.iter().cloned()).collect()
    }

    /// Every single token appearing in any keyword.
    pub fn keyword_tokens(&self) -> BTreeSet<String> {
        self.all_keywords().iter().flat_map(|k| tokenize(k)).collect()
    }

    pub fn add(&mut self, facets: &FacetSet, tables: &FacetTables) {
        for kind in FacetKind::ALL {
            let Some(value) = facets.active_value(kind) else { continue };
            let (display, keywords) = match kind {
                FacetKind::Time => {
                    let t = facets.time.as_ref().expect("active time");
                    (t.display().unwrap_or_default(), t.keywords())
                }
                FacetKind::Region => (tables.region_display(&value), tables.region_keywords(&value)),
                FacetKind::Policy => {
                    let surface = tables.policy_display(&value);
                    (surface.clone(), [surface, value.clone()].into_iter().collect())
                }
                FacetKind::Industry => (value.clone(), [value.clone()].into_iter().collect()),
            };
            if keywords.is_empty() {
                continue;
            }
            let entry = self.facets.entry(kind).or_default();
            if !entry.values.contains(&value) {
                entry.values.push(value);
                entry.display.push(display);
            }
            entry.keywords.extend(keywords);
        }
    }
}

/// Union of the core facets present in the given experiences (in the order
/// given, which callers use for score order).
pub fn facet_indicators(experiences: &[ExperienceRule], tables: &FacetTables) -> Result<FacetIndicatorMap> {
    if experiences.is_empty() {
        return Err(Error::NoExperiences);
    }
    let mut map = FacetIndicatorMap::default();
    for e in experiences {
        map.add(&e.facets, tables);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tables() -> FacetTables {
        FacetTables::default()
    }

    #[test]
    fn quarter_interval() {
        let t = parse_time("Q2 2023").unwrap();
        assert_eq!(
            t,
            TimeFacet::Interval {
                start: ymd(2023, 4, 1),
                end: ymd(2023, 6, 30)
            }
        );
        assert_eq!(t.render(), "2023-04-01/2023-06-30");
        assert_eq!(parse_time(&t.render()).unwrap(), t);
        assert_eq!(parse_time("q4 2020").unwrap().render(), "2020-10-01/2020-12-31");
        assert_eq!(parse_time("2019-2021").unwrap().render(), "2019-01-01/2021-12-31");
    }

    #[test]
    fn table_sentinels() {
        let set = normalize_facets(
            &["Ongoing principle".into(), "Universal context".into()],
            &FacetVocab::default(),
            &tables(),
        );
        assert_eq!(set.time, Some(TimeFacet::Open));
        assert_eq!(set.region.as_deref(), Some(REGION_UNIVERSAL));
        assert!(set.extras.is_empty());
    }

    #[test]
    fn empty_mentions_empty_set() {
        assert!(normalize_facets(&[], &FacetVocab::default(), &tables()).is_empty());
    }

    #[test]
    fn region_policy_industry_and_unresolved() {
        let set = normalize_facets(
            &[
                "British Columbia".into(),
                "under Basel III".into(),
                "Pharmaceuticals".into(),
                "blue widgets".into(),
            ],
            &FacetVocab::default(),
            &tables(),
        );
        assert_eq!(set.region.as_deref(), Some("british_columbia"));
        assert_eq!(set.policy.as_deref(), Some("bcbs:iii"));
        assert_eq!(set.industry.as_deref(), Some("pharmaceuticals"));
        assert_eq!(set.extras["unresolved"], vec!["blue widgets".to_string()]);
        let again = normalize_facets(&set.mentions(), &FacetVocab::default(), &tables());
        assert_eq!(again, set);
    }

    #[test]
    fn conflicts_keep_highest_z() {
        let vocab = FacetVocab {
            facets: [(
                "time".to_string(),
                vec![("2021".to_string(), 5.0), ("2023".to_string(), 3.0)],
            )]
            .into_iter()
            .collect(),
        };
        let set = normalize_facets(&["2023".into(), "2021".into()], &vocab, &tables());
        assert_eq!(set.time, Some(TimeFacet::year(2021)));
        assert_eq!(set.extras["time.alt"], vec!["2023-01-01/2023-12-31".to_string()]);
    }

    #[test]
    fn toy_log_odds_matches_hand_evaluation() {
        let domain: TermCounts = [("term".to_string(), 30), ("other".to_string(), 970)].into();
        let background: TermCounts = [("term".to_string(), 5), ("other".to_string(), 9995)].into();
        // alpha_w = 5, alpha0 = 10000
        let delta = (35.0f64 / (1000.0 + 10000.0 - 35.0)).ln() - (10.0f64 / (10000.0 + 10000.0 - 10.0)).ln();
        let z = delta / (1.0 / 35.0 + 1.0 / 10.0f64).sqrt();
        assert!((log_odds_z("term", &domain, &background) - z).abs() < 1e-12);
    }

    #[test]
    fn identical_relative_frequency_gives_zero() {
        let domain: TermCounts = [("a".to_string(), 10), ("b".to_string(), 90)].into();
        let background: TermCounts = [("a".to_string(), 100), ("b".to_string(), 900)].into();
        assert!(log_odds_z("a", &domain, &background).abs() < 1e-12);
        let vocab = induce_facet_vocab(&domain, &background, 1.96, &tables()).unwrap();
        assert!(vocab.is_empty());
    }

    #[test]
    fn cfa_institute_is_a_candidate() {
        let texts: Vec<String> = (0..20)
            .map(|i| format!("The CFA Institute curriculum covers topic {i} for the exam"))
            .collect();
        let domain = count_terms(&texts);
        let vocab = induce_facet_vocab(&domain, &default_background(), 1.96, &tables()).unwrap();
        assert!(vocab.z_of("cfa institute").is_some());
        assert!(vocab.z_of("the").is_none());
    }

    #[test]
    fn empty_corpus_errors() {
        let empty = TermCounts::new();
        assert!(matches!(
            induce_facet_vocab(&empty, &default_background(), 1.96, &tables()),
            Err(Error::EmptyCorpus("domain"))
        ));
    }

    #[test]
    fn routing() {
        let t = tables();
        assert_eq!(t.route("2023"), "time");
        assert_eq!(t.route("ontario"), "region");
        assert_eq!(t.route("basel iii"), "policy");
        assert_eq!(t.route("consumer lending"), "industry");
        assert_eq!(t.route("collateral"), "extras");
    }

    #[test]
    fn ontario_keywords_include_alias() {
        let set = FacetSet {
            region: Some("ontario".into()),
            ..Default::default()
        };
        let mut phi = FacetIndicatorMap::default();
        phi.add(&set, &tables());
        let expected: BTreeSet<String> = ["on".to_string(), "ontario".to_string()].into();
        assert_eq!(phi.facets[&FacetKind::Region].keywords, expected);
    }

    #[test]
    fn sentinels_are_not_active() {
        let mut phi = FacetIndicatorMap::default();
        phi.add(&FacetSet::default().with_sentinels(), &tables());
        assert!(phi.is_empty());
    }

    #[test]
    fn mention_extraction() {
        let text = "In Q2 2023 Ontario lenders applied Basel III to consumer lending.";
        let mut vocab = FacetVocab::default();
        vocab.facets.insert("region".into(), vec![("ontario".into(), 4.0)]);
        vocab.facets.insert("industry".into(), vec![("consumer lending".into(), 3.0)]);
        let m = extract_mentions(text, &vocab, &tables(), 3);
        let set = normalize_facets(&m, &vocab, &tables());
        assert_eq!(set.time, Some(TimeFacet::quarter(2023, 2)));
        assert_eq!(set.region.as_deref(), Some("ontario"));
        assert_eq!(set.policy.as_deref(), Some("bcbs:iii"));
        assert_eq!(set.industry.as_deref(), Some("consumer lending"));
    }
}
