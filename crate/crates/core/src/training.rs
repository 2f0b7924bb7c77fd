//! Training objectives at desk scale: contrastive retrieval loss over a linear
//! projection, facet-weighted plan loss over a token model, pairwise
//! preference loss, coverage, and a small gradient-descent loop.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canonicalize::QaTuple;
use crate::error::{Error, Result};
use crate::facets::{mentions_keyword, FacetIndicatorMap, FacetTables};
use crate::retrieval::{mine_from_ranking, rank_vectors};
use crate::store::ExperienceBaseVersion;
use crate::textmodel::{l2_norm, tokenize, EmbeddingVector, TextEncoder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveBatch {
    pub query: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
    pub tau: f64,
}

impl ContrastiveBatch {
    pub fn validate(&self) -> Result<()> {
        let d = self.query.len();
        if self.negatives.is_empty() {
            return Err(Error::InvalidConfig("contrastive batch needs a negative".into()));
        }
        if self.tau <= 0.0 || !self.tau.is_finite() {
            return Err(Error::InvalidConfig("tau must be positive".into()));
        }
        for v in std::iter::once(&self.positive).chain(&self.negatives) {
            if v.len() != d {
                return Err(Error::DimensionMismatch { left: d, right: v.len() });
            }
        }
        Ok(())
    }
}

fn unit(p: &DMatrix<f64>, x: &[f64]) -> Result<(DVector<f64>, f64)> {
    let y = p * DVector::from_column_slice(x);
    let n = y.norm();
    if n < 1e-12 {
        return Err(Error::DegenerateVector);
    }
    Ok((y / n, n))
}

/// InfoNCE over cosine similarities after projection and renormalization,
/// with its gradient w.r.t. the projection.
pub fn loss_ret(batch: &ContrastiveBatch, projection: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    batch.validate()?;
    if projection.ncols() != batch.query.len() {
        return Err(Error::DimensionMismatch {
            left: projection.ncols(),
            right: batch.query.len(),
        });
    }
    let (yq, nq) = unit(projection, &batch.query)?;
    let cands: Vec<&Vec<f64>> = std::iter::once(&batch.positive).chain(&batch.negatives).collect();
    let mut units = Vec::with_capacity(cands.len());
    for x in &cands {
        units.push(unit(projection, x)?);
    }
    let logits: Vec<f64> = units.iter().map(|(y, _)| yq.dot(y) / batch.tau).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let loss = max + z.ln() - logits[0];
    let probs: Vec<f64> = logits.iter().map(|l| (l - max).exp() / z).collect();

    // dL/ds_i = (p_i - [i = 0]) / tau
    let coef: Vec<f64> = probs
        .iter()
        .enumerate()
        .map(|(i, p)| (p - if i == 0 { 1.0 } else { 0.0 }) / batch.tau)
        .collect();
    let mut g_q = DVector::zeros(yq.len());
    for (c, (y, _)) in coef.iter().zip(&units) {
        g_q += y * *c;
    }
    let back = |y: &DVector<f64>, n: f64, g: &DVector<f64>| (g - y * y.dot(g)) / n;
    let mut grad = back(&yq, nq, &g_q) * DVector::from_column_slice(&batch.query).transpose();
    for ((c, (y, n)), x) in coef.iter().zip(&units).zip(&cands) {
        let g_y = back(y, *n, &(&yq * *c));
        grad += g_y * DVector::from_column_slice(x).transpose();
    }
    Ok((loss, grad))
}

pub const BOS: &str = "<s>";
pub const UNK: &str = "<unk>";

/// Next-token distribution `π(y_t | y_{t-1})`.
pub trait TokenModel: Send + Sync {
    fn vocab(&self) -> &[String];
    fn prob(&self, prev: &str, next: &str) -> f64;

    /// Every context row must be positive and sum to 1 within 1e-6.
    fn check_normalized(&self) -> Result<()> {
        let vocab = self.vocab();
        for prev in std::iter::once(BOS).chain(vocab.iter().map(String::as_str)) {
            let mut total = 0.0;
            for next in vocab {
                let p = self.prob(prev, next);
                if p.is_nan() || p <= 0.0 {
                    return Err(Error::UnnormalizedModel(format!("p({next} | {prev}) = {p}")));
                }
                total += p;
            }
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::UnnormalizedModel(format!("row `{prev}` sums to {total}")));
            }
        }
        Ok(())
    }

    fn log_prob(&self, prev: &str, next: &str) -> f64 {
        self.prob(prev, next).ln()
    }
}

/// Bigram table with an `<unk>` token; out-of-vocabulary tokens map to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramModel {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    /// rows: BOS then vocab order; columns: vocab order
    table: Vec<Vec<f64>>,
}

impl BigramModel {
    /// Explicit table: `rows[prev][next]`. Missing `<unk>` is added with zero
    /// mass only if rows still normalize.
    pub fn from_table(rows: &BTreeMap<String, BTreeMap<String, f64>>) -> Result<Self> {
        let mut vocab: BTreeSet<String> = rows.values().flat_map(|r| r.keys().cloned()).collect();
        vocab.insert(UNK.to_string());
        let vocab: Vec<String> = vocab.into_iter().collect();
        let index: HashMap<String, usize> = vocab.iter().enumerate().map(|(i, v)| (v.clone(), i)).collect();
        let mut table = vec![vec![0.0; vocab.len()]; vocab.len() + 1];
        for (prev, row) in rows {
            let r = if prev == BOS {
                0
            } else {
                1 + *index.get(prev).ok_or_else(|| Error::UnnormalizedModel(format!("context `{prev}` is not a token")))?
            };
            for (next, p) in row {
                table[r][index[next]] = *p;
            }
        }
        Ok(Self { vocab, index, table })
    }

    /// Add-`k` smoothed bigram estimates from token sequences.
    pub fn fit<S: AsRef<str>>(sentences: &[S], add_k: f64) -> Result<Self> {
        if add_k <= 0.0 {
            return Err(Error::InvalidConfig("add_k must be positive".into()));
        }
        let seqs: Vec<Vec<String>> = sentences.iter().map(|s| tokenize(s.as_ref())).collect();
        let mut vocab: BTreeSet<String> = seqs.iter().flatten().cloned().collect();
        vocab.insert(UNK.to_string());
        let vocab: Vec<String> = vocab.into_iter().collect();
        let index: HashMap<String, usize> = vocab.iter().enumerate().map(|(i, v)| (v.clone(), i)).collect();
        let mut counts = vec![vec![add_k; vocab.len()]; vocab.len() + 1];
        for seq in &seqs {
            let mut prev = 0;
            for t in seq {
                let j = index[t];
                counts[prev][j] += 1.0;
                prev = j + 1;
            }
        }
        let table = counts
            .into_iter()
            .map(|row| {
                let s: f64 = row.iter().sum();
                row.into_iter().map(|c| c / s).collect()
            })
            .collect();
        Ok(Self { vocab, index, table })
    }

    fn col(&self, tok: &str) -> usize {
        self.index.get(tok).or_else(|| self.index.get(UNK)).copied().expect("unk present")
    }

    fn row(&self, prev: &str) -> usize {
        if prev == BOS {
            0
        } else {
            1 + self.col(prev)
        }
    }
}

impl TokenModel for BigramModel {
    fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn prob(&self, prev: &str, next: &str) -> f64 {
        self.table[self.row(prev)][self.col(next)]
    }
}

/// Sum of `log π(y_t | y_{t-1})` starting from `<s>`.
pub fn sequence_log_prob(tokens: &[String], model: &dyn TokenModel) -> f64 {
    let mut prev = BOS;
    let mut total = 0.0;
    for t in tokens {
        total += model.log_prob(prev, t);
        prev = t;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanLossConfig {
    pub alpha_up: f64,
    pub beta_down: f64,
    pub weight_floor: f64,
}

impl Default for PlanLossConfig {
    fn default() -> Self {
        Self {
            alpha_up: 0.5,
            beta_down: 0.25,
            weight_floor: 0.1,
        }
    }
}

impl PlanLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_up < 0.0 || !(0.0..=1.0).contains(&self.beta_down) {
            return Err(Error::InvalidConfig("alpha_up must be ≥ 0 and beta_down in [0, 1]".into()));
        }
        if !(self.weight_floor > 0.0 && self.weight_floor <= 1.0) {
            return Err(Error::InvalidConfig("weight_floor must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// `w(y_t; φ)`: up-weight φ keyword tokens, down-weight facet-looking tokens
/// outside φ, 1 otherwise (and everywhere when φ is empty).
pub fn token_weight(token: &str, phi: &FacetIndicatorMap, phi_tokens: &BTreeSet<String>, cfg: &PlanLossConfig, tables: &FacetTables) -> f64 {
    if phi.is_empty() {
        return 1.0;
    }
    let t = token.to_lowercase();
    let w = if phi_tokens.contains(&t) {
        1.0 + cfg.alpha_up
    } else if tables.facet_kind_of_token(&t).is_some() {
        1.0 - cfg.beta_down
    } else {
        1.0
    };
    w.max(cfg.weight_floor)
}

/// Facet-weighted negative log-likelihood of a token sequence.
pub fn loss_plan(
    tokens: &[String],
    model: &dyn TokenModel,
    phi: &FacetIndicatorMap,
    cfg: &PlanLossConfig,
    tables: &FacetTables,
) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::InvalidConfig("plan loss needs a non-empty sequence".into()));
    }
    model.check_normalized()?;
    let phi_tokens = phi.keyword_tokens();
    let mut prev = BOS;
    let mut loss = 0.0;
    for t in tokens {
        loss -= token_weight(t, phi, &phi_tokens, cfg, tables) * model.log_prob(prev, t);
        prev = t;
    }
    Ok(loss)
}

/// `-ln σ(a - b)`, computed stably.
pub fn loss_pref(score_preferred: f64, score_rejected: f64) -> f64 {
    let x = score_preferred - score_rejected;
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Fraction of active facets with a keyword in at least one query; 1 when φ
/// is empty.
pub fn coverage_score<S: AsRef<str>>(queries: &[S], phi: &FacetIndicatorMap) -> f64 {
    if phi.is_empty() {
        return 1.0;
    }
    let covered = phi
        .facets
        .values()
        .filter(|f| {
            f.keywords
                .iter()
                .any(|k| queries.iter().any(|q| mentions_keyword(q.as_ref(), k)))
        })
        .count();
    covered as f64 / phi.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub ret: f64,
    pub pref: f64,
    pub cov: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            ret: 1.0,
            pref: 0.5,
            cov: 0.5,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.ret, self.pref, self.cov].iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidConfig("objective weights must be finite and ≥ 0".into()));
        }
        Ok(())
    }

    /// `L_plan + λ_ret L_ret + λ_pref L_pref + λ_cov (1 - coverage)`.
    pub fn combine(&self, plan: f64, ret: f64, pref: f64, coverage: f64) -> f64 {
        plan + self.ret * ret + self.pref * pref + self.cov * (1.0 - coverage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub tau: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub pool_size: usize,
    pub margin: f64,
    pub n_neg: usize,
    /// Full-scale recipe, kept as metadata only.
    pub recipe_lr: f64,
    pub recipe_schedule: String,
    pub recipe_beta2: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            lr: 0.05,
            epochs: 200,
            seed: 7,
            pool_size: 64,
            margin: 0.05,
            n_neg: 4,
            recipe_lr: 1e-5,
            recipe_schedule: "cosine".into(),
            recipe_beta2: 0.98,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau <= 0.0 || self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::InvalidConfig("tau and lr must be positive".into()));
        }
        if self.n_neg == 0 || self.pool_size < self.n_neg {
            return Err(Error::InvalidConfig("need 1 ≤ n_neg ≤ pool_size".into()));
        }
        if self.margin < 0.0 {
            return Err(Error::InvalidConfig("margin must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub query: EmbeddingVector,
    pub positive: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub projection: DMatrix<f64>,
    /// Mean loss at the start of each epoch.
    pub curve: Vec<f64>,
}

/// Full-batch gradient descent on the mean contrastive loss from the
/// identity; negatives are re-mined against the current projection each
/// epoch.
pub fn train_projection(
    examples: &[TrainExample],
    rules: &BTreeMap<String, EmbeddingVector>,
    cfg: &TrainingConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyCorpus("training examples"));
    }
    let dim = examples[0].query.dim();
    let mut p = DMatrix::<f64>::identity(dim, dim);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (loss, grad) = epoch_loss(examples, rules, &p, cfg)?;
        curve.push(loss);
        p -= grad * cfg.lr;
    }
    Ok(TrainOutcome { projection: p, curve })
}

/// Mean loss and gradient over the examples that yield negatives.
pub fn epoch_loss(
    examples: &[TrainExample],
    rules: &BTreeMap<String, EmbeddingVector>,
    p: &DMatrix<f64>,
    cfg: &TrainingConfig,
) -> Result<(f64, DMatrix<f64>)> {
    let parts: Vec<Option<(f64, DMatrix<f64>)>> = examples
        .par_iter()
        .map(|ex| {
            let positive = rules
                .get(&ex.positive)
                .ok_or_else(|| Error::UnknownDoc(ex.positive.clone()))?;
            let ranked = rank_vectors(ex.query.as_slice(), rules.iter(), Some(p))?;
            let pos: BTreeSet<String> = [ex.positive.clone()].into();
            let mined = mine_from_ranking(&ranked, &pos, cfg.pool_size, cfg.margin, cfg.n_neg)?;
            if mined.negatives.is_empty() {
                return Ok(None);
            }
            let batch = ContrastiveBatch {
                query: ex.query.as_slice().to_vec(),
                positive: positive.as_slice().to_vec(),
                negatives: mined.negatives.iter().map(|id| rules[id].as_slice().to_vec()).collect(),
                tau: cfg.tau,
            };
            loss_ret(&batch, p).map(Some)
        })
        .collect::<Result<_>>()?;
    let dim = p.ncols();
    let mut total = 0.0;
    let mut grad = DMatrix::zeros(p.nrows(), dim);
    let mut n = 0usize;
    for (l, g) in parts.into_iter().flatten() {
        total += l;
        grad += g;
        n += 1;
    }
    if n == 0 {
        return Ok((0.0, grad));
    }
    Ok((total / n as f64, grad / n as f64))
}

/// Fraction of examples whose positive ranks first.
pub fn top1_accuracy(examples: &[TrainExample], rules: &BTreeMap<String, EmbeddingVector>, p: Option<&DMatrix<f64>>) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for ex in examples {
        let ranked = rank_vectors(ex.query.as_slice(), rules.iter(), p)?;
        if ranked.first().is_some_and(|(id, _)| *id == ex.positive) {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

/// Training pairs from a built base: each hard cluster member's question
/// paired with its cluster's rule, plus every rule's sentence embedding.
pub fn examples_from_base(
    base: &ExperienceBaseVersion,
    tuples: &[QaTuple],
    encoder: &dyn TextEncoder,
) -> Result<(Vec<TrainExample>, BTreeMap<String, EmbeddingVector>)> {
    let rules = base
        .rules
        .values()
        .map(|r| Ok((r.rule_id.clone(), encoder.embed(&r.rule.core_guidance)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let by_id: BTreeMap<&str, &QaTuple> = tuples.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut examples = Vec::new();
    for c in &base.clusters {
        let Some(rule) = base.cluster_rules.get(&c.cluster_id).and_then(|id| base.resolve(id)) else { continue };
        for m in c.members.iter().filter(|m| !m.soft) {
            if let Some(t) = by_id.get(m.id.as_str()) {
                examples.push(TrainExample {
                    query: encoder.embed(&t.question)?,
                    positive: rule.rule_id.clone(),
                });
            }
        }
    }
    if examples.is_empty() {
        return Err(Error::EmptyCorpus("training examples"));
    }
    Ok((examples, rules))
}

#[derive(Serialize, Deserialize)]
struct ProjectionFile {
    rows: usize,
    cols: usize,
    /// Row-major.
    data: Vec<f64>,
}

pub fn save_projection(path: impl AsRef<Path>, p: &DMatrix<f64>) -> Result<()> {
    let file = ProjectionFile {
        rows: p.nrows(),
        cols: p.ncols(),
        data: p.transpose().as_slice().to_vec(),
    };
    std::fs::write(path, serde_json::to_vec(&file)?)?;
    Ok(())
}

pub fn load_projection(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let file: ProjectionFile = serde_json::from_slice(&std::fs::read(path)?)?;
    if file.data.len() != file.rows * file.cols {
        return Err(Error::DimensionMismatch {
            left: file.rows * file.cols,
            right: file.data.len(),
        });
    }
    Ok(DMatrix::from_row_slice(file.rows, file.cols, &file.data))
}

/// Two-topic retrieval toy problem. The first half of the dimensions carries
/// the signal shared by a rule and its queries; rules and queries each add an
/// independent nuisance component in the second half that a learned
/// projection can suppress. `train` holds several queries per rule.
#[derive(Debug, Clone)]
pub struct ToySet {
    pub rules: BTreeMap<String, EmbeddingVector>,
    pub train: Vec<TrainExample>,
    pub held_out: Vec<TrainExample>,
}

const RULE_NUISANCE: f64 = 1.2;
const QUERY_NUISANCE: f64 = 1.5;
const TRAIN_QUERIES_PER_RULE: usize = 4;

pub fn separable_toy_set(seed: u64, n_pairs: usize, dim: usize) -> Result<ToySet> {
    if dim < 4 || !dim.is_multiple_of(2) || n_pairs < 2 {
        return Err(Error::InvalidConfig("toy set needs an even dim ≥ 4 and ≥ 2 pairs".into()));
    }
    let half = dim / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| {
                // Box-Muller
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect()
    };
    let scale = |v: Vec<f64>, s: f64| -> Vec<f64> {
        let n = l2_norm(&v).max(1e-12);
        v.into_iter().map(|x| x * s / n).collect()
    };
    let topics = [scale(gauss(&mut rng, half), 1.0), scale(gauss(&mut rng, half), 1.0)];
    let mut rules = BTreeMap::new();
    let mut signals = Vec::new();
    for i in 0..n_pairs {
        let t = &topics[i % 2];
        let u = scale(gauss(&mut rng, half), 0.8);
        let sig: Vec<f64> = t.iter().zip(&u).map(|(a, b)| a + b).collect();
        let mut v = sig.clone();
        v.extend(scale(gauss(&mut rng, half), RULE_NUISANCE));
        rules.insert(format!("r{i:02}"), EmbeddingVector::normalized(v)?);
        signals.push(sig);
    }
    let make_query = |rng: &mut ChaCha8Rng, i: usize| -> Result<TrainExample> {
        let noise = scale(gauss(rng, half), 0.1);
        let mut v: Vec<f64> = signals[i].iter().zip(&noise).map(|(a, b)| a + b).collect();
        v.extend(scale(gauss(rng, half), QUERY_NUISANCE));
        Ok(TrainExample {
            query: EmbeddingVector::normalized(v)?,
            positive: format!("r{i:02}"),
        })
    };
    let train = (0..n_pairs * TRAIN_QUERIES_PER_RULE)
        .map(|j| make_query(&mut rng, j % n_pairs))
        .collect::<Result<_>>()?;
    let held_out = (0..n_pairs).map(|i| make_query(&mut rng, i)).collect::<Result<_>>()?;
    Ok(ToySet { rules, train, held_out })
}
