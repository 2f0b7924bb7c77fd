//! Multi-view QA clustering.
//!
//! Tuples are compared under a weighted mix of three cosine views (question,
//! answer, and joint question+answer text). Clustering is a density
//! expansion whose radius adapts to the data: `eps` is the 90th percentile of
//! each point's distance to its `min_cluster_size`-th nearest neighbour.
//! After the hard partition is formed, tuples gain soft membership in other
//! clusters whose medoid is similar enough. [`merge_topics`] then folds
//! near-duplicate clusters together, and [`warm_start_refresh`] grows an
//! existing clustering with new tuples without renaming surviving clusters.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canonicalize::QaTuple;
use crate::error::{Error, Result};
use crate::textmodel::{dot, EmbeddingVector, TextEncoder};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiViewWeights {
    pub question: f64,
    pub answer: f64,
    pub joint: f64,
}

impl Default for MultiViewWeights {
    fn default() -> Self {
        Self {
            question: 0.5,
            answer: 0.3,
            joint: 0.2,
        }
    }
}

impl MultiViewWeights {
    pub fn new(question: f64, answer: f64, joint: f64) -> Result<Self> {
        let w = Self {
            question,
            answer,
            joint,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.question, self.answer, self.joint];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig("view weights must be non-negative".into()));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("view weights must sum to 1".into()));
        }
        Ok(())
    }
}

/// The three embeddings of one tuple. Answer-dependent views are absent for
/// answerless tuples.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleViews {
    pub question: EmbeddingVector,
    pub answer: Option<EmbeddingVector>,
    pub joint: Option<EmbeddingVector>,
}

impl TupleViews {
    pub fn of(tuple: &QaTuple, encoder: &dyn TextEncoder) -> Result<Self> {
        let question = encoder.embed(tuple.intent_text())?;
        let (answer, joint) = match tuple.answer.as_deref() {
            Some(a) if !a.trim().is_empty() => (
                Some(encoder.embed(a)?),
                Some(encoder.embed(&format!("{} {}", tuple.question, a))?),
            ),
            _ => (None, None),
        };
        Ok(Self {
            question,
            answer,
            joint,
        })
    }
}

/// Weighted multi-view similarity. Views missing on either side drop out and
/// the remaining weights are renormalized.
pub fn view_similarity(a: &TupleViews, b: &TupleViews, w: &MultiViewWeights) -> f64 {
    let mut total = w.question;
    let mut acc = w.question * dot(a.question.as_slice(), b.question.as_slice());
    if let (Some(x), Some(y)) = (&a.answer, &b.answer) {
        total += w.answer;
        acc += w.answer * dot(x.as_slice(), y.as_slice());
    }
    if let (Some(x), Some(y)) = (&a.joint, &b.joint) {
        total += w.joint;
        acc += w.joint * dot(x.as_slice(), y.as_slice());
    }
    if total <= 0.0 {
        return dot(a.question.as_slice(), b.question.as_slice()).clamp(-1.0, 1.0);
    }
    (acc / total).clamp(-1.0, 1.0)
}

/// Convenience wrapper embedding both tuples on the fly.
pub fn multiview_similarity(
    p: &QaTuple,
    q: &QaTuple,
    w: &MultiViewWeights,
    encoder: &dyn TextEncoder,
) -> Result<f64> {
    Ok(view_similarity(
        &TupleViews::of(p, encoder)?,
        &TupleViews::of(q, encoder)?,
        w,
    ))
}

/// Embeddings for every tuple of a dataset, keyed by tuple id.
#[derive(Debug, Clone, Default)]
pub struct ViewTable {
    views: BTreeMap<String, TupleViews>,
}

impl ViewTable {
    pub fn build(tuples: &[QaTuple], encoder: &dyn TextEncoder) -> Result<Self> {
        let computed: Vec<(String, TupleViews)> = tuples
            .par_iter()
            .map(|t| Ok((t.id.clone(), TupleViews::of(t, encoder)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            views: computed.into_iter().collect(),
        })
    }

    pub fn extend(&mut self, tuples: &[QaTuple], encoder: &dyn TextEncoder) -> Result<()> {
        let more = Self::build(tuples, encoder)?;
        self.views.extend(more.views);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&TupleViews> {
        self.views
            .get(id)
            .ok_or_else(|| Error::UnknownDoc(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.views.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn similarity(&self, a: &str, b: &str, w: &MultiViewWeights) -> Result<f64> {
        Ok(view_similarity(self.get(a)?, self.get(b)?, w))
    }

    /// Projects every view onto its top `d` principal components and
    /// renormalizes. Each view kind gets its own basis.
    pub fn reduced(&self, d: usize) -> Result<Self> {
        let ids: Vec<&String> = self.views.keys().collect();
        let q: Vec<Option<&EmbeddingVector>> =
            ids.iter().map(|id| Some(&self.views[*id].question)).collect();
        let a: Vec<Option<&EmbeddingVector>> =
            ids.iter().map(|id| self.views[*id].answer.as_ref()).collect();
        let j: Vec<Option<&EmbeddingVector>> =
            ids.iter().map(|id| self.views[*id].joint.as_ref()).collect();
        let (q, a, j) = (pca_project(&q, d)?, pca_project(&a, d)?, pca_project(&j, d)?);
        let mut views = BTreeMap::new();
        for (i, id) in ids.iter().enumerate() {
            views.insert(
                (*id).clone(),
                TupleViews {
                    question: q[i].clone().ok_or(Error::DegenerateVector)?,
                    answer: a[i].clone(),
                    joint: j[i].clone(),
                },
            );
        }
        Ok(Self { views })
    }
}

fn pca_project(
    vectors: &[Option<&EmbeddingVector>],
    d: usize,
) -> Result<Vec<Option<EmbeddingVector>>> {
    let present: Vec<&EmbeddingVector> = vectors.iter().flatten().copied().collect();
    if present.is_empty() {
        return Ok(vec![None; vectors.len()]);
    }
    let dim = present[0].dim();
    let n = present.len();
    let mut mean = DVector::<f64>::zeros(dim);
    for v in &present {
        mean += DVector::from_column_slice(v.as_slice());
    }
    mean /= n as f64;
    let mut centered = DMatrix::<f64>::zeros(n, dim);
    for (r, v) in present.iter().enumerate() {
        for c in 0..dim {
            centered[(r, c)] = v.as_slice()[c] - mean[c];
        }
    }
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let d = d.min(dim);
    let mut basis = DMatrix::<f64>::zeros(dim, d);
    for (k, &col) in order.iter().take(d).enumerate() {
        let mut v = eig.eigenvectors.column(col).into_owned();
        // sign convention: largest-magnitude coordinate positive
        let (imax, _) = v
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, x)| if x.abs() > acc.1 { (i, x.abs()) } else { acc });
        if v[imax] < 0.0 {
            v = -v;
        }
        basis.set_column(k, &v);
    }
    vectors
        .iter()
        .map(|v| match v {
            None => Ok(None),
            Some(v) => {
                let x = DVector::from_column_slice(v.as_slice()) - &mean;
                let y = basis.transpose() * x;
                // a vector sitting exactly on the mean keeps its raw direction
                match EmbeddingVector::normalized(y.iter().copied().collect()) {
                    Ok(e) => Ok(Some(e)),
                    Err(_) => Ok(Some(EmbeddingVector::normalized(
                        (basis.transpose() * DVector::from_column_slice(v.as_slice()))
                            .iter()
                            .copied()
                            .collect(),
                    )?)),
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub weights: MultiViewWeights,
    pub min_cluster_size: usize,
    pub soft_threshold: f64,
    pub merge_threshold: f64,
    /// Percentile of k-NN distances used as the density radius.
    pub knn_percentile: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            weights: MultiViewWeights::default(),
            min_cluster_size: 2,
            soft_threshold: 0.45,
            merge_threshold: 0.85,
            knn_percentile: 0.9,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.min_cluster_size == 0 {
            return Err(Error::InvalidConfig("min_cluster_size must be ≥ 1".into()));
        }
        if !(self.soft_threshold > 0.0 && self.soft_threshold < 1.0) {
            return Err(Error::InvalidConfig("soft_threshold must lie in (0, 1)".into()));
        }
        if !(self.merge_threshold > 0.0 && self.merge_threshold <= 1.0) {
            return Err(Error::InvalidConfig("merge_threshold must lie in (0, 1]".into()));
        }
        if !(self.knn_percentile > 0.0 && self.knn_percentile <= 1.0) {
            return Err(Error::InvalidConfig("knn_percentile must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub id: String,
    pub weight: f64,
    /// Soft (overlapping) membership rather than part of the hard partition.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub soft: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub cluster_id: String,
    pub aliases: Vec<String>,
    /// Sorted by tuple id.
    pub members: Vec<Membership>,
    pub medoid_id: String,
    pub centroid: EmbeddingVector,
}

impl Cluster {
    pub fn hard_member_ids(&self) -> impl Iterator<Item = &str> {
        self.members.iter().filter(|m| !m.soft).map(|m| m.id.as_str())
    }

    pub fn member_ids(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|m| m.id.as_str())
    }

    pub fn weight_of(&self, id: &str) -> Option<f64> {
        self.members.iter().find(|m| m.id == id).map(|m| m.weight)
    }

    fn from_hard(id: String, hard: Vec<String>, views: &ViewTable, w: &MultiViewWeights) -> Result<Self> {
        let mut c = Cluster {
            cluster_id: id,
            aliases: Vec::new(),
            members: hard
                .into_iter()
                .map(|id| Membership {
                    id,
                    weight: 1.0,
                    soft: false,
                })
                .collect(),
            medoid_id: String::new(),
            centroid: EmbeddingVector::from_raw(Vec::new()),
        };
        c.members.sort_by(|a, b| a.id.cmp(&b.id));
        c.recompute(views, w)?;
        Ok(c)
    }

    /// Recomputes medoid (max summed similarity to the other hard members,
    /// ties to the smaller id) and centroid (normalized mean of hard members'
    /// question embeddings).
    pub fn recompute(&mut self, views: &ViewTable, w: &MultiViewWeights) -> Result<()> {
        let hard: Vec<String> = self.hard_member_ids().map(str::to_string).collect();
        if hard.is_empty() {
            return Err(Error::EmptyCluster(self.cluster_id.clone()));
        }
        let mut best: Option<(f64, &str)> = None;
        for a in &hard {
            let mut total = 0.0;
            for b in &hard {
                if a != b {
                    total += views.similarity(a, b, w)?;
                }
            }
            if best.is_none_or(|(s, _)| total > s) {
                best = Some((total, a));
            }
        }
        self.medoid_id = best.map(|(_, id)| id.to_string()).unwrap_or_default();
        let qs = hard
            .iter()
            .map(|id| views.get(id).map(|v| &v.question))
            .collect::<Result<Vec<_>>>()?;
        self.centroid = EmbeddingVector::mean_of(qs)?;
        Ok(())
    }

    pub fn record(&self) -> ClusterRecord {
        ClusterRecord {
            cluster_id: self.cluster_id.clone(),
            aliases: self.aliases.clone(),
            medoid_id: self.medoid_id.clone(),
            members: self.members.clone(),
        }
    }

    /// Rebuilds a cluster from its dump record, recomputing the centroid.
    pub fn from_record(record: ClusterRecord, views: &ViewTable) -> Result<Self> {
        let qs = record
            .members
            .iter()
            .filter(|m| !m.soft)
            .map(|m| views.get(&m.id).map(|v| &v.question))
            .collect::<Result<Vec<_>>>()?;
        let centroid = EmbeddingVector::mean_of(qs)?;
        Ok(Self {
            cluster_id: record.cluster_id,
            aliases: record.aliases,
            members: record.members,
            medoid_id: record.medoid_id,
            centroid,
        })
    }
}

/// Cluster dump line: `{cluster_id, aliases, medoid_id, members: [{id, weight}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub cluster_id: String,
    pub aliases: Vec<String>,
    pub medoid_id: String,
    pub members: Vec<Membership>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    pub clusters: Vec<Cluster>,
    pub noise: Vec<String>,
}

/// Id given to a freshly formed cluster: derived from its smallest member.
pub fn fresh_cluster_id(min_member: &str) -> String {
    format!("c-{min_member}")
}

fn similarity_matrix(ids: &[String], views: &ViewTable, w: &MultiViewWeights) -> Result<Vec<Vec<f64>>> {
    let vs = ids.iter().map(|id| views.get(id)).collect::<Result<Vec<_>>>()?;
    Ok((0..vs.len())
        .into_par_iter()
        .map(|i| (0..vs.len()).map(|j| view_similarity(vs[i], vs[j], w)).collect())
        .collect())
}

/// Nearest-rank percentile of `values` (which must be non-empty).
pub(crate) fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// The density radius for a set of points given their pairwise similarities.
pub(crate) fn density_radius(sim: &[Vec<f64>], min_cluster_size: usize, p: f64) -> f64 {
    let n = sim.len();
    if n <= 1 {
        return 0.0;
    }
    let k = min_cluster_size.clamp(1, n - 1);
    let knn: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| 1.0 - sim[i][j]).collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect();
    percentile(&knn, p)
}

/// Density clustering of the tuples named by `ids`.
pub fn cluster_qa(ids: &[String], views: &ViewTable, params: &ClusterParams) -> Result<ClusterOutcome> {
    params.validate()?;
    let mut ids: Vec<String> = ids.to_vec();
    ids.sort();
    ids.dedup();
    let n = ids.len();
    if n == 0 {
        return Ok(ClusterOutcome {
            clusters: Vec::new(),
            noise: Vec::new(),
        });
    }
    let sim = similarity_matrix(&ids, views, &params.weights)?;
    let eps = density_radius(&sim, params.min_cluster_size, params.knn_percentile);
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j == i || 1.0 - sim[i][j] <= eps + 1e-12).collect())
        .collect();
    let core: Vec<bool> = neighbours
        .iter()
        .map(|nb| nb.len() >= params.min_cluster_size)
        .collect();

    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if !core[start] || label[start].is_some() {
            continue;
        }
        let gid = groups.len();
        let mut members = vec![start];
        label[start] = Some(gid);
        let mut frontier = vec![start];
        while let Some(p) = frontier.pop() {
            for &q in &neighbours[p] {
                if label[q].is_none() {
                    label[q] = Some(gid);
                    members.push(q);
                    if core[q] {
                        frontier.push(q);
                    }
                }
            }
        }
        members.sort_unstable();
        groups.push(members);
    }

    let mut clusters = groups
        .iter()
        .map(|g| {
            let hard: Vec<String> = g.iter().map(|&i| ids[i].clone()).collect();
            Cluster::from_hard(fresh_cluster_id(&hard[0]), hard, views, &params.weights)
        })
        .collect::<Result<Vec<_>>>()?;

    assign_soft(&mut clusters, &ids, views, params, |_| true)?;
    let noise = collect_noise(&clusters, &ids);
    clusters.sort_by(|a, b| a.cluster_id.cmp(&b.cluster_id));
    Ok(ClusterOutcome { clusters, noise })
}

/// Adds weight-`s` membership for every tuple in `ids` to clusters (accepted
/// by `filter`) it is not already a member of, when medoid similarity
/// `s ≥ soft_threshold`.
fn assign_soft<F>(
    clusters: &mut [Cluster],
    ids: &[String],
    views: &ViewTable,
    params: &ClusterParams,
    filter: F,
) -> Result<()>
where
    F: Fn(&Cluster) -> bool,
{
    for c in clusters.iter_mut().filter(|c| filter(c)) {
        let existing: HashSet<String> = c.members.iter().map(|m| m.id.clone()).collect();
        for id in ids {
            if existing.contains(id) {
                continue;
            }
            let s = views.similarity(id, &c.medoid_id, &params.weights)?;
            if s >= params.soft_threshold {
                c.members.push(Membership {
                    id: id.clone(),
                    weight: s.min(1.0),
                    soft: true,
                });
            }
        }
        c.members.sort_by(|a, b| a.id.cmp(&b.id));
    }
    Ok(())
}

fn collect_noise(clusters: &[Cluster], ids: &[String]) -> Vec<String> {
    let covered: HashSet<&str> = clusters.iter().flat_map(|c| c.member_ids()).collect();
    ids.iter().filter(|id| !covered.contains(id.as_str())).cloned().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub clusters: Vec<Cluster>,
    /// `(absorbed_id, surviving_id)` in merge order.
    pub merges: Vec<(String, String)>,
}

fn merge_members(into: &mut Vec<Membership>, from: Vec<Membership>) {
    let mut by_id: BTreeMap<String, Membership> =
        std::mem::take(into).into_iter().map(|m| (m.id.clone(), m)).collect();
    for m in from {
        match by_id.get_mut(&m.id) {
            None => {
                by_id.insert(m.id.clone(), m);
            }
            Some(cur) => {
                if !m.soft {
                    cur.soft = false;
                    cur.weight = 1.0;
                } else if cur.soft {
                    cur.weight = cur.weight.max(m.weight);
                }
            }
        }
    }
    *into = by_id.into_values().collect();
}

/// Repeatedly merges the most similar pair of clusters (centroid cosine ≥
/// `merge_threshold`) until no pair qualifies. The smaller id survives unless
/// exactly one of the pair is in `protected`, in which case that one does.
pub fn merge_topics_with(
    clusters: Vec<Cluster>,
    views: &ViewTable,
    params: &ClusterParams,
    protected: &HashSet<String>,
) -> Result<MergeOutcome> {
    let mut clusters = clusters;
    clusters.sort_by(|a, b| a.cluster_id.cmp(&b.cluster_id));
    let mut merges = Vec::new();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                let s = dot(clusters[i].centroid.as_slice(), clusters[j].centroid.as_slice());
                if s >= params.merge_threshold && best.is_none_or(|(b, _, _)| s > b) {
                    best = Some((s, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        let (pi, pj) = (
            protected.contains(&clusters[i].cluster_id),
            protected.contains(&clusters[j].cluster_id),
        );
        let (keep, drop) = if pj && !pi { (j, i) } else { (i, j) };
        let absorbed = clusters.remove(drop);
        let keep = if drop < keep { keep - 1 } else { keep };
        let survivor = &mut clusters[keep];
        merges.push((absorbed.cluster_id.clone(), survivor.cluster_id.clone()));
        let mut aliases: BTreeSet<String> = survivor.aliases.drain(..).collect();
        aliases.insert(absorbed.cluster_id.clone());
        aliases.extend(absorbed.aliases);
        survivor.aliases = aliases.into_iter().collect();
        merge_members(&mut survivor.members, absorbed.members);
        survivor.recompute(views, &params.weights)?;
    }
    Ok(MergeOutcome { clusters, merges })
}

/// Topic merging with the plain smaller-id-survives rule.
pub fn merge_topics(clusters: Vec<Cluster>, views: &ViewTable, params: &ClusterParams) -> Result<MergeOutcome> {
    merge_topics_with(clusters, views, params, &HashSet::new())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefreshOutcome {
    pub clusters: Vec<Cluster>,
    /// Clusters whose membership or medoid changed, plus new clusters.
    pub changed: BTreeSet<String>,
    /// `(absorbed_id, surviving_id)` between previously existing clusters.
    pub merges: Vec<(String, String)>,
    /// Existing clusters with no successor (all members became noise).
    pub retired: Vec<String>,
    pub noise: Vec<String>,
}

/// The clustering of every tuple in `views`, exactly as a full build
/// computes it.
fn full_partition(views: &ViewTable, params: &ClusterParams, merge: bool) -> Result<Vec<Cluster>> {
    let ids: Vec<String> = views.ids().map(str::to_string).collect();
    let fresh = cluster_qa(&ids, views, params)?;
    if merge {
        Ok(merge_topics(fresh.clusters, views, params)?.clusters)
    } else {
        Ok(fresh.clusters)
    }
}

/// Incremental refresh: the union of old and new tuples is partitioned as a
/// full build would, then each resulting cluster inherits the id of the
/// existing cluster it shares the most hard members with. Other existing
/// clusters it overlaps are recorded as merged into it. Only clusters whose
/// membership changed are reported as changed.
pub fn warm_start_refresh(
    existing: &[Cluster],
    new_ids: &[String],
    views: &ViewTable,
    params: &ClusterParams,
    merge: bool,
) -> Result<RefreshOutcome> {
    params.validate()?;
    let mut old: Vec<Cluster> = existing.to_vec();
    old.sort_by(|a, b| a.cluster_id.cmp(&b.cluster_id));
    let mut new_ids: Vec<String> = new_ids.to_vec();
    new_ids.sort();
    new_ids.dedup();
    if new_ids.is_empty() {
        return Ok(RefreshOutcome {
            clusters: old,
            changed: BTreeSet::new(),
            merges: Vec::new(),
            retired: Vec::new(),
            noise: Vec::new(),
        });
    }

    let mut clusters = full_partition(views, params, merge)?;
    let hard_sets = |cs: &[Cluster]| -> Vec<HashSet<String>> {
        cs.iter().map(|c| c.hard_member_ids().map(str::to_string).collect()).collect()
    };
    let (fresh_sets, old_sets) = (hard_sets(&clusters), hard_sets(&old));

    // (overlap, old index, fresh index), largest overlap first
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (fi, f) in fresh_sets.iter().enumerate() {
        for (oi, o) in old_sets.iter().enumerate() {
            let n = f.intersection(o).count();
            if n > 0 {
                pairs.push((n, oi, fi));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut heir: BTreeMap<usize, usize> = BTreeMap::new();
    let mut claimed: HashSet<usize> = HashSet::new();
    for &(_, oi, fi) in &pairs {
        if !heir.contains_key(&fi) && !claimed.contains(&oi) {
            heir.insert(fi, oi);
            claimed.insert(oi);
        }
    }
    // unclaimed old clusters fold into the fresh cluster they overlap most
    let mut absorbed_into: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut retired = Vec::new();
    for (oi, c) in old.iter().enumerate() {
        if claimed.contains(&oi) {
            continue;
        }
        match pairs.iter().find(|p| p.1 == oi) {
            Some(&(_, _, fi)) => absorbed_into.entry(fi).or_default().push(oi),
            None => retired.push(c.cluster_id.clone()),
        }
    }

    let mut reserved: HashSet<String> = old
        .iter()
        .flat_map(|c| std::iter::once(c.cluster_id.clone()).chain(c.aliases.iter().cloned()))
        .collect();
    let mut changed = BTreeSet::new();
    let mut merges = Vec::new();
    for (fi, c) in clusters.iter_mut().enumerate() {
        match heir.get(&fi) {
            Some(&oi) => {
                let prev = &old[oi];
                c.cluster_id = prev.cluster_id.clone();
                let mut aliases: BTreeSet<String> = prev.aliases.iter().cloned().collect();
                for &ai in absorbed_into.get(&fi).into_iter().flatten() {
                    aliases.insert(old[ai].cluster_id.clone());
                    aliases.extend(old[ai].aliases.iter().cloned());
                    merges.push((old[ai].cluster_id.clone(), prev.cluster_id.clone()));
                }
                c.aliases = aliases.into_iter().collect();
                if c.members != prev.members || c.medoid_id != prev.medoid_id || absorbed_into.contains_key(&fi) {
                    changed.insert(c.cluster_id.clone());
                }
            }
            None => {
                let base = c.cluster_id.clone();
                let mut id = base.clone();
                let mut n = 1;
                while reserved.contains(&id) {
                    id = format!("{base}.{n}");
                    n += 1;
                }
                reserved.insert(id.clone());
                c.cluster_id = id;
                c.aliases.retain(|a| !reserved.contains(a));
                changed.insert(c.cluster_id.clone());
            }
        }
    }
    clusters.sort_by(|a, b| a.cluster_id.cmp(&b.cluster_id));
    let noise = collect_noise(&clusters, &new_ids);
    Ok(RefreshOutcome {
        clusters,
        changed,
        merges,
        retired,
        noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textmodel::HashedNgramEncoder;

    fn qa(id: &str, q: &str, a: &str) -> QaTuple {
        QaTuple::new(id, q).with_answer(a)
    }

    fn table_tuples() -> Vec<QaTuple> {
        vec![
            qa(
                "t1",
                "When is diversification most effective in portfolio risk management?",
                "Diversification is most effective when portfolio assets are uncorrelated.",
            ),
            qa(
                "t2",
                "Does asset correlation affect diversification benefits in investing?",
                "Yes, higher correlation among assets reduces the risk reduction benefit of diversification.",
            ),
            qa(
                "t3",
                "How do correlations impact portfolio volatility?",
                "Lower asset correlations lead to lower overall portfolio volatility due to better risk spreading.",
            ),
        ]
    }

    #[test]
    fn weights_validate() {
        assert!(MultiViewWeights::new(0.5, 0.3, 0.2).is_ok());
        assert!(MultiViewWeights::new(0.5, 0.3, 0.3).is_err());
        assert!(MultiViewWeights::new(1.2, -0.2, 0.0).is_err());
    }

    #[test]
    fn self_similarity_and_degenerate_weights() {
        let enc = HashedNgramEncoder::default();
        let t = table_tuples();
        let w = MultiViewWeights::default();
        assert!((multiview_similarity(&t[0], &t[0], &w, &enc).unwrap() - 1.0).abs() < 1e-12);
        let qonly = MultiViewWeights::new(1.0, 0.0, 0.0).unwrap();
        let expected = crate::textmodel::cosine(
            &enc.embed(&t[0].question).unwrap(),
            &enc.embed(&t[1].question).unwrap(),
        )
        .unwrap();
        let got = multiview_similarity(&t[0], &t[1], &qonly, &enc).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn table_pair_matches_three_cosine_oracle() {
        let enc = HashedNgramEncoder::default();
        let t = table_tuples();
        let cos = |a: &str, b: &str| {
            crate::textmodel::cosine(&enc.embed(a).unwrap(), &enc.embed(b).unwrap()).unwrap()
        };
        let (a0, a1) = (t[0].answer.as_deref().unwrap(), t[1].answer.as_deref().unwrap());
        let oracle = 0.5 * cos(&t[0].question, &t[1].question)
            + 0.3 * cos(a0, a1)
            + 0.2 * cos(
                &format!("{} {}", t[0].question, a0),
                &format!("{} {}", t[1].question, a1),
            );
        let got = multiview_similarity(&t[0], &t[1], &MultiViewWeights::default(), &enc).unwrap();
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn answerless_renormalizes_to_question_view() {
        let enc = HashedNgramEncoder::default();
        let a = QaTuple::new("a", "alpha beta gamma");
        let b = qa("b", "alpha beta delta", "anything at all");
        let w = MultiViewWeights::default();
        let expected = crate::textmodel::cosine(
            &enc.embed("alpha beta gamma").unwrap(),
            &enc.embed("alpha beta delta").unwrap(),
        )
        .unwrap();
        assert!((multiview_similarity(&a, &b, &w, &enc).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn identical_tuples_form_one_cluster() {
        let enc = HashedNgramEncoder::default();
        let tuples: Vec<QaTuple> = (0..4)
            .map(|i| qa(&format!("x{i}"), "same question here", "same answer"))
            .collect();
        let views = ViewTable::build(&tuples, &enc).unwrap();
        let ids: Vec<String> = tuples.iter().map(|t| t.id.clone()).collect();
        let out = cluster_qa(&ids, &views, &ClusterParams::default()).unwrap();
        assert_eq!(out.clusters.len(), 1);
        assert!(out.noise.is_empty());
        assert!(out.clusters[0].members.iter().all(|m| m.weight == 1.0 && !m.soft));
        assert_eq!(out.clusters[0].cluster_id, "c-x0");
    }

    #[test]
    fn single_tuple_edge_cases() {
        let enc = HashedNgramEncoder::default();
        let tuples = vec![qa("only", "lonely question", "lonely answer")];
        let views = ViewTable::build(&tuples, &enc).unwrap();
        let ids = vec!["only".to_string()];
        let out = cluster_qa(&ids, &views, &ClusterParams::default()).unwrap();
        assert!(out.clusters.is_empty());
        assert_eq!(out.noise, ids);
        let p = ClusterParams {
            min_cluster_size: 1,
            ..Default::default()
        };
        let out = cluster_qa(&ids, &views, &p).unwrap();
        assert_eq!(out.clusters.len(), 1);
    }

    #[test]
    fn table_tuples_form_one_cluster() {
        let enc = HashedNgramEncoder::default();
        let tuples = table_tuples();
        let views = ViewTable::build(&tuples, &enc).unwrap();
        let ids: Vec<String> = tuples.iter().map(|t| t.id.clone()).collect();
        let out = cluster_qa(&ids, &views, &ClusterParams::default()).unwrap();
        assert_eq!(out.clusters.len(), 1);
        assert_eq!(out.clusters[0].hard_member_ids().count(), 3);
    }

    #[test]
    fn duplicate_clusters_merge_with_alias() {
        let enc = HashedNgramEncoder::default();
        let tuples = vec![
            qa("a1", "loan caps in ontario", "caps follow provincial rules"),
            qa("a2", "loan caps in ontario", "caps follow provincial rules"),
            qa("b1", "loan caps in ontario", "caps follow provincial rules"),
            qa("b2", "loan caps in ontario", "caps follow provincial rules"),
        ];
        let views = ViewTable::build(&tuples, &enc).unwrap();
        let p = ClusterParams::default();
        let c1 = Cluster::from_hard("c-a1".into(), vec!["a1".into(), "a2".into()], &views, &p.weights).unwrap();
        let c2 = Cluster::from_hard("c-b1".into(), vec!["b1".into(), "b2".into()], &views, &p.weights).unwrap();
        let out = merge_topics(vec![c2, c1], &views, &p).unwrap();
        assert_eq!(out.clusters.len(), 1);
        assert_eq!(out.clusters[0].cluster_id, "c-a1");
        assert_eq!(out.clusters[0].aliases, vec!["c-b1".to_string()]);
        assert_eq!(out.merges, vec![("c-b1".to_string(), "c-a1".to_string())]);
        assert_eq!(out.clusters[0].members.len(), 4);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v = [0.5, 0.1, 0.3, 0.2, 0.4, 0.6, 0.7, 0.8, 0.9, 1.0];
        assert_eq!(percentile(&v, 0.9), 0.9);
        assert_eq!(percentile(&v, 1.0), 1.0);
        assert_eq!(percentile(&[0.42], 0.9), 0.42);
    }

    #[test]
    fn pca_reduction_keeps_unit_vectors() {
        let enc = HashedNgramEncoder::default();
        let tuples = table_tuples();
        let views = ViewTable::build(&tuples, &enc).unwrap();
        let r = views.reduced(2).unwrap();
        for t in &tuples {
            let v = r.get(&t.id).unwrap();
            assert_eq!(v.question.dim(), 2);
            assert!((v.question.norm() - 1.0).abs() < 1e-9);
        }
    }
}
