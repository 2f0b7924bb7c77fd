//! Versioned, append-only experience base.
//!
//! Every version is an immutable snapshot of rules, aliases and cluster
//! records. Version 0 is empty; each later version records the tuples that
//! produced it, so the whole base can be replayed. On disk a store is a
//! directory with `manifest.json`, `config.json` and per-version
//! `rules-<v>.jsonl`, `aliases-<v>.json`, `clusters-<v>.json` and
//! `tuples-<v>.jsonl`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::canonicalize::{read_jsonl, QaTuple};
use crate::clustering::{warm_start_refresh, Cluster, ClusterRecord, ViewTable};
use crate::config::{sha256_hex, PipelineConfig};
use crate::distill::ExperienceRule;
use crate::error::{Error, Result};
use crate::pipeline::Pipeline;

pub fn rule_id(seq: u64) -> String {
    format!("R{seq:06}")
}

fn rule_seq(id: &str) -> Option<u64> {
    id.strip_prefix('R').and_then(|n| n.parse().ok())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceBaseVersion {
    pub version: u64,
    pub parent: Option<u64>,
    pub created_at: DateTime<Utc>,
    pub config_digest: String,
    pub rules: BTreeMap<String, ExperienceRule>,
    /// absorbed rule id → surviving rule id
    pub aliases: BTreeMap<String, String>,
    pub clusters: Vec<ClusterRecord>,
    /// cluster id → rule id
    pub cluster_rules: BTreeMap<String, String>,
    pub next_rule_seq: u64,
}

impl ExperienceBaseVersion {
    fn genesis(config_digest: String) -> Self {
        Self {
            version: 0,
            parent: None,
            created_at: Utc::now(),
            config_digest,
            rules: BTreeMap::new(),
            aliases: BTreeMap::new(),
            clusters: Vec::new(),
            cluster_rules: BTreeMap::new(),
            next_rule_seq: 1,
        }
    }

    /// Follows the alias chain to a live rule.
    pub fn resolve(&self, id: &str) -> Option<&ExperienceRule> {
        let mut cur = id;
        for _ in 0..=self.aliases.len() {
            if let Some(r) = self.rules.get(cur) {
                return Some(r);
            }
            cur = self.aliases.get(cur)?;
        }
        None
    }

    pub fn rules_in_order(&self) -> Vec<&ExperienceRule> {
        self.rules.values().collect()
    }

    /// One rule per line, keys sorted.
    pub fn rules_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in self.rules.values() {
            let v = serde_json::to_value(r).expect("rule serializes");
            out.extend_from_slice(v.to_string().as_bytes());
            out.push(b'\n');
        }
        out
    }

    fn aliases_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(&self.aliases).expect("aliases serialize")
    }

    fn clusters_json(&self) -> Vec<u8> {
        let v = serde_json::json!({
            "clusters": self.clusters,
            "cluster_rules": self.cluster_rules,
        });
        serde_json::to_vec_pretty(&v).expect("clusters serialize")
    }
}

/// Modifications applied on top of a parent version.
#[derive(Debug, Clone, Default)]
pub struct ChangeSet {
    /// `(a, b)` rule pairs; `min(a, b)` survives, the other becomes an alias
    /// and its citations are unioned in.
    pub merges: Vec<(String, String)>,
    /// Inserted or replaced rules, applied after merges.
    pub upserts: Vec<ExperienceRule>,
    /// Rules dropped from the new version; their ids stay retired.
    pub retired: Vec<String>,
    pub clusters: Option<Vec<ClusterRecord>>,
    pub cluster_rules: Option<BTreeMap<String, String>>,
    pub tuples: Vec<QaTuple>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceStore {
    pub config: PipelineConfig,
    versions: Vec<ExperienceBaseVersion>,
    /// Tuples introduced by each version (index = version).
    deltas: Vec<Vec<QaTuple>>,
    persisted_latest: Option<u64>,
}

impl ExperienceStore {
    pub fn new(config: PipelineConfig) -> Self {
        let digest = config.digest();
        Self {
            config,
            versions: vec![ExperienceBaseVersion::genesis(digest)],
            deltas: vec![Vec::new()],
            persisted_latest: None,
        }
    }

    pub fn latest(&self) -> &ExperienceBaseVersion {
        self.versions.last().expect("genesis exists")
    }

    pub fn version(&self, v: u64) -> Option<&ExperienceBaseVersion> {
        self.versions.get(v as usize)
    }

    pub fn versions(&self) -> &[ExperienceBaseVersion] {
        &self.versions
    }

    pub fn delta(&self, v: u64) -> &[QaTuple] {
        self.deltas.get(v as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn all_tuples(&self) -> Vec<QaTuple> {
        self.deltas.iter().flatten().cloned().collect()
    }

    /// Applies `changes` to `parent`, which must be the latest version.
    pub fn commit_version(&mut self, parent: u64, changes: ChangeSet) -> Result<u64> {
        let latest = self.latest().version;
        if parent != latest {
            return Err(Error::StaleParent { parent, latest });
        }
        let base = self.latest();
        let mut next = base.clone();
        next.version = latest + 1;
        next.parent = Some(latest);
        next.created_at = Utc::now();

        for (a, b) in &changes.merges {
            if a == b {
                continue;
            }
            let (keep, gone) = if a < b { (a, b) } else { (b, a) };
            let absorbed = next.rules.remove(gone);
            if let (Some(absorbed), Some(survivor)) = (absorbed, next.rules.get_mut(keep)) {
                let mut cites: BTreeMap<String, _> = survivor
                    .citations
                    .drain(..)
                    .map(|c| (c.url_or_name.clone(), c))
                    .collect();
                for c in absorbed.citations {
                    cites.entry(c.url_or_name.clone()).or_insert(c);
                }
                survivor.citations = cites.into_values().collect();
            }
            for target in next.aliases.values_mut() {
                if target == gone {
                    *target = keep.clone();
                }
            }
            next.aliases.insert(gone.clone(), keep.clone());
            for rid in next.cluster_rules.values_mut() {
                if rid == gone {
                    *rid = keep.clone();
                }
            }
        }
        for id in &changes.retired {
            next.rules.remove(id);
            next.cluster_rules.retain(|_, rid| rid != id);
        }
        for rule in changes.upserts {
            if next.aliases.contains_key(&rule.rule_id) {
                return Err(Error::RuleIdReuse(rule.rule_id));
            }
            if !next.rules.contains_key(&rule.rule_id) && !base.rules.contains_key(&rule.rule_id) {
                let seq = rule_seq(&rule.rule_id).ok_or_else(|| Error::RuleIdReuse(rule.rule_id.clone()))?;
                if seq < base.next_rule_seq {
                    return Err(Error::RuleIdReuse(rule.rule_id));
                }
                next.next_rule_seq = next.next_rule_seq.max(seq + 1);
            }
            next.rules.insert(rule.rule_id.clone(), rule);
        }
        if let Some(c) = changes.clusters {
            next.clusters = c;
        }
        if let Some(cr) = changes.cluster_rules {
            next.cluster_rules = cr;
        }
        let v = next.version;
        self.versions.push(next);
        self.deltas.push(changes.tuples);
        Ok(v)
    }

    /// Rebuilds every version from version 0 by replaying the tuple log.
    pub fn replay(&self, pipeline: &Pipeline) -> Result<ExperienceStore> {
        let mut fresh = ExperienceStore::new(self.config.clone());
        for delta in self.deltas.iter().skip(1) {
            streaming_update(&mut fresh, pipeline, delta.clone())?;
        }
        Ok(fresh)
    }

    pub fn save(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let manifest_path = dir.join("manifest.json");
        if manifest_path.exists() {
            let on_disk: Manifest = read_manifest(&manifest_path)?;
            let known = self.persisted_latest.unwrap_or(0);
            if self.persisted_latest.is_none() && on_disk.latest_version > 0 || on_disk.latest_version > known {
                return Err(Error::StaleParent {
                    parent: known,
                    latest: on_disk.latest_version,
                });
            }
        }
        write_atomic(&dir.join("config.json"), self.config.canonical_json().as_bytes())?;
        let mut entries = Vec::new();
        for (v, delta) in self.versions.iter().zip(&self.deltas) {
            let n = v.version;
            let mut tuples = Vec::new();
            crate::canonicalize::write_jsonl(&mut tuples, delta)?;
            let files: Vec<(String, Vec<u8>)> = vec![
                (format!("rules-{n}.jsonl"), v.rules_jsonl()),
                (format!("aliases-{n}.json"), v.aliases_json()),
                (format!("clusters-{n}.json"), v.clusters_json()),
                (format!("tuples-{n}.jsonl"), tuples),
            ];
            let mut digests = BTreeMap::new();
            for (name, bytes) in files {
                let path = dir.join(&name);
                if !path.exists() || fs::read(&path)? != bytes {
                    write_atomic(&path, &bytes)?;
                }
                digests.insert(name, sha256_hex(&bytes));
            }
            entries.push(ManifestEntry {
                version: n,
                parent: v.parent,
                config_digest: v.config_digest.clone(),
                created_at: v.created_at,
                next_rule_seq: v.next_rule_seq,
                files: digests,
            });
        }
        let manifest = Manifest {
            latest_version: self.latest().version,
            versions: entries,
        };
        write_atomic(&manifest_path, &serde_json::to_vec_pretty(&manifest)?)?;
        self.persisted_latest = Some(self.latest().version);
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = read_manifest(&dir.join("manifest.json"))?;
        let config_path = dir.join("config.json");
        let config: PipelineConfig = serde_json::from_slice(&fs::read(&config_path)?).map_err(|e| corrupt(&config_path, e))?;
        let mut versions = Vec::new();
        let mut deltas = Vec::new();
        for (i, entry) in manifest.versions.iter().enumerate() {
            if entry.version != i as u64 {
                return Err(Error::VersionGap(format!("expected version {i}, manifest lists {}", entry.version)));
            }
            let read = |name: String| -> Result<(PathBuf, Vec<u8>)> {
                let path = dir.join(&name);
                let expected = entry
                    .files
                    .get(&name)
                    .ok_or_else(|| corrupt(&dir.join("manifest.json"), format!("no digest for {name}")))?;
                let bytes = fs::read(&path).map_err(|_| Error::VersionGap(format!("missing {}", path.display())))?;
                if &sha256_hex(&bytes) != expected {
                    return Err(corrupt(&path, "digest mismatch"));
                }
                Ok((path, bytes))
            };
            let n = entry.version;
            let (rp, rules_bytes) = read(format!("rules-{n}.jsonl"))?;
            let mut rules = BTreeMap::new();
            for line in rules_bytes.split(|b| *b == b'\n').filter(|l| !l.is_empty()) {
                let r: ExperienceRule = serde_json::from_slice(line).map_err(|e| corrupt(&rp, e))?;
                rules.insert(r.rule_id.clone(), r);
            }
            let (ap, alias_bytes) = read(format!("aliases-{n}.json"))?;
            let aliases = serde_json::from_slice(&alias_bytes).map_err(|e| corrupt(&ap, e))?;
            let (cp, cluster_bytes) = read(format!("clusters-{n}.json"))?;
            let cj: ClustersFile = serde_json::from_slice(&cluster_bytes).map_err(|e| corrupt(&cp, e))?;
            let (tp, tuple_bytes) = read(format!("tuples-{n}.jsonl"))?;
            let delta = read_jsonl(tuple_bytes.as_slice()).map_err(|e| corrupt(&tp, e))?;
            versions.push(ExperienceBaseVersion {
                version: n,
                parent: entry.parent,
                created_at: entry.created_at,
                config_digest: entry.config_digest.clone(),
                rules,
                aliases,
                clusters: cj.clusters,
                cluster_rules: cj.cluster_rules,
                next_rule_seq: entry.next_rule_seq,
            });
            deltas.push(delta);
        }
        if versions.is_empty() || manifest.latest_version as usize != versions.len() - 1 {
            return Err(Error::VersionGap(format!(
                "manifest latest_version {} but {} versions listed",
                manifest.latest_version,
                versions.len()
            )));
        }
        Ok(Self {
            config,
            versions,
            deltas,
            persisted_latest: Some(manifest.latest_version),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    latest_version: u64,
    versions: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    version: u64,
    parent: Option<u64>,
    config_digest: String,
    created_at: DateTime<Utc>,
    next_rule_seq: u64,
    files: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct ClustersFile {
    clusters: Vec<ClusterRecord>,
    cluster_rules: BTreeMap<String, String>,
}

fn corrupt(path: &Path, reason: impl ToString) -> Error {
    Error::CorruptManifest {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = fs::read(path).map_err(|_| Error::VersionGap(format!("missing {}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| corrupt(path, e))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// What a streaming update touched.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct UpdateReport {
    pub version: u64,
    pub added: Vec<String>,
    pub redistilled: Vec<String>,
    pub merged: Vec<(String, String)>,
    pub retired: Vec<String>,
    pub noise: Vec<String>,
}

/// Warm-start refresh of the latest version with `new_tuples`; only changed
/// clusters are re-distilled. A full build is an update of an empty store.
pub fn streaming_update(store: &mut ExperienceStore, pipeline: &Pipeline, mut new_tuples: Vec<QaTuple>) -> Result<UpdateReport> {
    let current = pipeline.config.digest();
    let base_digest = &store.latest().config_digest;
    if *base_digest != current || store.config.digest() != current {
        return Err(Error::ConfigDrift {
            base: base_digest.clone(),
            current,
        });
    }
    pipeline.canonicalize(&mut new_tuples)?;
    let mut all: BTreeMap<String, QaTuple> = store.all_tuples().into_iter().map(|t| (t.id.clone(), t)).collect();
    let mut seen = HashSet::new();
    for t in &new_tuples {
        if all.contains_key(&t.id) || !seen.insert(t.id.clone()) {
            return Err(Error::DuplicateId(t.id.clone()));
        }
    }
    all.extend(new_tuples.iter().map(|t| (t.id.clone(), t.clone())));
    let base = store.latest().clone();
    let parent = base.version;
    let version = parent + 1;
    if new_tuples.is_empty() {
        store.commit_version(parent, ChangeSet::default())?;
        return Ok(UpdateReport {
            version,
            ..Default::default()
        });
    }

    let all_vec: Vec<QaTuple> = all.values().cloned().collect();
    let views = ViewTable::build(&all_vec, pipeline.encoder.as_ref())?;
    let existing = base
        .clusters
        .iter()
        .map(|r| Cluster::from_record(r.clone(), &views))
        .collect::<Result<Vec<_>>>()?;
    let new_ids: Vec<String> = new_tuples.iter().map(|t| t.id.clone()).collect();
    let refreshed = warm_start_refresh(&existing, &new_ids, &views, &pipeline.config.cluster, pipeline.config.merge_topics)?;

    // rule-level consequences of cluster merges
    let mut cluster_rules = base.cluster_rules.clone();
    let mut rule_merges = Vec::new();
    for (absorbed, survivor) in &refreshed.merges {
        match (cluster_rules.remove(absorbed), cluster_rules.get(survivor).cloned()) {
            (Some(a), Some(s)) => {
                let keep = a.clone().min(s.clone());
                rule_merges.push((a, s));
                cluster_rules.insert(survivor.clone(), keep);
            }
            (Some(a), None) => {
                cluster_rules.insert(survivor.clone(), a);
            }
            _ => {}
        }
    }
    let retired: Vec<String> = refreshed
        .retired
        .iter()
        .filter_map(|cid| cluster_rules.remove(cid))
        .collect();
    let live: BTreeSet<&str> = refreshed.clusters.iter().map(|c| c.cluster_id.as_str()).collect();
    cluster_rules.retain(|cid, _| live.contains(cid.as_str()));

    let mut seq = base.next_rule_seq;
    let mut jobs: Vec<(&Cluster, String)> = Vec::new();
    let mut added = Vec::new();
    let mut redistilled = Vec::new();
    for c in refreshed.clusters.iter().filter(|c| refreshed.changed.contains(&c.cluster_id)) {
        let id = match cluster_rules.get(&c.cluster_id) {
            Some(id) => {
                redistilled.push(id.clone());
                id.clone()
            }
            None => {
                let id = rule_id(seq);
                seq += 1;
                cluster_rules.insert(c.cluster_id.clone(), id.clone());
                added.push(id.clone());
                id
            }
        };
        jobs.push((c, id));
    }
    let vocab = pipeline.vocab(all.values())?;
    let merged_ids: BTreeSet<&str> = rule_merges.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()]).collect();
    let upserts: Vec<ExperienceRule> = pipeline
        .distill_many(&jobs, &all, &vocab, version)?
        .into_iter()
        .filter(|r| {
            merged_ids.contains(r.rule_id.as_str())
                || !base.rules.get(&r.rule_id).is_some_and(|old| old.same_content(r) && old.provenance.cluster_id == r.provenance.cluster_id)
        })
        .collect();
    redistilled.retain(|id| upserts.iter().any(|r| &r.rule_id == id));

    let changes = ChangeSet {
        merges: rule_merges.clone(),
        upserts,
        retired: retired.clone(),
        clusters: Some(refreshed.clusters.iter().map(Cluster::record).collect()),
        cluster_rules: Some(cluster_rules),
        tuples: new_tuples,
    };
    store.commit_version(parent, changes)?;
    Ok(UpdateReport {
        version,
        added,
        redistilled,
        merged: rule_merges,
        retired,
        noise: refreshed.noise,
    })
}

/// Full build: a fresh store updated once with every tuple.
pub fn build_base(pipeline: &Pipeline, tuples: Vec<QaTuple>) -> Result<ExperienceStore> {
    if tuples.is_empty() {
        return Err(Error::EmptyCorpus("dataset"));
    }
    let mut store = ExperienceStore::new(pipeline.config.clone());
    streaming_update(&mut store, pipeline, tuples)?;
    Ok(store)
}
