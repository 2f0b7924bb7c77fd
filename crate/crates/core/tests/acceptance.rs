//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chrono::Utc;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use webexpert::canonicalize::{QaTuple, SourceRef};
use webexpert::config::{PipelineConfig, RuleTextMode};
use webexpert::distill::{ExperienceRule, Provenance, RuleDraft};
use webexpert::evidence::{mmr_indices, mmr_select, EvidenceItem, EvidenceKind};
use webexpert::facets::{FacetIndicatorMap, FacetSet, FacetTables, TimeFacet, REGION_UNIVERSAL};
use webexpert::fixtures::{diversification_tuples, DIVERSIFICATION_SOURCES};
use webexpert::pipeline::Pipeline;
use webexpert::retrieval::{gate_scores, mine_hard_negatives, topk_experiences, GateConfig, GateDecision, RuleIndex};
use webexpert::simeval::{ablate, ndcg_at_10, Benchmark, Variant};
use webexpert::store::{build_base, streaming_update, ExperienceBaseVersion, ExperienceStore};
use webexpert::textmodel::{cosine, tokenize, EmbeddingVector, HashedNgramEncoder, TextEncoder};
use webexpert::training::{
    loss_plan, loss_ret, separable_toy_set, top1_accuracy, train_projection, BigramModel, ContrastiveBatch, PlanLossConfig,
    TrainingConfig,
};

type Check = fn() -> Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed <= limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn golden_path() -> Result<(), String> {
    let t0 = Instant::now();
    let pipeline = Pipeline::new(PipelineConfig::default()).map_err(|e| e.to_string())?;
    let store = build_base(&pipeline, diversification_tuples()).map_err(|e| e.to_string())?;
    let rules = &store.latest().rules;
    ensure(rules.len() == 1, || format!("expected one rule, got {}", rules.len()))?;
    let rule = rules.values().next().expect("one rule");
    let allowed: BTreeSet<&str> = DIVERSIFICATION_SOURCES.into_iter().collect();
    let cited = rule.citation_names();
    ensure(!cited.is_empty() && cited.is_subset(&allowed), || format!("citations {cited:?}"))?;
    ensure(rule.facets.time == Some(TimeFacet::Open), || format!("time facet {:?}", rule.facets.time))?;
    ensure(rule.facets.region.as_deref() == Some(REGION_UNIVERSAL), || {
        format!("region facet {:?}", rule.facets.region)
    })?;
    within(t0.elapsed(), Duration::from_secs(1))
}

fn gate_arithmetic() -> Result<(), String> {
    let (c, d) = gate_scores(&[0.20, 0.25, 0.25], 0.3);
    ensure(d == GateDecision::Fallback, || format!("low scores gave {d:?} at confidence {c}"))?;
    let (c, d) = gate_scores(&[0.5, 0.5, 0.5], 0.3);
    ensure(d == GateDecision::Proceed && c == 0.5, || format!("high scores gave {d:?} at confidence {c}"))
}

fn central_difference(batch: &ContrastiveBatch, p: &DMatrix<f64>, i: usize, j: usize, h: f64) -> f64 {
    let mut plus = p.clone();
    plus[(i, j)] += h;
    let mut minus = p.clone();
    minus[(i, j)] -= h;
    let lp = loss_ret(batch, &plus).expect("finite").0;
    let lm = loss_ret(batch, &minus).expect("finite").0;
    (lp - lm) / (2.0 * h)
}

fn contrastive_loss() -> Result<(), String> {
    let t0 = Instant::now();
    let p = DMatrix::identity(3, 3);
    let batch = ContrastiveBatch {
        query: vec![1.0, 0.0, 0.0],
        positive: vec![0.0, 1.0, 0.0],
        negatives: vec![vec![0.0, 0.0, 1.0]],
        tau: 0.07,
    };
    let (l, _) = loss_ret(&batch, &p).map_err(|e| e.to_string())?;
    ensure((l - std::f64::consts::LN_2).abs() <= 1e-9, || format!("equal-similarity loss {l}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.gen_range(3..7);
        let n_neg = rng.gen_range(1..5);
        let mut v = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let batch = ContrastiveBatch {
            query: v(d),
            positive: v(d),
            negatives: (0..n_neg).map(|_| v(d)).collect(),
            tau: 0.5,
        };
        let p = DMatrix::from_row_slice(d, d, &v(d * d)) + DMatrix::identity(d, d);
        let (_, grad) = loss_ret(&batch, &p).map_err(|e| e.to_string())?;
        let mut fd = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                fd[(i, j)] = central_difference(&batch, &p, i, j, 1e-5);
            }
        }
        let rel = (&grad - &fd).norm() / fd.norm().max(1e-12);
        worst = worst.max(rel);
    }
    ensure(worst <= 1e-4, || format!("worst relative gradient error {worst:e}"))?;
    within(t0.elapsed(), Duration::from_secs(10))
}

fn plan_loss() -> Result<(), String> {
    let tables = FacetTables::default();
    let corpus = ["capital rules for banks in ontario", "banks report capital ratios", "ontario banks file rules"];
    let model = BigramModel::fit(&corpus, 0.5).map_err(|e| e.to_string())?;
    let cfg = PlanLossConfig::default();
    let seq = tokenize("banks capital ontario rules");
    let empty = FacetIndicatorMap::default();

    let nll = -webexpert::training::sequence_log_prob(&seq, &model);
    let plain = loss_plan(&seq, &model, &empty, &cfg, &tables).map_err(|e| e.to_string())?;
    ensure((plain - nll).abs() <= 1e-12, || format!("zero-facet loss {plain} vs NLL {nll}"))?;

    let mut phi = FacetIndicatorMap::default();
    phi.add(
        &FacetSet {
            region: Some("ontario".into()),
            ..Default::default()
        },
        &tables,
    );
    let weighted = loss_plan(&seq, &model, &phi, &cfg, &tables).map_err(|e| e.to_string())?;
    let ontario_term = -model.log_prob("capital", "ontario");
    let expected = nll + cfg.alpha_up * ontario_term;
    ensure((weighted - expected).abs() <= 1e-12, || {
        format!("single-facet loss {weighted}, expected {expected}")
    })
}

use webexpert::training::TokenModel;

fn oracle_mmr(rel: &[f64], emb: &[EmbeddingVector], lambda: f64, n: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < n.min(rel.len()) {
        let mut best: Option<(f64, usize)> = None;
        for i in (0..rel.len()).filter(|i| !chosen.contains(i)) {
            let redundancy = chosen
                .iter()
                .map(|&j| cosine(&emb[i], &emb[j]).expect("same dim"))
                .fold(f64::NEG_INFINITY, f64::max);
            let redundancy = if chosen.is_empty() { 0.0 } else { redundancy };
            let score = lambda * rel[i] - (1.0 - lambda) * redundancy;
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, i));
            }
        }
        chosen.push(best.expect("candidate").1);
    }
    chosen
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> EmbeddingVector {
    let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    EmbeddingVector::normalized(v).expect("nonzero")
}

fn fixture_rule(id: &str, text: String) -> ExperienceRule {
    ExperienceRule {
        rule_id: id.into(),
        rule: RuleDraft {
            core_guidance: text,
            ..Default::default()
        },
        citations: vec![SourceRef::new("fixture")],
        facets: FacetSet::default(),
        coverage: 1.0,
        confidence: 1.0,
        provenance: Provenance {
            cluster_id: id.into(),
            version: 1,
        },
    }
}

fn fixture_base(rules: Vec<ExperienceRule>) -> ExperienceBaseVersion {
    ExperienceBaseVersion {
        version: 1,
        parent: Some(0),
        created_at: Utc::now(),
        config_digest: String::new(),
        next_rule_seq: rules.len() as u64 + 1,
        rules: rules.into_iter().map(|r| (r.rule_id.clone(), r)).collect(),
        aliases: BTreeMap::new(),
        clusters: Vec::new(),
        cluster_rules: BTreeMap::new(),
    }
}

const WORDS: [&str; 16] = [
    "capital", "ratio", "bank", "loan", "ontario", "policy", "rate", "risk", "yield", "basel", "fiscal", "sector", "retail",
    "energy", "credit", "margin",
];

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..7);
    (0..n).map(|_| *WORDS.choose(rng).expect("words")).collect::<Vec<_>>().join(" ")
}

fn oracle_topk(q: &str, base: &ExperienceBaseVersion, enc: &dyn TextEncoder, k: usize) -> Vec<(String, f64)> {
    let qv = enc.embed(q).expect("query");
    let mut all: Vec<(String, f64)> = base
        .rules
        .values()
        .map(|r| {
            let v = enc.embed(&r.rule.core_guidance).expect("rule");
            let s: f64 = qv.as_slice().iter().zip(v.as_slice()).map(|(a, b)| a * b).sum();
            (r.rule_id.clone(), s)
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn mmr_and_topk_oracles() -> Result<(), String> {
    let t0 = Instant::now();
    let enc = HashedNgramEncoder::default();
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pool = rng.gen_range(1..=20);
        let d = rng.gen_range(2..9);
        let rel: Vec<f64> = (0..pool).map(|_| rng.gen_range(0.0..1.0)).collect();
        let emb: Vec<EmbeddingVector> = (0..pool).map(|_| random_unit(&mut rng, d)).collect();
        let lambda = rng.gen_range(0.0..=1.0);
        let n = rng.gen_range(0..=pool + 2);
        let got = mmr_indices(&rel, &emb, lambda, n).map_err(|e| e.to_string())?;
        let want = oracle_mmr(&rel, &emb, lambda, n);
        ensure(got == want, || format!("seed {seed}: mmr {got:?} vs oracle {want:?}"))?;

        let items: Vec<EvidenceItem> = rel
            .iter()
            .enumerate()
            .map(|(i, r)| EvidenceItem {
                source: SourceRef::new(format!("s{i}")),
                text: format!("item {i}"),
                kind: EvidenceKind::Answer,
                member_id: format!("m{i}"),
                dense_score: *r,
                lexical_score: *r,
                fused_score: *r,
            })
            .collect();
        let picked = mmr_select(&items, &emb, lambda, n).map_err(|e| e.to_string())?;
        let want_items: Vec<EvidenceItem> = want.iter().map(|&i| items[i].clone()).collect();
        ensure(picked == want_items, || format!("seed {seed}: mmr_select differs from oracle"))?;

        let n_rules = rng.gen_range(1..=100);
        let rules = (0..n_rules).map(|i| fixture_rule(&format!("R{i:06}"), random_text(&mut rng))).collect();
        let base = fixture_base(rules);
        let k = rng.gen_range(1..=8);
        let cfg = GateConfig { k, theta: 0.3 };
        let q = random_text(&mut rng);
        let got = topk_experiences(&q, &base, &enc, &cfg, None).map_err(|e| e.to_string())?;
        let want = oracle_topk(&q, &base, &enc, k);
        let same_ranking = got.items.len() == want.len()
            && got.items.iter().zip(&want).all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() <= 1e-12);
        ensure(same_ranking, || format!("seed {seed}: top-k {:?} vs oracle {:?}", got.items, want))?;
        let scores: Vec<f64> = want.iter().map(|(_, s)| *s).collect();
        let (confidence, decision) = gate_scores(&scores, 0.3);
        ensure((got.gate_confidence - confidence).abs() <= 1e-12 && got.gate_decision == decision, || {
            format!("seed {seed}: gate differs from oracle")
        })?;
    }
    within(t0.elapsed(), Duration::from_secs(30))
}

fn ndcg_fixture() -> Result<(), String> {
    let v = ndcg_at_10(&[true, false, true]);
    ensure((v - 0.91972).abs() <= 1e-5, || format!("nDCG {v}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..1000 {
        let len = rng.gen_range(2..15);
        let mut rel: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.4)).collect();
        rel.shuffle(&mut rng);
        let Some(i) = (1..len).filter(|&i| rel[i]).collect::<Vec<_>>().choose(&mut rng).copied() else { continue };
        let Some(j) = (0..i).filter(|&j| !rel[j]).collect::<Vec<_>>().choose(&mut rng).copied() else { continue };
        let before = ndcg_at_10(&rel);
        rel.swap(i, j);
        let after = ndcg_at_10(&rel);
        ensure(after >= before - 1e-12, || format!("trial {trial}: promotion lowered nDCG {before} → {after}"))?;
    }
    Ok(())
}

fn ablation_direction() -> Result<(), String> {
    let t0 = Instant::now();
    let cfg = PipelineConfig::default();
    let table = ablate(&cfg, &[Variant::Full, Variant::K1, Variant::NoMerge, Variant::Generic]).map_err(|e| e.to_string())?;
    ensure(table.n_questions == 200, || format!("{} questions", table.n_questions))?;
    let row = |v| table.row(v).expect("variant ran");
    let (full, k1, nm, generic) = (row(Variant::Full), row(Variant::K1), row(Variant::NoMerge), row(Variant::Generic));
    let summary = format!(
        "QP@3 full {:.3} k1 {:.3} no_merge {:.3}; hops full {:.2} generic {:.2}",
        full.qp_at_3, k1.qp_at_3, nm.qp_at_3, full.page_hops, generic.page_hops
    );
    ensure(full.qp_at_3 > k1.qp_at_3, || summary.clone())?;
    ensure(full.qp_at_3 > nm.qp_at_3, || summary.clone())?;
    ensure(full.page_hops <= 0.85 * generic.page_hops, || summary.clone())?;
    println!("    {summary}");
    within(t0.elapsed(), Duration::from_secs(300))
}

fn training_efficacy() -> Result<(), String> {
    let t0 = Instant::now();
    let toy = separable_toy_set(7, 40, 32).map_err(|e| e.to_string())?;
    let cfg = TrainingConfig::default();
    let out = train_projection(&toy.train, &toy.rules, &cfg).map_err(|e| e.to_string())?;
    let first = out.curve[0];
    let halved = out.curve.iter().position(|l| *l <= first / 2.0);
    ensure(halved.is_some(), || format!("loss never halved from {first}"))?;
    let acc = top1_accuracy(&toy.held_out, &toy.rules, Some(&out.projection)).map_err(|e| e.to_string())?;
    ensure(acc >= 0.9, || format!("held-out top-1 {acc}"))?;
    println!("    loss {first:.3} halved by epoch {}; held-out top-1 {acc:.3}", halved.expect("checked"));
    within(t0.elapsed(), Duration::from_secs(60))
}

fn sorted_content(base: &ExperienceBaseVersion) -> Vec<&ExperienceRule> {
    let mut v: Vec<&ExperienceRule> = base.rules.values().collect();
    v.sort_by(|a, b| a.rule.core_guidance.cmp(&b.rule.core_guidance));
    v
}

fn same_rule_content(a: &ExperienceBaseVersion, b: &ExperienceBaseVersion) -> bool {
    let (a, b) = (sorted_content(a), sorted_content(b));
    a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.same_content(y))
}

fn streaming_fixture(pipeline: &Pipeline, tuples: &[QaTuple], parts: usize) -> Result<ExperienceStore, String> {
    let mut store = ExperienceStore::new(pipeline.config.clone());
    let chunk = tuples.len().div_ceil(parts);
    for part in tuples.chunks(chunk) {
        streaming_update(&mut store, pipeline, part.to_vec()).map_err(|e| e.to_string())?;
    }
    Ok(store)
}

fn determinism_and_versioning() -> Result<(), String> {
    let pipeline = Pipeline::new(PipelineConfig::default()).map_err(|e| e.to_string())?;
    let bench = Benchmark::new(PipelineConfig::default()).map_err(|e| e.to_string())?;
    let mut sim = bench.tuples.clone();
    sim.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let fixtures: [(&str, Vec<QaTuple>, usize); 2] = [("diversification", diversification_tuples(), 3), ("synthetic", sim, 3)];
    for (name, tuples, parts) in fixtures {
        let streamed = streaming_fixture(&pipeline, &tuples, parts)?;
        let replayed = streamed.replay(&pipeline).map_err(|e| e.to_string())?;
        ensure(streamed.versions().len() == replayed.versions().len(), || format!("{name}: version count differs"))?;
        for (a, b) in streamed.versions().iter().zip(replayed.versions()) {
            ensure(a.rules_jsonl() == b.rules_jsonl(), || format!("{name}: rules of version {} differ on replay", a.version))?;
        }
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut saved = streamed.clone();
        saved.save(dir.path()).map_err(|e| e.to_string())?;
        let mut replayed = replayed;
        let dir2 = tempfile::tempdir().map_err(|e| e.to_string())?;
        replayed.save(dir2.path()).map_err(|e| e.to_string())?;
        for v in streamed.versions() {
            let f = format!("rules-{}.jsonl", v.version);
            let a = std::fs::read(dir.path().join(&f)).map_err(|e| e.to_string())?;
            let b = std::fs::read(dir2.path().join(&f)).map_err(|e| e.to_string())?;
            ensure(a == b, || format!("{name}: {f} differs on disk"))?;
        }
        let full = build_base(&pipeline, tuples.clone()).map_err(|e| e.to_string())?;
        ensure(same_rule_content(streamed.latest(), full.latest()), || {
            format!(
                "{name}: streaming ({} rules) disagrees with full rebuild ({} rules)",
                streamed.latest().rules.len(),
                full.latest().rules.len()
            )
        })?;
    }
    Ok(())
}

fn hard_negative_contract() -> Result<(), String> {
    let pipeline = Pipeline::new(PipelineConfig::default()).map_err(|e| e.to_string())?;
    let enc = pipeline.encoder.as_ref();
    let bench = Benchmark::new(PipelineConfig::default()).map_err(|e| e.to_string())?;
    let bases = [
        build_base(&pipeline, diversification_tuples()).map_err(|e| e.to_string())?.latest().clone(),
        bench.build_base(Variant::Full).map_err(|e| e.to_string())?,
        bench.build_base(Variant::NoMerge).map_err(|e| e.to_string())?,
    ];
    let queries: Vec<String> = diversification_tuples()
        .into_iter()
        .chain(bench.tuples.iter().step_by(13).cloned())
        .map(|t| t.question)
        .collect();
    let margin = 0.05;
    let mut checked = 0usize;
    for base in &bases {
        let index = RuleIndex::build(base, enc, RuleTextMode::Sentence).map_err(|e| e.to_string())?;
        let ids: Vec<String> = index.ids.clone();
        for q in &queries {
            let ranked = index.score_all(&enc.embed(q).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            let score: BTreeMap<&str, f64> = ranked.iter().map(|(id, s)| (id.as_str(), *s)).collect();
            let positive_sets: Vec<BTreeSet<String>> = ids
                .iter()
                .map(|id| [id.clone()].into())
                .chain(ids.windows(2).map(|w| w.iter().cloned().collect()))
                .collect();
            for positives in positive_sets {
                for n_neg in [1, 4, ids.len()] {
                    let mined = mine_hard_negatives(q, &positives, &index, enc, ids.len().max(n_neg), margin, n_neg)
                        .map_err(|e| e.to_string())?;
                    for neg in &mined.negatives {
                        ensure(!positives.contains(neg), || format!("positive {neg} mined as negative"))?;
                        for p in &positives {
                            let gap = (score[neg.as_str()] - score[p.as_str()]).abs();
                            ensure(gap >= margin, || format!("negative {neg} within {gap} of positive {p}"))?;
                        }
                    }
                    checked += 1;
                }
            }
        }
    }
    ensure(checked > 0, || "no mining cases checked".into())
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 10] = [
        ("golden path builds one cited rule", golden_path),
        ("gate arithmetic", gate_arithmetic),
        ("contrastive loss and gradient", contrastive_loss),
        ("facet-weighted plan loss", plan_loss),
        ("mmr and top-k oracle equivalence", mmr_and_topk_oracles),
        ("ndcg fixture and monotonicity", ndcg_fixture),
        ("ablation direction", ablation_direction),
        ("training efficacy", training_efficacy),
        ("determinism and versioning", determinism_and_versioning),
        ("hard-negative contract", hard_negative_contract),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("criterion {:>2} {name}: PASS ({secs:.2}s)", i + 1),
            Err(e) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({secs:.2}s) {e}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
