use std::collections::BTreeSet;

use proptest::prelude::*;

use webexpert::evidence::mmr_indices;
use webexpert::retrieval::{gate_scores, mine_from_ranking, project, GateDecision};
use webexpert::simeval::{f1, ndcg_at_10, normalize_answer, qp_at_3};
use webexpert::textmodel::{cosine, EmbeddingVector, HashedNgramEncoder, TextEncoder};
use webexpert::training::{coverage_score, loss_pref};

fn unit_vectors(n: usize, d: usize) -> impl Strategy<Value = Vec<EmbeddingVector>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), n).prop_filter_map("nonzero", |vs| {
        vs.into_iter().map(|v| EmbeddingVector::normalized(v).ok()).collect()
    })
}

proptest! {
    #[test]
    fn gate_falls_back_iff_mean_below_theta(scores in prop::collection::vec(-1.0f64..1.0, 1..10), theta in 0.0f64..1.0) {
        let (c, d) = gate_scores(&scores, theta);
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        prop_assert!((c - mean).abs() < 1e-12);
        prop_assert_eq!(d == GateDecision::Fallback, c < theta);
    }

    #[test]
    fn mmr_picks_distinct_indices(
        (rel, emb) in (1usize..12).prop_flat_map(|n| (prop::collection::vec(0.0f64..1.0, n), unit_vectors(n, 4))),
        lambda in 0.0f64..=1.0,
        k in 0usize..15,
    ) {
        let picked = mmr_indices(&rel, &emb, lambda, k).unwrap();
        prop_assert_eq!(picked.len(), k.min(rel.len()));
        let distinct: BTreeSet<usize> = picked.iter().copied().collect();
        prop_assert_eq!(distinct.len(), picked.len());
        if lambda == 1.0 && !picked.is_empty() {
            let best = rel.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(rel[picked[0]], best);
        }
    }

    #[test]
    fn mined_negatives_respect_margin(
        scores in prop::collection::vec(-1.0f64..1.0, 2..40),
        n_pos in 1usize..3,
        margin in 0.0f64..0.2,
        n_neg in 1usize..6,
    ) {
        let mut ranked: Vec<(String, f64)> = scores.iter().enumerate().map(|(i, s)| (format!("r{i:02}"), *s)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let positives: BTreeSet<String> = (0..n_pos.min(scores.len())).map(|i| format!("r{i:02}")).collect();
        let mined = mine_from_ranking(&ranked, &positives, ranked.len().max(n_neg), margin, n_neg).unwrap();
        prop_assert!(mined.negatives.len() <= n_neg);
        for neg in &mined.negatives {
            prop_assert!(!positives.contains(neg));
            let s = ranked.iter().find(|(id, _)| id == neg).unwrap().1;
            for p in &positives {
                let ps = ranked.iter().find(|(id, _)| id == p).unwrap().1;
                prop_assert!((s - ps).abs() >= margin);
            }
        }
    }

    #[test]
    fn projection_output_is_unit_norm(v in prop::collection::vec(-1.0f64..1.0, 6)) {
        prop_assume!(v.iter().map(|x| x * x).sum::<f64>() > 1e-6);
        let y = project(&v, None).unwrap();
        let n: f64 = y.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn preference_loss_is_softplus(a in -30.0f64..30.0, b in -30.0f64..30.0) {
        let (l, r) = (loss_pref(a, b), loss_pref(b, a));
        prop_assert!(l >= 0.0 && r >= 0.0);
        prop_assert!(((r - l) - (a - b)).abs() < 1e-9);
    }

    #[test]
    fn metrics_stay_in_unit_interval(rel in prop::collection::vec(any::<bool>(), 0..20), words in "[a-z ]{0,30}", gold in "[a-z ]{1,30}") {
        let n = ndcg_at_10(&rel);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
        let f = f1(&words, &gold);
        prop_assert!((0.0..=1.0).contains(&f));
        let once = normalize_answer(&words).join(" ");
        prop_assert_eq!(normalize_answer(&once).join(" "), once);
        let key: BTreeSet<String> = ["p0".to_string()].into();
        let rankings: Vec<Vec<String>> = rel.iter().map(|r| if *r { vec!["p0".into()] } else { vec!["p1".into()] }).collect();
        let qp = qp_at_3(&rankings, &key);
        prop_assert!((0.0..=1.0).contains(&qp));
    }

    #[test]
    fn encoder_is_deterministic_and_unit(text in "[a-zA-Z0-9 ]{1,60}") {
        prop_assume!(!text.trim().is_empty());
        let enc = HashedNgramEncoder::default();
        let a = enc.embed(&text).unwrap();
        let b = enc.embed(&text).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!((cosine(&a, &b).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn coverage_is_a_fraction(queries in prop::collection::vec("[a-z0-9 ]{0,20}", 0..4)) {
        let tables = webexpert::facets::FacetTables::default();
        let mut phi = webexpert::facets::FacetIndicatorMap::default();
        phi.add(
            &webexpert::facets::FacetSet { region: Some("ontario".into()), ..Default::default() },
            &tables,
        );
        let c = coverage_score(&queries, &phi);
        prop_assert!(c == 0.0 || c == 1.0);
    }
}
