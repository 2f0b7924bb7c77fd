//! Answer and retrieval metrics.

use std::collections::{BTreeMap, BTreeSet};

const STOPWORDS: [&str; 11] = ["a", "an", "the", "with", "of", "for", "and", "in", "on", "to", "by"];

/// Lowercase, strip punctuation and articles/function words.
pub fn normalize_answer(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric() && c != '.')
        .map(|t| t.trim_matches('.'))
        .filter(|t| !t.is_empty() && !STOPWORDS.contains(t))
        .map(str::to_string)
        .collect()
}

pub fn exact_match(answer: &str, gold: &str) -> f64 {
    f64::from(u8::from(normalize_answer(answer).join(" ") == normalize_answer(gold).join(" ")))
}

/// Token-multiset F1.
pub fn f1(answer: &str, gold: &str) -> f64 {
    let (a, g) = (normalize_answer(answer), normalize_answer(gold));
    if a.is_empty() || g.is_empty() {
        return f64::from(u8::from(a == g));
    }
    let mut counts: BTreeMap<&str, i64> = BTreeMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &a {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / a.len() as f64;
    let r = common as f64 / g.len() as f64;
    2.0 * p * r / (p + r)
}

/// Fraction of queries whose top-3 contains an answer-bearing page.
pub fn qp_at_3<S: AsRef<str>>(rankings: &[Vec<S>], answer_pages: &BTreeSet<String>) -> f64 {
    if rankings.is_empty() {
        return 0.0;
    }
    let hits = rankings
        .iter()
        .filter(|r| r.iter().take(3).any(|p| answer_pages.contains(p.as_ref())))
        .count();
    hits as f64 / rankings.len() as f64
}

/// Distinct pages visited.
pub fn page_hops<S: AsRef<str>>(visits: &[S]) -> usize {
    visits.iter().map(AsRef::as_ref).collect::<BTreeSet<&str>>().len()
}

/// nDCG over the first 10 cited pages with binary relevance; the ideal is
/// the same items sorted by relevance. 0 when nothing is relevant.
pub fn ndcg_at_10(relevance: &[bool]) -> f64 {
    let gain = |rels: &[bool]| -> f64 {
        rels.iter()
            .take(10)
            .enumerate()
            .filter(|(_, r)| **r)
            .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
            .sum()
    };
    let mut ideal = relevance.to_vec();
    ideal.sort_by(|a, b| b.cmp(a));
    let idcg = gain(&ideal);
    if idcg == 0.0 {
        return 0.0;
    }
    gain(relevance) / idcg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn em_f1() {
        assert_eq!(exact_match("4.2 million", "4.2 million"), 1.0);
        assert_eq!(f1("4.2 million", "4.2 million"), 1.0);
        assert_eq!(exact_match("alpha", "beta"), 0.0);
        assert_eq!(f1("alpha", "beta"), 0.0);
        assert_eq!(exact_match("low correlation assets", "assets with low correlation"), 0.0);
        assert_eq!(f1("low correlation assets", "assets with low correlation"), 1.0);
    }

    #[test]
    fn ndcg_fixture() {
        let v = ndcg_at_10(&[true, false, true]);
        assert!((v - 0.91972).abs() < 1e-5);
        assert_eq!(ndcg_at_10(&[true, true, false]), 1.0);
        assert_eq!(ndcg_at_10(&[false, false]), 0.0);
    }

    #[test]
    fn hops() {
        assert_eq!(page_hops(&["A", "B", "A"]), 2);
        assert_eq!(page_hops::<&str>(&[]), 0);
        assert_eq!(page_hops(&["A", "B", "C", "A", "D", "B", "E"]), 5);
    }

    #[test]
    fn qp_fixture() {
        let key: BTreeSet<String> = ["x".to_string()].into();
        let r = vec![
            vec!["x", "a", "b"],
            vec!["a", "b", "c", "x"],
            vec!["a", "x"],
            vec![],
            vec!["c", "b", "x", "a"],
        ];
        assert_eq!(qp_at_3(&r, &key), 3.0 / 5.0);
        assert_eq!(qp_at_3::<&str>(&[vec![]], &key), 0.0);
    }
}
