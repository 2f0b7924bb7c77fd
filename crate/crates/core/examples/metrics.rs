//! The evaluation metrics on small hand-made inputs.

use std::collections::BTreeSet;

use webexpert::simeval::{exact_match, f1, ndcg_at_10, normalize_answer, page_hops, qp_at_3};

fn main() {
    let gold = "assets with low correlation";
    for answer in ["assets with low correlation", "low correlation assets", "high correlation"] {
        println!(
            "{answer:<30} EM {:.0}  F1 {:.3}  tokens {:?}",
            exact_match(answer, gold),
            f1(answer, gold),
            normalize_answer(answer)
        );
    }
    let answer_pages: BTreeSet<String> = ["p7".to_string()].into();
    let rankings = vec![vec!["p7", "p1", "p2"], vec!["p3", "p4", "p5", "p7"], vec!["p2", "p7"]];
    println!("\nQP@3 {:.3}", qp_at_3(&rankings, &answer_pages));
    println!("page hops {}", page_hops(&["p1", "p7", "p1", "p3"]));
    println!("nDCG@10 of (1,0,1) {:.5}", ndcg_at_10(&[true, false, true]));
}
