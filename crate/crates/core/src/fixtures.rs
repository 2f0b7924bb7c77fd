//! Small built-in datasets used by examples, tests and the CLI smoke path.

use crate::canonicalize::{QaTuple, SourceRef};

/// Distilled rule text for the diversification cluster.
pub const DIVERSIFICATION_RULE: &str = "Diversification is most impactful when portfolio assets exhibit low or negative correlation; in such scenarios, overall risk and volatility are minimized.";

pub const DIVERSIFICATION_SOURCES: [&str; 5] =
    ["Investopedia", "CFAI", "BlackRock", "Morningstar", "Corp Finance"];

/// Three finance QA tuples about asset correlation and diversification.
pub fn diversification_tuples() -> Vec<QaTuple> {
    vec![
        QaTuple::new(
            "t1",
            "When is diversification most effective in portfolio risk management?",
        )
        .with_answer("Diversification is most effective when portfolio assets are uncorrelated.")
        .with_citation(SourceRef::new("Investopedia"))
        .with_citation(SourceRef::new("CFAI")),
        QaTuple::new(
            "t2",
            "Does asset correlation affect diversification benefits in investing?",
        )
        .with_answer(
            "Yes, higher correlation among assets reduces the risk reduction benefit of diversification.",
        )
        .with_citation(SourceRef::new("BlackRock"))
        .with_citation(SourceRef::new("Morningstar")),
        QaTuple::new("t3", "How do correlations impact portfolio volatility?")
            .with_answer(
                "Lower asset correlations lead to lower overall portfolio volatility due to better risk spreading.",
            )
            .with_citation(SourceRef::new("Corp Finance"))
            .with_citation(SourceRef::new("CFAI")),
    ]
}
