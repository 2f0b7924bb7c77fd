//! Induce a facet vocabulary from domain text, then tag and normalize
//! mentions in new sentences.

use webexpert::facets::{count_terms, default_background, extract_mentions, induce_facet_vocab, normalize_facets, FacetTables};

fn main() -> webexpert::Result<()> {
    let domain = [
        "Ontario banks reported Basel III capital ratios for fiscal 2023.",
        "Credit unions in Ontario follow OSFI guidance under Basel III.",
        "Regional banking sector loan growth slowed in Q2 2023 across Canada.",
        "Insurance carriers in Quebec file IFRS 17 statements each year.",
        "Basel III liquidity rules apply to the banking sector in Ontario.",
    ];
    let tables = FacetTables::default();
    let vocab = induce_facet_vocab(&count_terms(domain), &default_background(), 1.0, &tables)?;
    for (facet, terms) in &vocab.facets {
        let top: Vec<String> = terms.iter().take(5).map(|(t, z)| format!("{t} ({z:.2})")).collect();
        println!("{facet:<10} {}", top.join(", "));
    }

    for text in [
        "What capital buffers did Ontario banks hold in 2023 under Basel III?",
        "How does diversification reduce portfolio risk?",
    ] {
        let mentions = extract_mentions(text, &vocab, &tables, 0);
        let facets = normalize_facets(&mentions, &vocab, &tables);
        println!("\n{text}\n  mentions {mentions:?}\n  facets   {}", serde_json::to_string(&facets)?);
    }
    Ok(())
}
