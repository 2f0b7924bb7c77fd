//! Three finance QA tuples distilled into one cited experience rule.

use webexpert::config::PipelineConfig;
use webexpert::fixtures::diversification_tuples;
use webexpert::pipeline::Pipeline;
use webexpert::store::build_base;

fn main() -> webexpert::Result<()> {
    let pipeline = Pipeline::new(PipelineConfig::default())?;
    let store = build_base(&pipeline, diversification_tuples())?;
    let base = store.latest();
    println!("version {} holds {} rule(s)", base.version, base.rules.len());
    for rule in base.rules.values() {
        println!("\n{}  {}", rule.rule_id, rule.text());
        println!("  citations: {:?}", rule.citation_names());
        println!("  facets:    {}", serde_json::to_string(&rule.facets)?);
        println!("  coverage {:.2}, confidence {:.3}", rule.coverage, rule.confidence);
    }
    Ok(())
}
