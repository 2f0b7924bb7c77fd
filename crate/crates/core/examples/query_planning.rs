//! Facet-aware query plans versus the generic fallback plan, and their
//! facet coverage.

use webexpert::config::PipelineConfig;
use webexpert::facets::FacetIndicatorMap;
use webexpert::pipeline::Pipeline;
use webexpert::planner::{generate_plan, reference_plan};
use webexpert::retrieval::{GateDecision, RuleIndex};
use webexpert::simeval::Benchmark;
use webexpert::store::build_base;
use webexpert::training::coverage_score;

fn main() -> webexpert::Result<()> {
    let config = PipelineConfig::default();
    let bench = Benchmark::new(config.clone())?;
    let pipeline = Pipeline::new(config.clone())?;
    let store = build_base(&pipeline, bench.tuples.clone())?;
    let base = store.latest();
    let index = RuleIndex::build(base, pipeline.encoder.as_ref(), config.rule_text)?;

    let q = &bench.corpus.questions[0].text;
    let retrieved = index.topk(q, pipeline.encoder.as_ref(), &config.gate)?;
    let plan = generate_plan(q, &retrieved, base, &pipeline.tables, &config.planner)?;
    println!("question: {q}\ngate: {:?}", plan.gate_decision);
    for (kind, f) in &plan.active_facets.facets {
        println!("  φ {:?}: {:?}", kind, f.display);
    }
    for (i, z) in plan.queries.iter().enumerate() {
        println!("  z{} {z}", i + 1);
    }
    println!("coverage {:.2}", coverage_score(&plan.queries, &plan.active_facets));

    let generic = reference_plan(q, FacetIndicatorMap::default(), GateDecision::Fallback, Vec::new(), config.planner.m)?;
    println!("\ngeneric plan:");
    for (i, z) in generic.queries.iter().enumerate() {
        println!("  z{} {z}", i + 1);
    }
    println!("coverage of the same facets {:.2}", coverage_score(&generic.queries, &plan.active_facets));
    Ok(())
}
