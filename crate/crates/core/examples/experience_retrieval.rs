//! Build a base from the synthetic expert tuples and retrieve top-k
//! experiences for a few questions, showing the confidence gate.

use webexpert::config::PipelineConfig;
use webexpert::pipeline::Pipeline;
use webexpert::retrieval::RuleIndex;
use webexpert::simeval::Benchmark;
use webexpert::store::build_base;

fn main() -> webexpert::Result<()> {
    let config = PipelineConfig::default();
    let bench = Benchmark::new(config.clone())?;
    let pipeline = Pipeline::new(config.clone())?;
    let store = build_base(&pipeline, bench.tuples.clone())?;
    let base = store.latest();
    println!("{} tuples → {} rules", bench.tuples.len(), base.rules.len());

    let index = RuleIndex::build(base, pipeline.encoder.as_ref(), config.rule_text)?;
    let mut questions: Vec<String> = bench.corpus.questions.iter().take(2).map(|q| q.text.clone()).collect();
    questions.push("How do I bake sourdough bread at home?".into());
    for q in &questions {
        let r = index.topk(q, pipeline.encoder.as_ref(), &config.gate)?;
        println!("\n{q}\n  gate {:?} (confidence {:.3})", r.gate_decision, r.gate_confidence);
        for (id, score) in &r.items {
            println!("  {score:.3}  {id}  {}", base.rules[id].text());
        }
    }
    Ok(())
}
