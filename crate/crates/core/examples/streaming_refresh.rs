//! Grow a base in three streaming updates, persist it, and check that the
//! commit log replays to byte-identical rules and matches a full rebuild.

use webexpert::config::PipelineConfig;
use webexpert::pipeline::Pipeline;
use webexpert::simeval::Benchmark;
use webexpert::store::{build_base, streaming_update, ExperienceStore};

fn main() -> webexpert::Result<()> {
    let config = PipelineConfig::default();
    let pipeline = Pipeline::new(config.clone())?;
    let tuples = Benchmark::new(config.clone())?.tuples;

    let mut store = ExperienceStore::new(config);
    for part in tuples.chunks(tuples.len().div_ceil(3)) {
        let r = streaming_update(&mut store, &pipeline, part.to_vec())?;
        println!(
            "v{}: +{} tuples, {} new rules, {} re-distilled, {} merged, {} noise → {} rules",
            r.version,
            part.len(),
            r.added.len(),
            r.redistilled.len(),
            r.merged.len(),
            r.noise.len(),
            store.latest().rules.len()
        );
        let kept = store.latest().rules.values().filter(|x| x.provenance.version < r.version).count();
        println!("    {kept} rules carried over byte-identical");
    }

    let dir = tempfile::tempdir()?;
    store.save(dir.path())?;
    let loaded = ExperienceStore::load(dir.path())?;
    println!("saved and reloaded {} versions", loaded.versions().len());

    let replayed = store.replay(&pipeline)?;
    let identical = store
        .versions()
        .iter()
        .zip(replayed.versions())
        .all(|(a, b)| a.rules_jsonl() == b.rules_jsonl());
    println!("replay byte-identical: {identical}");

    let full = build_base(&pipeline, tuples)?;
    let key = |s: &ExperienceStore| {
        let mut v: Vec<String> = s.latest().rules.values().map(|r| r.text().to_string()).collect();
        v.sort();
        v
    };
    println!("same rule texts as a full rebuild: {}", key(&store) == key(&full));
    Ok(())
}
