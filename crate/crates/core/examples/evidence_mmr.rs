//! Cluster a small tuple set, then pick diverse supporting evidence for the
//! largest cluster with hybrid scoring, deduplication and MMR.

use std::collections::BTreeMap;

use webexpert::clustering::{cluster_qa, ViewTable};
use webexpert::config::PipelineConfig;
use webexpert::evidence::select_evidence;
use webexpert::fixtures::diversification_tuples;
use webexpert::pipeline::Pipeline;

fn main() -> webexpert::Result<()> {
    let pipeline = Pipeline::new(PipelineConfig::default())?;
    let tuples = diversification_tuples();
    let views = ViewTable::build(&tuples, pipeline.encoder.as_ref())?;
    let ids: Vec<String> = tuples.iter().map(|t| t.id.clone()).collect();
    let outcome = cluster_qa(&ids, &views, &pipeline.config.cluster)?;
    println!("{} cluster(s), noise {:?}", outcome.clusters.len(), outcome.noise);

    let by_id: BTreeMap<String, _> = tuples.into_iter().map(|t| (t.id.clone(), t)).collect();
    let Some(cluster) = outcome.clusters.iter().max_by_key(|c| c.members.len()) else {
        return Ok(());
    };
    println!("cluster {} (medoid {})", cluster.cluster_id, cluster.medoid_id);
    let evidence = select_evidence(cluster, &by_id, pipeline.encoder.as_ref(), &pipeline.config.evidence)?;
    for item in &evidence {
        println!(
            "  {:.3} (dense {:.3}, bm25 {:.3})  [{}] {}",
            item.fused_score, item.dense_score, item.lexical_score, item.source.url_or_name, item.text
        );
    }
    Ok(())
}
