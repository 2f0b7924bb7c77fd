//! Ablation on the seeded synthetic benchmark.

use std::time::Instant;

use webexpert::config::PipelineConfig;
use webexpert::simeval::{ablate, Variant};

fn main() -> webexpert::Result<()> {
    let config = PipelineConfig::default();
    let t = Instant::now();
    let table = ablate(&config, &Variant::ALL)?;
    print!("{}", table.table());
    println!("{} questions, seed {}, {:.1}s", table.n_questions, table.seed, t.elapsed().as_secs_f64());
    Ok(())
}
