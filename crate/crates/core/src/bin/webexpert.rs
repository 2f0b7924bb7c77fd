use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use webexpert::canonicalize::load_dataset;
use webexpert::config::PipelineConfig;
use webexpert::pipeline::Pipeline;
use webexpert::planner::generate_plan;
use webexpert::retrieval::RuleIndex;
use webexpert::simeval::{ablate, build_sim_corpus, training_tuples, Benchmark, Variant};
use webexpert::store::{build_base, streaming_update, ExperienceStore};
use webexpert::training::{examples_from_base, load_projection, save_projection, separable_toy_set, top1_accuracy, train_projection};

/// Expert-experience bases for domain-aware web search.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Pipeline configuration (single JSON document); defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the corpus and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an experience base from a QA tuple JSONL file.
    Build {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream new tuples into an existing base.
    Refresh {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Top-k experiences and gate decision for a question.
    Retrieve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        question: String,
        /// Learned projection from `train`.
        #[arg(long)]
        projection: Option<PathBuf>,
    },
    /// Facet-aware query plan for a question.
    Plan {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        question: String,
    },
    /// Learn a retrieval projection with the contrastive objective.
    Train {
        /// Train on the base's own questions; the built-in toy set otherwise.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the seeded synthetic corpus and its expert tuples.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one variant of the synthetic benchmark.
    Eval {
        #[arg(long, default_value = "full")]
        variant: String,
    },
    /// Compare variants on the same seeded corpus.
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "full,no_merge,no_sentence_embed,k1")]
        variants: Vec<String>,
    },
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    kind: &'a str,
    message: String,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
        cfg.training.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    emit(&serde_json::to_string_pretty(value)?)
}

fn open_store(dir: &Path, cfg: &PipelineConfig) -> Result<ExperienceStore> {
    let store = ExperienceStore::load(dir)?;
    if store.config.digest() != cfg.digest() {
        bail!(webexpert::Error::ConfigDrift {
            base: store.config.digest(),
            current: cfg.digest(),
        });
    }
    Ok(store)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Build { dataset, out } => {
            let pipeline = Pipeline::from_env(cfg)?;
            let tuples = load_dataset(&dataset)?;
            let mut store = build_base(&pipeline, tuples)?;
            store.save(&out)?;
            let v = store.latest();
            eprintln!("built version {} with {} rules", v.version, v.rules.len());
            print_json(&serde_json::json!({
                "version": v.version,
                "rules": v.rules.len(),
                "config_digest": v.config_digest,
            }))
        }
        Command::Refresh { store: dir, dataset } => {
            let pipeline = Pipeline::from_env(cfg.clone())?;
            let mut store = open_store(&dir, &cfg)?;
            let report = streaming_update(&mut store, &pipeline, load_dataset(&dataset)?)?;
            store.save(&dir)?;
            eprintln!(
                "version {}: {} added, {} re-distilled, {} merged, {} retired",
                report.version,
                report.added.len(),
                report.redistilled.len(),
                report.merged.len(),
                report.retired.len()
            );
            print_json(&report)
        }
        Command::Retrieve {
            store: dir,
            question,
            projection,
        } => {
            let pipeline = Pipeline::from_env(cfg.clone())?;
            let store = open_store(&dir, &cfg)?;
            let base = store.latest();
            let projection = projection.map(load_projection).transpose()?;
            let index = RuleIndex::build(base, pipeline.encoder.as_ref(), cfg.rule_text)?.with_projection(projection)?;
            let retrieved = index.topk(&question, pipeline.encoder.as_ref(), &cfg.gate)?;
            for (id, score) in &retrieved.items {
                eprintln!("{score:>7.4}  {id}  {}", base.rules[id].text());
            }
            eprintln!("gate {:?} at confidence {:.4}", retrieved.gate_decision, retrieved.gate_confidence);
            print_json(&retrieved)
        }
        Command::Plan { store: dir, question } => {
            let pipeline = Pipeline::from_env(cfg.clone())?;
            let store = open_store(&dir, &cfg)?;
            let base = store.latest();
            let index = RuleIndex::build(base, pipeline.encoder.as_ref(), cfg.rule_text)?;
            let retrieved = index.topk(&question, pipeline.encoder.as_ref(), &cfg.gate)?;
            let plan = generate_plan(&question, &retrieved, base, &pipeline.tables, &cfg.planner)?;
            for (i, z) in plan.queries.iter().enumerate() {
                eprintln!("z{}  {z}", i + 1);
            }
            print_json(&plan)
        }
        Command::Train { store, out } => {
            let (train, held_out, rules) = match store {
                Some(dir) => {
                    let pipeline = Pipeline::from_env(cfg.clone())?;
                    let store = open_store(&dir, &cfg)?;
                    let (examples, rules) = examples_from_base(store.latest(), &store.all_tuples(), pipeline.encoder.as_ref())?;
                    (examples.clone(), examples, rules)
                }
                None => {
                    let toy = separable_toy_set(cfg.training.seed, 40, 32)?;
                    (toy.train, toy.held_out, toy.rules)
                }
            };
            let before = top1_accuracy(&held_out, &rules, None)?;
            let outcome = train_projection(&train, &rules, &cfg.training)?;
            let after = top1_accuracy(&held_out, &rules, Some(&outcome.projection))?;
            save_projection(&out, &outcome.projection)?;
            let first = outcome.curve.first().copied().unwrap_or(0.0);
            let last = outcome.curve.last().copied().unwrap_or(0.0);
            eprintln!("loss {first:.4} -> {last:.4}; top-1 {before:.3} -> {after:.3}");
            print_json(&serde_json::json!({
                "epochs": outcome.curve.len(),
                "initial_loss": first,
                "final_loss": last,
                "top1_before": before,
                "top1_after": after,
                "projection": out,
            }))
        }
        Command::Simulate { out } => {
            let pipeline = Pipeline::new(cfg.clone())?;
            let corpus = build_sim_corpus(&cfg.sim, &pipeline.tables, pipeline.encoder.as_ref())?;
            let tuples = training_tuples(&corpus, &pipeline.tables);
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("corpus.json"), serde_json::to_vec_pretty(&corpus)?)?;
            let mut jsonl = Vec::new();
            webexpert::canonicalize::write_jsonl(&mut jsonl, &tuples)?;
            std::fs::write(out.join("tuples.jsonl"), jsonl)?;
            eprintln!(
                "{} pages, {} questions, {} expert tuples; answer gap {:.4}",
                corpus.pages.len(),
                corpus.questions.len(),
                tuples.len(),
                corpus.answer_gap
            );
            print_json(&serde_json::json!({
                "seed": corpus.seed,
                "pages": corpus.pages.len(),
                "questions": corpus.questions.len(),
                "tuples": tuples.len(),
                "answer_gap": corpus.answer_gap,
            }))
        }
        Command::Eval { variant } => {
            let variant: Variant = variant.parse()?;
            let report = Benchmark::new(cfg)?.run(variant)?;
            eprint!("{}", report.table());
            emit(&report.to_json())
        }
        Command::Ablate { variants } => {
            let variants = variants
                .iter()
                .filter(|v| !v.is_empty())
                .map(|v| v.parse())
                .collect::<Result<Vec<Variant>, _>>()?;
            let table = ablate(&cfg, &variants)?;
            eprint!("{}", table.table());
            print_json(&table)
        }
    }
}

fn emit_error(kind: &str, message: String) -> ExitCode {
    let line = ErrorLine { kind, message };
    eprintln!("{}", serde_json::to_string(&serde_json::json!({ "error": line })).expect("error line serializes"));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return emit_error("Usage", e.to_string().trim().to_string()),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<webexpert::Error>().map_or("Error", webexpert::Error::kind);
            emit_error(kind, format!("{e:#}"))
        }
    }
}
