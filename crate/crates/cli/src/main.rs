//! `elq`: generate synthetic workloads, build indexes, train, link,
//! evaluate and benchmark.
//!
//! On failure the process exits with status 1 and writes one JSON object
//! `{"error": {"category": ..., "message": ...}}` to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use elq_core::decoder::{DecoderConfig, DEFAULT_GAMMA};
use elq_core::pipeline::{
    cmd_bench, cmd_build_index, cmd_eval, cmd_generate, cmd_link, cmd_train, write_json,
    CatalogPaths, ElOnlyInputs, EvalMode, QuestionFiles,
};
use elq_core::{ElqError, HnswParams, IndexMode, Result, SyntheticWorkloadSpec, TrainConfig};

#[derive(Parser)]
#[command(name = "elq", version, about = "Entity linking for questions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic catalog and train/dev/test question splits.
    Generate(GenerateArgs),
    /// Build an exact or HNSW inner-product index over a catalog.
    BuildIndex(BuildIndexArgs),
    /// Train the question projection and mention heads.
    Train(TrainArgs),
    /// Link questions and write predictions JSONL.
    Link(LinkArgs),
    /// Score predictions against gold annotations.
    Eval(EvalArgs),
    /// Time the linking path on one thread.
    Bench(BenchArgs),
}

#[derive(Args)]
struct CatalogArgs {
    /// Entity records, one JSON object per line.
    #[arg(long)]
    entities: PathBuf,
    /// Entity embedding matrix (binary).
    #[arg(long)]
    embeddings: PathBuf,
}

impl CatalogArgs {
    fn paths(&self) -> CatalogPaths {
        CatalogPaths::new(&self.entities, &self.embeddings)
    }
}

#[derive(Args)]
struct QuestionArgs {
    /// Questions JSONL.
    #[arg(long)]
    questions: PathBuf,
    /// Precomputed encoder features; questions without an entry use the
    /// synthetic encoder's base vectors.
    #[arg(long)]
    features: Option<PathBuf>,
}

impl QuestionArgs {
    fn files(&self) -> QuestionFiles {
        QuestionFiles::new(&self.questions, self.features.clone())
    }
}

#[derive(Args)]
struct DecodeArgs {
    /// Natural-log threshold on mention and joint scores.
    #[arg(long, default_value_t = DEFAULT_GAMMA, allow_hyphen_values = true)]
    gamma: f64,
    /// Entities retrieved per kept mention.
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[arg(long, default_value_t = 10)]
    max_span_len: usize,
    /// Mentions kept when none clears the threshold.
    #[arg(long, default_value_t = 50)]
    fallback: usize,
}

impl DecodeArgs {
    fn config(&self) -> DecoderConfig {
        DecoderConfig {
            gamma: self.gamma,
            top_k_entities: self.top_k,
            fallback_mentions: self.fallback,
            max_span_len: self.max_span_len,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    entities: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 500)]
    dev: usize,
    #[arg(long, default_value_t = 500)]
    test: usize,
    #[arg(long, default_value_t = 8)]
    min_tokens: usize,
    #[arg(long, default_value_t = 12)]
    max_tokens: usize,
    #[arg(long, default_value_t = 1)]
    min_mentions: usize,
    #[arg(long, default_value_t = 2)]
    max_mentions: usize,
    /// Expected norm of the noise added to planted token features.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BuildIndexArgs {
    #[command(flatten)]
    catalog: CatalogArgs,
    #[arg(long, default_value = "hnsw")]
    index: IndexMode,
    /// Output index file.
    #[arg(long)]
    index_path: PathBuf,
    /// HNSW neighbors per node (layer 0 keeps twice as many).
    #[arg(long, default_value_t = 32)]
    m: usize,
    #[arg(long, default_value_t = 200)]
    ef_construction: usize,
    #[arg(long, default_value_t = 256)]
    ef_search: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training questions with gold mentions.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    features: Option<PathBuf>,
    #[command(flatten)]
    catalog: CatalogArgs,
    /// Index used to mine hard negatives.
    #[arg(long)]
    index_path: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output CSV with per-epoch losses.
    #[arg(long)]
    loss_curve: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    hard_negatives: usize,
    #[arg(long, default_value_t = 10)]
    max_span_len: usize,
    /// Seeds the synthetic encoder and the epoch shuffle.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct LinkArgs {
    #[command(flatten)]
    questions: QuestionArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    catalog: CatalogArgs,
    #[arg(long)]
    index_path: PathBuf,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Worker threads; 0 uses every core. Output order is unaffected.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output predictions JSONL.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Gold questions JSONL.
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// full | md-only | el-only | strong
    #[arg(long, default_value = "full")]
    mode: EvalMode,
    /// Also write the report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Print JSON instead of the table.
    #[arg(long)]
    json: bool,
    /// el-only: model checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    entities: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    index_path: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    questions: QuestionArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    catalog: CatalogArgs,
    #[arg(long)]
    index_path: PathBuf,
    #[command(flatten)]
    decode: DecodeArgs,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    /// Accepted for symmetry with `link`; the benchmark always uses one thread.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| ElqError::Format(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| ElqError::InvalidInput(format!("el-only evaluation needs --{flag}")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => {
            let spec = SyntheticWorkloadSpec {
                entities: a.entities,
                dim: a.dim,
                train_questions: a.train,
                dev_questions: a.dev,
                test_questions: a.test,
                min_tokens: a.min_tokens,
                max_tokens: a.max_tokens,
                min_mentions: a.min_mentions,
                max_mentions: a.max_mentions,
                noise: a.noise,
                seed: a.seed,
                ..Default::default()
            };
            let paths = cmd_generate(&spec, &a.out)?;
            log::info!("wrote workload to {}", a.out.display());
            println!("{}", paths.entities.display());
            println!("{}", paths.embeddings.display());
            for (q, f) in &paths.splits {
                println!("{}\n{}", q.display(), f.display());
            }
        }
        Command::BuildIndex(a) => {
            let params = HnswParams {
                max_neighbors: a.m,
                ef_construction: a.ef_construction,
                ef_search: a.ef_search,
            };
            let index = cmd_build_index(&a.catalog.paths(), a.index, params, a.seed, &a.index_path)?;
            log::info!("indexed {} entities (dim {})", index.len(), index.dim());
        }
        Command::Train(a) => {
            let config = TrainConfig {
                epochs: a.epochs,
                batch_size: a.batch_size,
                learning_rate: a.lr,
                hard_negatives: a.hard_negatives,
                max_span_len: a.max_span_len,
                seed: a.seed,
                ..Default::default()
            };
            let data = QuestionFiles::new(&a.data, a.features.clone());
            let outcome = cmd_train(
                &data,
                &a.catalog.paths(),
                &a.index_path,
                &config,
                &a.checkpoint,
                &a.loss_curve,
            )?;
            if let (Some(first), Some(last)) = (outcome.epochs.first(), outcome.epochs.last()) {
                log::info!(
                    "{} steps, loss {:.4} -> {:.4}",
                    outcome.steps,
                    first.total,
                    last.total
                );
            }
        }
        Command::Link(a) => {
            let preds = cmd_link(
                &a.questions.files(),
                &a.checkpoint,
                &a.catalog.paths(),
                &a.index_path,
                a.decode.config(),
                a.threads,
                &a.out,
            )?;
            log::info!("linked {} questions", preds.len());
        }
        Command::Eval(a) => {
            let el_inputs = if a.mode == EvalMode::ElOnly {
                Some(ElOnlyInputs {
                    features: a.features.clone(),
                    checkpoint: required(&a.checkpoint, "checkpoint")?.to_owned(),
                    catalog: CatalogPaths::new(
                        required(&a.entities, "entities")?,
                        required(&a.embeddings, "embeddings")?,
                    ),
                    index: required(&a.index_path, "index-path")?.to_owned(),
                    top_k: a.top_k,
                })
            } else {
                None
            };
            let report = cmd_eval(&a.gold, a.predictions.as_deref(), a.mode, el_inputs.as_ref())?;
            if let Some(path) = &a.report {
                write_json(path, &report)?;
            }
            if a.json {
                print_json(&report)?;
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::Bench(a) => {
            if a.threads.is_some_and(|t| t != 1) {
                log::warn!("bench runs on one thread; ignoring --threads");
            }
            let report = cmd_bench(
                &a.questions.files(),
                &a.checkpoint,
                &a.catalog.paths(),
                &a.index_path,
                a.decode.config(),
                a.repetitions,
            )?;
            if let Some(path) = &a.report {
                write_json(path, &report)?;
            }
            if a.json {
                print_json(&report)?;
            } else {
                print!("{}", report.to_table());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({
                "error": { "category": e.category(), "message": e.to_string() }
            });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
