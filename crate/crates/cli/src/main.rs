//! `biasmap`: the bias-embedding pipeline as one subcommand per stage.
//!
//! Exit codes: 0 ok, 1 other failure (I/O), 2 missing input, 3 validation,
//! 4 provider failure.

mod artifacts;
mod config;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::info;

use crate::config::PipelineConfig;
use crate::stages::Ctx;

#[derive(Parser)]
#[command(name = "biasmap", version, about = "Sparse political-bias embeddings, stage by stage")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML pipeline configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `seeds.base`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory holding every stage's inputs and outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq, Debug)]
enum Command {
    /// Validate the input corpus and copy it into the output directory.
    Ingest,
    /// Encode every article.
    EmbedCorpus,
    /// Cluster articles, keep controversial clusters, extract topics and indicators.
    MineTopics,
    /// Encode topics and indicators.
    BuildIndex,
    /// Derive weak alignment labels from outlet ratings.
    GenLabels,
    /// Train the reference alignment scorer.
    TrainScorer,
    /// Build sparse bias embeddings.
    Embed,
    /// Diversified retrieval for sampled query articles.
    Retrieve,
    /// Classification report on held-out articles.
    Evaluate {
        /// Accept inputs stamped with a different config hash.
        #[arg(long)]
        allow_mixed_hash: bool,
    },
    /// Similarity/diversity frontier over the configured mu values.
    Sweep,
    /// Every stage in order.
    RunAll,
}

const ALL_STAGES: [Command; 10] = [
    Command::Ingest,
    Command::EmbedCorpus,
    Command::MineTopics,
    Command::BuildIndex,
    Command::GenLabels,
    Command::TrainScorer,
    Command::Embed,
    Command::Retrieve,
    Command::Evaluate {
        allow_mixed_hash: false,
    },
    Command::Sweep,
];

fn run_stage(ctx: &Ctx, command: Command) -> biasmap::Result<()> {
    match command {
        Command::Ingest => stages::ingest(ctx),
        Command::EmbedCorpus => stages::embed_corpus_stage(ctx),
        Command::MineTopics => stages::mine_topics(ctx),
        Command::BuildIndex => stages::build_index_stage(ctx),
        Command::GenLabels => stages::gen_labels(ctx),
        Command::TrainScorer => stages::train_scorer(ctx),
        Command::Embed => stages::embed(ctx),
        Command::Retrieve => stages::retrieve(ctx),
        Command::Evaluate { allow_mixed_hash } => stages::evaluate(ctx, allow_mixed_hash),
        Command::Sweep => stages::sweep(ctx),
        Command::RunAll => {
            for stage in ALL_STAGES {
                info!("== {stage:?}");
                run_stage(ctx, stage)?;
            }
            Ok(())
        }
    }
}

fn context(cli: &Cli) -> biasmap::Result<Ctx> {
    let (mut cfg, base) = match &cli.config {
        Some(p) => (PipelineConfig::load(p)?, p.parent().unwrap_or(Path::new("")).to_path_buf()),
        None => (PipelineConfig::default(), PathBuf::new()),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds.base = seed;
    }
    cfg.validate()?;
    let echo = cfg.clone();
    let hash = cfg.hash();
    cfg.resolve_paths(&base);
    info!("config hash {hash}, base seed {}", cfg.seeds.base);
    Ok(Ctx {
        cfg,
        echo,
        ws: artifacts::Workspace::new(cli.out_dir.clone(), hash),
    })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<biasmap::Error>() {
        Some(biasmap::Error::MissingInput(_)) => 2,
        Some(biasmap::Error::Provider { .. }) => 4,
        Some(biasmap::Error::Io(_)) | None => 1,
        Some(_) => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    let result = context(&cli)
        .context("loading configuration")
        .and_then(|ctx| run_stage(&ctx, cli.command).with_context(|| format!("{:?} failed", cli.command)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
