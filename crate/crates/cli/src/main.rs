//! `ctxaug`: command-line driver for the augmentation pipeline.
//!
//! Exit codes: 0 on success, 1 when arguments or configuration are invalid
//! (nothing was written), 2 when a stage failed.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctxaug_core::{Error, InputMode, Source};

#[derive(Debug, Parser)]
#[command(name = "ctxaug", version, about = "Retrieval-augmented MLM dataset construction")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML). Stage commands take their defaults from it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Masking RNG seed (generator seed for `synth`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads. Affects speed only, never output bytes.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read and normalise one corpus file.
    Ingest(commands::IngestArgs),
    /// Embed a corpus with the built-in embedder, or validate imported vectors.
    Embed(commands::EmbedArgs),
    /// Build a flat index over an embedding file.
    Index(commands::IndexArgs),
    /// Pack every target record with its retrieved neighbours.
    Augment(commands::AugmentArgs),
    /// Mask augmented records into the training dataset.
    BuildDataset(commands::BuildDatasetArgs),
    /// Score TREC runs against qrels.
    Eval(commands::EvalArgs),
    /// Rank documents for queries by embedding similarity (TREC run output).
    Retrieve(commands::RetrieveArgs),
    /// Budget and reference reports.
    Report(commands::ReportArgs),
    /// Run every stage from the configuration.
    Run(commands::RunArgs),
    /// Write seeded synthetic corpora, a vocabulary and a config.
    Synth(commands::SynthArgs),
}

pub fn parse_source(s: &str) -> Result<Source, String> {
    s.parse::<Source>().map_err(|e| e.to_string())
}

pub fn parse_format(s: &str) -> Result<InputMode, String> {
    s.parse::<InputMode>().map_err(|e| e.to_string())
}

fn exit_code(err: &Error) -> u8 {
    if err.is_validation() {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    if let Some(n) = cli.global.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }

    let g = &cli.global;
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(g, a),
        Command::Embed(a) => commands::embed(g, a),
        Command::Index(a) => commands::index(g, a),
        Command::Augment(a) => commands::augment(g, a),
        Command::BuildDataset(a) => commands::build_dataset(g, a),
        Command::Eval(a) => commands::eval(g, a),
        Command::Retrieve(a) => commands::retrieve(g, a),
        Command::Report(a) => commands::report(g, a),
        Command::Run(a) => commands::run(g, a),
        Command::Synth(a) => commands::synth(g, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
