use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use ftlab_bench::config::BenchConfig;
use ftlab_bench::records::read_records;
use ftlab_bench::report::{emit_reports, ReportOptions, Threshold};
use ftlab_bench::run::{gen_data, pretrain_all, run_matrix, RunOptions};

#[derive(Parser)]
#[command(name = "ftlab", version, about = "Fine-tuning strategy benchmark on synthetic transfer tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the configured datasets and the source task to FTDS files.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the source checkpoint of every configured architecture.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Retrain even if a checkpoint exists.
        #[arg(long)]
        force: bool,
    },
    /// Execute the pending cells of the experiment matrix.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Re-run cells that already have a completed record.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Build result tables from a directory holding records.jsonl.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Count an improvement when the raw score difference exceeds this,
        /// instead of the default 0.1% relative rule.
        #[arg(long)]
        absolute_threshold: Option<f64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(path: &PathBuf) -> anyhow::Result<BenchConfig> {
    BenchConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::GenData { config } => {
            for path in gen_data(&load(&config)?)? {
                println!("{}", path.display());
            }
        }
        Command::Pretrain { config, force } => {
            for (family, result) in pretrain_all(&load(&config)?, force)? {
                match result {
                    Some(r) => println!("{}: trained, source metrics {:?}", family.name(), r.metrics),
                    None => println!("{}: checkpoint exists, skipped", family.name()),
                }
            }
        }
        Command::Run { config, force, workers } => {
            let summary = run_matrix(&load(&config)?, RunOptions { force, workers })?;
            println!(
                "cells: {} total, {} executed, {} skipped, {} failed",
                summary.total_cells, summary.executed, summary.skipped, summary.failed
            );
            if summary.failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Report { input, out, absolute_threshold } => {
            let records = read_records(&input.join("records.jsonl"))?;
            let threshold = absolute_threshold.map_or(Threshold::default(), Threshold::Absolute);
            let emitted = emit_reports(&records, &out, ReportOptions { threshold })?;
            for w in &emitted.warnings {
                log::warn!("{w}");
            }
            for f in &emitted.files {
                println!("{}", f.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
