use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use medts_core::pipeline::{inspect, run_loaded, validate_config, LoadedConfig, PipelineError, RunOptions};
use medts_core::synth;

#[derive(Parser)]
#[command(name = "medts", version, about = "Run medical time-series pipelines from a JSON config")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest, preprocess, train, evaluate and write artifacts.
    Run {
        config: PathBuf,
        /// Abort on the first unreadable file instead of skipping it.
        #[arg(long)]
        strict: bool,
        /// Output directory, replacing `output_dir` from the config.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Ingest only and print a data-quality summary.
    Inspect {
        config: PathBuf,
        #[arg(long)]
        strict: bool,
        /// Print the summary as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Check the config without reading any data.
    Validate { config: PathBuf },
    /// Write a seeded synthetic dataset.
    Synth {
        #[arg(value_enum)]
        kind: SynthKind,
        /// Target file (covid, survival) or directory (sepsis).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        entities: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Covid,
    Sepsis,
    Survival,
}

fn load(path: &PathBuf) -> Result<LoadedConfig, PipelineError> {
    Ok(LoadedConfig::read(path)?)
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Run { config, strict, out } => {
            let loaded = load(&config)?;
            let manifest = run_loaded(&loaded, &RunOptions { strict, out })?;
            let report = std::fs::read_to_string(PathBuf::from(&manifest.output_dir).join("report.txt"))
                .unwrap_or_default();
            print!("{report}");
            println!("\nartifacts in {}:", manifest.output_dir);
            for a in &manifest.artifacts {
                println!("  {a}");
            }
        }
        Command::Inspect { config, strict, json } => {
            let summary = inspect(&load(&config)?, strict)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            } else {
                print!("{}", summary.render());
            }
        }
        Command::Validate { config } => {
            let loaded = load(&config)?;
            let model = validate_config(&loaded)?;
            println!(
                "config ok: pipeline {}, model {}",
                loaded.config.pipeline.name(),
                model.name()
            );
            println!("model config: {}", model.config_value());
            println!("output dir: {}", loaded.output_dir(None).display());
        }
        Command::Synth { kind, out, entities, seed } => {
            let io = |e: std::io::Error| PipelineError::Io { path: out.clone(), source: e };
            match kind {
                SynthKind::Covid => std::fs::write(&out, synth::covid_like_csv(entities, seed)).map_err(io)?,
                SynthKind::Survival => std::fs::write(&out, synth::survival_like_csv(entities, seed)).map_err(io)?,
                SynthKind::Sepsis => synth::write_sepsis_like_dir(&out, entities, seed).map_err(io)?,
            }
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
