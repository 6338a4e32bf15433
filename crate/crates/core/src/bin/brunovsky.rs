use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use brunovsky::config::RunConfig;
use brunovsky::pipeline::{run_command, Command};

/// Data-driven feedback linearization and trajectory control.
///
/// Log verbosity follows RUST_LOG (default: info).
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the configured plant and record a dataset.
    GenData(Args),
    /// Train the auto-encoder (generates the dataset if needed).
    Train(Args),
    /// Validation losses, reconstruction and held-out rollouts.
    Eval(Args),
    /// Plan the configured reference in Brunovsky coordinates.
    Plan(Args),
    /// Run the configured closed loop.
    Simulate(Args),
    /// Record closed-loop experiments on the target plant and fine-tune.
    Transfer(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Preset name (academic, crane-nominal, crane-transfer) or JSON file.
    #[arg(long, default_value = "academic")]
    config: String,
    /// Output directory; defaults to the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::GenData(a) => (Command::GenData, a),
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Eval(a) => (Command::Eval, a),
        Cmd::Plan(a) => (Command::Plan, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Transfer(a) => (Command::Transfer, a),
    };
    let mut cfg = match RunConfig::load(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args.out.unwrap_or_else(|| cfg.output_dir.clone());
    match run_command(command, &cfg, &out) {
        Ok(report) => {
            for path in &report.outputs {
                log::info!("wrote {}", path.display());
            }
            match serde_json::to_string_pretty(&report.metrics) {
                Ok(s) => println!("{s}"),
                Err(e) => log::warn!("could not print metrics: {e}"),
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{} failed: {e}", command.name());
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                log::error!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
