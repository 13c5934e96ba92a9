//! `mlops` command-line entry point.
//!
//! Exit codes are shared by every subcommand: 0 success, 1 a negative
//! outcome (failed run, flagged drift), 2 a usage or input error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tracing_subscriber::EnvFilter;

use config::GlobalConfig;

#[derive(Parser)]
#[command(name = "mlops", version, about = "Drift-aware ML pipeline orchestration")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Store root holding features/, models/ and runs/.
    #[arg(long, global = true, env = "SMARTMLOPS_STORE")]
    pub store: Option<PathBuf>,

    /// Config file (TOML or YAML); flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,

    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Turn directives in source files into pipeline YAML.
    Synth(commands::SynthArgs),
    /// Validate and execute a pipeline file.
    Run(commands::RunArgs),
    /// Check a CSV against stored reference statistics.
    Validate(commands::ValidateArgs),
    /// Stream batches through the drift monitor.
    Monitor(commands::MonitorArgs),
    /// Inspect and move model versions.
    #[command(subcommand)]
    Registry(commands::RegistryCommand),
    /// Inspect stored feature statistics.
    #[command(subcommand)]
    Features(commands::FeaturesCommand),
    /// Monte Carlo drift-detection benchmark over a scenario file.
    Bench(commands::BenchArgs),
}

/// How a command finished when it did not hit an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Negative,
}

/// Everything a command needs besides its own arguments.
pub struct Context {
    pub global: GlobalArgs,
    pub config: GlobalConfig,
}

impl Context {
    pub fn store(&self) -> PathBuf {
        self.global
            .store
            .clone()
            .or_else(|| self.config.store.clone())
            .unwrap_or_else(|| PathBuf::from(config::DEFAULT_STORE))
    }

    /// Prints `value` as JSON with `--json`, otherwise the human text.
    pub fn emit<T: Serialize>(&self, value: &T, human: impl FnOnce() -> String) {
        if self.global.json {
            println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
        } else {
            let text = human();
            if !text.is_empty() {
                println!("{}", text.trim_end());
            }
        }
    }
}

fn init_logging(global: &GlobalArgs, config: &GlobalConfig) {
    let filter = match global.verbose {
        0 => config.log.clone().unwrap_or_else(|| "warn".into()),
        1 => "info".into(),
        _ => "debug".into(),
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(filter));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) if !err.use_stderr() => err.exit(),
        Err(err) => {
            if std::env::args().any(|a| a == "--json") {
                let message = err.kind().as_str().unwrap_or("invalid usage");
                println!("{}", serde_json::json!({ "error": message }));
            }
            let _ = err.print();
            return ExitCode::from(2);
        }
    };
    let result = GlobalConfig::load(cli.global.config.as_deref()).and_then(|config| {
        init_logging(&cli.global, &config);
        let ctx = Context {
            global: cli.global.clone(),
            config,
        };
        match cli.command {
            Command::Synth(args) => commands::synth(&ctx, args),
            Command::Run(args) => commands::run(&ctx, args),
            Command::Validate(args) => commands::validate(&ctx, args),
            Command::Monitor(args) => commands::monitor(&ctx, args),
            Command::Registry(cmd) => commands::registry(&ctx, cmd),
            Command::Features(cmd) => commands::features(&ctx, cmd),
            Command::Bench(args) => commands::bench(&ctx, args),
        }
    });
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Negative) => ExitCode::from(1),
        Err(err) => {
            if cli.global.json {
                println!("{}", serde_json::json!({ "error": format!("{err:#}") }));
            }
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
