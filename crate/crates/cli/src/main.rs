mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "q2p",
    version,
    about = "Logical query answering over knowledge graphs with particle embeddings"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration; defaults to $Q2P_CONFIG when set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set model.K=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the deterministic synthetic graph to `paths.triples`.
    Synth,
    /// Sample train/valid/test query files into `paths.queries`.
    Sample,
    /// Convert a benchmark query dump into `{split}.jsonl` files under
    /// `paths.queries`; records without a split go to `test`.
    Import {
        /// JSON array or JSON lines of `{type?, query, easy?, hard?, split?}`.
        #[arg(long)]
        dump: PathBuf,
    },
    /// Train a model, writing checkpoints and `loss.csv` under `paths.checkpoints`.
    Train {
        /// Continue from the latest checkpoint under `paths.checkpoints`.
        #[arg(long)]
        resume: bool,
        /// Continue from this checkpoint directory.
        #[arg(long, value_name = "DIR", conflicts_with = "resume")]
        resume_from: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a query split.
    Eval {
        /// Defaults to `<paths.checkpoints>/final`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Rank entities for a query with a trained model.
    Answer {
        /// Query in the s-expression syntax, e.g. `(p r0 (a e1))`.
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the exact answer set of a query on one graph.
    OracleCheck {
        #[arg(long)]
        query: String,
        #[arg(long, default_value = "test")]
        graph: String,
    },
    /// Run the finite-difference gradient suite and report the worst errors.
    GradCheck {
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 6)]
        d: usize,
        /// Exit 1 when any relative error exceeds this.
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let cfg = RunConfig::load(cli.global.config.as_deref(), &cli.global.overrides)?;
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Sample => commands::sample(&cfg),
        Command::Import { dump } => commands::import(&cfg, &dump),
        Command::Train { resume, resume_from } => {
            let from = match resume_from {
                Some(dir) => Some(dir),
                None if resume => Some(commands::latest_checkpoint(&cfg.paths.checkpoints)?),
                None => None,
            };
            commands::train(&cfg, from.as_deref())
        }
        Command::Eval { checkpoint, split } => commands::eval(&cfg, checkpoint.as_deref(), &split),
        Command::Answer {
            query,
            top_k,
            checkpoint,
        } => commands::answer(&cfg, &query, top_k, checkpoint.as_deref()),
        Command::OracleCheck { query, graph } => commands::oracle_check(&cfg, &query, &graph),
        Command::GradCheck {
            eps,
            seeds,
            d,
            tolerance,
        } => commands::grad_check(eps, seeds, d, tolerance),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::input("usage", e.to_string().trim_end());
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            // a closed stdout (e.g. piped into `head`) is not a failure
            let _ = writeln!(
                std::io::stdout(),
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code as u8)
        }
    }
}
