//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 backend
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use agentgr::config::{BackendKind, RunConfig};
use agentgr::error::Error;
use agentgr::pipeline::Pipeline;
use agentgr::simulation::Strategy;

#[derive(Parser)]
#[command(
    name = "agentgr",
    version,
    about = "Group-recommendation decision simulator driven by LLM agents"
)]
struct Cli {
    /// Path to the run configuration file
    #[arg(long, global = true, default_value = "agentgr.toml")]
    config: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Http,
}

impl From<BackendArg> for BackendKind {
    fn from(value: BackendArg) -> Self {
        match value {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::Http => BackendKind::Http,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Metapath,
    Profile,
    Topics,
    Leaders,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Static,
    Dynamic,
    Heuristic,
}

impl From<StrategyArg> for Strategy {
    fn from(value: StrategyArg) -> Self {
        match value {
            StrategyArg::Static => Strategy::Static,
            StrategyArg::Dynamic => Strategy::Dynamic,
            StrategyArg::Heuristic => Strategy::Heuristic,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load the dataset, build the leave-one-out split and sample candidates
    Ingest,
    /// Run one pipeline stage (metapath, profile, topics, leaders)
    Pipeline {
        #[arg(value_enum)]
        stage: StageArg,
        /// Override the configured chat backend
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
    },
    /// Produce group recommendations for every test case
    Recommend {
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        /// Override the configured chat backend
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
    },
    /// Compute HR@K / NDCG@K over one or more results files
    Evaluate {
        /// Results file(s); two files render side by side
        #[arg(long, required = true, num_args = 1..)]
        results: Vec<PathBuf>,
        /// Evaluate even when fingerprints do not match
        #[arg(long)]
        force: bool,
    },
}

fn run(cli: Cli) -> agentgr::Result<()> {
    let mut config = RunConfig::load(&cli.config)?;
    // fold the --backend override in before fingerprinting
    let backend_override = match &cli.command {
        Command::Pipeline { backend, .. } | Command::Recommend { backend, .. } => *backend,
        _ => None,
    };
    if let Some(backend) = backend_override {
        config.llm.backend = backend.into();
        config.validate()?;
    }
    let pipeline = Pipeline::new(config)?;
    log::info!("config fingerprint {}", pipeline.fingerprint);

    match cli.command {
        Command::Ingest => {
            let path = pipeline.ingest()?;
            println!("split manifest written to {}", path.display());
        }
        Command::Pipeline { stage, .. } => match stage {
            StageArg::Metapath => {
                let client = pipeline.make_client()?;
                pipeline.stage_metapath(&client)?;
                println!("metapath artifacts written");
            }
            StageArg::Profile => {
                let client = pipeline.make_client()?;
                pipeline.stage_profile(&client)?;
                println!("user profiles written");
            }
            StageArg::Topics => {
                let client = pipeline.make_client()?;
                pipeline.stage_topics(&client)?;
                println!("group contexts written");
            }
            StageArg::Leaders => {
                let embedder = pipeline.make_embedder()?;
                pipeline.stage_leaders(embedder.as_ref())?;
                println!("leaders resolved");
            }
        },
        Command::Recommend { strategy, .. } => {
            let client = pipeline.make_client()?;
            let strategy: Strategy = strategy.into();
            let outcome = pipeline.recommend(&client, strategy)?;
            println!(
                "{} results, {} failures -> results_{}.jsonl",
                outcome.results.len(),
                outcome.failures.len(),
                strategy.as_str()
            );
            if outcome.results.is_empty() {
                return Err(Error::Data("every group failed".into()));
            }
        }
        Command::Evaluate { results, force } => {
            let (_, table) = pipeline.evaluate_results(&results, force)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
