//! `ados`: batch scoring of ADOS-2 Module 3 transcripts.

mod config;
mod error;
mod run;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use ados_core::items::ItemId;
use ados_core::Execution;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::load_config;
use crate::error::CliError;
use crate::run::RunDir;
use crate::stages::Pipeline;

#[derive(Debug, Parser)]
#[command(name = "ados", version, about = "Score ADOS-2 Module 3 transcripts with rules, an LLM, or both")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory; overrides `paths.run_dir`.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Answer LLM prompts from stored exchanges and fixtures; no network.
    #[arg(long, global = true)]
    replay: bool,
    /// Recompute stages that already completed.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Source {
    Rule,
    Llm,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Grid-search rule thresholds on the labeled corpus.
    Fit,
    /// Score every session with the rules and/or the LLM.
    Score {
        #[arg(long = "source", value_enum, required = true)]
        sources: Vec<Source>,
    },
    /// Combine rule and LLM scores per item.
    Fuse,
    /// Compare scores with the labels and print the metrics table.
    Evaluate,
    /// Ask the LLM for verbatim evidence behind its first-stage scores.
    Explain {
        /// Sessions to explain; all scored sessions if omitted.
        #[arg(long = "session")]
        sessions: Vec<String>,
        /// Items to explain; all eight if omitted.
        #[arg(long = "item", value_parser = parse_item)]
        items: Vec<ItemId>,
    },
    /// Generate a labeled synthetic corpus with replay fixtures.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Generator profile (JSON); built-in defaults if omitted.
        #[arg(long)]
        profile: Option<PathBuf>,
    },
}

fn parse_item(s: &str) -> Result<ItemId, String> {
    s.parse::<ItemId>().map_err(|e| e.to_string())
}

fn execution(jobs: Option<usize>) -> Result<Execution, CliError> {
    match jobs {
        Some(0) => Err(CliError::Config("--jobs must be at least 1".into())),
        Some(1) => Ok(Execution::Sequential),
        Some(n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Config(format!("--jobs {n}: {e}")))?;
            #[cfg(not(feature = "parallel"))]
            log::warn!("built without the `parallel` feature; ignoring --jobs {n}");
            Ok(Execution::default())
        }
        None => Ok(Execution::default()),
    }
}

fn pipeline(g: &Global) -> Result<Pipeline, CliError> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs --config".into()))?;
    let loaded = load_config(path)?;
    let mut cfg = loaded.config;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    let dir = g
        .run_dir
        .clone()
        .or_else(|| cfg.paths.run_dir.clone())
        .ok_or_else(|| CliError::Config("no run directory: pass --run-dir or set paths.run_dir".into()))?;
    let run = RunDir::open(&dir, cfg.seed, &loaded.digest, g.force)?;
    Ok(Pipeline {
        cfg,
        run,
        exec: execution(g.jobs)?,
        force: g.force,
        replay: g.replay,
    })
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match cli.command {
        Command::Synth { out, profile } => {
            execution(g.jobs)?;
            stages::synth(&out, profile.as_deref(), g.seed, g.force).map(|_| ())
        }
        Command::Fit => stages::fit(&mut pipeline(g)?),
        Command::Score { sources } => {
            let mut p = pipeline(g)?;
            let mut failure = None;
            for s in [Source::Rule, Source::Llm] {
                if !sources.contains(&s) {
                    continue;
                }
                let r = match s {
                    Source::Rule => stages::score_rule(&mut p),
                    Source::Llm => stages::score_llm(&mut p),
                };
                match r {
                    // Keep going so the other source still gets scored.
                    Err(e @ CliError::TaskFailures { .. }) => failure = Some(e),
                    other => other?,
                }
            }
            failure.map_or(Ok(()), Err)
        }
        Command::Fuse => stages::fuse_stage(&mut pipeline(g)?),
        Command::Evaluate => stages::evaluate(&mut pipeline(g)?),
        Command::Explain { sessions, items } => stages::explain(&mut pipeline(g)?, &sessions, &items),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
