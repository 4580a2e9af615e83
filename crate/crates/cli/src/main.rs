use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use finfuse::commands::{self, Outcome, EXIT_FAILURE};
use finfuse::config::{Overrides, RunConfig};
use finfuse::demo::{write_demo, DemoSpec};
use finfuse::manifest::{manifest_path, RunManifest};
use finfuse_core::mock::MockServer;
use finfuse_core::TaskId;

/// Evaluation harness for financial instruction-tuned chat models.
#[derive(Parser)]
#[command(name = "finfuse", version)]
struct Cli {
    /// Log more (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory (overrides `out_dir`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Restrict infer/eval to these tasks (comma separated).
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<TaskId>>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            seed: self.seed,
            out_dir: self.out_dir.clone(),
            base_url: self.base_url.clone(),
            model: self.model.clone(),
            max_in_flight: self.max_in_flight,
            tasks: self.tasks.clone(),
        });
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Split and fuse the training sets into one instruction corpus.
    Fuse(RunArgs),
    /// Query the chat endpoint for every test example.
    Infer(RunArgs),
    /// Score completions against gold answers.
    Eval(RunArgs),
    /// Simulate trading decisions against price files.
    Backtest {
        #[command(flatten)]
        run: RunArgs,
        /// Only these tickers (default: all configured).
        #[arg(long = "ticker")]
        tickers: Vec<String>,
    },
    /// Summarize eval and backtest reports as markdown.
    Report(RunArgs),
    /// fuse, infer, eval, backtest and report in sequence.
    Run(RunArgs),
    /// Re-hash the outputs recorded in a run's manifests.
    Verify(RunArgs),
    /// Write synthetic datasets, price files and a config.
    DemoData {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        base_url: String,
    },
    /// Serve a deterministic stand-in for a chat-completions endpoint.
    MockServer {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

fn verify(cfg: &RunConfig) -> Result<Outcome> {
    let run_dir = cfg.out_dir();
    let mut checked = 0;
    let mut stale = Vec::new();
    for cmd in ["fuse", "infer", "eval", "backtest", "report"] {
        let p = manifest_path(&run_dir, cmd);
        if !p.is_file() {
            continue;
        }
        let m = RunManifest::load(&p)?;
        checked += m.outputs.len();
        stale.extend(m.stale_outputs(&run_dir));
    }
    if checked == 0 {
        bail!("no manifests under {}", run_dir.display());
    }
    if !stale.is_empty() {
        bail!("outputs changed since their manifest was written: {}", stale.join(", "));
    }
    println!("{checked} outputs match their manifest hashes");
    Ok(Outcome::Complete)
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Fuse(a) => commands::cmd_fuse(&a.load()?),
        Command::Infer(a) => commands::cmd_infer(&a.load()?),
        Command::Eval(a) => commands::cmd_eval(&a.load()?),
        Command::Backtest { run, tickers } => commands::cmd_backtest(&run.load()?, &tickers),
        Command::Report(a) => commands::cmd_report(&a.load()?),
        Command::Run(a) => commands::cmd_run(&a.load()?),
        Command::Verify(a) => verify(&a.load()?),
        Command::DemoData { dir, seed, base_url } => {
            write_demo(
                &dir,
                &DemoSpec {
                    seed,
                    base_url,
                    ..DemoSpec::default()
                },
            )?;
            println!("wrote demo data and {}", dir.join("config.toml").display());
            Ok(Outcome::Complete)
        }
        Command::MockServer { bind } => {
            let server = MockServer::builder().bind(bind).try_build()?;
            println!("mock chat endpoint listening on {}", server.url());
            server.join();
            Ok(Outcome::Complete)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(o) => ExitCode::from(o.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILURE as u8)
        }
    }
}
