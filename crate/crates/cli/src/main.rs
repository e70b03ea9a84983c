//! `edgestack`: run the emulated edge stack from one binary.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

mod bench_cmd;
mod client;
mod commands;
mod config;
mod daemon;
mod error;
mod state;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use edgestack::bench::{ConnectionPolicy, DEFAULT_CORPUS_SEED};

use config::ConfigArgs;
use error::Result;

#[derive(Parser)]
#[command(
    name = "edgestack",
    version,
    about = "Single-machine micro-operator edge stack"
)]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Start, stop and inspect the core
    Core {
        #[command(subcommand)]
        action: CoreCmd,
    },
    /// Subscriber and UE session management
    Ue {
        #[command(subcommand)]
        action: UeCmd,
    },
    /// Push and inspect edge apps
    App {
        #[command(subcommand)]
        action: AppCmd,
    },
    /// Run a benchmark scenario (empty|blob1m|blob10m|baseline) or `all`
    Bench {
        scenario: String,
        /// Link RNG seed (overrides the profile's)
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for reports, series and plots
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
        /// shared | per-slot
        #[arg(long, default_value = "shared")]
        policy: ConnectionPolicy,
        /// Per-request timeout in seconds
        #[arg(long, default_value_t = 120)]
        timeout: u64,
        /// Also render an SVG scatter plot per scenario
        #[arg(long)]
        plot: bool,
    },
    /// Serve the blob corpus over HTTP (the standard edge test app)
    ServeBlobs {
        #[arg(long, env = "HOST", default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = DEFAULT_CORPUS_SEED)]
        corpus_seed: u64,
    },
    /// Write the blob corpus to a directory
    GenCorpus {
        dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CORPUS_SEED)]
        corpus_seed: u64,
    },
}

#[derive(Subcommand)]
enum CoreCmd {
    /// Start the core in the background
    Up,
    /// Stop the running core
    Down,
    /// Print the session and service tables
    Status,
    /// Run the core in the foreground
    Serve,
}

#[derive(Subcommand)]
enum UeCmd {
    /// Add a subscriber to the registry
    Register {
        subscriber_id: String,
    },
    Attach {
        subscriber_id: String,
    },
    Detach {
        subscriber_id: String,
    },
    /// Print the session table
    List,
}

#[derive(Subcommand)]
enum AppCmd {
    /// Snapshot a directory and deploy it
    Push {
        dir: PathBuf,
        /// App name (default: the directory name)
        #[arg(long)]
        name: Option<String>,
        /// Expected revision (full hash or a prefix of at least 7 characters)
        #[arg(long)]
        revision: Option<String>,
        /// Seconds to wait for the run to finish
        #[arg(long, default_value_t = 900)]
        wait: u64,
    },
    Status {
        name: String,
    },
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.config.resolve()?;
    match cli.command {
        Cmd::Core { action } => match action {
            CoreCmd::Up => commands::core_up(&cfg),
            CoreCmd::Down => commands::core_down(&cfg),
            CoreCmd::Status => commands::core_status(&cfg),
            CoreCmd::Serve => daemon::serve(&cfg),
        },
        Cmd::Ue { action } => match action {
            UeCmd::Register { subscriber_id } => commands::ue_register(&cfg, &subscriber_id),
            UeCmd::Attach { subscriber_id } => commands::ue_attach(&cfg, &subscriber_id),
            UeCmd::Detach { subscriber_id } => commands::ue_detach(&cfg, &subscriber_id),
            UeCmd::List => commands::ue_list(&cfg),
        },
        Cmd::App { action } => match action {
            AppCmd::Push {
                dir,
                name,
                revision,
                wait,
            } => commands::app_push(
                &cfg,
                commands::PushArgs {
                    dir: &dir,
                    name: name.as_deref(),
                    revision: revision.as_deref(),
                    wait: Duration::from_secs(wait),
                },
            ),
            AppCmd::Status { name } => commands::app_status(&cfg, &name),
        },
        Cmd::Bench {
            scenario,
            seed,
            out,
            policy,
            timeout,
            plot,
        } => bench_cmd::bench(
            &cfg,
            bench_cmd::BenchArgs {
                scenario: &scenario,
                seed,
                out: &out,
                policy,
                timeout: Duration::from_secs(timeout),
                plot,
            },
        ),
        Cmd::ServeBlobs {
            host,
            port,
            corpus_seed,
        } => bench_cmd::serve(&host, port, corpus_seed),
        Cmd::GenCorpus { dir, corpus_seed } => bench_cmd::gen_corpus(&dir, corpus_seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
