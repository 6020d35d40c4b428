use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use tracing::{info, warn};

use semgate_core::audit::ChainStatus;
use semgate_core::fuzzer::FuzzConfig;
use semgate_server::api::{self, AppState};
use semgate_server::commands::{self, FuzzOptions, GraphFormat};
use semgate_server::config::{Config, ENV_OVERRIDES};

#[derive(Debug, Parser)]
#[command(name = "semgate", version, about = "Zero-trust intent gateway for tool-calling agents")]
struct Cli {
    /// TOML config file. Bundled fixtures are used for anything it leaves out.
    #[arg(long, short, global = true, env = "SEMGATE_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the HTTP API.
    Serve {
        /// Listen address; overrides the config and SEMGATE_BIND.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Fuzz an EPA graph against its invariants.
    Fuzz {
        /// Graph fixture; defaults to the configured or bundled graph.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long = "max-iter", default_value_t = 500)]
        max_iter: u64,
        /// Include the graph's defective edges.
        #[arg(long)]
        buggy: bool,
        /// Keep fuzzing after the first violation.
        #[arg(long)]
        keep_going: bool,
        #[arg(long)]
        json: bool,
        /// Mutation strategy name (guided, uniform).
        #[arg(long, default_value = "guided")]
        strategy: String,
        #[arg(long, default_value_t = 0.8)]
        valid_ratio: f64,
        #[arg(long, default_value_t = 8)]
        max_len: usize,
    },
    /// Check the hash chain of a JSONL ledger file.
    VerifyLedger { path: PathBuf },
    /// Write the EPA graph as DOT or JSON.
    ExportEpa {
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        buggy: bool,
        #[arg(long, value_enum, default_value = "dot")]
        format: GraphFormat,
        /// Output file; stdout if omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<Config> {
    let mut config = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    config.apply_env(std::env::vars().filter(|(k, _)| ENV_OVERRIDES.contains(&k.as_str())));
    Ok(config)
}

async fn serve(config: Config) -> Result<()> {
    let gateway = config.build_gateway()?;
    let graph = config.graph(false)?;
    graph.check_against(gateway.registry())?;
    info!(
        planner = gateway.planner_name(),
        ledger = gateway.ledger().backend(),
        records = gateway.ledger().len(),
        "gateway ready"
    );
    if let ChainStatus::BrokenAt { seq } = gateway.ledger().verify_chain()? {
        warn!(seq, "audit ledger fails verification");
    }
    let state = Arc::new(AppState { gateway, graph });

    let tick = Duration::from_secs(config.server.expiry_tick_secs.max(1));
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(tick);
        loop {
            interval.tick().await;
            let s = sweeper.clone();
            match tokio::task::spawn_blocking(move || s.gateway.sweep_expired()).await {
                Ok(Ok(released)) if !released.is_empty() => info!(count = released.len(), "released expired runs"),
                Ok(Err(e)) => warn!(error = %e, "expiry sweep failed"),
                _ => {}
            }
        }
    });

    let listener = tokio::net::TcpListener::bind(&config.server.bind)
        .await
        .with_context(|| format!("binding {}", config.server.bind))?;
    info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, api::router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut config = load_config(cli.config.as_ref())?;
    match cli.command {
        Command::Serve { bind } => {
            if let Some(b) = bind {
                config.server.bind = b;
            }
            tokio::runtime::Runtime::new()?.block_on(serve(config))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Fuzz {
            graph,
            seed,
            max_iter,
            buggy,
            keep_going,
            json,
            strategy,
            valid_ratio,
            max_len,
        } => {
            if graph.is_some() {
                config.paths.graph = graph;
            }
            let g = config.graph(buggy)?;
            let opts = FuzzOptions {
                config: FuzzConfig {
                    seed,
                    max_iterations: max_iter,
                    valid_ratio,
                    max_sequence_length: max_len,
                    keep_going,
                    ..FuzzConfig::default()
                },
                strategy,
                json,
            };
            let (report, text) = commands::fuzz(&g, &opts)?;
            println!("{text}");
            Ok(if report.violations.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::VerifyLedger { path } => {
            let (status, n) = commands::verify_ledger(&path)?;
            match status {
                ChainStatus::Valid => {
                    println!("valid ({n} records)");
                    Ok(ExitCode::SUCCESS)
                }
                ChainStatus::BrokenAt { seq } => {
                    println!("broken at seq {seq} ({n} records)");
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::ExportEpa {
            graph,
            buggy,
            format,
            out,
        } => {
            if graph.is_some() {
                config.paths.graph = graph;
            }
            let text = commands::export_graph(&config.graph(buggy)?, format)?;
            match out {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => println!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "semgate=info,semgate_server=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
