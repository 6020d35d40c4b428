//! Offline subcommands: fuzzing, ledger verification and graph export.

use std::path::Path;

use anyhow::{Context, Result};
use serde_json::json;

use semgate_core::audit::{verify_entries, ChainStatus};
use semgate_core::epa::{export_dot, EpaGraph};
use semgate_core::fuzzer::{builtin_strategies, render_log, Campaign, FuzzConfig, FuzzReport};

#[derive(Debug, Clone)]
pub struct FuzzOptions {
    pub config: FuzzConfig,
    pub strategy: String,
    /// Emit the report as JSON instead of the plain-text log.
    pub json: bool,
}

/// Runs a campaign against `graph` and its own invariants.
pub fn fuzz(graph: &EpaGraph, opts: &FuzzOptions) -> Result<(FuzzReport, String)> {
    let mut params = json!({});
    if opts.strategy == "guided" {
        params["valid_ratio"] = json!(opts.config.valid_ratio);
    }
    let strategy = builtin_strategies().build(&opts.strategy, &params)?;
    let report = Campaign::new(graph, graph.invariants(), opts.config.clone())
        .strategy(strategy)
        .run();
    let text = if opts.json {
        serde_json::to_string_pretty(&report)?
    } else {
        render_log(&report)
    };
    Ok((report, text))
}

/// Verifies a JSONL ledger file without opening it for writing.
pub fn verify_ledger(path: &Path) -> Result<(ChainStatus, usize)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let entries: Vec<String> = String::from_utf8_lossy(&bytes)
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect();
    Ok((verify_entries(&entries), entries.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GraphFormat {
    Dot,
    Json,
}

pub fn export_graph(graph: &EpaGraph, format: GraphFormat) -> Result<String> {
    Ok(match format {
        GraphFormat::Dot => export_dot(graph),
        GraphFormat::Json => serde_json::to_string_pretty(&graph.view())?,
    })
}
