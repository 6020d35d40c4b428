//! TOML configuration with environment overrides.
//!
//! Every fixture path is optional; a missing path falls back to the copy
//! bundled with `semgate-core`. Relative paths are resolved against the
//! directory of the config file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use serde_json::json;

use semgate_core::audit::{builtin_stores, Ledger};
use semgate_core::clock::{Clock, SystemClock};
use semgate_core::epa::EpaGraph;
use semgate_core::firewall::{Firewall, DEFAULT_MAX_CHARS};
use semgate_core::fixtures;
use semgate_core::gateway::{builtin_planners, Gateway, GatewayConfig};
use semgate_core::hitl::{OperatorKeys, DEFAULT_CHALLENGE_TTL_SECS};
use semgate_core::policy::{AuthoritativeStore, RuleSet};
use semgate_core::registry::ToolRegistry;
use semgate_core::router::{DEFAULT_CACHE_CAPACITY, DEFAULT_CACHE_THRESHOLD, DEFAULT_TOKEN_BUDGET};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub server: ServerSection,
    pub paths: PathsSection,
    pub gateway: GatewaySection,
    pub planner: PlannerSection,
    pub operators: Vec<OperatorEntry>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub bind: String,
    /// How often suspended runs with expired challenges are released.
    pub expiry_tick_secs: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub registry: Option<PathBuf>,
    pub policy: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub planner_templates: Option<PathBuf>,
    pub injection_patterns: Option<PathBuf>,
    /// JSONL ledger file. Without it the ledger lives in memory.
    pub ledger: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub cache_threshold: f64,
    pub token_budget: usize,
    pub cache_capacity: usize,
    pub challenge_ttl_secs: i64,
    pub max_intent_chars: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    /// Name in the planner registry: `mock` or `external`.
    pub kind: String,
    pub url: Option<String>,
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorEntry {
    pub id: String,
    /// Ed25519 verification key, 64 hex characters.
    pub key: String,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            server: ServerSection::default(),
            paths: PathsSection::default(),
            gateway: GatewaySection::default(),
            planner: PlannerSection::default(),
            operators: Vec::new(),
        }
    }
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            expiry_tick_secs: 30,
        }
    }
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self {
            cache_threshold: DEFAULT_CACHE_THRESHOLD,
            token_budget: DEFAULT_TOKEN_BUDGET,
            cache_capacity: DEFAULT_CACHE_CAPACITY,
            challenge_ttl_secs: DEFAULT_CHALLENGE_TTL_SECS,
            max_intent_chars: DEFAULT_MAX_CHARS,
        }
    }
}

impl Default for PlannerSection {
    fn default() -> Self {
        Self {
            kind: "mock".into(),
            url: None,
            timeout_ms: 5_000,
        }
    }
}

/// Environment variables that override config values.
pub const ENV_OVERRIDES: [&str; 10] = [
    "SEMGATE_BIND",
    "SEMGATE_LEDGER",
    "SEMGATE_REGISTRY",
    "SEMGATE_POLICY",
    "SEMGATE_STORE",
    "SEMGATE_GRAPH",
    "SEMGATE_TEMPLATES",
    "SEMGATE_PATTERNS",
    "SEMGATE_PLANNER",
    "SEMGATE_PLANNER_URL",
];

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("parsing config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        if let Some(base) = path.parent() {
            config.paths.rebase(base);
        }
        Ok(config)
    }

    pub fn apply_env<I, K, V>(&mut self, vars: I)
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        for (key, value) in vars {
            let value: String = value.into();
            let p = &mut self.paths;
            match key.as_ref() {
                "SEMGATE_BIND" => self.server.bind = value,
                "SEMGATE_LEDGER" => p.ledger = Some(value.into()),
                "SEMGATE_REGISTRY" => p.registry = Some(value.into()),
                "SEMGATE_POLICY" => p.policy = Some(value.into()),
                "SEMGATE_STORE" => p.store = Some(value.into()),
                "SEMGATE_GRAPH" => p.graph = Some(value.into()),
                "SEMGATE_TEMPLATES" => p.planner_templates = Some(value.into()),
                "SEMGATE_PATTERNS" => p.injection_patterns = Some(value.into()),
                "SEMGATE_PLANNER" => self.planner.kind = value,
                "SEMGATE_PLANNER_URL" => self.planner.url = Some(value),
                _ => {}
            }
        }
    }

    pub fn operator_keys(&self) -> Result<OperatorKeys> {
        let mut keys = OperatorKeys::new();
        for op in &self.operators {
            keys.insert_hex(&op.id, &op.key)?;
        }
        Ok(keys)
    }

    pub fn registry(&self) -> Result<ToolRegistry> {
        let text = read_or(&self.paths.registry, fixtures::TOOLS_JSON)?;
        Ok(ToolRegistry::load(text.as_bytes())?)
    }

    pub fn graph(&self, buggy: bool) -> Result<EpaGraph> {
        let text = read_or(&self.paths.graph, fixtures::DOCUMENT_SHARING_EPA)?;
        Ok(EpaGraph::load(&text, buggy)?)
    }

    pub fn open_ledger(&self, clock: Arc<dyn Clock>) -> Result<Ledger> {
        let stores = builtin_stores();
        let store = match &self.paths.ledger {
            Some(path) => stores.build("file", &json!({ "path": path }))?,
            None => stores.build("memory", &json!({}))?,
        };
        Ok(Ledger::open(store, clock)?)
    }

    pub fn build_gateway(&self) -> Result<Gateway> {
        let g = &self.gateway;
        if !(0.0..=1.0).contains(&g.cache_threshold) {
            bail!("cache_threshold {} is outside [0, 1]", g.cache_threshold);
        }
        if g.challenge_ttl_secs <= 0 {
            bail!("challenge_ttl_secs must be positive");
        }
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let registry = self.registry()?;
        let patterns = read_or(&self.paths.injection_patterns, fixtures::INJECTION_PATTERNS)?;
        let rules = RuleSet::load(&read_or(&self.paths.policy, fixtures::POLICY_JSON)?)?;
        let store = AuthoritativeStore::load(read_or(&self.paths.store, fixtures::STORE_JSON)?.as_bytes())
            .context("parsing authoritative store")?;

        let mut params = json!({});
        match self.planner.kind.as_str() {
            "mock" => {
                if self.paths.planner_templates.is_some() {
                    params["templates"] = read_or(&self.paths.planner_templates, "")?.into();
                }
            }
            _ => {
                params["url"] = json!(self.planner.url);
                params["timeout_ms"] = json!(self.planner.timeout_ms);
            }
        }
        let planner = builtin_planners().build(&self.planner.kind, &params)?;

        let gateway = Gateway::builder()
            .firewall(Firewall::from_pattern_file(&patterns, g.max_intent_chars)?)
            .rules(rules)
            .store(store)
            .planner(planner)
            .ledger(self.open_ledger(clock.clone())?)
            .operators(self.operator_keys()?)
            .clock(clock)
            .config(GatewayConfig {
                cache_threshold: g.cache_threshold,
                token_budget: g.token_budget,
                cache_capacity: g.cache_capacity,
                challenge_ttl: chrono::Duration::seconds(g.challenge_ttl_secs),
            })
            .registry(registry)
            .build()?;
        Ok(gateway)
    }
}

impl PathsSection {
    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.registry,
            &mut self.policy,
            &mut self.store,
            &mut self.graph,
            &mut self.planner_templates,
            &mut self.injection_patterns,
            &mut self.ledger,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

fn read_or(path: &Option<PathBuf>, bundled: &str) -> Result<String> {
    match path {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(bundled.to_string()),
    }
}
