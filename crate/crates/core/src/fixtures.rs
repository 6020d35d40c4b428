//! Bundled experiment fixtures: the 12-tool document-management registry,
//! the injection pattern set and corpora, the policy and store seeds, the
//! document-sharing EPA graph and the mock planner templates.

use crate::firewall::{Firewall, FirewallError, DEFAULT_MAX_CHARS};
use crate::registry::{RegistryError, ToolRegistry};

pub const TOOLS_JSON: &str = include_str!("../fixtures/tools.json");
pub const INJECTION_PATTERNS: &str = include_str!("../fixtures/injection_patterns.txt");
pub const INJECTION_CORPUS: &str = include_str!("../fixtures/injection_corpus.txt");
pub const CLEAN_CORPUS: &str = include_str!("../fixtures/clean_corpus.txt");

/// Non-empty, non-comment lines of a corpus file.
pub fn corpus_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

pub fn registry() -> Result<ToolRegistry, RegistryError> {
    ToolRegistry::load(TOOLS_JSON.as_bytes())
}

pub fn firewall() -> Result<Firewall, FirewallError> {
    Firewall::from_pattern_file(INJECTION_PATTERNS, DEFAULT_MAX_CHARS)
}

pub const POLICY_JSON: &str = include_str!("../fixtures/policy.json");
pub const STORE_JSON: &str = include_str!("../fixtures/store.json");

pub fn policy_rules() -> Result<crate::policy::RuleSet, crate::policy::PolicyError> {
    crate::policy::RuleSet::load(POLICY_JSON)
}

pub fn store() -> Result<crate::policy::AuthoritativeStore, serde_json::Error> {
    crate::policy::AuthoritativeStore::load(STORE_JSON.as_bytes())
}

pub const DOCUMENT_SHARING_EPA: &str = include_str!("../fixtures/document_sharing_epa.json");
pub const PLANNER_TEMPLATES: &str = include_str!("../fixtures/planner_templates.json");
