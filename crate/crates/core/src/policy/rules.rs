//! Declarative policy file.
//!
//! ```json
//! {
//!   "version": 1,
//!   "roles": ["Manager", "Financial Analyst"],
//!   "hierarchy": [{ "superior": "Manager", "subordinate": "Financial Analyst" }],
//!   "allow": [{ "id": "...", "tool": "...", "required_role": "Manager",
//!               "conditions": [{ "kind": "document_in_identity_department", "arg": "document_id" }] }],
//!   "deny": [{ "id": "...", "kind": "tainted_context", "tiers": ["WRITE", "CRITICAL"] }]
//! }
//! ```

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::hierarchy::RoleHierarchy;
use super::PolicyError;
use crate::registry::Tier;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    version: u32,
    #[serde(default)]
    roles: Vec<String>,
    #[serde(default)]
    hierarchy: Vec<HierarchyEdge>,
    #[serde(default)]
    allow: Vec<AllowRule>,
    #[serde(default)]
    deny: Vec<DenyRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HierarchyEdge {
    superior: String,
    subordinate: String,
}

/// Object-level attribute checks resolved against the authoritative store.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Condition {
    /// `store.documents[args[arg]].department == identity.department`
    DocumentInIdentityDepartment { arg: String },
    /// `store.documents[args[arg]].owner_id == identity.subject_id`
    DocumentOwnedByIdentity { arg: String },
    /// The document's pending share is addressed to the caller.
    PendingShareTargetsIdentity { arg: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllowRule {
    pub id: String,
    pub tool: String,
    pub required_role: String,
    #[serde(default)]
    pub conditions: Vec<Condition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenyRule {
    /// Deny calls to tools of the listed tiers when the run's context is tainted.
    TaintedContext { id: String, tiers: Vec<Tier> },
    /// Deny when the user named by `args[arg]` holds `role` in the store.
    TargetHoldsRole {
        id: String,
        tools: Vec<String>,
        arg: String,
        role: String,
    },
    /// Deny when the call would remove the last `role`-capable access path.
    AdminLockout {
        id: String,
        tools: Vec<String>,
        arg: String,
        role: String,
    },
}

impl DenyRule {
    pub fn id(&self) -> &str {
        match self {
            DenyRule::TaintedContext { id, .. }
            | DenyRule::TargetHoldsRole { id, .. }
            | DenyRule::AdminLockout { id, .. } => id,
        }
    }

    pub(crate) fn tools(&self) -> Option<&[String]> {
        match self {
            DenyRule::TaintedContext { .. } => None,
            DenyRule::TargetHoldsRole { tools, .. } | DenyRule::AdminLockout { tools, .. } => {
                Some(tools)
            }
        }
    }

    fn role(&self) -> Option<&str> {
        match self {
            DenyRule::TaintedContext { .. } => None,
            DenyRule::TargetHoldsRole { role, .. } | DenyRule::AdminLockout { role, .. } => {
                Some(role)
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleSet {
    pub roles: BTreeSet<String>,
    pub hierarchy: RoleHierarchy,
    pub allow: Vec<AllowRule>,
    pub deny: Vec<DenyRule>,
}

impl RuleSet {
    /// Parses a policy document. An empty (or whitespace-only) document is an
    /// empty rule set, under which every call is denied.
    pub fn load(document: &str) -> Result<Self, PolicyError> {
        if document.trim().is_empty() {
            return Ok(Self::default());
        }
        let file: PolicyFile = serde_json::from_str(document).map_err(|e| PolicyError::Load {
            line: e.line(),
            message: e.to_string(),
        })?;

        let roles: BTreeSet<String> = file.roles.iter().cloned().collect();
        let undeclared = |role: &str, context: &str| PolicyError::Load {
            line: line_of(document, role),
            message: format!("{context} references undeclared role '{role}'"),
        };
        for e in &file.hierarchy {
            for r in [&e.superior, &e.subordinate] {
                if !roles.contains(r) {
                    return Err(undeclared(r, "hierarchy"));
                }
            }
        }
        let mut ids = BTreeSet::new();
        for rule in &file.allow {
            if !roles.contains(&rule.required_role) {
                return Err(undeclared(&rule.required_role, &format!("allow rule '{}'", rule.id)));
            }
            if !ids.insert(rule.id.clone()) {
                return Err(duplicate(document, &rule.id));
            }
        }
        for rule in &file.deny {
            if let Some(role) = rule.role() {
                if !roles.contains(role) {
                    return Err(undeclared(role, &format!("deny rule '{}'", rule.id())));
                }
            }
            if !ids.insert(rule.id().to_string()) {
                return Err(duplicate(document, rule.id()));
            }
        }

        let hierarchy = RoleHierarchy::new(
            file.hierarchy
                .iter()
                .map(|e| (e.superior.clone(), e.subordinate.clone())),
        )?;
        Ok(Self {
            roles,
            hierarchy,
            allow: file.allow,
            deny: file.deny,
        })
    }

    pub fn allow_rules_for<'a>(&'a self, tool: &'a str) -> impl Iterator<Item = &'a AllowRule> {
        self.allow.iter().filter(move |r| r.tool == tool)
    }

    /// Every tool name mentioned by a rule.
    pub fn referenced_tools(&self) -> BTreeSet<&str> {
        let mut out: BTreeSet<&str> = self.allow.iter().map(|r| r.tool.as_str()).collect();
        for d in &self.deny {
            if let Some(tools) = d.tools() {
                out.extend(tools.iter().map(String::as_str));
            }
        }
        out
    }

    /// Normalized allow-side preconditions of `tool`: one entry per allow rule
    /// (required role plus sorted conditions), with rule ids and the tool name
    /// erased, deduplicated and sorted. Two tools with equal signatures are
    /// authorized by exactly the same claims.
    pub fn precondition_signature(&self, tool: &str) -> Vec<String> {
        let mut sig: Vec<String> = self
            .allow_rules_for(tool)
            .map(|r| {
                let mut conds: Vec<String> = r
                    .conditions
                    .iter()
                    .map(|c| serde_json::to_string(c).expect("condition serializes"))
                    .collect();
                conds.sort();
                format!("role={};conditions=[{}]", r.required_role, conds.join(","))
            })
            .collect();
        sig.sort();
        sig.dedup();
        sig
    }
}

fn duplicate(document: &str, id: &str) -> PolicyError {
    PolicyError::Load {
        line: line_of(document, id),
        message: format!("duplicate rule id '{id}'"),
    }
}

/// 1-based line of the first occurrence of `needle` as a JSON string literal.
fn line_of(document: &str, needle: &str) -> usize {
    let quoted = serde_json::to_string(needle).unwrap_or_default();
    document
        .find(&quoted)
        .map_or(0, |pos| document[..pos].matches('\n').count() + 1)
}
