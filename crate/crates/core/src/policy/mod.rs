//! Deny-by-default tool-level authorization.
//!
//! Every proposed tool call is evaluated against the loaded [`RuleSet`] and
//! the [`AuthoritativeStore`]. Deny predicates always win over allow rules,
//! and the outcome does not depend on the order rules appear in the file.
//! Objects that cannot be found in the store are never authorizable.

mod hierarchy;
mod rules;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::registry::{Args, Tier, ToolRegistry};

pub use hierarchy::RoleHierarchy;
pub use rules::{AllowRule, Condition, DenyRule, RuleSet};
pub use store::{AuthoritativeStore, DocState, Document, PendingShare, Permission, User};

pub const ADMINISTRATOR: &str = "Administrator";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("policy line {line}: {message}")]
    Load { line: usize, message: String },
    #[error("role hierarchy contains a cycle through '{0}'")]
    CyclicHierarchy(String),
    #[error("unknown tool '{0}'")]
    UnknownTool(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentIdentity {
    pub subject_id: String,
    pub roles: BTreeSet<String>,
    pub department: String,
}

impl AgentIdentity {
    pub fn new<I, S>(subject_id: impl Into<String>, roles: I, department: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            subject_id: subject_id.into(),
            roles: roles.into_iter().map(Into::into).collect(),
            department: department.into(),
        }
    }

    /// Identity as recorded in the store for `user_id`.
    pub fn from_store(store: &AuthoritativeStore, user_id: &str) -> Option<Self> {
        store.user(user_id).map(|u| Self {
            subject_id: user_id.to_string(),
            roles: u.roles.clone(),
            department: u.department.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Effect {
    Allow,
    Deny,
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Effect::Allow => "ALLOW",
            Effect::Deny => "DENY",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", content = "rule", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DecisionReason {
    NoMatchingAllow,
    RoleMissing,
    BolaDepartmentMismatch,
    TaintedContext,
    AdminTarget,
    AdminLockout,
    AllowedByRule(String),
}

impl fmt::Display for DecisionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecisionReason::NoMatchingAllow => f.write_str("NO_MATCHING_ALLOW"),
            DecisionReason::RoleMissing => f.write_str("ROLE_MISSING"),
            DecisionReason::BolaDepartmentMismatch => f.write_str("BOLA_DEPARTMENT_MISMATCH"),
            DecisionReason::TaintedContext => f.write_str("TAINTED_CONTEXT"),
            DecisionReason::AdminTarget => f.write_str("ADMIN_TARGET"),
            DecisionReason::AdminLockout => f.write_str("ADMIN_LOCKOUT"),
            DecisionReason::AllowedByRule(id) => write!(f, "ALLOWED_BY_RULE({id})"),
        }
    }
}

/// Allow/deny verdict. An ALLOW always carries the id of the rule that
/// granted it; constructors keep that pairing intact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PolicyDecision {
    effect: Effect,
    reason: DecisionReason,
}

impl PolicyDecision {
    pub fn allow(rule_id: impl Into<String>) -> Self {
        Self {
            effect: Effect::Allow,
            reason: DecisionReason::AllowedByRule(rule_id.into()),
        }
    }

    /// Panics if `reason` is `AllowedByRule`.
    pub fn deny(reason: DecisionReason) -> Self {
        assert!(
            !matches!(reason, DecisionReason::AllowedByRule(_)),
            "a DENY cannot carry an allow reason"
        );
        Self {
            effect: Effect::Deny,
            reason,
        }
    }

    pub fn effect(&self) -> Effect {
        self.effect
    }

    pub fn reason(&self) -> &DecisionReason {
        &self.reason
    }

    pub fn is_allow(&self) -> bool {
        self.effect == Effect::Allow
    }
}

/// Deny reasons in precedence order; when several deny predicates hold the
/// earliest listed here is reported.
const DENY_PRECEDENCE: [fn(&DenyRule) -> Option<DecisionReason>; 3] = [
    |r| matches!(r, DenyRule::TaintedContext { .. }).then_some(DecisionReason::TaintedContext),
    |r| matches!(r, DenyRule::AdminLockout { .. }).then_some(DecisionReason::AdminLockout),
    |r| matches!(r, DenyRule::TargetHoldsRole { .. }).then_some(DecisionReason::AdminTarget),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockoutCheck {
    Ok,
    Deny,
}

/// Would revoking `target`'s access remove the last `role`-capable access
/// path? True when the caller targets itself while holding `role`, when the
/// target is the only holder of `role` in the store, or when the target
/// cannot be resolved at all.
pub fn check_admin_lockout(
    identity: &AgentIdentity,
    target_user_id: Option<&str>,
    store: &AuthoritativeStore,
    role: &str,
) -> LockoutCheck {
    let Some(target) = target_user_id else {
        return LockoutCheck::Deny;
    };
    let Some(user) = store.user(target) else {
        return LockoutCheck::Deny;
    };
    if target == identity.subject_id && identity.roles.contains(role) {
        return LockoutCheck::Deny;
    }
    if user.roles.contains(role) && store.holders_of(role).count() <= 1 {
        return LockoutCheck::Deny;
    }
    LockoutCheck::Ok
}

pub fn role_satisfies(identity: &AgentIdentity, required: &str, hierarchy: &RoleHierarchy) -> bool {
    hierarchy.satisfies(&identity.roles, required)
}

fn arg_str<'a>(args: &'a Args, name: &str) -> Option<&'a str> {
    args.get(name).and_then(Value::as_str)
}

#[derive(Debug, Clone)]
pub struct PolicyEngine {
    rules: RuleSet,
    tiers: BTreeMap<String, Tier>,
}

impl PolicyEngine {
    /// Binds a rule set to the tool catalog. Rules that mention tools missing
    /// from the registry are rejected.
    pub fn new(rules: RuleSet, registry: &ToolRegistry) -> Result<Self, PolicyError> {
        let tiers: BTreeMap<String, Tier> =
            registry.iter().map(|t| (t.name.clone(), t.tier)).collect();
        if let Some(missing) = rules
            .referenced_tools()
            .into_iter()
            .find(|t| !tiers.contains_key(*t))
        {
            return Err(PolicyError::UnknownTool(missing.to_string()));
        }
        Ok(Self { rules, tiers })
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn evaluate(
        &self,
        identity: &AgentIdentity,
        tool: &str,
        args: &Args,
        context_tainted: bool,
        store: &AuthoritativeStore,
    ) -> Result<PolicyDecision, PolicyError> {
        let tier = *self
            .tiers
            .get(tool)
            .ok_or_else(|| PolicyError::UnknownTool(tool.to_string()))?;

        let firing: Vec<&DenyRule> = self
            .rules
            .deny
            .iter()
            .filter(|r| self.deny_holds(r, identity, tool, tier, args, context_tainted, store))
            .collect();
        for classify in DENY_PRECEDENCE {
            if let Some(reason) = firing.iter().find_map(|r| classify(r)) {
                return Ok(PolicyDecision::deny(reason));
            }
        }

        let mut granted: Vec<&str> = Vec::new();
        let mut role_held = false;
        let mut any_rule = false;
        for rule in self.rules.allow_rules_for(tool) {
            any_rule = true;
            if !role_satisfies(identity, &rule.required_role, &self.rules.hierarchy) {
                continue;
            }
            role_held = true;
            if rule
                .conditions
                .iter()
                .all(|c| condition_holds(c, identity, args, store))
            {
                granted.push(&rule.id);
            }
        }
        Ok(match granted.into_iter().min() {
            Some(id) => PolicyDecision::allow(id),
            None if role_held => PolicyDecision::deny(DecisionReason::BolaDepartmentMismatch),
            None if any_rule => PolicyDecision::deny(DecisionReason::RoleMissing),
            None => PolicyDecision::deny(DecisionReason::NoMatchingAllow),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn deny_holds(
        &self,
        rule: &DenyRule,
        identity: &AgentIdentity,
        tool: &str,
        tier: Tier,
        args: &Args,
        tainted: bool,
        store: &AuthoritativeStore,
    ) -> bool {
        match rule {
            DenyRule::TaintedContext { tiers, .. } => tainted && tiers.contains(&tier),
            DenyRule::TargetHoldsRole {
                tools, arg, role, ..
            } => {
                if !tools.iter().any(|t| t == tool) {
                    return false;
                }
                match arg_str(args, arg).and_then(|id| store.user(id)) {
                    Some(user) => user.roles.contains(role),
                    None => true,
                }
            }
            DenyRule::AdminLockout {
                tools, arg, role, ..
            } => {
                tools.iter().any(|t| t == tool)
                    && check_admin_lockout(identity, arg_str(args, arg), store, role)
                        == LockoutCheck::Deny
            }
        }
    }
}

fn condition_holds(
    condition: &Condition,
    identity: &AgentIdentity,
    args: &Args,
    store: &AuthoritativeStore,
) -> bool {
    let doc = |arg: &str| arg_str(args, arg).and_then(|id| store.document(id));
    match condition {
        Condition::DocumentInIdentityDepartment { arg } => {
            doc(arg).is_some_and(|d| d.department == identity.department)
        }
        Condition::DocumentOwnedByIdentity { arg } => {
            doc(arg).is_some_and(|d| d.owner_id == identity.subject_id)
        }
        Condition::PendingShareTargetsIdentity { arg } => doc(arg).is_some_and(|d| {
            d.pending_share
                .as_ref()
                .is_some_and(|p| p.target_user_id == identity.subject_id)
        }),
    }
}
