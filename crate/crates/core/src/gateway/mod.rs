//! The intent pipeline: firewall, cognitive cache, router, planner, policy,
//! approval gate, executor and audit ledger, in that order.
//!
//! Every run that passes intake leaves at least one audit record, and a step
//! is only executed after an ALLOW decision (and, for CRITICAL tools, a
//! redeemed approval token) obtained under the same store lock that the
//! execution uses.

mod executor;
mod planner;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, RwLock};

use chrono::Duration;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::audit::{AuditDecision, AuditError, Ledger, RecordFields};
use crate::canonical::canonical_json;
use crate::clock::{Clock, SystemClock};
use crate::firewall::{context_is_tainted, ContextSegment, Firewall, FirewallVerdict, SourceTag};
use crate::hitl::{
    ApprovalChallenge, ApprovalGate, EvidencePackage, HitlError, OperatorKeys, ResumeToken,
    DEFAULT_CHALLENGE_TTL_SECS,
};
use crate::policy::{AgentIdentity, AuthoritativeStore, Effect, PolicyEngine, PolicyError, RuleSet};
use crate::registry::{Tier, ToolRegistry, ToolSchema};
use crate::router::{
    CacheEntry, CognitiveCache, RouterError, RoutingIndex, ScoredTool, DEFAULT_CACHE_CAPACITY,
    DEFAULT_CACHE_THRESHOLD, DEFAULT_TOKEN_BUDGET,
};

pub use executor::{execute, ExecError, Execution};
pub use planner::{builtin_planners, ExternalPlanner, MockPlanner, PlanError, PlanStep, Planner};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("intent text is empty")]
    EmptyIntent,
    #[error("no suspended run is waiting on challenge '{0}'")]
    UnknownRun(String),
    #[error(transparent)]
    Approval(#[from] HitlError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("gateway setup failed: {0}")]
    Setup(String),
}

impl From<PolicyError> for GatewayError {
    fn from(e: PolicyError) -> Self {
        GatewayError::Setup(e.to_string())
    }
}

impl From<RouterError> for GatewayError {
    fn from(e: RouterError) -> Self {
        GatewayError::Setup(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayConfig {
    /// Minimum cosine similarity for a cache hit.
    pub cache_threshold: f64,
    /// Token budget for the routed toolset.
    pub token_budget: usize,
    pub cache_capacity: usize,
    pub challenge_ttl: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            cache_threshold: DEFAULT_CACHE_THRESHOLD,
            token_budget: DEFAULT_TOKEN_BUDGET,
            cache_capacity: DEFAULT_CACHE_CAPACITY,
            challenge_ttl: Duration::seconds(DEFAULT_CHALLENGE_TTL_SECS),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentRequest {
    pub intent: String,
    pub agent: AgentIdentity,
    pub context: Vec<ContextSegment>,
}

impl IntentRequest {
    pub fn new(intent: impl Into<String>, agent: AgentIdentity) -> Self {
        Self {
            intent: intent.into(),
            agent,
            context: Vec::new(),
        }
    }

    pub fn with_context(mut self, text: impl Into<String>, source: SourceTag) -> Self {
        self.context.push(ContextSegment::new(text, source));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    /// Every planned step executed.
    Completed,
    /// Rejected by the firewall before routing.
    Blocked,
    /// Halted at a denied, invalid or failed step.
    Denied,
    /// Waiting on a human approval challenge.
    Suspended,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTrace {
    pub index: usize,
    pub tool_name: String,
    pub args: Value,
    pub effect: Effect,
    pub reason: String,
    /// Present only for executed steps, which always carry an ALLOW effect.
    pub execution: Option<Execution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub challenge_id: Option<String>,
    pub audit_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineTrace {
    pub run_id: String,
    pub status: RunStatus,
    pub firewall: FirewallVerdict,
    pub context_tainted: bool,
    pub cache_hit: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_similarity: Option<f64>,
    pub routed: Vec<ScoredTool>,
    pub plan: Vec<PlanStep>,
    pub steps: Vec<StepTrace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub challenge_id: Option<String>,
    /// Human-readable cause when the run did not complete.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    /// Half-open range of audit sequence numbers written by this run.
    pub audit_start: u64,
    pub audit_end: u64,
}

impl PipelineTrace {
    pub fn executed_steps(&self) -> impl Iterator<Item = &StepTrace> {
        self.steps.iter().filter(|s| s.execution.is_some())
    }
}

#[derive(Debug, Clone)]
struct CachedRun {
    routed: Vec<ScoredTool>,
    plan: Vec<PlanStep>,
    steps: Vec<StepTrace>,
    plan_digest: [u8; 32],
}

#[derive(Debug, Clone)]
struct RunState {
    intent: String,
    agent: AgentIdentity,
    tainted: bool,
    plan_digest: [u8; 32],
    reasoning_trace: String,
    next_step: usize,
    trace: PipelineTrace,
}

/// Reasons recorded for decisions made by pipeline stages other than policy.
pub mod reasons {
    pub const CACHE_HIT: &str = "CACHE_HIT";
    pub const NO_PLAN_FOUND: &str = "NO_PLAN_FOUND";
    pub const PLANNER_ERROR: &str = "PLANNER_ERROR";
    pub const TOOL_NOT_ROUTED: &str = "TOOL_NOT_ROUTED";
    pub const INVALID_ARGUMENTS: &str = "INVALID_ARGUMENTS";
    pub const EXECUTION_FAILED: &str = "EXECUTION_FAILED";
    pub const APPROVAL_DENIED: &str = "APPROVAL_DENIED";
    pub const APPROVAL_EXPIRED: &str = "APPROVAL_EXPIRED";
    pub const APPROVAL_INVALID: &str = "APPROVAL_INVALID";
}

pub struct Gateway {
    registry: ToolRegistry,
    firewall: Firewall,
    router: RoutingIndex,
    cache: CognitiveCache<CachedRun>,
    planner: Box<dyn Planner>,
    policy: PolicyEngine,
    store: RwLock<AuthoritativeStore>,
    ledger: Ledger,
    gate: ApprovalGate,
    suspended: Mutex<BTreeMap<String, RunState>>,
    config: GatewayConfig,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("tools", &self.registry.len())
            .field("planner", &self.planner.name())
            .field("ledger", &self.ledger)
            .finish_non_exhaustive()
    }
}

/// Assembles a [`Gateway`]; anything not supplied comes from the bundled
/// fixtures, an in-memory ledger and the system clock.
pub struct GatewayBuilder {
    registry: Option<ToolRegistry>,
    firewall: Option<Firewall>,
    rules: Option<RuleSet>,
    store: Option<AuthoritativeStore>,
    planner: Option<Box<dyn Planner>>,
    ledger: Option<Ledger>,
    operators: OperatorKeys,
    clock: Arc<dyn Clock>,
    config: GatewayConfig,
}

impl Default for GatewayBuilder {
    fn default() -> Self {
        Self {
            registry: None,
            firewall: None,
            rules: None,
            store: None,
            planner: None,
            ledger: None,
            operators: OperatorKeys::new(),
            clock: Arc::new(SystemClock),
            config: GatewayConfig::default(),
        }
    }
}

impl GatewayBuilder {
    pub fn registry(mut self, registry: ToolRegistry) -> Self {
        self.registry = Some(registry);
        self
    }

    pub fn firewall(mut self, firewall: Firewall) -> Self {
        self.firewall = Some(firewall);
        self
    }

    pub fn rules(mut self, rules: RuleSet) -> Self {
        self.rules = Some(rules);
        self
    }

    pub fn store(mut self, store: AuthoritativeStore) -> Self {
        self.store = Some(store);
        self
    }

    pub fn planner(mut self, planner: Box<dyn Planner>) -> Self {
        self.planner = Some(planner);
        self
    }

    pub fn ledger(mut self, ledger: Ledger) -> Self {
        self.ledger = Some(ledger);
        self
    }

    pub fn operators(mut self, operators: OperatorKeys) -> Self {
        self.operators = operators;
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(mut self, config: GatewayConfig) -> Self {
        self.config = config;
        self
    }

    pub fn build(self) -> Result<Gateway, GatewayError> {
        use crate::fixtures;
        let setup = |e: String| GatewayError::Setup(e);
        let registry = match self.registry {
            Some(r) => r,
            None => fixtures::registry().map_err(|e| setup(e.to_string()))?,
        };
        let firewall = match self.firewall {
            Some(f) => f,
            None => fixtures::firewall().map_err(|e| setup(e.to_string()))?,
        };
        let rules = match self.rules {
            Some(r) => r,
            None => fixtures::policy_rules()?,
        };
        let store = match self.store {
            Some(s) => s,
            None => fixtures::store().map_err(|e| setup(e.to_string()))?,
        };
        let planner = match self.planner {
            Some(p) => p,
            None => Box::new(MockPlanner::load(fixtures::PLANNER_TEMPLATES).map_err(|e| setup(e.to_string()))?),
        };
        let ledger = match self.ledger {
            Some(l) => l,
            None => Ledger::open(Box::new(crate::audit::MemoryStore::new()), self.clock.clone())?,
        };
        let router = RoutingIndex::build(&registry)?;
        let policy = PolicyEngine::new(rules, &registry)?;
        Ok(Gateway {
            firewall,
            router,
            cache: CognitiveCache::new(self.config.cache_capacity),
            planner,
            policy,
            store: RwLock::new(store),
            ledger,
            gate: ApprovalGate::new(self.operators, self.config.challenge_ttl, self.clock),
            suspended: Mutex::new(BTreeMap::new()),
            registry,
            config: self.config,
        })
    }
}

fn plan_digest(plan: &[PlanStep]) -> [u8; 32] {
    let value = serde_json::to_value(plan).expect("plan serializes");
    Sha256::digest(canonical_json(&value).as_bytes()).into()
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder::default()
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn approvals(&self) -> &ApprovalGate {
        &self.gate
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn planner_name(&self) -> &str {
        self.planner.name()
    }

    pub fn store_snapshot(&self) -> AuthoritativeStore {
        self.store.read().expect("store lock poisoned").clone()
    }

    /// Resolves an agent id against the authoritative store.
    pub fn identity(&self, agent_id: &str) -> Option<AgentIdentity> {
        AgentIdentity::from_store(&self.store.read().expect("store lock poisoned"), agent_id)
    }

    pub fn health(&self) -> Value {
        json!({
            "status": "ok",
            "components": {
                "registry": { "ready": true, "tools": self.registry.len() },
                "firewall": { "ready": true, "patterns": self.firewall.pattern_count() },
                "router": { "ready": true, "vocabulary": self.router.vocabulary_size(),
                            "token_budget": self.config.token_budget },
                "cache": { "ready": true, "entries": self.cache.len(),
                           "threshold": self.config.cache_threshold },
                "planner": { "ready": true, "name": self.planner.name() },
                "policy": { "ready": true, "allow_rules": self.policy.rules().allow.len(),
                            "deny_rules": self.policy.rules().deny.len() },
                "approvals": { "ready": true, "operators": self.gate.operators().len() },
                "ledger": { "ready": true, "backend": self.ledger.backend(), "records": self.ledger.len() },
            }
        })
    }

    fn audit(
        &self,
        run: &RunState,
        decision: AuditDecision,
        tool: &str,
        args: Value,
        mutation: impl Into<String>,
    ) -> Result<u64, GatewayError> {
        let record = self.ledger.append(RecordFields {
            intent: run.intent.clone(),
            plan_digest: run.plan_digest,
            decision,
            tool_name: tool.to_string(),
            args,
            mutation_summary: mutation.into(),
        })?;
        Ok(record.seq)
    }

    /// Runs one intent through the pipeline.
    pub fn handle_intent(&self, request: IntentRequest) -> Result<PipelineTrace, GatewayError> {
        if request.intent.trim().is_empty() {
            return Err(GatewayError::EmptyIntent);
        }
        self.sweep_expired()?;

        let verdict = self.firewall.screen_intent(&request.intent);
        let tainted = context_is_tainted(&request.context);
        let start = self.ledger.len();
        let mut run = RunState {
            intent: request.intent.clone(),
            agent: request.agent,
            tainted,
            plan_digest: [0; 32],
            reasoning_trace: String::new(),
            next_step: 0,
            trace: PipelineTrace {
                run_id: uuid::Uuid::new_v4().to_string(),
                status: RunStatus::Denied,
                firewall: verdict.clone(),
                context_tainted: tainted,
                cache_hit: false,
                cache_similarity: None,
                routed: Vec::new(),
                plan: Vec::new(),
                steps: Vec::new(),
                challenge_id: None,
                detail: None,
                audit_start: start,
                audit_end: start,
            },
        };

        if !verdict.allowed {
            let reason = match &verdict.matched_pattern {
                Some(p) => format!("{}({p})", verdict.reason),
                None => verdict.reason.to_string(),
            };
            self.audit(&run, AuditDecision::deny(reason.clone()), "", json!({}), "none")?;
            return Ok(self.finish(run, RunStatus::Blocked, Some(reason)));
        }

        let vector = self.router.embed(&request.intent);
        let partition = format!("{}|tainted={}", run.agent.subject_id, tainted);
        if let Some(hit) = self.cache.lookup_in(&partition, &vector, self.config.cache_threshold) {
            let cached = hit.response;
            run.plan_digest = cached.plan_digest;
            run.trace.cache_hit = true;
            run.trace.cache_similarity = Some(hit.similarity);
            run.trace.routed = cached.routed;
            run.trace.plan = cached.plan;
            run.trace.steps = cached.steps;
            self.audit(
                &run,
                AuditDecision::allow(reasons::CACHE_HIT),
                "",
                json!({}),
                format!("served from cache (similarity {:.4})", hit.similarity),
            )?;
            return Ok(self.finish(run, RunStatus::Completed, None));
        }

        let routed = self.router.select_tools(&vector, self.config.token_budget);
        let schemas: Vec<&ToolSchema> = routed.iter().filter_map(|s| self.registry.get(&s.name)).collect();
        run.trace.routed = routed;

        let plan = if schemas.is_empty() {
            Err(PlanError::NoPlanFound)
        } else {
            self.planner.plan(&request.intent, &schemas)
        };
        let plan = match plan {
            Ok(plan) if !plan.is_empty() => plan,
            Ok(_) | Err(PlanError::NoPlanFound) => {
                self.audit(&run, AuditDecision::deny(reasons::NO_PLAN_FOUND), "", json!({}), "none")?;
                return Ok(self.finish(run, RunStatus::Denied, Some("no plan found for intent".into())));
            }
            Err(e) => {
                self.audit(&run, AuditDecision::deny(reasons::PLANNER_ERROR), "", json!({}), "none")?;
                return Ok(self.finish(run, RunStatus::Denied, Some(e.to_string())));
            }
        };
        run.plan_digest = plan_digest(&plan);
        run.reasoning_trace = canonical_json(&serde_json::to_value(&plan).expect("plan serializes"));
        run.trace.plan = plan;

        let routed_names: BTreeSet<&str> = schemas.iter().map(|s| s.name.as_str()).collect();
        if let Some(step) = run.trace.plan.iter().find(|s| !routed_names.contains(s.tool_name.as_str())) {
            let (tool, args) = (step.tool_name.clone(), Value::Object(step.args.clone()));
            self.audit(&run, AuditDecision::deny(reasons::TOOL_NOT_ROUTED), &tool, args, "none")?;
            let detail = format!("planner proposed '{tool}', which is outside the routed toolset");
            return Ok(self.finish(run, RunStatus::Denied, Some(detail)));
        }

        self.run_steps(run, None, &partition, vector)
    }

    fn finish(&self, mut run: RunState, status: RunStatus, detail: Option<String>) -> PipelineTrace {
        run.trace.status = status;
        run.trace.detail = detail;
        run.trace.audit_end = self.ledger.len();
        run.trace
    }

    /// Executes plan steps from `run.next_step`. `approval` authorizes the
    /// CRITICAL step at that index and nothing else.
    fn run_steps(
        &self,
        mut run: RunState,
        approval: Option<(ResumeToken, String)>,
        partition: &str,
        vector: crate::router::TermVector,
    ) -> Result<PipelineTrace, GatewayError> {
        let mut approval = approval.map(|a| (run.next_step, a));
        while run.next_step < run.trace.plan.len() {
            let index = run.next_step;
            let step = run.trace.plan[index].clone();
            let args_value = Value::Object(step.args.clone());
            let schema = self
                .registry
                .get(&step.tool_name)
                .expect("routed tools are registered");

            let denied = |run: &mut RunState, reason: String, detail: String| -> Result<PipelineTrace, GatewayError> {
                let seq = self.audit(run, AuditDecision::deny(reason.clone()), &step.tool_name, args_value.clone(), "none")?;
                run.trace.steps.retain(|s| s.index != index);
                run.trace.steps.push(StepTrace {
                    index,
                    tool_name: step.tool_name.clone(),
                    args: args_value.clone(),
                    effect: Effect::Deny,
                    reason,
                    execution: None,
                    challenge_id: None,
                    audit_seq: seq,
                });
                Ok(self.finish(run.clone(), RunStatus::Denied, Some(detail)))
            };

            if let Err(e) = schema.validate_arguments(&step.args) {
                return denied(&mut run, format!("{}({e})", reasons::INVALID_ARGUMENTS), e.to_string());
            }

            // Policy, approval redemption, execution and the audit append all
            // happen under one store write lock.
            let mut store = self.store.write().expect("store lock poisoned");
            let decision = match self
                .policy
                .evaluate(&run.agent, &step.tool_name, &step.args, run.tainted, &store)
            {
                Ok(d) => d,
                Err(e) => {
                    drop(store);
                    return denied(&mut run, format!("POLICY_ERROR({e})"), e.to_string());
                }
            };
            if !decision.is_allow() {
                drop(store);
                let reason = decision.reason().to_string();
                return denied(&mut run, reason.clone(), format!("policy denied '{}': {reason}", step.tool_name));
            }
            let allow_reason = decision.reason().to_string();

            let mut approved_by = None;
            if schema.tier == Tier::Critical {
                let evidence = EvidencePackage::new(&step.tool_name, args_value.clone(), &run.reasoning_trace);
                match approval.take() {
                    Some((i, (token, operator))) if i == index => {
                        if let Err(e) = self.gate.redeem(&token, &evidence.digest) {
                            drop(store);
                            return denied(&mut run, reasons::APPROVAL_INVALID.into(), e.to_string());
                        }
                        approved_by = Some((operator, token.challenge_id));
                    }
                    _ => {
                        let challenge = self.gate.create_challenge(evidence)?;
                        let seq = self.audit(
                            &run,
                            AuditDecision::allow(allow_reason.clone()),
                            &step.tool_name,
                            args_value.clone(),
                            format!("suspended pending approval (challenge {})", challenge.challenge_id),
                        )?;
                        drop(store);
                        run.trace.steps.push(StepTrace {
                            index,
                            tool_name: step.tool_name.clone(),
                            args: args_value,
                            effect: Effect::Allow,
                            reason: allow_reason,
                            execution: None,
                            challenge_id: Some(challenge.challenge_id.clone()),
                            audit_seq: seq,
                        });
                        run.trace.challenge_id = Some(challenge.challenge_id.clone());
                        let trace = self.finish(run.clone(), RunStatus::Suspended, None);
                        run.trace = trace.clone();
                        self.suspended
                            .lock()
                            .expect("suspended-run lock poisoned")
                            .insert(challenge.challenge_id, run);
                        return Ok(trace);
                    }
                }
            }

            let execution = match execute(&mut store, &run.agent, &step.tool_name, &step.args) {
                Ok(x) => x,
                Err(e) => {
                    drop(store);
                    return denied(&mut run, format!("{}({e})", reasons::EXECUTION_FAILED), e.to_string());
                }
            };
            if execution.mutation.is_some() {
                self.cache.clear();
            }
            let mut summary = execution.mutation.clone().unwrap_or_else(|| "none".into());
            if let Some((operator, challenge)) = &approved_by {
                summary = format!("{summary}; approved by {operator} (challenge {challenge})");
            }
            let seq = self.audit(&run, AuditDecision::allow(allow_reason.clone()), &step.tool_name, args_value.clone(), summary)?;
            drop(store);
            run.trace.steps.retain(|s| s.index != index);
            run.trace.steps.push(StepTrace {
                index,
                tool_name: step.tool_name.clone(),
                args: args_value,
                effect: Effect::Allow,
                reason: allow_reason,
                execution: Some(execution),
                challenge_id: approved_by.map(|(_, c)| c),
                audit_seq: seq,
            });
            run.next_step += 1;
        }

        let read_only = run
            .trace
            .steps
            .iter()
            .all(|s| s.execution.as_ref().is_some_and(|x| x.mutation.is_none()) && s.challenge_id.is_none());
        let trace = self.finish(run.clone(), RunStatus::Completed, None);
        if read_only && !trace.cache_hit && !vector.is_empty() {
            self.cache.insert(CacheEntry {
                partition: partition.to_string(),
                intent_vector: vector,
                response: CachedRun {
                    routed: trace.routed.clone(),
                    plan: trace.plan.clone(),
                    steps: trace.steps.clone(),
                    plan_digest: run.plan_digest,
                },
                created_at: chrono::Utc::now(),
            });
        }
        Ok(trace)
    }

    fn take_suspended(&self, challenge_id: &str) -> Option<RunState> {
        self.suspended
            .lock()
            .expect("suspended-run lock poisoned")
            .remove(challenge_id)
    }

    /// Terminates a suspended run with a DENY record for its pending step.
    fn release(&self, mut run: RunState, reason: &str, detail: String) -> Result<PipelineTrace, GatewayError> {
        let index = run.next_step;
        let step = run.trace.plan[index].clone();
        let args = Value::Object(step.args.clone());
        let seq = self.audit(&run, AuditDecision::deny(reason), &step.tool_name, args.clone(), "none")?;
        let challenge_id = run.trace.challenge_id.clone();
        run.trace.steps.retain(|s| s.index != index);
        run.trace.steps.push(StepTrace {
            index,
            tool_name: step.tool_name,
            args,
            effect: Effect::Deny,
            reason: reason.to_string(),
            execution: None,
            challenge_id,
            audit_seq: seq,
        });
        Ok(self.finish(run, RunStatus::Denied, Some(detail)))
    }

    /// Verifies an operator approval and resumes the suspended run.
    pub fn approve(&self, challenge_id: &str, operator_id: &str, signature: &[u8]) -> Result<PipelineTrace, GatewayError> {
        let token = match self.gate.approve(challenge_id, operator_id, signature) {
            Ok(t) => t,
            Err(HitlError::Expired) => {
                if let Some(run) = self.take_suspended(challenge_id) {
                    self.release(run, reasons::APPROVAL_EXPIRED, "approval challenge expired".into())?;
                }
                return Err(HitlError::Expired.into());
            }
            Err(e) => return Err(e.into()),
        };
        let run = self
            .take_suspended(challenge_id)
            .ok_or_else(|| GatewayError::UnknownRun(challenge_id.to_string()))?;
        let partition = format!("{}|tainted={}", run.agent.subject_id, run.tainted);
        let vector = self.router.embed(&run.intent);
        let mut run = run;
        run.trace.challenge_id = None;
        run.trace.detail = None;
        self.run_steps(run, Some((token, operator_id.to_string())), &partition, vector)
    }

    /// Records an operator's refusal and terminates the suspended run.
    pub fn deny(&self, challenge_id: &str, operator_id: &str, signature: &[u8]) -> Result<PipelineTrace, GatewayError> {
        match self.gate.deny(challenge_id, operator_id, signature) {
            Ok(_) => {}
            Err(HitlError::Expired) => {
                if let Some(run) = self.take_suspended(challenge_id) {
                    self.release(run, reasons::APPROVAL_EXPIRED, "approval challenge expired".into())?;
                }
                return Err(HitlError::Expired.into());
            }
            Err(e) => return Err(e.into()),
        }
        let run = self
            .take_suspended(challenge_id)
            .ok_or_else(|| GatewayError::UnknownRun(challenge_id.to_string()))?;
        self.release(run, reasons::APPROVAL_DENIED, format!("operator {operator_id} denied the call"))
    }

    /// Pending challenges, after releasing runs whose challenges expired.
    pub fn pending_approvals(&self) -> Result<Vec<ApprovalChallenge>, GatewayError> {
        self.sweep_expired()?;
        Ok(self.gate.list_pending())
    }

    /// Expires stale challenges and terminates their runs with an audited
    /// denial. Returns the released traces.
    pub fn sweep_expired(&self) -> Result<Vec<PipelineTrace>, GatewayError> {
        let mut released = Vec::new();
        for id in self.gate.expire_stale() {
            if let Some(run) = self.take_suspended(&id) {
                released.push(self.release(run, reasons::APPROVAL_EXPIRED, "approval challenge expired".into())?);
            }
        }
        Ok(released)
    }
}

#[cfg(test)]
mod tests;
