//! Seeded invariant fuzzer over EPA graphs.
//!
//! Each iteration walks one call sequence from the initial state. At every
//! step a [`MutationStrategy`] picks a tool, the graph's transition function
//! decides whether it fires, and each fired `(from, tool, to)` triple is
//! checked against the invariants. The first violation halts the campaign
//! unless `keep_going` is set.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64(config.seed)`;
//! index and coin draws use only `next_u64`, so a seed reproduces the same
//! campaign on every platform.

mod reduce;
mod report;

use std::collections::BTreeSet;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::epa::{EpaGraph, Invariant, StepError, Transition};
use crate::strategy::StrategyRegistry;

pub use reduce::{breach_probability, prune_unreachable, reduce_equal, reduce_true, representatives};
pub use report::render_log;

pub const ACTORS: [&str; 3] = ["NHI_User_A", "NHI_User_B", "NHI_User_C"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzConfig {
    pub seed: u64,
    pub max_iterations: u64,
    pub valid_ratio: f64,
    pub max_sequence_length: usize,
    pub prune_depth: usize,
    /// Collect every violation instead of halting on the first.
    pub keep_going: bool,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            max_iterations: 500,
            valid_ratio: 0.8,
            max_sequence_length: 8,
            prune_depth: 8,
            keep_going: false,
        }
    }
}

/// Deterministic generator used by campaigns and strategies.
pub struct FuzzRng(ChaCha8Rng);

impl FuzzRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform in `0..n` by rejection sampling. `n` must be non-zero.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.0.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// True with probability `p`, using 53 random bits.
    pub fn chance(&mut self, p: f64) -> bool {
        let u = (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        u < p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pick<'a> {
    /// A tool the current state declares enabled.
    Valid(&'a str),
    /// Any tool from the alphabet, enabled or not.
    Adversarial(&'a str),
}

impl<'a> Pick<'a> {
    pub fn tool(self) -> &'a str {
        match self {
            Pick::Valid(t) | Pick::Adversarial(t) => t,
        }
    }
}

pub trait MutationStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    /// `enabled` and `alphabet` are sorted; `alphabet` is never empty.
    fn pick<'a>(&self, rng: &mut FuzzRng, enabled: &'a [String], alphabet: &'a [String]) -> Pick<'a>;
}

/// With probability `valid_ratio` choose among enabled tools, otherwise among
/// the whole alphabet.
#[derive(Debug, Clone, Copy)]
pub struct Guided {
    pub valid_ratio: f64,
}

impl MutationStrategy for Guided {
    fn name(&self) -> &'static str {
        "guided"
    }

    fn pick<'a>(&self, rng: &mut FuzzRng, enabled: &'a [String], alphabet: &'a [String]) -> Pick<'a> {
        if rng.chance(self.valid_ratio) && !enabled.is_empty() {
            Pick::Valid(&enabled[rng.below(enabled.len())])
        } else {
            Pick::Adversarial(&alphabet[rng.below(alphabet.len())])
        }
    }
}

/// Baseline: every step is drawn from the whole alphabet.
#[derive(Debug, Clone, Copy)]
pub struct Uniform;

impl MutationStrategy for Uniform {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn pick<'a>(&self, rng: &mut FuzzRng, _enabled: &'a [String], alphabet: &'a [String]) -> Pick<'a> {
        Pick::Adversarial(&alphabet[rng.below(alphabet.len())])
    }
}

/// `guided` (`{"valid_ratio": r}`, default 0.8) and `uniform`.
pub fn builtin_strategies() -> StrategyRegistry<dyn MutationStrategy> {
    let mut reg: StrategyRegistry<dyn MutationStrategy> = StrategyRegistry::new("mutation");
    reg.register("guided", |params| {
        let valid_ratio = match params.get("valid_ratio") {
            None | Some(Value::Null) => 0.8,
            Some(v) => v.as_f64().ok_or("'valid_ratio' must be a number")?,
        };
        if !(0.0..=1.0).contains(&valid_ratio) {
            return Err(format!("valid_ratio {valid_ratio} is outside [0, 1]"));
        }
        Ok(Box::new(Guided { valid_ratio }))
    })
    .expect("fresh registry");
    reg.register("uniform", |_| Ok(Box::new(Uniform)))
        .expect("fresh registry");
    reg
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStep {
    pub actor: String,
    pub tool: String,
    pub from: String,
    pub to: String,
    /// Set on the step whose triple falsified an invariant.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub violation: bool,
}

impl CallStep {
    pub fn transition(&self) -> Transition {
        Transition::new(&self.from, &self.tool, &self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CallSequence {
    pub steps: Vec<CallStep>,
}

impl CallSequence {
    pub fn tools(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.tool.as_str()).collect()
    }

    /// Replays the sequence from the graph's initial state and returns the
    /// final triple, or `None` if any step does not fire as recorded.
    pub fn replay(&self, graph: &EpaGraph) -> Option<Transition> {
        let mut state = graph.initial().to_string();
        let mut last = None;
        for s in &self.steps {
            if s.from != state {
                return None;
            }
            let to = graph.step(&state, &s.tool).ok()?;
            if to != s.to {
                return None;
            }
            last = Some(Transition::new(&state, &s.tool, to));
            state = to.to_string();
        }
        last
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub invariant: String,
    /// 1-based campaign iteration in which the violation occurred.
    pub iteration: u64,
    /// Minimal replayable sequence ending in the violating step.
    pub sequence: CallSequence,
    /// Number of fired steps in the sequence as generated, before shrinking.
    pub raw_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub graph: String,
    pub buggy: bool,
    pub strategy: String,
    pub seed: u64,
    pub iterations_run: u64,
    pub violations: Vec<Violation>,
    pub discovered_transitions: BTreeSet<Transition>,
    pub elapsed_secs: f64,
}

impl FuzzReport {
    pub fn first_violation(&self) -> Option<&Violation> {
        self.violations.first()
    }

    /// Report with the timing field zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            elapsed_secs: 0.0,
            ..self.clone()
        }
    }
}

pub struct Campaign<'g> {
    graph: &'g EpaGraph,
    invariants: Vec<Invariant>,
    config: FuzzConfig,
    strategy: Box<dyn MutationStrategy>,
    alphabet: Vec<String>,
}

impl<'g> Campaign<'g> {
    /// Guided strategy with `config.valid_ratio`; adversarial steps draw from
    /// the graph's whole tool alphabet.
    pub fn new(graph: &'g EpaGraph, invariants: &[Invariant], config: FuzzConfig) -> Self {
        Self {
            graph,
            invariants: invariants.to_vec(),
            strategy: Box::new(Guided {
                valid_ratio: config.valid_ratio,
            }),
            config,
            alphabet: graph.tools().iter().cloned().collect(),
        }
    }

    pub fn strategy(mut self, strategy: Box<dyn MutationStrategy>) -> Self {
        self.strategy = strategy;
        self
    }

    /// Restricts adversarial draws, e.g. to one representative per
    /// precondition class.
    pub fn alphabet(mut self, tools: impl IntoIterator<Item = String>) -> Self {
        let mut tools: Vec<String> = tools.into_iter().collect();
        tools.sort();
        tools.dedup();
        if !tools.is_empty() {
            self.alphabet = tools;
        }
        self
    }

    pub fn run(&self) -> FuzzReport {
        let started = Instant::now();
        let graph = self.graph;
        let mut rng = FuzzRng::new(self.config.seed);
        let mut discovered = BTreeSet::new();
        let mut violations = Vec::new();
        let mut iterations_run = 0;

        'campaign: for iteration in 1..=self.config.max_iterations {
            iterations_run = iteration;
            let mut state = graph.initial().to_string();
            let mut steps: Vec<CallStep> = Vec::new();
            for _ in 0..self.config.max_sequence_length {
                let enabled: Vec<String> = graph
                    .enabled(&state)
                    .map(|e| e.iter().cloned().collect())
                    .unwrap_or_default();
                let tool = self.strategy.pick(&mut rng, &enabled, &self.alphabet).tool().to_string();
                let actor = ACTORS[rng.below(ACTORS.len())];
                let to = match graph.step(&state, &tool) {
                    Ok(to) => to.to_string(),
                    // A rejected probe uses up a step but changes nothing.
                    Err(StepError::NotEnabled) => continue,
                    Err(StepError::UnknownState(_)) => break,
                };
                let t = Transition::new(&state, &tool, &to);
                discovered.insert(t.clone());
                steps.push(CallStep {
                    actor: actor.to_string(),
                    tool,
                    from: state.clone(),
                    to: to.clone(),
                    violation: false,
                });
                if let Some(inv) = self.invariants.iter().find(|i| i.violated_by(&t)) {
                    let raw_length = steps.len();
                    steps.last_mut().expect("just pushed").violation = true;
                    violations.push(Violation {
                        invariant: inv.name.clone(),
                        iteration,
                        sequence: shrink(graph, inv, steps),
                        raw_length,
                    });
                    if self.config.keep_going {
                        continue 'campaign;
                    }
                    break 'campaign;
                }
                state = to;
            }
        }

        FuzzReport {
            graph: graph.name().to_string(),
            buggy: graph.is_buggy(),
            strategy: self.strategy.name().to_string(),
            seed: self.config.seed,
            iterations_run,
            violations,
            discovered_transitions: discovered,
            elapsed_secs: started.elapsed().as_secs_f64(),
        }
    }
}

pub fn run_campaign(graph: &EpaGraph, invariants: &[Invariant], config: &FuzzConfig) -> FuzzReport {
    Campaign::new(graph, invariants, config.clone()).run()
}

/// Removes contiguous runs of steps (largest first) while the remainder still
/// replays from the initial state and ends in a triple violating `inv`.
fn shrink(graph: &EpaGraph, inv: &Invariant, steps: Vec<CallStep>) -> CallSequence {
    let still_violates = |candidate: &[CallStep]| {
        let seq = CallSequence {
            steps: candidate.to_vec(),
        };
        seq.replay(graph).is_some_and(|t| inv.violated_by(&t))
    };
    let mut current = steps;
    'outer: loop {
        let n = current.len();
        for size in (1..n).rev() {
            for start in 0..=(n - size) {
                let mut candidate = current[..start].to_vec();
                candidate.extend_from_slice(&current[start + size..]);
                if still_violates(&candidate) {
                    current = candidate;
                    continue 'outer;
                }
            }
        }
        break;
    }
    let last = current.len().saturating_sub(1);
    for (i, s) in current.iter_mut().enumerate() {
        s.violation = i == last;
    }
    CallSequence { steps: current }
}
