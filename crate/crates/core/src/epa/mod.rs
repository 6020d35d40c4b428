//! Enabledness-preserving abstractions.
//!
//! An [`EpaGraph`] quotients concrete system states into abstract states
//! labeled by the tools that are enabled there. The transition function is a
//! partial map `(state, tool) -> state`; a missing entry means the tool is not
//! enabled in that state.

mod dot;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::registry::{Tier, ToolRegistry};

pub use dot::export_dot;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EpaError {
    #[error("graph document could not be parsed: {0}")]
    Parse(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StepError {
    #[error("tool is not enabled in this state")]
    NotEnabled,
    #[error("unknown abstract state '{0}'")]
    UnknownState(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractState {
    pub label: String,
    pub enabled: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Transition {
    pub from: String,
    pub tool: String,
    pub to: String,
}

impl Transition {
    pub fn new(from: &str, tool: &str, to: &str) -> Self {
        Self {
            from: from.into(),
            tool: tool.into(),
            to: to.into(),
        }
    }
}

impl std::fmt::Display for Transition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}[{}] -> {}", self.from, self.tool, self.to)
    }
}

/// A forbidden `(from, tool, to)` shape; `None` matches anything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForbiddenPattern {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
}

impl ForbiddenPattern {
    pub fn matches(&self, t: &Transition) -> bool {
        let ok = |p: &Option<String>, v: &str| p.as_deref().map_or(true, |p| p == v);
        ok(&self.from, &t.from) && ok(&self.tool, &t.tool) && ok(&self.to, &t.to)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Invariant {
    pub name: String,
    pub forbidden: Vec<ForbiddenPattern>,
}

impl Invariant {
    pub fn violated_by(&self, t: &Transition) -> bool {
        self.forbidden.iter().any(|p| p.matches(t))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    #[serde(default)]
    name: String,
    tools: Vec<String>,
    initial: String,
    states: Vec<AbstractState>,
    transitions: Vec<Transition>,
    #[serde(default)]
    buggy_transitions: Vec<Transition>,
    #[serde(default)]
    invariants: Vec<Invariant>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Target<'a> {
    to: &'a str,
    buggy: bool,
}

/// Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpaGraph {
    name: String,
    tools: BTreeSet<String>,
    initial: String,
    states: BTreeMap<String, BTreeSet<String>>,
    delta: BTreeMap<(String, String), (String, bool)>,
    invariants: Vec<Invariant>,
    buggy: bool,
}

/// JSON form of a graph as served to clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphView {
    pub name: String,
    pub buggy: bool,
    pub initial: String,
    pub tools: Vec<String>,
    pub states: Vec<AbstractState>,
    pub transitions: Vec<EdgeView>,
    pub invariants: Vec<Invariant>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeView {
    pub from: String,
    pub tool: String,
    pub to: String,
    pub buggy: bool,
}

impl EpaGraph {
    /// Loads a graph document. With `buggy` set, the document's
    /// `buggy_transitions` are added to the transition function.
    pub fn load(document: &str, buggy: bool) -> Result<Self, EpaError> {
        let file: GraphFile =
            serde_json::from_str(document).map_err(|e| EpaError::Parse(e.to_string()))?;
        let mut builder = EpaBuilder::new(&file.name, &file.initial)
            .tools(file.tools.iter().map(String::as_str));
        for s in &file.states {
            builder = builder.state(&s.label, s.enabled.iter().map(String::as_str));
        }
        for t in &file.transitions {
            builder = builder.edge(&t.from, &t.tool, &t.to);
        }
        if buggy {
            for t in &file.buggy_transitions {
                builder = builder.buggy_edge(&t.from, &t.tool, &t.to);
            }
        }
        for inv in file.invariants {
            builder = builder.invariant(inv);
        }
        builder.build()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn initial(&self) -> &str {
        &self.initial
    }

    pub fn is_buggy(&self) -> bool {
        self.buggy
    }

    /// The tool alphabet (every tool an adversarial step may attempt).
    pub fn tools(&self) -> &BTreeSet<String> {
        &self.tools
    }

    pub fn state_labels(&self) -> impl Iterator<Item = &str> {
        self.states.keys().map(String::as_str)
    }

    pub fn has_state(&self, label: &str) -> bool {
        self.states.contains_key(label)
    }

    /// The declared enabledness label of a state.
    pub fn enabled(&self, label: &str) -> Option<&BTreeSet<String>> {
        self.states.get(label)
    }

    pub fn invariants(&self) -> &[Invariant] {
        &self.invariants
    }

    /// The transition function.
    pub fn step(&self, state: &str, tool: &str) -> Result<&str, StepError> {
        if !self.states.contains_key(state) {
            return Err(StepError::UnknownState(state.to_string()));
        }
        self.delta
            .get(&(state.to_string(), tool.to_string()))
            .map(|(to, _)| to.as_str())
            .ok_or(StepError::NotEnabled)
    }

    pub fn edges(&self) -> BTreeSet<Transition> {
        self.delta
            .iter()
            .map(|((from, tool), (to, _))| Transition::new(from, tool, to))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.delta.len()
    }

    pub fn is_buggy_edge(&self, t: &Transition) -> bool {
        self.target(&t.from, &t.tool)
            .is_some_and(|tg| tg.buggy && tg.to == t.to)
    }

    fn target(&self, from: &str, tool: &str) -> Option<Target<'_>> {
        self.delta
            .get(&(from.to_string(), tool.to_string()))
            .map(|(to, buggy)| Target { to, buggy: *buggy })
    }

    /// Size, in bits, of the enabledness labeling space (`2^|T|` labelings).
    pub fn labeling_space_bits(&self) -> usize {
        self.tools.len()
    }

    /// Shortest edge distance from the initial state to every reachable state.
    pub fn distances(&self) -> BTreeMap<&str, usize> {
        let mut dist = BTreeMap::new();
        let mut queue = VecDeque::new();
        dist.insert(self.initial.as_str(), 0usize);
        queue.push_back(self.initial.as_str());
        while let Some(s) = queue.pop_front() {
            let d = dist[s];
            for ((from, _), (to, _)) in &self.delta {
                if from == s && !dist.contains_key(to.as_str()) {
                    dist.insert(to.as_str(), d + 1);
                    queue.push_back(to.as_str());
                }
            }
        }
        dist
    }

    pub fn view(&self) -> GraphView {
        GraphView {
            name: self.name.clone(),
            buggy: self.buggy,
            initial: self.initial.clone(),
            tools: self.tools.iter().cloned().collect(),
            states: self
                .states
                .iter()
                .map(|(label, enabled)| AbstractState {
                    label: label.clone(),
                    enabled: enabled.clone(),
                })
                .collect(),
            transitions: self
                .delta
                .iter()
                .map(|((from, tool), (to, buggy))| EdgeView {
                    from: from.clone(),
                    tool: tool.clone(),
                    to: to.clone(),
                    buggy: *buggy,
                })
                .collect(),
            invariants: self.invariants.clone(),
        }
    }

    /// Checks that every tool in the alphabet is a registered tool.
    pub fn check_against(&self, registry: &ToolRegistry) -> Result<(), EpaError> {
        match self.tools.iter().find(|t| registry.get(t).is_none()) {
            Some(t) => Err(EpaError::Invalid(format!("tool '{t}' is not in the registry"))),
            None => Ok(()),
        }
    }

    /// Rebuilds the graph through a builder, e.g. to derive reduced variants.
    pub fn to_builder(&self) -> EpaBuilder {
        let mut b = EpaBuilder::new(&self.name, &self.initial).tools(self.tools.iter().map(String::as_str));
        for (label, enabled) in &self.states {
            b = b.state(label, enabled.iter().map(String::as_str));
        }
        for ((from, tool), (to, buggy)) in &self.delta {
            b = if *buggy {
                b.buggy_edge(from, tool, to)
            } else {
                b.edge(from, tool, to)
            };
        }
        for inv in &self.invariants {
            b = b.invariant(inv.clone());
        }
        b
    }

    /// Returns a copy in which every tool of `tier` in the registry is added to
    /// the alphabet and enabled as a self-loop in every state.
    pub fn with_universal_tools(&self, registry: &ToolRegistry, tier: Tier) -> Result<Self, EpaError> {
        let universal: Vec<&str> = registry
            .iter()
            .filter(|s| s.tier == tier)
            .map(|s| s.name.as_str())
            .collect();
        let mut b = EpaBuilder::new(&self.name, &self.initial)
            .tools(self.tools.iter().map(String::as_str))
            .tools(universal.iter().copied());
        for (label, enabled) in &self.states {
            b = b.state(label, enabled.iter().map(String::as_str).chain(universal.iter().copied()));
        }
        for ((from, tool), (to, buggy)) in &self.delta {
            b = if *buggy {
                b.buggy_edge(from, tool, to)
            } else {
                b.edge(from, tool, to)
            };
        }
        for label in self.states.keys() {
            for tool in &universal {
                if !self.delta.contains_key(&(label.clone(), tool.to_string())) {
                    b = b.edge(label, tool, label);
                }
            }
        }
        for inv in &self.invariants {
            b = b.invariant(inv.clone());
        }
        b.build()
    }
}

/// Incremental graph construction with validation in [`EpaBuilder::build`].
#[derive(Debug, Clone, Default)]
pub struct EpaBuilder {
    name: String,
    initial: String,
    tools: Vec<String>,
    states: Vec<(String, BTreeSet<String>)>,
    edges: Vec<(Transition, bool)>,
    invariants: Vec<Invariant>,
}

impl EpaBuilder {
    pub fn new(name: &str, initial: &str) -> Self {
        Self {
            name: name.into(),
            initial: initial.into(),
            ..Self::default()
        }
    }

    pub fn tools<'a>(mut self, tools: impl IntoIterator<Item = &'a str>) -> Self {
        self.tools.extend(tools.into_iter().map(String::from));
        self
    }

    pub fn state<'a>(mut self, label: &str, enabled: impl IntoIterator<Item = &'a str>) -> Self {
        self.states
            .push((label.into(), enabled.into_iter().map(String::from).collect()));
        self
    }

    pub fn edge(mut self, from: &str, tool: &str, to: &str) -> Self {
        self.edges.push((Transition::new(from, tool, to), false));
        self
    }

    /// An injected defect: an edge the design does not declare, so its tool
    /// need not appear in the source state's enabledness label.
    pub fn buggy_edge(mut self, from: &str, tool: &str, to: &str) -> Self {
        self.edges.push((Transition::new(from, tool, to), true));
        self
    }

    pub fn invariant(mut self, inv: Invariant) -> Self {
        self.invariants.push(inv);
        self
    }

    pub fn build(self) -> Result<EpaGraph, EpaError> {
        let invalid = |m: String| Err(EpaError::Invalid(m));
        let tools: BTreeSet<String> = self.tools.into_iter().collect();
        let mut states: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (label, enabled) in self.states {
            if let Some(t) = enabled.iter().find(|t| !tools.contains(*t)) {
                return invalid(format!("state '{label}' enables '{t}', which is not in the tool alphabet"));
            }
            if states.insert(label.clone(), enabled).is_some() {
                return invalid(format!("duplicate state label '{label}'"));
            }
        }
        if !states.contains_key(&self.initial) {
            return invalid(format!("initial state '{}' is not declared", self.initial));
        }
        let mut delta = BTreeMap::new();
        let mut buggy = false;
        for (t, is_buggy) in self.edges {
            for s in [&t.from, &t.to] {
                if !states.contains_key(s) {
                    return invalid(format!("transition {t} references unknown state '{s}'"));
                }
            }
            if !tools.contains(&t.tool) {
                return invalid(format!("transition {t} uses '{}', which is not in the tool alphabet", t.tool));
            }
            if !is_buggy && !states[&t.from].contains(&t.tool) {
                return invalid(format!("transition {t}: '{}' is not enabled in '{}'", t.tool, t.from));
            }
            buggy |= is_buggy;
            if delta
                .insert((t.from.clone(), t.tool.clone()), (t.to.clone(), is_buggy))
                .is_some()
            {
                return invalid(format!("more than one transition for ({}, {})", t.from, t.tool));
            }
        }
        let mut names = BTreeSet::new();
        for inv in &self.invariants {
            if !names.insert(inv.name.as_str()) {
                return invalid(format!("duplicate invariant name '{}'", inv.name));
            }
        }
        Ok(EpaGraph {
            name: self.name,
            tools,
            initial: self.initial,
            states,
            delta,
            invariants: self.invariants,
            buggy,
        })
    }
}

/// The document-sharing workflow graph from the bundled fixture; `buggy`
/// injects the `accept_sharing_request` self-loop on
/// `SHARING_WITH_THIRD_PARTY`.
pub fn build_document_sharing_epa(buggy: bool) -> EpaGraph {
    EpaGraph::load(crate::fixtures::DOCUMENT_SHARING_EPA, buggy).expect("bundled graph fixture is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub correspondence: f64,
    /// Edges observed but absent from the theoretical graph.
    pub extra: Vec<Transition>,
    /// Theoretical edges never observed.
    pub missing: Vec<Transition>,
}

/// Jaccard similarity of the two edge sets plus their symmetric difference.
pub fn compare_edges(observed: &BTreeSet<Transition>, theoretical: &BTreeSet<Transition>) -> Comparison {
    let inter = observed.intersection(theoretical).count();
    let union = observed.union(theoretical).count();
    Comparison {
        correspondence: if union == 0 { 1.0 } else { inter as f64 / union as f64 },
        extra: observed.difference(theoretical).cloned().collect(),
        missing: theoretical.difference(observed).cloned().collect(),
    }
}

pub fn compare(observed: &EpaGraph, theoretical: &EpaGraph) -> Comparison {
    compare_edges(&observed.edges(), &theoretical.edges())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    const SHARING: &str = "SHARING_WITH_THIRD_PARTY";
    const ACCEPT: &str = "accept_sharing_request";

    #[test]
    fn listing_transitions() {
        let g = build_document_sharing_epa(false);
        assert_eq!(g.step("INITIAL", "create_document"), Ok("DOC_CREATED"));
        assert_eq!(g.step("DOC_CREATED", "initiate_share"), Ok("PENDING_SHARE"));
        assert_eq!(g.step("PENDING_SHARE", ACCEPT), Ok(SHARING));
    }

    #[test]
    fn buggy_self_loop_only_in_buggy_graph() {
        let buggy = build_document_sharing_epa(true);
        let fixed = build_document_sharing_epa(false);
        assert_eq!(buggy.step(SHARING, ACCEPT), Ok(SHARING));
        assert_eq!(fixed.step(SHARING, ACCEPT), Err(StepError::NotEnabled));
        assert!(buggy.is_buggy() && !fixed.is_buggy());
        assert_eq!(buggy.edge_count(), fixed.edge_count() + 1);
        assert_eq!(fixed.edge_count(), 5);
        assert_eq!(buggy.initial(), "INITIAL");
        assert_eq!(fixed.initial(), "INITIAL");
        assert!(!fixed.edges().iter().any(|t| t.tool == ACCEPT && t.from == t.to));
    }

    #[test]
    fn unknown_state_is_an_error() {
        let g = build_document_sharing_epa(false);
        assert_eq!(
            g.step("NOWHERE", ACCEPT),
            Err(StepError::UnknownState("NOWHERE".into()))
        );
    }

    #[test]
    fn step_is_total_deterministic_and_closed() {
        let g = build_document_sharing_epa(true);
        for s in g.state_labels() {
            for t in g.tools() {
                let a = g.step(s, t);
                assert_eq!(a, g.step(s, t));
                if let Ok(to) = a {
                    assert!(g.has_state(to));
                }
            }
        }
    }

    #[test]
    fn fixed_graph_never_violates_invariants() {
        let g = build_document_sharing_epa(false);
        for s in g.state_labels() {
            for tool in g.tools() {
                if let Ok(to) = g.step(s, tool) {
                    let t = Transition::new(s, tool, to);
                    assert!(g.invariants().iter().all(|inv| !inv.violated_by(&t)), "{t}");
                }
            }
        }
    }

    #[test]
    fn alphabet_matches_registry() {
        let g = build_document_sharing_epa(false);
        g.check_against(&fixtures::registry().unwrap()).unwrap();
        assert_eq!(g.tools().len(), 12);
    }

    #[test]
    fn compare_examples() {
        let fixed = build_document_sharing_epa(false);
        let buggy = build_document_sharing_epa(true);
        let same = compare(&fixed, &fixed);
        assert_eq!(same.correspondence, 1.0);
        assert!(same.extra.is_empty() && same.missing.is_empty());

        let c = compare(&buggy, &fixed);
        assert!((c.correspondence - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(c.extra, vec![Transition::new(SHARING, ACCEPT, SHARING)]);
        assert!(c.missing.is_empty());

        let a: BTreeSet<_> = [Transition::new("A", "x", "B")].into();
        let b: BTreeSet<_> = [Transition::new("B", "y", "A")].into();
        assert_eq!(compare_edges(&a, &b).correspondence, 0.0);
    }

    #[test]
    fn builder_rejects_malformed_graphs() {
        let base = || EpaBuilder::new("g", "A").tools(["x", "y"]).state("A", ["x"]).state("B", []);
        assert!(base().edge("A", "x", "B").build().is_ok());
        assert!(EpaBuilder::new("g", "Z").state("A", []).build().is_err());
        assert!(base().edge("A", "y", "B").build().is_err(), "tool not enabled");
        assert!(base().buggy_edge("A", "y", "B").build().is_ok(), "undeclared defect edge");
        assert!(base().edge("A", "x", "C").build().is_err(), "unknown target");
        assert!(base().edge("A", "x", "B").edge("A", "x", "A").build().is_err(), "not a function");
        assert!(base().state("A", []).build().is_err(), "duplicate label");
        assert!(base().state("C", ["q"]).build().is_err(), "tool outside alphabet");
    }

    #[test]
    fn wildcard_patterns() {
        let p = ForbiddenPattern {
            from: Some(SHARING.into()),
            tool: Some(ACCEPT.into()),
            to: None,
        };
        assert!(p.matches(&Transition::new(SHARING, ACCEPT, "ANYWHERE")));
        assert!(!p.matches(&Transition::new("PENDING_SHARE", ACCEPT, SHARING)));
    }

    #[test]
    fn universal_tools_are_self_loops() {
        let reg = fixtures::registry().unwrap();
        let g = build_document_sharing_epa(false);
        let u = g.with_universal_tools(&reg, Tier::Read).unwrap();
        assert_eq!(u.edge_count(), 5 + 6 * 5);
        assert_eq!(u.step("REVOKED", "get_document"), Ok("REVOKED"));
    }

    #[test]
    fn view_mirrors_fixture() {
        let v = build_document_sharing_epa(true).view();
        assert_eq!(v.states.len(), 5);
        assert_eq!(v.transitions.iter().filter(|e| e.buggy).count(), 1);
        let back = serde_json::to_value(&v).unwrap();
        assert_eq!(back["initial"], "INITIAL");
    }
}
