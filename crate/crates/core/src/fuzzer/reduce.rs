//! State-space reductions applied before a campaign.

use std::collections::{BTreeMap, BTreeSet};

use crate::epa::{EpaBuilder, EpaGraph};
use crate::policy::RuleSet;
use crate::registry::{Tier, ToolRegistry};

/// Removes READ-tier tools from the alphabet, every enabledness label and
/// every self-loop. A READ tool that labels a state-changing edge is a
/// modeling error rather than a read, so it is kept.
pub fn reduce_true(graph: &EpaGraph, registry: &ToolRegistry) -> (EpaGraph, BTreeSet<String>) {
    let edges = graph.edges();
    let state_changing: BTreeSet<&str> = edges
        .iter()
        .filter(|t| t.from != t.to)
        .map(|t| t.tool.as_str())
        .collect();
    let removed: BTreeSet<String> = graph
        .tools()
        .iter()
        .filter(|t| registry.tier_of(t) == Some(Tier::Read) && !state_changing.contains(t.as_str()))
        .cloned()
        .collect();
    if removed.is_empty() {
        return (graph.clone(), removed);
    }

    let keep = |t: &String| !removed.contains(t);
    let mut b = EpaBuilder::new(graph.name(), graph.initial())
        .tools(graph.tools().iter().filter(|t| keep(t)).map(String::as_str));
    for label in graph.state_labels() {
        let enabled = graph.enabled(label).into_iter().flatten().filter(|t| keep(t));
        b = b.state(label, enabled.map(String::as_str));
    }
    for t in edges.iter().filter(|t| keep(&t.tool)) {
        b = if graph.is_buggy_edge(t) {
            b.buggy_edge(&t.from, &t.tool, &t.to)
        } else {
            b.edge(&t.from, &t.tool, &t.to)
        };
    }
    for inv in graph.invariants() {
        b = b.invariant(inv.clone());
    }
    let reduced = b.build().expect("subgraph of a valid graph is valid");
    (reduced, removed)
}

/// Partitions the graph's tools by allow-side precondition signature. Classes
/// are ordered by their smallest member.
pub fn reduce_equal(rules: &RuleSet, graph: &EpaGraph) -> Vec<BTreeSet<String>> {
    let mut classes: BTreeMap<Vec<String>, BTreeSet<String>> = BTreeMap::new();
    for tool in graph.tools() {
        classes
            .entry(rules.precondition_signature(tool))
            .or_default()
            .insert(tool.clone());
    }
    let mut out: Vec<BTreeSet<String>> = classes.into_values().collect();
    out.sort_by(|a, b| a.first().cmp(&b.first()));
    out
}

/// The smallest tool name of each class.
pub fn representatives(partition: &[BTreeSet<String>]) -> Vec<String> {
    partition.iter().filter_map(|c| c.first().cloned()).collect()
}

/// Keeps the states within `depth` edges of the initial state and the edges
/// between them.
pub fn prune_unreachable(graph: &EpaGraph, depth: usize) -> EpaGraph {
    let dist = graph.distances();
    let kept: BTreeSet<&str> = dist
        .iter()
        .filter(|(_, d)| **d <= depth)
        .map(|(s, _)| *s)
        .collect();
    let mut b = EpaBuilder::new(graph.name(), graph.initial())
        .tools(graph.tools().iter().map(String::as_str));
    for label in graph.state_labels().filter(|l| kept.contains(l)) {
        b = b.state(label, graph.enabled(label).into_iter().flatten().map(String::as_str));
    }
    for t in graph.edges() {
        if kept.contains(t.from.as_str()) && kept.contains(t.to.as_str()) {
            b = if graph.is_buggy_edge(&t) {
                b.buggy_edge(&t.from, &t.tool, &t.to)
            } else {
                b.edge(&t.from, &t.tool, &t.to)
            };
        }
    }
    for inv in graph.invariants() {
        b = b.invariant(inv.clone());
    }
    b.build().expect("subgraph of a valid graph is valid")
}

/// Probability that an attack passes three independent layers with the given
/// bypass rates. `None` if any rate is outside `[0, 1]`.
pub fn breach_probability(e1: f64, e2: f64, e3: f64) -> Option<f64> {
    let rates = [e1, e2, e3];
    rates
        .iter()
        .all(|e| (0.0..=1.0).contains(e))
        .then(|| rates.iter().product())
}
