use std::fmt::Write;

use super::EpaGraph;

fn quote(id: &str) -> String {
    let mut out = String::with_capacity(id.len() + 2);
    out.push('"');
    for c in id.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// Graphviz rendering. Injected edges are drawn bold gold and tagged
/// `buggy=true` so tools can pick them out without relying on color.
pub fn export_dot(graph: &EpaGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph {} {{", quote(graph.name()));
    out.push_str("  rankdir=LR;\n");
    out.push_str("  node [shape=box, style=rounded];\n");
    for label in graph.state_labels() {
        let enabled = graph
            .enabled(label)
            .map(|e| e.iter().cloned().collect::<Vec<_>>().join(", "))
            .unwrap_or_default();
        let extra = if label == graph.initial() { ", peripheries=2" } else { "" };
        let _ = writeln!(
            out,
            "  {} [tooltip={}{extra}];",
            quote(label),
            quote(&format!("enabled: {{{enabled}}}"))
        );
    }
    for t in graph.edges() {
        let attrs = if graph.is_buggy_edge(&t) {
            ", color=gold, penwidth=2.5, buggy=true"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "  {} -> {} [label={}{attrs}];",
            quote(&t.from),
            quote(&t.to),
            quote(&t.tool)
        );
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::epa::{build_document_sharing_epa, EpaBuilder, Transition};

    /// Minimal reader for the subset of DOT emitted above.
    fn read_dot(text: &str) -> (BTreeSet<String>, BTreeSet<(Transition, bool)>) {
        fn take_id(s: &str) -> Option<(String, &str)> {
            let s = s.trim_start().strip_prefix('"')?;
            let mut id = String::new();
            let mut chars = s.char_indices();
            while let Some((i, c)) = chars.next() {
                match c {
                    '\\' => id.push(chars.next()?.1),
                    '"' => return Some((id, &s[i + 1..])),
                    _ => id.push(c),
                }
            }
            None
        }
        let mut nodes = BTreeSet::new();
        let mut edges = BTreeSet::new();
        let body = text.trim().strip_prefix("digraph").unwrap();
        let (_, body) = take_id(body).unwrap();
        let body = body.trim().strip_prefix('{').unwrap().strip_suffix('}').unwrap();
        for stmt in body.split(";\n").map(str::trim).filter(|s| !s.is_empty()) {
            let stmt = stmt.trim_end_matches(';');
            let Some((a, rest)) = take_id(stmt) else { continue };
            if let Some(rest) = rest.trim_start().strip_prefix("->") {
                let (b, rest) = take_id(rest).unwrap();
                let attrs = rest.trim();
                let label_at = attrs.find("label=").unwrap() + "label=".len();
                let (tool, _) = take_id(&attrs[label_at..]).unwrap();
                edges.insert((Transition::new(&a, &tool, &b), attrs.contains("buggy=true")));
            } else {
                nodes.insert(a);
            }
        }
        (nodes, edges)
    }

    #[test]
    fn round_trips_edge_set() {
        for buggy in [false, true] {
            let g = build_document_sharing_epa(buggy);
            let (nodes, edges) = read_dot(&export_dot(&g));
            assert_eq!(nodes, g.state_labels().map(String::from).collect());
            let parsed: BTreeSet<Transition> = edges.iter().map(|(t, _)| t.clone()).collect();
            assert_eq!(parsed, g.edges());
            let flagged: Vec<_> = edges.iter().filter(|(_, b)| *b).collect();
            assert_eq!(flagged.len(), usize::from(buggy));
        }
    }

    #[test]
    fn fixed_fixture_has_five_edges() {
        let dot = export_dot(&build_document_sharing_epa(false));
        assert_eq!(dot.matches(" -> ").count(), 5);
        assert!(!dot.contains("gold"));
        let dot = export_dot(&build_document_sharing_epa(true));
        assert!(dot.contains("color=gold"));
    }

    #[test]
    fn single_state_graph() {
        let g = EpaBuilder::new("solo", "ONLY").state("ONLY", []).build().unwrap();
        let dot = export_dot(&g);
        let (nodes, edges) = read_dot(&dot);
        assert_eq!(nodes.len(), 1);
        assert!(edges.is_empty());
    }

    #[test]
    fn quotes_are_escaped() {
        let g = EpaBuilder::new("q\"g", "A\"1")
            .tools(["t\\x"])
            .state("A\"1", ["t\\x"])
            .edge("A\"1", "t\\x", "A\"1")
            .build()
            .unwrap();
        let (nodes, edges) = read_dot(&export_dot(&g));
        assert!(nodes.contains("A\"1"));
        assert!(edges.contains(&(Transition::new("A\"1", "t\\x", "A\"1"), false)));
    }
}
