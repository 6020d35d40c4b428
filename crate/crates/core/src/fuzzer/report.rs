use std::fmt::Write;

use super::FuzzReport;

/// Human-readable campaign summary.
///
/// ```text
/// INVARIANT VIOLATION: 'NoSharingOverwrite'
///   Call sequence:
///     INITIAL[create_document] -> DOC_CREATED
///     SHARING_WITH_THIRD_PARTY[accept_sharing_request] -> !! VIOLATION !!
///   Iterations to discovery: 7 (0.00s)
/// ```
pub fn render_log(report: &FuzzReport) -> String {
    let mut out = String::new();
    if report.violations.is_empty() {
        let _ = writeln!(
            out,
            "  No invariant violations found after {} iterations ({:.2}s).",
            report.iterations_run, report.elapsed_secs
        );
        let _ = writeln!(out, "  Discovered transitions: {}", report.discovered_transitions.len());
        return out;
    }
    for v in &report.violations {
        let _ = writeln!(out, "INVARIANT VIOLATION: '{}'", v.invariant);
        out.push_str("  Call sequence:\n");
        for s in &v.sequence.steps {
            let to = if s.violation { "!! VIOLATION !!" } else { s.to.as_str() };
            let _ = writeln!(out, "    {}[{}] -> {}", s.from, s.tool, to);
        }
        let _ = writeln!(
            out,
            "  Iterations to discovery: {} ({:.2}s)",
            v.iteration, report.elapsed_secs
        );
    }
    if report.violations.len() > 1 {
        let _ = writeln!(
            out,
            "  {} violations in {} iterations; discovered transitions: {}",
            report.violations.len(),
            report.iterations_run,
            report.discovered_transitions.len()
        );
    }
    out
}
