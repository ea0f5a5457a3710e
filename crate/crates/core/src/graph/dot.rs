//! Graphviz export for inspection.

use std::fmt::Write;

use super::ExecutionGraph;

fn esc(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Nodes are labelled `kind / id / status`; empty connections are dashed.
pub fn to_dot(g: &ExecutionGraph) -> String {
    let mut out = String::from("digraph execution {\n  rankdir=TB;\n  node [shape=box];\n");
    for op in g.live_ops() {
        let _ = writeln!(
            out,
            "  \"{}\" [label=\"{}\\n{}\\n{}\"];",
            esc(&op.id),
            esc(&op.kind),
            esc(&op.id),
            op.status.as_str()
        );
    }
    for c in g.conns.values() {
        let style = if c.payload.is_none() { ", style=dashed" } else { "" };
        let _ = writeln!(
            out,
            "  \"{}\" -> \"{}\" [label=\"{}→{}\"{style}];",
            esc(&c.source.op),
            esc(&c.target.op),
            esc(&c.source.port),
            esc(&c.target.port)
        );
    }
    out.push_str("}\n");
    out
}
