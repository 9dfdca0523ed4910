//! Graphviz export of topology snapshots.

use std::collections::BTreeSet;
use std::fmt::Write;

use lifeline_core::Millis;
use thiserror::Error;

use crate::metrics::{latest_snapshot, TopologySnapshot};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopoError {
    #[error("no topology snapshot at or before {0} ms")]
    NoSnapshot(Millis),
}

/// DOT text of the latest snapshot at or before `t`.
pub fn export_topology(snapshots: &[TopologySnapshot], t: Millis) -> Result<String, TopoError> {
    latest_snapshot(snapshots, t)
        .map(snapshot_to_dot)
        .ok_or(TopoError::NoSnapshot(t))
}

/// Nodes carry kind and battery in their label; dead nodes are dashed and
/// relay edges are drawn bold.
pub fn snapshot_to_dot(s: &TopologySnapshot) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "graph lifeline {{");
    let _ = writeln!(out, "  // t = {} ms", s.t_ms);
    let _ = writeln!(out, "  node [shape=box];");
    for n in &s.nodes {
        let battery = n.battery_percent.map_or("mains".to_string(), |b| format!("{b:.1}%"));
        let style = if n.alive { "" } else { ", style=dashed" };
        let _ = writeln!(out, "  \"{}\" [label=\"{}\\n{}\\n{}\"{}];", n.id, n.id, n.kind, battery, style);
    }
    let mpr: BTreeSet<_> = s.mpr_edges.iter().copied().collect();
    for &(a, b) in &s.edges {
        let style = if mpr.contains(&(a, b)) { " [style=bold]" } else { "" };
        let _ = writeln!(out, "  \"{a}\" -- \"{b}\"{style};");
    }
    out.push_str("}\n");
    out
}
