//! Trace-event JSON and timeline CSV export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Value};

use super::Timeline;
use crate::error::Result;
use crate::execgraph::{ExecGraph, NodeKind, TransferDirection};

type LinkLanes = BTreeMap<(usize, usize), usize>;

/// Thread ids: one per worker, then both directions of each adjacent pair,
/// then any other link a message uses.
fn lanes(graph: &ExecGraph) -> (LinkLanes, Vec<(usize, String)>) {
    let w = graph.workers();
    let mut names: Vec<(usize, String)> = (0..w).map(|i| (i, format!("worker {i} compute"))).collect();
    let mut links = BTreeMap::new();
    for i in 0..w.saturating_sub(1) {
        for (a, b) in [(i, i + 1), (i + 1, i)] {
            let tid = names.len();
            links.insert((a, b), tid);
            names.push((tid, format!("link {a}->{b}")));
        }
    }
    for n in &graph.nodes {
        if let Some(link) = n.kind.link() {
            if let std::collections::btree_map::Entry::Vacant(e) = links.entry(link) {
                let tid = names.len();
                e.insert(tid);
                names.push((tid, format!("link {}->{}", link.0, link.1)));
            }
        }
    }
    (links, names)
}

fn event_name(kind: &NodeKind) -> String {
    match kind {
        NodeKind::Compute { phase, hop: None, .. } => phase.letter().to_string(),
        NodeKind::Compute { phase, hop: Some(h), .. } => {
            format!("{} mb{} {} s{}", phase.letter(), h.microbatch, h.lane, h.stage)
        }
        NodeKind::Transfer { from, to, direction, .. } => format!(
            "{} mb{} {} s{}->s{}",
            match direction {
                TransferDirection::Activation => "act",
                TransferDirection::Gradient => "grad",
            },
            from.microbatch,
            from.lane,
            from.stage,
            to.stage
        ),
        NodeKind::Reduction { stage, .. } => format!("reduce s{stage}"),
    }
}

/// Complete ("X") events with microsecond timestamps, plus lane names.
pub fn trace_json(tl: &Timeline, graph: &ExecGraph) -> Value {
    let (links, names) = lanes(graph);
    let mut events: Vec<Value> = names
        .iter()
        .map(|(tid, name)| json!({"ph": "M", "name": "thread_name", "pid": 0, "tid": tid, "args": {"name": name}}))
        .collect();
    for n in &graph.nodes {
        let tid = match n.kind {
            NodeKind::Compute { worker, .. } => worker,
            ref k => links[&k.link().expect("message node")],
        };
        events.push(json!({
            "ph": "X",
            "name": event_name(&n.kind),
            "pid": 0,
            "tid": tid,
            "ts": tl.start[n.id] * 1e6,
            "dur": (tl.end[n.id] - tl.start[n.id]) * 1e6,
            "args": {"node": n.id},
        }));
    }
    json!({"traceEvents": events, "displayTimeUnit": "ms"})
}

/// Writes the trace-event file for a browser trace viewer.
pub fn export_trace(tl: &Timeline, graph: &ExecGraph, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&trace_json(tl, graph))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// `node_id,worker,kind,phase,mb,branch,start_s,end_s`; messages report the
/// sending worker.
pub fn timeline_csv(tl: &Timeline, graph: &ExecGraph) -> String {
    let mut out = String::from("node_id,worker,kind,phase,mb,branch,start_s,end_s\n");
    for n in &graph.nodes {
        let (worker, kind, phase, mb, branch) = match &n.kind {
            NodeKind::Compute { worker, phase, hop } => (
                *worker,
                "compute",
                phase.letter().to_string(),
                hop.map(|h| h.microbatch.to_string()).unwrap_or_default(),
                hop.map(|h| h.lane.to_string()).unwrap_or_default(),
            ),
            NodeKind::Transfer { src, from, direction, .. } => (
                *src,
                match direction {
                    TransferDirection::Activation => "xfer_act",
                    TransferDirection::Gradient => "xfer_grad",
                },
                String::new(),
                from.microbatch.to_string(),
                from.lane.to_string(),
            ),
            NodeKind::Reduction { src, .. } => (*src, "reduce", String::new(), String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{},{worker},{kind},{phase},{mb},{branch},{:.9},{:.9}",
            n.id, tl.start[n.id], tl.end[n.id]
        );
    }
    out
}
