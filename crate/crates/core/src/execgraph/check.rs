//! Structural checks on execution graphs.

use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{ExecGraph, GradientRelease, NodeId, NodeKind, TransferDirection};
use crate::schedule::{Hop, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphRule {
    Cycle,
    LocalOrder,
    MissingDependency,
    DuplicateTransfer,
    StrayTransfer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphViolation {
    pub rule: GraphRule,
    pub nodes: Vec<NodeId>,
    pub detail: String,
}

impl fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} {:?}: {}", self.rule, self.nodes, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphReport {
    pub violations: Vec<GraphViolation>,
}

impl GraphReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Verifies acyclicity, per-worker order against the source table and the
/// one-transfer-per-dependency rule.
pub fn check_graph(graph: &ExecGraph) -> GraphReport {
    let mut out = Vec::new();
    check_cycles(graph, &mut out);
    check_local_order(graph, &mut out);
    check_dependencies(graph, &mut out);
    GraphReport { violations: out }
}

fn check_cycles(graph: &ExecGraph, out: &mut Vec<GraphViolation>) {
    let succ = graph.successors();
    let mut indeg = vec![0usize; graph.len()];
    for s in &succ {
        for &b in s {
            indeg[b] += 1;
        }
    }
    let mut stack: Vec<NodeId> = (0..graph.len()).filter(|&i| indeg[i] == 0).collect();
    let mut removed = 0;
    while let Some(n) = stack.pop() {
        removed += 1;
        for &b in &succ[n] {
            indeg[b] -= 1;
            if indeg[b] == 0 {
                stack.push(b);
            }
        }
    }
    if removed != graph.len() {
        let stuck: Vec<NodeId> = (0..graph.len()).filter(|&i| indeg[i] > 0).collect();
        out.push(GraphViolation {
            rule: GraphRule::Cycle,
            detail: format!("{} nodes lie on or behind a cycle", stuck.len()),
            nodes: stuck,
        });
    }
}

fn check_local_order(graph: &ExecGraph, out: &mut Vec<GraphViolation>) {
    let edges: HashSet<(NodeId, NodeId)> = graph.edges.iter().copied().collect();
    for (w, order) in graph.local_order.iter().enumerate() {
        let keys: Vec<(Phase, Option<Hop>)> = order
            .iter()
            .filter_map(|&id| match graph.nodes.get(id).map(|n| &n.kind) {
                Some(NodeKind::Compute { phase, hop, .. }) => Some((*phase, *hop)),
                _ => None,
            })
            .collect();
        if keys.len() != order.len() || keys != graph.table_rows[w] {
            out.push(GraphViolation {
                rule: GraphRule::LocalOrder,
                nodes: order.clone(),
                detail: format!("worker {w} order differs from its table row"),
            });
        }
        for pair in order.windows(2) {
            if !edges.contains(&(pair[0], pair[1])) {
                out.push(GraphViolation {
                    rule: GraphRule::LocalOrder,
                    nodes: pair.to_vec(),
                    detail: format!("worker {w} lacks a precedence edge"),
                });
            }
        }
    }
}

fn check_dependencies(graph: &ExecGraph, out: &mut Vec<GraphViolation>) {
    let edges: HashSet<(NodeId, NodeId)> = graph.edges.iter().copied().collect();
    let mut compute: HashMap<(Hop, Phase), NodeId> = HashMap::new();
    let mut worker_of: HashMap<Hop, usize> = HashMap::new();
    let mut transfers: HashMap<(Hop, Hop, TransferDirection), Vec<NodeId>> = HashMap::new();
    for n in &graph.nodes {
        match n.kind {
            NodeKind::Compute { worker, phase, hop: Some(h) } => {
                compute.insert((h, phase), n.id);
                worker_of.insert(h, worker);
            }
            NodeKind::Transfer { from, to, direction, .. } => transfers.entry((from, to, direction)).or_default().push(n.id),
            _ => {}
        }
    }
    let producer = match graph.release {
        GradientRelease::AfterAgrad => Phase::Agrad,
        GradientRelease::AfterBackward => Phase::Wgrad,
    };
    let mut used: HashSet<NodeId> = HashSet::new();
    for hops in &graph.routes {
        for pair in hops.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let deps = [
                ((a, Phase::Fwd), (b, Phase::Fwd), TransferDirection::Activation),
                ((b, producer), (a, Phase::Agrad), TransferDirection::Gradient),
            ];
            for ((from, pf), (to, pt), dir) in deps {
                let name = format!(
                    "microbatch {} {:?} between stage {} and stage {} (branch {})",
                    a.microbatch, dir, a.stage, b.stage, a.lane
                );
                let (Some(&p), Some(&c)) = (compute.get(&(from, pf)), compute.get(&(to, pt))) else {
                    out.push(GraphViolation {
                        rule: GraphRule::MissingDependency,
                        nodes: vec![],
                        detail: format!("{name}: endpoint compute node missing"),
                    });
                    continue;
                };
                if worker_of.get(&from) == worker_of.get(&to) {
                    if !edges.contains(&(p, c)) {
                        out.push(GraphViolation {
                            rule: GraphRule::MissingDependency,
                            nodes: vec![p, c],
                            detail: format!("{name}: colocated stages lack a direct edge"),
                        });
                    }
                    continue;
                }
                let found = transfers.get(&(from, to, dir)).cloned().unwrap_or_default();
                used.extend(found.iter().copied());
                match found.as_slice() {
                    [] => out.push(GraphViolation {
                        rule: GraphRule::MissingDependency,
                        nodes: vec![p, c],
                        detail: format!("{name}: no transfer"),
                    }),
                    [t] => {
                        if !edges.contains(&(p, *t)) || !edges.contains(&(*t, c)) {
                            out.push(GraphViolation {
                                rule: GraphRule::MissingDependency,
                                nodes: vec![p, *t, c],
                                detail: format!("{name}: transfer not wired producer→transfer→consumer"),
                            });
                        }
                    }
                    many => out.push(GraphViolation {
                        rule: GraphRule::DuplicateTransfer,
                        nodes: many.to_vec(),
                        detail: format!("{name}: {} transfers", many.len()),
                    }),
                }
            }
        }
    }
    for n in &graph.nodes {
        if matches!(n.kind, NodeKind::Transfer { .. }) && !used.contains(&n.id) {
            out.push(GraphViolation {
                rule: GraphRule::StrayTransfer,
                nodes: vec![n.id],
                detail: "transfer does not serve an adjacent-stage dependency".into(),
            });
        }
    }
}
