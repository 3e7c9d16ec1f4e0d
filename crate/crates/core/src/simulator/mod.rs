//! Deterministic discrete-event execution of execution graphs.
//!
//! Each worker has one compute resource that runs its compute nodes strictly
//! in local order. Each ordered worker pair has one link direction that
//! carries one message at a time, in order of readiness. Messages overlap
//! freely with compute.

mod memory;
mod trace;

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::costmodel::{comm_time, compute_time, SystemConfig};
use crate::error::{Error, Result};
use crate::execgraph::{ExecGraph, ExecNode, NodeId, NodeKind};
use crate::schedule::SlotWeights;

pub use memory::{memory_timeline, MemoryStep, MemoryTimeline, WorkerMemory};
pub use trace::{export_trace, timeline_csv, trace_json};

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub makespan: f64,
    /// Summed compute time per worker.
    pub worker_busy: Vec<f64>,
    /// Summed transfer time per directed link.
    pub link_busy: BTreeMap<(usize, usize), f64>,
}

impl Timeline {
    pub fn workers(&self) -> usize {
        self.worker_busy.len()
    }

    pub fn worker_idle(&self, worker: usize) -> f64 {
        self.makespan - self.worker_busy[worker]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimMetrics {
    pub t_sim: f64,
    pub beta_idle: f64,
    pub utilization: Vec<f64>,
}

/// Duration of a node under a system, from its cost inputs.
pub fn node_duration(node: &ExecNode, sys: &SystemConfig) -> f64 {
    match node.kind {
        NodeKind::Compute { .. } => compute_time(node.cost.flops, node.cost.mem_bytes, sys),
        NodeKind::Transfer { .. } | NodeKind::Reduction { .. } => comm_time(node.cost.net_bytes, sys),
    }
}

/// Fills every node's duration against `sys`.
pub fn annotate(graph: &mut ExecGraph, sys: &SystemConfig) {
    graph.set_durations(|n| node_duration(n, sys));
}

/// Costs each compute node by its slot weight and every message at zero:
/// the reduction under which simulation and table metrics coincide.
pub fn slot_proportional_durations(graph: &ExecGraph, weights: &SlotWeights, unit: f64) -> Vec<f64> {
    graph
        .nodes
        .iter()
        .map(|n| match n.kind {
            NodeKind::Compute { phase, .. } => weights.of(phase) * unit,
            _ => 0.0,
        })
        .collect()
}

/// Simulates with durations computed from `sys`.
pub fn simulate(graph: &ExecGraph, sys: &SystemConfig) -> Result<Timeline> {
    let durations: Vec<f64> = graph.nodes.iter().map(|n| node_duration(n, sys)).collect();
    simulate_with(graph, &durations)
}

/// Simulates with the durations stored on the nodes.
pub fn simulate_annotated(graph: &ExecGraph) -> Result<Timeline> {
    let durations = graph
        .nodes
        .iter()
        .map(|n| n.cost.duration.ok_or(Error::Unannotated(n.id)))
        .collect::<Result<Vec<f64>>>()?;
    simulate_with(graph, &durations)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Time(f64);

impl Eq for Time {}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Waiting messages per directed link, keyed by (ready time, producer position, id).
type LinkQueues = BTreeMap<(usize, usize), BTreeSet<(Time, usize, NodeId)>>;

/// Simulates with explicit per-node durations.
pub fn simulate_with(graph: &ExecGraph, durations: &[f64]) -> Result<Timeline> {
    let n = graph.len();
    assert_eq!(durations.len(), n, "one duration per node");
    let succ = graph.successors();
    let mut pending = vec![0usize; n];
    for s in &succ {
        for &b in s {
            pending[b] += 1;
        }
    }
    let mut local_pos = vec![usize::MAX; n];
    for order in &graph.local_order {
        for (i, &id) in order.iter().enumerate() {
            local_pos[id] = i;
        }
    }
    // messages inherit the local position of their earliest compute producer
    let mut queue_key = local_pos.clone();
    for (a, s) in succ.iter().enumerate() {
        for &b in s {
            if graph.nodes[b].kind.link().is_some() && graph.nodes[a].kind.is_compute() {
                queue_key[b] = queue_key[b].min(local_pos[a]);
            }
        }
    }

    let workers = graph.workers();
    let mut start = vec![f64::NAN; n];
    let mut end = vec![f64::NAN; n];
    let mut ready_at = vec![0.0f64; n];
    let mut worker_busy = vec![0.0; workers];
    let mut link_busy: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut link_free: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut link_queue: LinkQueues = BTreeMap::new();
    let mut events: BinaryHeap<Reverse<(Time, NodeId)>> = BinaryHeap::new();
    let mut finished = 0usize;

    let mut release = |id: NodeId,
                       t: f64,
                       events: &mut BinaryHeap<Reverse<(Time, NodeId)>>,
                       link_queue: &mut LinkQueues,
                       start: &mut [f64],
                       end: &mut [f64]| {
        match graph.nodes[id].kind {
            NodeKind::Compute { worker, .. } => {
                start[id] = t;
                end[id] = t + durations[id];
                worker_busy[worker] += durations[id];
                events.push(Reverse((Time(end[id]), id)));
            }
            ref k => {
                let link = k.link().expect("message node");
                link_queue.entry(link).or_default().insert((Time(t), queue_key[id], id));
            }
        }
    };
    let dispatch = |t: f64,
                    events: &mut BinaryHeap<Reverse<(Time, NodeId)>>,
                    link_queue: &mut LinkQueues,
                    link_free: &mut BTreeMap<(usize, usize), f64>,
                    link_busy: &mut BTreeMap<(usize, usize), f64>,
                    start: &mut [f64],
                    end: &mut [f64]| {
        for (link, q) in link_queue.iter_mut() {
            let free = link_free.get(link).copied().unwrap_or(0.0);
            if free > t {
                continue;
            }
            if let Some((_, _, id)) = q.pop_first() {
                start[id] = t;
                end[id] = t + durations[id];
                link_free.insert(*link, end[id]);
                *link_busy.entry(*link).or_default() += durations[id];
                events.push(Reverse((Time(end[id]), id)));
            }
        }
    };

    for id in (0..n).filter(|&id| pending[id] == 0) {
        release(id, 0.0, &mut events, &mut link_queue, &mut start, &mut end);
    }
    dispatch(0.0, &mut events, &mut link_queue, &mut link_free, &mut link_busy, &mut start, &mut end);
    while let Some(&Reverse((Time(t), _))) = events.peek() {
        while let Some(&Reverse((Time(te), id))) = events.peek() {
            if te != t {
                break;
            }
            events.pop();
            finished += 1;
            for &s in &succ[id] {
                ready_at[s] = ready_at[s].max(t);
                pending[s] -= 1;
                if pending[s] == 0 {
                    release(s, ready_at[s], &mut events, &mut link_queue, &mut start, &mut end);
                }
            }
        }
        dispatch(t, &mut events, &mut link_queue, &mut link_free, &mut link_busy, &mut start, &mut end);
    }
    if finished != n {
        return Err(Error::Cyclic(n - finished));
    }
    let makespan = end.iter().copied().fold(0.0, f64::max);
    Ok(Timeline { start, end, makespan, worker_busy, link_busy })
}

/// Makespan, idle fraction over `[0, T_sim]` on all workers, and utilization.
pub fn timeline_metrics(tl: &Timeline) -> SimMetrics {
    let w = tl.workers();
    if tl.makespan <= 0.0 || w == 0 {
        return SimMetrics { t_sim: tl.makespan, beta_idle: 0.0, utilization: vec![0.0; w] };
    }
    let idle: f64 = (0..w).map(|i| tl.worker_idle(i)).sum();
    SimMetrics {
        t_sim: tl.makespan,
        beta_idle: idle / (w as f64 * tl.makespan),
        utilization: tl.worker_busy.iter().map(|b| b / tl.makespan).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::CostAnnotation;
    use crate::execgraph::TransferDirection;
    use crate::schedule::{Hop, Lane, Phase};

    fn compute(g: &mut ExecGraph, worker: usize, phase: Phase, stage: usize) -> NodeId {
        let hop = Hop { microbatch: 0, lane: Lane::DOWN, stage };
        g.push_node(NodeKind::Compute { worker, phase, hop: Some(hop) }, CostAnnotation::default())
    }

    #[test]
    fn serial_chain() {
        let mut g = ExecGraph::empty(1);
        let f = compute(&mut g, 0, Phase::Fwd, 0);
        let a = compute(&mut g, 0, Phase::Agrad, 0);
        let w = compute(&mut g, 0, Phase::Wgrad, 0);
        g.add_edge(f, a);
        g.add_edge(a, w);
        let tl = simulate_with(&g, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(tl.makespan, 3.0);
        assert_eq!(timeline_metrics(&tl).beta_idle, 0.0);
    }

    /// Two stages, one microbatch: F0 → x → F1 → A1 → W1, gradient to A0 → W0.
    pub(crate) fn two_stage(release_after_wgrad: bool) -> ExecGraph {
        let mut g = ExecGraph::empty(2);
        let f0 = compute(&mut g, 0, Phase::Fwd, 0);
        let a0 = compute(&mut g, 0, Phase::Agrad, 0);
        let w0 = compute(&mut g, 0, Phase::Wgrad, 0);
        let f1 = compute(&mut g, 1, Phase::Fwd, 1);
        let a1 = compute(&mut g, 1, Phase::Agrad, 1);
        let w1 = compute(&mut g, 1, Phase::Wgrad, 1);
        let h0 = Hop { microbatch: 0, lane: Lane::DOWN, stage: 0 };
        let h1 = Hop { stage: 1, ..h0 };
        let kind = |src, dst, from, to, direction| NodeKind::Transfer { src, dst, from, to, bytes: 1, direction };
        let xa = g.push_node(kind(0, 1, h0, h1, TransferDirection::Activation), CostAnnotation::default());
        let xg = g.push_node(kind(1, 0, h1, h0, TransferDirection::Gradient), CostAnnotation::default());
        for e in [(f0, a0), (a0, w0), (f1, a1), (a1, w1), (f0, xa), (xa, f1), (xg, a0)] {
            g.add_edge(e.0, e.1);
        }
        g.add_edge(if release_after_wgrad { w1 } else { a1 }, xg);
        g.set_durations(|n| if n.kind.is_compute() { 1.0 } else { 0.5 });
        g
    }

    #[test]
    fn two_stage_hand_trace() {
        // gradient released after the downstream Wgrad: 1+.5+1+1+1+.5+1+1
        let tl = simulate_annotated(&two_stage(true)).unwrap();
        assert_eq!(tl.makespan, 7.0);
        // released after Agrad, W1 overlaps the gradient transfer
        let tl = simulate_annotated(&two_stage(false)).unwrap();
        assert_eq!(tl.makespan, 6.0);
        assert_eq!(tl.link_busy[&(0, 1)], 0.5);
        assert_eq!(tl.link_busy[&(1, 0)], 0.5);
    }

    #[test]
    fn unannotated_and_cyclic_graphs_are_rejected() {
        let mut g = ExecGraph::empty(1);
        let a = compute(&mut g, 0, Phase::Fwd, 0);
        assert!(matches!(simulate_annotated(&g), Err(Error::Unannotated(0))));
        let b = compute(&mut g, 0, Phase::Agrad, 0);
        g.add_edge(b, a);
        assert!(matches!(simulate_with(&g, &[1.0, 1.0]), Err(Error::Cyclic(2))));
    }

    #[test]
    fn link_serializes_messages_in_ready_order() {
        let mut g = ExecGraph::empty(2);
        let h = Hop { microbatch: 0, lane: Lane::DOWN, stage: 0 };
        let h1 = Hop { stage: 1, ..h };
        let f = compute(&mut g, 0, Phase::Fwd, 0);
        let k = NodeKind::Transfer { src: 0, dst: 1, from: h, to: h1, bytes: 1, direction: TransferDirection::Activation };
        let x1 = g.push_node(k.clone(), CostAnnotation::default());
        let x2 = g.push_node(k, CostAnnotation::default());
        g.add_edge(f, x1);
        g.add_edge(f, x2);
        let tl = simulate_with(&g, &[1.0, 2.0, 2.0]).unwrap();
        assert_eq!((tl.start[x1], tl.start[x2]), (1.0, 3.0));
        assert_eq!(tl.makespan, 5.0);
    }
}
