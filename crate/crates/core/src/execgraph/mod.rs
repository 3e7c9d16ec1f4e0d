//! Execution graphs lowered from schedule tables.
//!
//! Every table cell becomes a compute node; consecutive cells on a worker are
//! chained, and every cross-stage dependency between different workers gets
//! exactly one transfer node. Colocated stages are linked directly.

mod check;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::costmodel::{activation_bytes, stage_costs, CostAnnotation, ModelConfig};
use crate::error::{Error, Result};
use crate::schedule::{validate_table, Hop, Lane, Phase, ScheduleKind, ScheduleTable, StagePlacement};

pub use check::{check_graph, GraphReport, GraphRule, GraphViolation};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransferDirection {
    Activation,
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    /// One table cell. `hop` is `None` for the optimizer step.
    Compute { worker: usize, phase: Phase, hop: Option<Hop> },
    /// Point-to-point stage-boundary message from hop `from` to hop `to`.
    Transfer { src: usize, dst: usize, from: Hop, to: Hop, bytes: u64, direction: TransferDirection },
    /// Weight-gradient exchange between the two replicas of a Chimera stage.
    Reduction { src: usize, dst: usize, stage: usize, bytes: u64 },
}

impl NodeKind {
    pub fn is_compute(&self) -> bool {
        matches!(self, NodeKind::Compute { .. })
    }

    /// Directed link a communication node occupies.
    pub fn link(&self) -> Option<(usize, usize)> {
        match *self {
            NodeKind::Transfer { src, dst, .. } | NodeKind::Reduction { src, dst, .. } => Some((src, dst)),
            NodeKind::Compute { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub cost: CostAnnotation,
}

/// When the activation gradient leaves a worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientRelease {
    /// As soon as the producing Agrad finishes; Wgrad overlaps the transfer.
    #[default]
    AfterAgrad,
    /// After the producing Wgrad, treating the backward pass as one block.
    /// This is the dependency structure the schedule tables are packed with.
    AfterBackward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GraphOptions {
    pub gradient_release: GradientRelease,
    /// Insert pairwise weight-gradient exchanges between Chimera replicas.
    pub cross_replica_reduction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecGraph {
    pub nodes: Vec<ExecNode>,
    pub edges: Vec<(NodeId, NodeId)>,
    /// Compute node ids per worker in execution order.
    pub local_order: Vec<Vec<NodeId>>,
    table_rows: Vec<Vec<(Phase, Option<Hop>)>>,
    routes: Vec<Vec<Hop>>,
    release: GradientRelease,
    placement: StagePlacement,
    microbatch_size: u64,
    recompute: bool,
}

/// Lowers a valid table into an execution graph.
pub fn build_exec_graph(table: &ScheduleTable, model: &ModelConfig, opts: GraphOptions) -> Result<ExecGraph> {
    let report = validate_table(table);
    if !report.is_valid() {
        return Err(Error::InvalidTable { count: report.violations.len(), summary: report.summary(3) });
    }
    let m = model.microbatch_size(table.microbatches)?;
    let placement = &table.placement;
    let workers = table.workers();
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut local_order = vec![Vec::new(); workers];
    let mut table_rows = vec![Vec::new(); workers];
    let mut index: HashMap<(Hop, Phase), NodeId> = HashMap::new();
    let mut opt_of = vec![None; workers];

    for w in 0..workers {
        for (_, cell) in table.row_cells(w) {
            let id = nodes.len();
            let (hop, cost) = if cell.phase == Phase::Opt {
                let (f, v) = stage_costs(model, placement.worker_blocks(w), m, Phase::Opt);
                opt_of[w] = Some(id);
                (None, CostAnnotation::compute(f, v))
            } else {
                let stage = placement
                    .stage_on(cell.lane, w)
                    .ok_or_else(|| Error::Placement(format!("lane {} has no stage on worker {w}", cell.lane)))?;
                let blocks = placement.slot(cell.lane, stage).map_or(0, |s| s.blocks);
                let hop = Hop { microbatch: cell.microbatch, lane: cell.lane, stage };
                index.insert((hop, cell.phase), id);
                let (f, v) = stage_costs(model, blocks, m, cell.phase);
                (Some(hop), CostAnnotation::compute(f, v))
            };
            nodes.push(ExecNode { id, kind: NodeKind::Compute { worker: w, phase: cell.phase, hop }, cost });
            if let Some(&prev) = local_order[w].last() {
                edges.push((prev, id));
            }
            local_order[w].push(id);
            table_rows[w].push((cell.phase, hop));
        }
    }

    let boundary = activation_bytes(model, m);
    let producer_phase = match opts.gradient_release {
        GradientRelease::AfterAgrad => Phase::Agrad,
        GradientRelease::AfterBackward => Phase::Wgrad,
    };
    let routes: Vec<Vec<Hop>> = (0..table.microbatches).map(|mb| table.hops(mb)).collect();
    let host = |h: &Hop| placement.slot(h.lane, h.stage).map(|s| s.worker).unwrap_or(usize::MAX);
    for hops in &routes {
        for pair in hops.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let links = [
                (index[&(a, Phase::Fwd)], index[&(b, Phase::Fwd)], a, b, TransferDirection::Activation),
                (index[&(b, producer_phase)], index[&(a, Phase::Agrad)], b, a, TransferDirection::Gradient),
            ];
            for (from_node, to_node, from, to, direction) in links {
                let (src, dst) = (host(&from), host(&to));
                if src == dst {
                    edges.push((from_node, to_node));
                    continue;
                }
                let id = nodes.len();
                nodes.push(ExecNode {
                    id,
                    kind: NodeKind::Transfer { src, dst, from, to, bytes: boundary, direction },
                    cost: CostAnnotation::transfer(boundary as f64),
                });
                edges.push((from_node, id));
                edges.push((id, to_node));
            }
        }
    }

    for w in 0..workers {
        let Some(opt) = opt_of[w] else { continue };
        for &id in &local_order[w] {
            if let NodeKind::Compute { phase: Phase::Wgrad, .. } = nodes[id].kind {
                edges.push((id, opt));
            }
        }
    }

    if opts.cross_replica_reduction && table.kind == ScheduleKind::Chimera {
        for stage in 0..table.stages {
            let (Some(down), Some(up)) = (placement.slot(Lane::DOWN, stage), placement.slot(Lane::UP, stage)) else {
                continue;
            };
            if down.worker == up.worker {
                continue;
            }
            let bytes = down.blocks as u64 * model.block_weight_bytes();
            for (lane, src, dst) in [(Lane::DOWN, down.worker, up.worker), (Lane::UP, up.worker, down.worker)] {
                let id = nodes.len();
                nodes.push(ExecNode {
                    id,
                    kind: NodeKind::Reduction { src, dst, stage, bytes },
                    cost: CostAnnotation::transfer(bytes as f64),
                });
                for (&(hop, phase), &n) in &index {
                    if phase == Phase::Wgrad && hop.lane == lane && hop.stage == stage {
                        edges.push((n, id));
                    }
                }
                if let Some(opt) = opt_of[dst] {
                    edges.push((id, opt));
                }
            }
        }
    }

    edges.sort_unstable();
    edges.dedup();
    Ok(ExecGraph {
        nodes,
        edges,
        local_order,
        table_rows,
        routes,
        release: opts.gradient_release,
        placement: placement.clone(),
        microbatch_size: m,
        recompute: table.recompute,
    })
}

impl ExecGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn workers(&self) -> usize {
        self.local_order.len()
    }

    pub fn placement(&self) -> &StagePlacement {
        &self.placement
    }

    pub fn microbatch_size(&self) -> u64 {
        self.microbatch_size
    }

    pub fn recompute(&self) -> bool {
        self.recompute
    }

    pub fn gradient_release(&self) -> GradientRelease {
        self.release
    }

    pub fn transfer_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Transfer { .. })).count()
    }

    /// Compute node of a hop phase, if present.
    pub fn find_compute(&self, hop: Hop, phase: Phase) -> Option<NodeId> {
        self.nodes.iter().position(|n| {
            matches!(n.kind, NodeKind::Compute { phase: p, hop: Some(h), .. } if p == phase && h == hop)
        })
    }

    /// Graph with no nodes over `workers` idle workers.
    pub fn empty(workers: usize) -> Self {
        ExecGraph {
            nodes: Vec::new(),
            edges: Vec::new(),
            local_order: vec![Vec::new(); workers],
            table_rows: vec![Vec::new(); workers],
            routes: Vec::new(),
            release: GradientRelease::default(),
            placement: StagePlacement::new(workers, 0, 0, BTreeMap::new()).expect("empty placement"),
            microbatch_size: 1,
            recompute: false,
        }
    }

    /// Appends a node. Compute nodes are also appended to their worker's order.
    pub fn push_node(&mut self, kind: NodeKind, cost: CostAnnotation) -> NodeId {
        let id = self.nodes.len();
        if let NodeKind::Compute { worker, phase, hop } = kind {
            if worker >= self.local_order.len() {
                self.local_order.resize(worker + 1, Vec::new());
                self.table_rows.resize(worker + 1, Vec::new());
            }
            self.local_order[worker].push(id);
            self.table_rows[worker].push((phase, hop));
        }
        self.nodes.push(ExecNode { id, kind, cost });
        id
    }

    pub fn add_edge(&mut self, from: NodeId, to: NodeId) {
        self.edges.push((from, to));
    }

    /// Removes a node and its edges; later ids shift down by one.
    pub fn remove_node(&mut self, id: NodeId) {
        self.nodes.remove(id);
        let shift = |x: NodeId| if x > id { x - 1 } else { x };
        for n in &mut self.nodes {
            n.id = shift(n.id);
        }
        self.edges.retain(|&(a, b)| a != id && b != id);
        for e in &mut self.edges {
            *e = (shift(e.0), shift(e.1));
        }
        for order in &mut self.local_order {
            order.retain(|&x| x != id);
            for x in order.iter_mut() {
                *x = shift(*x);
            }
        }
    }

    /// Sets every node's duration.
    pub fn set_durations(&mut self, mut f: impl FnMut(&ExecNode) -> f64) {
        for n in &mut self.nodes {
            n.cost.duration = Some(f(n));
        }
    }

    /// Successor lists including implicit local-order edges, deduplicated.
    pub(crate) fn successors(&self) -> Vec<Vec<NodeId>> {
        let mut succ = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            succ[a].push(b);
        }
        for order in &self.local_order {
            for pair in order.windows(2) {
                succ[pair[0]].push(pair[1]);
            }
        }
        for s in &mut succ {
            s.sort_unstable();
            s.dedup();
        }
        succ
    }

    /// Topological order, or the number of nodes left on cycles.
    pub fn topo_order(&self) -> Result<Vec<NodeId>> {
        let succ = self.successors();
        let mut indeg = vec![0usize; self.nodes.len()];
        for s in &succ {
            for &b in s {
                indeg[b] += 1;
            }
        }
        let mut stack: Vec<NodeId> = (0..self.nodes.len()).rev().filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = stack.pop() {
            order.push(n);
            for &b in succ[n].iter().rev() {
                indeg[b] -= 1;
                if indeg[b] == 0 {
                    stack.push(b);
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(Error::Cyclic(self.nodes.len() - order.len()));
        }
        Ok(order)
    }

    /// Longest path through the DAG with node weights `durations`.
    pub fn critical_path(&self, durations: &[f64]) -> Result<f64> {
        let succ = self.successors();
        let mut finish = vec![0.0f64; self.nodes.len()];
        let mut start = vec![0.0f64; self.nodes.len()];
        for n in self.topo_order()? {
            finish[n] = start[n] + durations[n];
            for &b in &succ[n] {
                start[b] = start[b].max(finish[n]);
            }
        }
        Ok(finish.into_iter().fold(0.0, f64::max))
    }

    /// Line-oriented dump: `NODE <id> ...` lines followed by `EDGE <from> <to>` lines.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let _ = write!(out, "NODE {} ", n.id);
            let _ = match &n.kind {
                NodeKind::Compute { worker, phase, hop: None } => {
                    writeln!(out, "compute worker={worker} phase={}", phase.letter())
                }
                NodeKind::Compute { worker, phase, hop: Some(h) } => writeln!(
                    out,
                    "compute worker={worker} phase={} mb={} branch={} stage={}",
                    phase.letter(),
                    h.microbatch,
                    h.lane,
                    h.stage
                ),
                NodeKind::Transfer { src, dst, from, to, bytes, direction } => writeln!(
                    out,
                    "transfer src={src} dst={dst} dir={} mb={} branch={} from_stage={} to_branch={} to_stage={} bytes={bytes}",
                    match direction {
                        TransferDirection::Activation => "activation",
                        TransferDirection::Gradient => "gradient",
                    },
                    from.microbatch,
                    from.lane,
                    from.stage,
                    to.lane,
                    to.stage
                ),
                NodeKind::Reduction { src, dst, stage, bytes } => {
                    writeln!(out, "reduction src={src} dst={dst} stage={stage} bytes={bytes}")
                }
            };
        }
        for (a, b) in &self.edges {
            let _ = writeln!(out, "EDGE {a} {b}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_schedule, BuildOptions};

    fn graph(kind: ScheduleKind, s: usize, b: usize, opts: GraphOptions) -> ExecGraph {
        let p = StagePlacement::for_kind(kind, s, 128, 2).unwrap();
        let t = build_schedule(kind, s, b, &p, BuildOptions::default()).unwrap();
        build_exec_graph(&t, &ModelConfig::default(), opts).unwrap()
    }

    fn count_phase(g: &ExecGraph, p: Phase) -> usize {
        g.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Compute { phase, .. } if phase == p)).count()
    }

    #[test]
    fn minimal_pipeline_node_counts() {
        let g = graph(ScheduleKind::OneF1B, 2, 1, GraphOptions::default());
        for p in [Phase::Fwd, Phase::Agrad, Phase::Wgrad, Phase::Opt] {
            assert_eq!(count_phase(&g, p), 2);
        }
        let dirs: Vec<TransferDirection> = g
            .nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Transfer { direction, .. } => Some(direction),
                _ => None,
            })
            .collect();
        assert_eq!(dirs, vec![TransferDirection::Activation, TransferDirection::Gradient]);
    }

    #[test]
    fn unidirectional_transfer_count() {
        for (s, b) in [(2, 1), (4, 8), (8, 16)] {
            let g = graph(ScheduleKind::GPipe, s, b, GraphOptions::default());
            assert_eq!(g.transfer_count(), 2 * b * (s - 1));
        }
    }

    #[test]
    fn chimera_up_activations_flow_to_lower_workers() {
        let g = graph(ScheduleKind::Chimera, 4, 4, GraphOptions::default());
        let mut seen = 0;
        for n in &g.nodes {
            if let NodeKind::Transfer { src, dst, from, direction: TransferDirection::Activation, .. } = n.kind {
                if from.lane == Lane::UP {
                    assert!(src > dst);
                    seen += 1;
                } else {
                    assert!(src < dst);
                }
            }
        }
        assert_eq!(seen, 2 * 3);
    }

    #[test]
    fn hanayo_turns_are_direct_edges() {
        let g = graph(ScheduleKind::Hanayo, 4, 4, GraphOptions::default());
        // 4 lanes × 3 boundaries inside each lane, two directions, per microbatch
        assert_eq!(g.transfer_count(), 4 * 4 * 3 * 2);
    }

    #[test]
    fn gradient_release_changes_producer() {
        for (release, phase) in [(GradientRelease::AfterAgrad, Phase::Agrad), (GradientRelease::AfterBackward, Phase::Wgrad)] {
            let g = graph(ScheduleKind::GPipe, 2, 1, GraphOptions { gradient_release: release, ..Default::default() });
            let t = g.nodes.iter().find(|n| matches!(n.kind, NodeKind::Transfer { direction: TransferDirection::Gradient, .. })).unwrap();
            let pred = g.edges.iter().find(|e| e.1 == t.id).unwrap().0;
            assert!(matches!(g.nodes[pred].kind, NodeKind::Compute { phase: p, .. } if p == phase));
        }
    }

    #[test]
    fn reductions_feed_optimizer_steps() {
        let opts = GraphOptions { cross_replica_reduction: true, ..Default::default() };
        let g = graph(ScheduleKind::Chimera, 4, 4, opts);
        let reductions = g.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Reduction { .. })).count();
        // one per stage and direction
        assert_eq!(reductions, 8);
        assert!(g.topo_order().is_ok());
    }

    #[test]
    fn gpipe_and_one_f_one_b_share_node_multisets() {
        let sig = |g: &ExecGraph| {
            let mut v: Vec<NodeKind> = g.nodes.iter().map(|n| n.kind.clone()).collect();
            v.sort();
            v
        };
        let a = graph(ScheduleKind::GPipe, 4, 8, GraphOptions::default());
        let b = graph(ScheduleKind::OneF1B, 4, 8, GraphOptions::default());
        assert_eq!(sig(&a), sig(&b));
    }

    #[test]
    fn dump_lists_nodes_then_edges() {
        let g = graph(ScheduleKind::GPipe, 2, 1, GraphOptions::default());
        let d = g.dump();
        assert!(d.starts_with("NODE 0 compute worker=0 phase=F mb=0 branch=D stage=0\n"));
        assert_eq!(d.lines().filter(|l| l.starts_with("NODE")).count(), g.len());
        assert_eq!(d.lines().filter(|l| l.starts_with("EDGE")).count(), g.edges.len());
    }

    #[test]
    fn critical_path_of_a_chain() {
        let mut g = ExecGraph::empty(1);
        let a = g.push_node(NodeKind::Compute { worker: 0, phase: Phase::Fwd, hop: None }, CostAnnotation::default());
        let b = g.push_node(NodeKind::Compute { worker: 0, phase: Phase::Agrad, hop: None }, CostAnnotation::default());
        g.add_edge(a, b);
        assert_eq!(g.critical_path(&[1.0, 2.0]).unwrap(), 3.0);
    }
}
