//! Resident memory over simulated time.

use super::Timeline;
use crate::costmodel::{activation_bytes, persistent_bytes, stage_activation_bytes, ModelConfig};
use crate::execgraph::{ExecGraph, NodeKind};
use crate::schedule::Phase;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryStep {
    pub time: f64,
    pub activation: u64,
    pub persistent: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerMemory {
    pub steps: Vec<MemoryStep>,
    pub peak_activation: u64,
    pub peak_total: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryTimeline {
    pub workers: Vec<WorkerMemory>,
}

impl MemoryTimeline {
    pub fn peak_activation(&self) -> u64 {
        self.workers.iter().map(|w| w.peak_activation).max().unwrap_or(0)
    }

    pub fn peak_total(&self) -> u64 {
        self.workers.iter().map(|w| w.peak_total).max().unwrap_or(0)
    }
}

/// Activation of each hop is allocated when its Fwd starts and freed when its
/// Wgrad ends. With recomputation only the boundary tensor survives between
/// the end of the Fwd and the start of the Recomp.
pub fn memory_timeline(tl: &Timeline, graph: &ExecGraph, model: &ModelConfig, optimizer_multiplier: u64) -> MemoryTimeline {
    let m = graph.microbatch_size();
    let boundary = activation_bytes(model, m) as i128;
    let recompute = graph.recompute();
    let mut deltas: Vec<Vec<(f64, i128)>> = vec![Vec::new(); graph.workers()];
    for node in &graph.nodes {
        let NodeKind::Compute { worker, phase, hop: Some(hop) } = node.kind else { continue };
        let blocks = graph.placement().slot(hop.lane, hop.stage).map_or(0, |s| s.blocks);
        let full = stage_activation_bytes(model, blocks, m) as i128;
        let (s, e) = (tl.start[node.id], tl.end[node.id]);
        let d = &mut deltas[worker];
        match phase {
            Phase::Fwd => {
                d.push((s, full));
                if recompute {
                    d.push((e, boundary - full));
                }
            }
            Phase::Recomp => d.push((s, full - boundary)),
            Phase::Wgrad => d.push((e, -full)),
            _ => {}
        }
    }
    let workers = deltas
        .into_iter()
        .enumerate()
        .map(|(w, mut d)| {
            // frees before allocations at equal timestamps
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let persistent = persistent_bytes(graph.placement(), model, w, optimizer_multiplier);
            let mut level: i128 = 0;
            let mut peak: i128 = 0;
            let mut steps = vec![MemoryStep { time: 0.0, activation: 0, persistent }];
            for (t, delta) in d {
                level += delta;
                debug_assert!(level >= 0, "negative activation level");
                peak = peak.max(level);
                steps.push(MemoryStep { time: t, activation: level.max(0) as u64, persistent });
            }
            WorkerMemory { steps, peak_activation: peak as u64, peak_total: peak as u64 + persistent }
        })
        .collect();
    MemoryTimeline { workers }
}
