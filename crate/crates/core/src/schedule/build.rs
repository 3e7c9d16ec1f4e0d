//! Schedule construction: per-worker task orders, then ASAP slot packing.
//!
//! GPipe and 1F1B orders are fixed patterns. Chimera and Hanayo orders come
//! from a list-scheduling dispatch that runs every worker greedily in
//! continuous time with block-proportional durations, preferring backward
//! work, then the lowest microbatch index within a branch, then Down over Up.
//! The resulting orders are packed into unit slots: each cell goes to the
//! earliest slot after its local predecessor and its cross-worker dependency.
//! A backward hop may start only after the downstream hop's whole backward
//! block (Agrad and Wgrad) has finished.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use super::{route, Cell, Hop, Lane, Phase, ScheduleKind, ScheduleTable, SlotWeights, StagePlacement};
use crate::error::{Error, Result};

/// Construction switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    /// Recompute forward activations just before each backward block.
    pub recompute: bool,
    /// Number of V-shaped passes per microbatch for Hanayo.
    pub waves: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { recompute: false, waves: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Work {
    Bwd,
    Fwd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Task {
    work: Work,
    mb: usize,
    hop: usize,
}

/// Resolved route of one microbatch: (lane, stage, worker, blocks) per hop.
struct Routes {
    hops: Vec<Vec<(Lane, usize, usize, u32)>>,
}

impl Routes {
    fn worker(&self, t: &Task) -> usize {
        self.hops[t.mb][t.hop].2
    }
    fn len(&self, mb: usize) -> usize {
        self.hops[mb].len()
    }
}

/// Builds a schedule table of the given family.
pub fn build_schedule(
    kind: ScheduleKind,
    stages: usize,
    microbatches: usize,
    placement: &StagePlacement,
    opts: BuildOptions,
) -> Result<ScheduleTable> {
    check_preconditions(kind, stages, microbatches, placement, opts)?;
    let waves = if kind == ScheduleKind::Hanayo { opts.waves } else { 1 };
    let routes = resolve_routes(kind, stages, microbatches, waves, placement)?;
    let workers = placement.workers();
    let orders = match kind {
        ScheduleKind::GPipe => gpipe_orders(workers, microbatches, &routes),
        ScheduleKind::OneF1B => one_f_one_b_orders(workers, stages, microbatches, &routes),
        ScheduleKind::Chimera | ScheduleKind::Hanayo => {
            greedy_orders(kind, workers, microbatches, &routes, opts.recompute)?
        }
    };
    let grid = pack(&orders, &routes, opts.recompute)?;
    Ok(ScheduleTable {
        kind,
        stages,
        microbatches,
        waves,
        recompute: opts.recompute,
        placement: placement.clone(),
        slot_weights: SlotWeights::default(),
        grid,
    })
}

fn check_preconditions(
    kind: ScheduleKind,
    stages: usize,
    microbatches: usize,
    placement: &StagePlacement,
    opts: BuildOptions,
) -> Result<()> {
    let pre = |msg: String| Err(Error::Precondition(msg));
    if microbatches == 0 {
        return pre("B ≥ 1".into());
    }
    if stages == 0 || (kind.is_bidirectional() && stages < 2) {
        return pre(format!("{kind} requires S ≥ {}, got S={stages}", if kind.is_bidirectional() { 2 } else { 1 }));
    }
    if kind == ScheduleKind::Chimera {
        if stages % 2 != 0 {
            return pre(format!("Chimera requires S even, got S={stages}"));
        }
        if microbatches % 2 != 0 {
            return pre(format!("Chimera requires B even, got B={microbatches}"));
        }
    }
    if kind == ScheduleKind::Hanayo {
        if opts.waves == 0 {
            return pre("Hanayo requires waves ≥ 1".into());
        }
        if microbatches % opts.waves != 0 {
            return pre(format!(
                "Hanayo requires B divisible by waves, got B={microbatches}, waves={}",
                opts.waves
            ));
        }
    }
    if placement.stages() != stages {
        return Err(Error::Placement(format!(
            "placement has {} stages, schedule has {stages}",
            placement.stages()
        )));
    }
    Ok(())
}

fn resolve_routes(
    kind: ScheduleKind,
    stages: usize,
    microbatches: usize,
    waves: usize,
    placement: &StagePlacement,
) -> Result<Routes> {
    let mut hops = Vec::with_capacity(microbatches);
    for mb in 0..microbatches {
        let lanes = route(kind, waves, microbatches, mb);
        let mut r = Vec::with_capacity(lanes.len() * stages);
        for lane in &lanes {
            for k in 0..stages {
                let slot = placement.slot(*lane, k).ok_or_else(|| {
                    Error::Placement(format!("lane {lane} stage {k} is hosted nowhere"))
                })?;
                r.push((*lane, k, slot.worker, slot.blocks));
            }
        }
        let blocks = placement.route_blocks(&lanes);
        if blocks != placement.total_blocks() {
            return Err(Error::Placement(format!(
                "microbatch {mb} passes {blocks} blocks, model has {}",
                placement.total_blocks()
            )));
        }
        hops.push(r);
    }
    Ok(Routes { hops })
}

fn gpipe_orders(workers: usize, microbatches: usize, routes: &Routes) -> Vec<Vec<Task>> {
    let mut orders = vec![Vec::new(); workers];
    for mb in 0..microbatches {
        for hop in 0..routes.len(mb) {
            let t = Task { work: Work::Fwd, mb, hop };
            orders[routes.worker(&t)].push(t);
        }
    }
    for mb in (0..microbatches).rev() {
        for hop in (0..routes.len(mb)).rev() {
            let t = Task { work: Work::Bwd, mb, hop };
            orders[routes.worker(&t)].push(t);
        }
    }
    orders
}

fn one_f_one_b_orders(workers: usize, stages: usize, microbatches: usize, routes: &Routes) -> Vec<Vec<Task>> {
    let mut orders = vec![Vec::new(); workers];
    for k in 0..stages {
        let w = routes.hops[0][k].2;
        let warmup = (stages - 1 - k).min(microbatches);
        let order = &mut orders[w];
        let fwd = |mb| Task { work: Work::Fwd, mb, hop: k };
        let bwd = |mb| Task { work: Work::Bwd, mb, hop: k };
        order.extend((0..warmup).map(fwd));
        let (mut f, mut b) = (warmup, 0);
        while f < microbatches {
            order.push(fwd(f));
            order.push(bwd(b));
            f += 1;
            b += 1;
        }
        order.extend((b..microbatches).map(bwd));
    }
    orders
}

/// Continuous-time greedy dispatch producing per-worker orders.
fn greedy_orders(
    kind: ScheduleKind,
    workers: usize,
    microbatches: usize,
    routes: &Routes,
    recompute: bool,
) -> Result<Vec<Vec<Task>>> {
    let half = (microbatches / 2).max(1);
    let priority = |t: &Task| {
        let (lane, ..) = routes.hops[t.mb][t.hop];
        let rel = if kind == ScheduleKind::Chimera { t.mb % half } else { t.mb };
        (t.work, rel, routes.hops[t.mb][0].0.branch, lane.wave, t.mb, t.hop)
    };
    let bwd_units: u64 = if recompute { 3 } else { 2 };
    let duration = |t: &Task| {
        let blocks = routes.hops[t.mb][t.hop].3 as u64;
        match t.work {
            Work::Fwd => blocks,
            Work::Bwd => bwd_units * blocks,
        }
    };

    let mut ready: Vec<BTreeSet<(_, Task)>> = vec![BTreeSet::new(); workers];
    let push = |ready: &mut Vec<BTreeSet<_>>, t: Task| {
        ready[routes.worker(&t)].insert((priority(&t), t));
    };
    for mb in 0..microbatches {
        push(&mut ready, Task { work: Work::Fwd, mb, hop: 0 });
    }
    let total: usize = (0..microbatches).map(|mb| 2 * routes.len(mb)).sum();
    let mut orders = vec![Vec::new(); workers];
    let mut busy = vec![false; workers];
    let mut running: BinaryHeap<Reverse<(u64, usize, Task)>> = BinaryHeap::new();
    let mut now = 0u64;
    let mut dispatched = 0usize;
    loop {
        for w in 0..workers {
            if busy[w] {
                continue;
            }
            if let Some((_, task)) = ready[w].pop_first() {
                busy[w] = true;
                running.push(Reverse((now + duration(&task), w, task)));
                orders[w].push(task);
                dispatched += 1;
            }
        }
        let Some(Reverse((end, ..))) = running.peek().copied() else { break };
        now = end;
        while let Some(Reverse((e, w, task))) = running.peek().copied() {
            if e != now {
                break;
            }
            running.pop();
            busy[w] = false;
            let last = routes.len(task.mb) - 1;
            match task.work {
                Work::Fwd if task.hop < last => {
                    push(&mut ready, Task { work: Work::Fwd, mb: task.mb, hop: task.hop + 1 })
                }
                Work::Fwd => push(&mut ready, Task { work: Work::Bwd, mb: task.mb, hop: last }),
                Work::Bwd if task.hop > 0 => {
                    push(&mut ready, Task { work: Work::Bwd, mb: task.mb, hop: task.hop - 1 })
                }
                Work::Bwd => {}
            }
        }
    }
    if dispatched != total {
        return Err(Error::Deadlock(format!("greedy dispatch placed {dispatched} of {total} tasks")));
    }
    Ok(orders)
}

/// ASAP packing of per-worker orders into unit slots, plus the Opt column.
fn pack(orders: &[Vec<Task>], routes: &Routes, recompute: bool) -> Result<Vec<Vec<Option<Cell>>>> {
    let workers = orders.len();
    let cells: Vec<Vec<(Task, Phase)>> = orders
        .iter()
        .map(|order| {
            order
                .iter()
                .flat_map(|t| {
                    let phases: &[Phase] = match (t.work, recompute) {
                        (Work::Fwd, _) => &[Phase::Fwd],
                        (Work::Bwd, false) => &[Phase::Agrad, Phase::Wgrad],
                        (Work::Bwd, true) => &[Phase::Recomp, Phase::Agrad, Phase::Wgrad],
                    };
                    phases.iter().map(move |p| (*t, *p))
                })
                .collect()
        })
        .collect();

    let nmb = routes.hops.len();
    let mut fwd_end: Vec<Vec<Option<usize>>> = (0..nmb).map(|m| vec![None; routes.len(m)]).collect();
    let mut bwd_end = fwd_end.clone();
    let mut next = vec![0usize; workers];
    let mut free = vec![0usize; workers];
    let mut placed: Vec<Vec<(usize, Task, Phase)>> = vec![Vec::new(); workers];
    let total: usize = cells.iter().map(Vec::len).sum();
    let mut done = 0usize;
    while done < total {
        let mut progress = false;
        for w in 0..workers {
            while let Some(&(task, phase)) = cells[w].get(next[w]) {
                let dep = match phase {
                    Phase::Fwd if task.hop > 0 => match fwd_end[task.mb][task.hop - 1] {
                        Some(e) => e,
                        None => break,
                    },
                    Phase::Agrad if task.hop + 1 < routes.len(task.mb) => {
                        match bwd_end[task.mb][task.hop + 1] {
                            Some(e) => e,
                            None => break,
                        }
                    }
                    _ => 0,
                };
                let slot = free[w].max(dep);
                free[w] = slot + 1;
                match phase {
                    Phase::Fwd => fwd_end[task.mb][task.hop] = Some(slot + 1),
                    Phase::Wgrad => bwd_end[task.mb][task.hop] = Some(slot + 1),
                    _ => {}
                }
                placed[w].push((slot, task, phase));
                next[w] += 1;
                done += 1;
                progress = true;
            }
        }
        if !progress {
            let stuck: Vec<String> = (0..workers)
                .filter_map(|w| cells[w].get(next[w]).map(|(t, p)| format!("w{w}:{:?}{}@hop{}", p, t.mb, t.hop)))
                .collect();
            return Err(Error::Deadlock(stuck.join(", ")));
        }
    }

    let span = free.iter().copied().max().unwrap_or(0);
    let slots = span + 1;
    let mut grid = vec![vec![None; slots]; workers];
    for (w, row) in placed.iter().enumerate() {
        for &(slot, task, phase) in row {
            let lane = routes.hops[task.mb][task.hop].0;
            grid[w][slot] = Some(Cell::new(task.mb as u32, lane, phase));
        }
        if !row.is_empty() {
            grid[w][span] = Some(Cell::opt());
        }
    }
    Ok(grid)
}

impl ScheduleTable {
    /// Slot of each phase of a hop, found by scanning the hosting worker's row.
    pub fn find_slot(&self, hop: Hop, phase: Phase) -> Option<usize> {
        let w = self.placement.slot(hop.lane, hop.stage)?.worker;
        self.row_cells(w)
            .find(|(_, c)| c.phase == phase && c.microbatch == hop.microbatch && c.lane == hop.lane)
            .map(|(t, _)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{structural_metrics, validate_table};

    fn build(kind: ScheduleKind, s: usize, b: usize) -> ScheduleTable {
        let p = StagePlacement::for_kind(kind, s, 128, 2).unwrap();
        build_schedule(kind, s, b, &p, BuildOptions::default()).unwrap()
    }

    #[test]
    fn gpipe_worker0_fill_then_reverse_drain() {
        let t = build(ScheduleKind::GPipe, 4, 8);
        let row: Vec<Cell> = t.row_cells(0).map(|(_, c)| c).collect();
        for (i, c) in row[..8].iter().enumerate() {
            assert_eq!((c.phase, c.microbatch), (Phase::Fwd, i as u32));
        }
        for i in 0..8 {
            let a = row[8 + 2 * i];
            let w = row[9 + 2 * i];
            assert_eq!((a.phase, a.microbatch), (Phase::Agrad, 7 - i as u32));
            assert_eq!((w.phase, w.microbatch), (Phase::Wgrad, 7 - i as u32));
        }
        assert_eq!(row.last().unwrap().phase, Phase::Opt);
        // idle gap between the last forward and the first backward
        let (first_a, _) = t.row_cells(0).find(|(_, c)| c.phase == Phase::Agrad).unwrap();
        assert!(first_a > 8);
    }

    #[test]
    fn single_stage_has_no_idle_slots() {
        let p = StagePlacement::uniform(1, 4).unwrap();
        let t = build_schedule(ScheduleKind::OneF1B, 1, 1, &p, BuildOptions::default()).unwrap();
        let phases: Vec<Phase> = t.grid[0].iter().map(|c| c.unwrap().phase).collect();
        assert_eq!(phases, vec![Phase::Fwd, Phase::Agrad, Phase::Wgrad, Phase::Opt]);
    }

    #[test]
    fn chimera_routes_split_by_branch() {
        let t = build(ScheduleKind::Chimera, 4, 8);
        for w in 0..4 {
            for (_, c) in t.row_cells(w).filter(|(_, c)| c.phase != Phase::Opt) {
                let expected = if c.microbatch < 4 { Lane::DOWN } else { Lane::UP };
                assert_eq!(c.lane, expected);
            }
        }
        // Up stage 0 runs on the last worker
        let hop = Hop { microbatch: 4, lane: Lane::UP, stage: 0 };
        let w = t.placement.slot(hop.lane, hop.stage).unwrap().worker;
        assert_eq!(w, 3);
    }

    #[test]
    fn precondition_errors_name_the_constraint() {
        let p = StagePlacement::chimera(4, 128).unwrap();
        let e = build_schedule(ScheduleKind::Chimera, 4, 7, &p, BuildOptions::default()).unwrap_err();
        assert!(e.to_string().contains("B even"));
        let p = StagePlacement::hanayo(4, 128, 2).unwrap();
        let e = build_schedule(ScheduleKind::Hanayo, 4, 5, &p, BuildOptions::default()).unwrap_err();
        assert!(e.to_string().contains("divisible by waves"));
        let p = StagePlacement::uniform(4, 128).unwrap();
        let e = build_schedule(ScheduleKind::GPipe, 4, 0, &p, BuildOptions::default()).unwrap_err();
        assert!(matches!(e, Error::Precondition(_)));
    }

    #[test]
    fn placement_missing_lane_is_rejected() {
        let p = StagePlacement::uniform(4, 128).unwrap();
        let e = build_schedule(ScheduleKind::Chimera, 4, 8, &p, BuildOptions::default()).unwrap_err();
        assert!(matches!(e, Error::Placement(_)));
    }

    #[test]
    fn recompute_tables_are_valid() {
        for kind in ScheduleKind::ALL {
            let p = StagePlacement::for_kind(kind, 4, 128, 2).unwrap();
            let opts = BuildOptions { recompute: true, waves: 2 };
            let t = build_schedule(kind, 4, 8, &p, opts).unwrap();
            assert!(validate_table(&t).is_valid(), "{kind}");
            assert!(t.grid.iter().flatten().flatten().any(|c| c.phase == Phase::Recomp));
        }
    }

    #[test]
    fn hanayo_beats_chimera_structurally_at_eight() {
        let c = structural_metrics(&build(ScheduleKind::Chimera, 8, 8)).unwrap();
        let h = structural_metrics(&build(ScheduleKind::Hanayo, 8, 8)).unwrap();
        assert!(h.bubble_ratio < c.bubble_ratio);
    }
}
