//! Hardware-agnostic metrics extracted from a table.

use super::{validate_table, Hop, Phase, ScheduleTable};
use crate::costmodel::{activation_bytes, stage_activation_bytes, ModelConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralMetrics {
    pub bubble_ratio: f64,
    /// Weighted span from the first to the last occupied slot.
    pub schedule_length: f64,
    pub per_worker_idle: Vec<f64>,
    pub utilization: f64,
}

/// How idle time before a worker's first cell is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IdleAccounting {
    /// Every worker is charged over the full table span, including fill ramps.
    #[default]
    FullSpan,
    /// A worker's idle time starts at its own first cell.
    FromFirstCell,
}

/// Bubble ratio, weighted length and per-worker idle time with default accounting.
pub fn structural_metrics(table: &ScheduleTable) -> Result<StructuralMetrics> {
    structural_metrics_with(table, IdleAccounting::FullSpan)
}

/// Column weight is the heaviest cell in the column (1 for an empty column
/// inside the span), so Opt-only columns add nothing.
pub fn structural_metrics_with(table: &ScheduleTable, accounting: IdleAccounting) -> Result<StructuralMetrics> {
    ensure_valid(table)?;
    let weights = &table.slot_weights;
    let occupied = |t: usize| (0..table.workers()).any(|w| table.cell(w, t).is_some());
    let first = (0..table.slots()).find(|&t| occupied(t));
    let last = (0..table.slots()).rev().find(|&t| occupied(t));
    let (Some(first), Some(last)) = (first, last) else {
        return Err(Error::Precondition("table has no cells".into()));
    };
    let column: Vec<f64> = (0..table.slots())
        .map(|t| {
            let cells: Vec<f64> =
                (0..table.workers()).filter_map(|w| table.cell(w, t)).map(|c| weights.of(c.phase)).collect();
            if cells.is_empty() {
                1.0
            } else {
                cells.into_iter().fold(0.0, f64::max)
            }
        })
        .collect();
    let length: f64 = column[first..=last].iter().sum();

    let mut idle = Vec::with_capacity(table.workers());
    let mut charged = 0.0;
    for w in 0..table.workers() {
        let busy: f64 = table.row_cells(w).map(|(_, c)| weights.of(c.phase)).sum();
        let start = match accounting {
            IdleAccounting::FullSpan => first,
            IdleAccounting::FromFirstCell => table.row_cells(w).next().map_or(last + 1, |(t, _)| t),
        };
        let window: f64 = if start <= last { column[start..=last].iter().sum() } else { 0.0 };
        idle.push(window - busy);
        charged += window;
    }
    let total_idle: f64 = idle.iter().sum();
    let bubble = if charged > 0.0 { total_idle / charged } else { 0.0 };
    Ok(StructuralMetrics {
        bubble_ratio: bubble,
        schedule_length: length,
        per_worker_idle: idle,
        utilization: 1.0 - bubble,
    })
}

/// Activation retention of one (microbatch, lane, stage).
#[derive(Debug, Clone, PartialEq)]
pub struct RetentionInterval {
    pub worker: usize,
    pub hop: Hop,
    pub fwd_slot: usize,
    /// Slot of the Recomp cell when recomputation is on; the interval is then
    /// closed between the forward and this slot.
    pub recomp_slot: Option<usize>,
    pub wgrad_slot: usize,
    /// Full retained bytes while the interval is open.
    pub bytes: u64,
    /// Bytes kept while closed (the stage-boundary tensor).
    pub boundary_bytes: u64,
}

impl RetentionInterval {
    pub fn covers(&self, slot: usize) -> bool {
        if slot < self.fwd_slot || slot > self.wgrad_slot {
            return false;
        }
        match self.recomp_slot {
            Some(r) => slot == self.fwd_slot || slot >= r,
            None => true,
        }
    }

    fn bytes_at(&self, slot: usize) -> u64 {
        if self.covers(slot) {
            self.bytes
        } else if slot > self.fwd_slot && slot <= self.wgrad_slot {
            self.boundary_bytes
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationProfile {
    pub intervals: Vec<RetentionInterval>,
    pub peak_live: Vec<usize>,
    pub peak_bytes: Vec<u64>,
}

impl ActivationProfile {
    pub fn global_peak_bytes(&self) -> u64 {
        self.peak_bytes.iter().copied().max().unwrap_or(0)
    }
}

/// One interval per (microbatch, lane, stage) and per-worker live peaks.
pub fn activation_lifetimes(table: &ScheduleTable, model: &ModelConfig) -> Result<ActivationProfile> {
    ensure_valid(table)?;
    let m = model.microbatch_size(table.microbatches)?;
    let boundary = activation_bytes(model, m);
    let mut intervals = Vec::new();
    for mb in 0..table.microbatches {
        for hop in table.hops(mb) {
            let slot = table.placement.slot(hop.lane, hop.stage).expect("validated placement");
            let at = |p: Phase| table.find_slot(hop, p).expect("validated table");
            intervals.push(RetentionInterval {
                worker: slot.worker,
                hop,
                fwd_slot: at(Phase::Fwd),
                recomp_slot: table.recompute.then(|| at(Phase::Recomp)),
                wgrad_slot: at(Phase::Wgrad),
                bytes: stage_activation_bytes(model, slot.blocks, m),
                boundary_bytes: if table.recompute { boundary } else { 0 },
            });
        }
    }
    let mut peak_live = vec![0usize; table.workers()];
    let mut peak_bytes = vec![0u64; table.workers()];
    for w in 0..table.workers() {
        let mine: Vec<&RetentionInterval> = intervals.iter().filter(|i| i.worker == w).collect();
        for t in 0..table.slots() {
            let live = mine.iter().filter(|i| i.covers(t)).count();
            let bytes: u64 = mine.iter().map(|i| i.bytes_at(t)).sum();
            peak_live[w] = peak_live[w].max(live);
            peak_bytes[w] = peak_bytes[w].max(bytes);
        }
    }
    Ok(ActivationProfile { intervals, peak_live, peak_bytes })
}

fn ensure_valid(table: &ScheduleTable) -> Result<()> {
    let report = validate_table(table);
    if report.is_valid() {
        Ok(())
    } else {
        Err(Error::InvalidTable { count: report.violations.len(), summary: report.summary(3) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_schedule, BuildOptions, ScheduleKind, StagePlacement};

    fn build(kind: ScheduleKind, s: usize, b: usize) -> ScheduleTable {
        let p = StagePlacement::for_kind(kind, s, 128, 2).unwrap();
        build_schedule(kind, s, b, &p, BuildOptions::default()).unwrap()
    }

    /// Brute-force bubble oracle: count idle unit slots over the span.
    fn count_idle(t: &ScheduleTable) -> f64 {
        let span = t.slots() - 1; // drop the weight-0 Opt column
        let busy: usize = t.grid.iter().flatten().flatten().filter(|c| c.phase != Phase::Opt).count();
        1.0 - busy as f64 / (t.workers() * span) as f64
    }

    #[test]
    fn gpipe_eight_by_eight_is_seven_fifteenths() {
        let t = build(ScheduleKind::GPipe, 8, 8);
        let m = structural_metrics(&t).unwrap();
        assert!((m.bubble_ratio - 7.0 / 15.0).abs() < 1e-12);
        assert!((count_idle(&t) - 7.0 / 15.0).abs() < 1e-12);
        assert_eq!(m.schedule_length, 45.0);
        assert!((m.utilization + m.bubble_ratio - 1.0).abs() < 1e-15);
    }

    #[test]
    fn one_f_one_b_equals_gpipe() {
        for b in [8, 16, 32] {
            let g = structural_metrics(&build(ScheduleKind::GPipe, 8, b)).unwrap();
            let f = structural_metrics(&build(ScheduleKind::OneF1B, 8, b)).unwrap();
            assert_eq!(g.bubble_ratio, f.bubble_ratio);
        }
    }

    #[test]
    fn chimera_four_by_sixteen_near_thirteen_percent() {
        let m = structural_metrics(&build(ScheduleKind::Chimera, 4, 16)).unwrap();
        assert!((m.bubble_ratio - 0.13).abs() < 0.03, "{}", m.bubble_ratio);
    }

    #[test]
    fn leading_idle_can_be_excluded() {
        let t = build(ScheduleKind::GPipe, 4, 4);
        let full = structural_metrics(&t).unwrap();
        let own = structural_metrics_with(&t, IdleAccounting::FromFirstCell).unwrap();
        assert!(own.bubble_ratio < full.bubble_ratio);
        assert_eq!(own.per_worker_idle[0], full.per_worker_idle[0]);
    }

    #[test]
    fn live_counts_match_oracles() {
        let model = ModelConfig::default();
        let g = activation_lifetimes(&build(ScheduleKind::GPipe, 4, 8), &model).unwrap();
        assert_eq!(g.peak_live[0], 8);
        let f = activation_lifetimes(&build(ScheduleKind::OneF1B, 4, 8), &model).unwrap();
        assert_eq!(f.peak_live[0], 4);
    }

    #[test]
    fn gpipe_peak_bytes_invariant_to_microbatch_count() {
        let model = ModelConfig::default();
        let a = activation_lifetimes(&build(ScheduleKind::GPipe, 4, 8), &model).unwrap();
        let b = activation_lifetimes(&build(ScheduleKind::GPipe, 4, 256), &model).unwrap();
        assert_eq!(a.peak_bytes[0], b.peak_bytes[0]);
    }

    #[test]
    fn recompute_closes_interval_after_forward() {
        let p = StagePlacement::uniform(4, 128).unwrap();
        let opts = BuildOptions { recompute: true, waves: 2 };
        let t = build_schedule(ScheduleKind::GPipe, 4, 8, &p, opts).unwrap();
        let prof = activation_lifetimes(&t, &ModelConfig::default()).unwrap();
        assert!(prof.peak_live[0] < 8);
        let i = &prof.intervals[0];
        assert!(i.covers(i.fwd_slot) && !i.covers(i.fwd_slot + 1));
    }

    #[test]
    fn invalid_table_points_at_validation() {
        let mut t = build(ScheduleKind::GPipe, 2, 2);
        t.grid[0][0] = None;
        let e = structural_metrics(&t).unwrap_err();
        assert!(e.to_string().contains("validate_table"));
    }
}
