//! Parameter sweeps over schedules, pipeline shapes and system regimes.
//!
//! A sweep evaluates every (schedule, S, B) group once up to the execution
//! graph, then simulates it under each requested regime. Groups run in
//! parallel; rows are sorted afterwards so output never depends on thread
//! timing.

mod config;
mod datasets;
mod regimes;
mod report;

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::formula_bubble_ratio;
use crate::costmodel::{ModelConfig, SystemConfig};
use crate::error::{Error, Result};
use crate::execgraph::{build_exec_graph, check_graph, ExecGraph, GraphOptions};
use crate::schedule::{
    build_schedule, structural_metrics, BuildOptions, ScheduleKind, ScheduleTable, StagePlacement, StructuralMetrics,
};
use crate::simulator::{memory_timeline, simulate, timeline_metrics, MemoryTimeline, SimMetrics, Timeline};

pub use config::{Config, Dataset, SweepSection};
pub use datasets::{
    formula_comparison_csv, hanayo_table_csv, memory_csv, run_sweep, timeline_comparison_csvs, unbalanced_runtime_csv,
    SweepOutputs,
};
pub use regimes::{build_regimes, regime_name, Regime, RegimeGrid, Speed, BASELINE_NAME};
pub use report::{compare_report, CompareMode, CompareReport, CompareRow};

/// Which stage placement a schedule runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum PlacementVariant {
    /// Equal blocks per stage (per chunk for Hanayo).
    #[default]
    Balanced,
    /// Chimera with the 1:2 stage split; Down and Up mirror each other.
    Asymmetric,
}

/// A schedule family plus the switches that change its table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub placement: PlacementVariant,
    pub recompute: bool,
    pub waves: usize,
}

impl ScheduleSpec {
    pub fn new(kind: ScheduleKind) -> Self {
        ScheduleSpec { kind, placement: PlacementVariant::Balanced, recompute: false, waves: 2 }
    }

    pub fn asymmetric_chimera() -> Self {
        ScheduleSpec { placement: PlacementVariant::Asymmetric, ..ScheduleSpec::new(ScheduleKind::Chimera) }
    }

    /// Row label, e.g. `chimera` or `chimera_asym`.
    pub fn label(&self) -> String {
        let mut s = self.kind.name().to_string();
        if self.placement == PlacementVariant::Asymmetric {
            s.push_str("_asym");
        }
        if self.recompute {
            s.push_str("_recompute");
        }
        s
    }

    pub fn placement_for(&self, stages: usize, blocks: u32) -> Result<StagePlacement> {
        match self.placement {
            PlacementVariant::Balanced => StagePlacement::for_kind(self.kind, stages, blocks, self.waves),
            PlacementVariant::Asymmetric if self.kind == ScheduleKind::Chimera => {
                StagePlacement::chimera_asymmetric(stages, blocks)
            }
            PlacementVariant::Asymmetric => {
                Err(Error::Precondition(format!("asymmetric placement is defined for chimera only, not {}", self.kind)))
            }
        }
    }
}

impl fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Every schedule on every (S, B) pair, simulated under every regime.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub schedules: Vec<ScheduleSpec>,
    pub stages: Vec<usize>,
    pub microbatches: Vec<usize>,
    pub model: ModelConfig,
    pub regimes: Vec<Regime>,
    pub graph: GraphOptions,
}

impl SweepSpec {
    /// (schedule, S, B) groups in output order. Hanayo only runs where S = B.
    pub fn groups(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (i, sched) in self.schedules.iter().enumerate() {
            for &s in &self.stages {
                for &b in &self.microbatches {
                    if sched.kind == ScheduleKind::Hanayo && s != b {
                        continue;
                    }
                    out.push((i, s, b));
                }
            }
        }
        out
    }
}

/// One (schedule, S, B, regime) result. Metric fields are absent when the
/// cell failed; `error` then carries the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub schedule: String,
    pub stages: usize,
    pub microbatches: usize,
    pub regime: String,
    pub blocks: u32,
    pub formula_bubble: Option<f64>,
    pub table_bubble: Option<f64>,
    pub t_sim: Option<f64>,
    pub beta_idle: Option<f64>,
    pub peak_activation_bytes: Option<u64>,
    pub worker0_peak_activation_bytes: Option<u64>,
    pub peak_total_bytes: Option<u64>,
    pub error: Option<String>,
}

impl CellRecord {
    fn failed(sched: &ScheduleSpec, s: usize, b: usize, regime: &str, blocks: u32, err: &Error) -> Self {
        CellRecord {
            schedule: sched.label(),
            stages: s,
            microbatches: b,
            regime: regime.to_string(),
            blocks,
            formula_bubble: None,
            table_bubble: None,
            t_sim: None,
            beta_idle: None,
            peak_activation_bytes: None,
            worker0_peak_activation_bytes: None,
            peak_total_bytes: None,
            error: Some(err.to_string()),
        }
    }
}

/// Regime-independent artefacts of one (schedule, S, B) group.
#[derive(Debug, Clone)]
pub struct PreparedCell {
    pub table: ScheduleTable,
    pub metrics: StructuralMetrics,
    pub formula: Option<f64>,
    pub graph: ExecGraph,
}

/// Builds, validates and lowers one schedule.
pub fn prepare_cell(
    sched: &ScheduleSpec,
    stages: usize,
    microbatches: usize,
    model: &ModelConfig,
    graph_opts: GraphOptions,
) -> Result<PreparedCell> {
    model.microbatch_size(microbatches)?;
    let placement = sched.placement_for(stages, model.blocks)?;
    let opts = BuildOptions { recompute: sched.recompute, waves: sched.waves };
    let table = build_schedule(sched.kind, stages, microbatches, &placement, opts)?;
    let metrics = structural_metrics(&table)?;
    let formula = match (sched.kind, sched.placement) {
        (ScheduleKind::Hanayo, _) | (_, PlacementVariant::Asymmetric) => None,
        (kind, PlacementVariant::Balanced) => formula_bubble_ratio(kind, stages, microbatches).ok().map(|f| f.bubble_ratio),
    };
    let graph = build_exec_graph(&table, model, graph_opts)?;
    let report = check_graph(&graph);
    if let Some(v) = report.violations.first() {
        return Err(Error::Precondition(format!("graph check failed: {v}")));
    }
    Ok(PreparedCell { table, metrics, formula, graph })
}

/// Simulation outputs of one prepared cell under one system.
#[derive(Debug, Clone)]
pub struct SimulatedCell {
    pub timeline: Timeline,
    pub metrics: SimMetrics,
    pub memory: MemoryTimeline,
}

pub fn simulate_cell(prepared: &PreparedCell, model: &ModelConfig, sys: &SystemConfig) -> Result<SimulatedCell> {
    let timeline = simulate(&prepared.graph, sys)?;
    let metrics = timeline_metrics(&timeline);
    let memory = memory_timeline(&timeline, &prepared.graph, model, model.optimizer_multiplier);
    Ok(SimulatedCell { timeline, metrics, memory })
}

fn run_group(spec: &SweepSpec, idx: usize, s: usize, b: usize) -> Vec<CellRecord> {
    let sched = &spec.schedules[idx];
    let blocks = spec.model.blocks;
    let prepared = match prepare_cell(sched, s, b, &spec.model, spec.graph) {
        Ok(p) => p,
        Err(e) => return spec.regimes.iter().map(|r| CellRecord::failed(sched, s, b, &r.name, blocks, &e)).collect(),
    };
    spec.regimes
        .iter()
        .map(|r| match simulate_cell(&prepared, &spec.model, &r.system) {
            Ok(sim) => CellRecord {
                schedule: sched.label(),
                stages: s,
                microbatches: b,
                regime: r.name.clone(),
                blocks,
                formula_bubble: prepared.formula,
                table_bubble: Some(prepared.metrics.bubble_ratio),
                t_sim: Some(sim.metrics.t_sim),
                beta_idle: Some(sim.metrics.beta_idle),
                peak_activation_bytes: Some(sim.memory.peak_activation()),
                worker0_peak_activation_bytes: sim.memory.workers.first().map(|w| w.peak_activation),
                peak_total_bytes: Some(sim.memory.peak_total()),
                error: None,
            },
            Err(e) => CellRecord::failed(sched, s, b, &r.name, blocks, &e),
        })
        .collect()
}

/// Evaluates every cell. Failures are recorded per cell and do not stop the
/// sweep. Rows come out ordered by (schedule, S, B, regime) as listed in the
/// spec.
pub fn run_cells(spec: &SweepSpec) -> Vec<CellRecord> {
    let groups = spec.groups();
    let mut rows: Vec<(usize, Vec<CellRecord>)> = groups
        .par_iter()
        .enumerate()
        .map(|(i, &(idx, s, b))| (i, run_group(spec, idx, s, b)))
        .collect();
    rows.sort_by_key(|(i, _)| *i);
    rows.into_iter().flat_map(|(_, r)| r).collect()
}

/// Writes records as CSV with a header; floats use their shortest exact form.
pub fn write_cells_csv(records: &[CellRecord], path: &Path) -> Result<()> {
    std::fs::write(path, cells_to_csv(records)?)?;
    Ok(())
}

pub fn cells_to_csv(records: &[CellRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(CELL_HEADER)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

const CELL_HEADER: [&str; 13] = [
    "schedule",
    "stages",
    "microbatches",
    "regime",
    "blocks",
    "formula_bubble",
    "table_bubble",
    "t_sim",
    "beta_idle",
    "peak_activation_bytes",
    "worker0_peak_activation_bytes",
    "peak_total_bytes",
    "error",
];

pub fn read_cells_csv(path: &Path) -> Result<Vec<CellRecord>> {
    let text = std::fs::read_to_string(path)?;
    cells_from_csv(&text)
}

pub fn cells_from_csv(text: &str) -> Result<Vec<CellRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        out.push(rec.map_err(|e: csv::Error| Error::Parse { line: i + 2, msg: e.to_string() })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SweepSpec {
        let grid = build_regimes(&SystemConfig::baseline(), 10.0).unwrap();
        SweepSpec {
            schedules: vec![
                ScheduleSpec::new(ScheduleKind::GPipe),
                ScheduleSpec::new(ScheduleKind::Chimera),
                ScheduleSpec::new(ScheduleKind::Hanayo),
            ],
            stages: vec![4],
            microbatches: vec![4, 8],
            model: ModelConfig::default(),
            regimes: grid.subset(&["baseline", "slow_nw_fast_cp"]).unwrap(),
            graph: GraphOptions::default(),
        }
    }

    #[test]
    fn hanayo_is_restricted_to_square_shapes() {
        let spec = small_spec();
        let groups = spec.groups();
        assert_eq!(groups.len(), 2 + 2 + 1);
        assert!(groups.contains(&(2, 4, 4)));
    }

    #[test]
    fn rows_are_ordered_and_complete() {
        let spec = small_spec();
        let rows = run_cells(&spec);
        assert_eq!(rows.len(), 5 * 2);
        assert!(rows.iter().all(|r| r.error.is_none()), "{rows:?}");
        assert_eq!((rows[0].schedule.as_str(), rows[0].microbatches), ("gpipe", 4));
        assert_eq!(rows[0].regime, "baseline");
        assert_eq!(rows[1].regime, "slow_nw_fast_cp");
        assert_eq!(rows.last().unwrap().schedule, "hanayo");
    }

    #[test]
    fn failures_are_recorded_per_cell() {
        let mut spec = small_spec();
        spec.microbatches = vec![3];
        spec.schedules.truncate(2);
        let rows = run_cells(&spec);
        assert_eq!(rows.len(), 4);
        for r in &rows {
            let e = r.error.as_deref().unwrap();
            assert!(e.contains("divisible") || e.contains("even"), "{e}");
            assert!(r.t_sim.is_none());
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = run_cells(&small_spec());
        let text = cells_to_csv(&rows).unwrap();
        assert_eq!(cells_from_csv(&text).unwrap(), rows);
        assert!(text.starts_with(&CELL_HEADER.join(",")));
        assert_eq!(cells_from_csv(&cells_to_csv(&[]).unwrap()).unwrap(), vec![]);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let a = cells_to_csv(&run_cells(&small_spec())).unwrap();
        let b = cells_to_csv(&run_cells(&small_spec())).unwrap();
        assert_eq!(a, b);
    }
}
