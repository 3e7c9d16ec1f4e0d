//! Dataset CSV files for plotting, built from cell records.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{
    build_regimes, compare_report, run_cells, write_cells_csv, CellRecord, CompareMode, CompareReport, Config,
    Dataset, ScheduleSpec, Speed, SweepSpec,
};
use crate::error::Result;
use crate::execgraph::GraphOptions;
use crate::schedule::ScheduleKind;

const UNIDIRECTIONAL_AND_CHIMERA: [ScheduleKind; 3] = [ScheduleKind::GPipe, ScheduleKind::OneF1B, ScheduleKind::Chimera];
const TIB: f64 = (1u64 << 40) as f64;

/// Regime columns of the timeline and unbalanced datasets: network-bound,
/// baseline and compute-bound.
const COLUMN_REGIMES: [(&str, Speed, Speed); 3] =
    [("slow", Speed::Slow, Speed::Fast), ("mid", Speed::Mid, Speed::Mid), ("fast", Speed::Fast, Speed::Slow)];

type Lookup<'a> = HashMap<(&'a str, usize, usize, &'a str), &'a CellRecord>;

fn index(records: &[CellRecord]) -> Lookup<'_> {
    records
        .iter()
        .map(|r| ((r.schedule.as_str(), r.stages, r.microbatches, r.regime.as_str()), r))
        .collect()
}

fn field(v: Option<f64>, precision: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.precision$}"),
        _ => String::new(),
    }
}

fn pct(v: Option<f64>) -> String {
    field(v.map(|x| 100.0 * x), 4)
}

/// `B,gpipe_formula,gpipe_table,…` in percent at one stage count.
pub fn formula_comparison_csv(records: &[CellRecord], stages: usize, microbatches: &[usize], regime: &str) -> String {
    let idx = index(records);
    let mut out = String::from("B,gpipe_formula,gpipe_table,onef1b_formula,onef1b_table,chimera_formula,chimera_table\n");
    for &b in microbatches {
        let _ = write!(out, "{b}");
        for k in UNIDIRECTIONAL_AND_CHIMERA {
            let r = idx.get(&(k.name(), stages, b, regime));
            let _ = write!(
                out,
                ",{},{}",
                pct(r.and_then(|r| r.formula_bubble)),
                pct(r.and_then(|r| r.table_bubble))
            );
        }
        out.push('\n');
    }
    out
}

/// Bubble (β_idle, percent) and runtime (seconds) tables with one column per
/// regime and schedule.
pub fn timeline_comparison_csvs(
    records: &[CellRecord],
    stages: usize,
    microbatches: &[usize],
    regimes: &[(&str, &str)],
) -> (String, String) {
    let idx = index(records);
    let mut header = String::from("B");
    for (col, _) in regimes {
        for k in UNIDIRECTIONAL_AND_CHIMERA {
            let _ = write!(header, ",{col}_{}", k.name());
        }
    }
    header.push('\n');
    let (mut bubble, mut runtime) = (header.clone(), header);
    for &b in microbatches {
        let _ = write!(bubble, "{b}");
        let _ = write!(runtime, "{b}");
        for (_, regime) in regimes {
            for k in UNIDIRECTIONAL_AND_CHIMERA {
                let r = idx.get(&(k.name(), stages, b, *regime));
                let _ = write!(bubble, ",{}", pct(r.and_then(|r| r.beta_idle)));
                let _ = write!(runtime, ",{}", field(r.and_then(|r| r.t_sim), 6));
            }
        }
        bubble.push('\n');
        runtime.push('\n');
    }
    (bubble, runtime)
}

/// Global peak activation memory in TiB, one column per schedule and S.
pub fn memory_csv(records: &[CellRecord], stages: &[usize], microbatches: &[usize], regime: &str) -> String {
    let idx = index(records);
    let mut out = String::from("B");
    for &s in stages {
        for k in UNIDIRECTIONAL_AND_CHIMERA {
            let _ = write!(out, ",{}_s{s}", k.name());
        }
    }
    out.push('\n');
    for &b in microbatches {
        let _ = write!(out, "{b}");
        for &s in stages {
            for k in UNIDIRECTIONAL_AND_CHIMERA {
                let v = idx.get(&(k.name(), s, b, regime)).and_then(|r| r.peak_activation_bytes);
                let _ = write!(out, ",{}", field(v.map(|x| x as f64 / TIB), 6));
            }
        }
        out.push('\n');
    }
    out
}

/// Relative runtime of asymmetric versus balanced Chimera in percent.
pub fn unbalanced_runtime_csv(
    report: &CompareReport,
    stages: &[usize],
    microbatches: &[usize],
    regimes: &[(&str, &str)],
) -> String {
    let lookup: HashMap<(usize, usize, &str), f64> = report
        .rows
        .iter()
        .map(|r| ((r.stages, r.microbatches, r.regime.as_str()), r.delta_t_pct))
        .collect();
    let mut out = String::from("B");
    for (col, _) in regimes {
        for &s in stages {
            let _ = write!(out, ",{col}_s{s}_pct");
        }
    }
    out.push('\n');
    for &b in microbatches {
        let _ = write!(out, "{b}");
        for (_, regime) in regimes {
            for &s in stages {
                let _ = write!(out, ",{}", field(lookup.get(&(s, b, *regime)).copied(), 4));
            }
        }
        out.push('\n');
    }
    out
}

/// `system,beta_c,beta_h,t_c,t_h,delta_t_pct` in grid order.
pub fn hanayo_table_csv(report: &CompareReport) -> String {
    let mut out = String::from("system,beta_c,beta_h,t_c,t_h,delta_t_pct\n");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{:.6},{:.6},{:.4}",
            r.regime,
            100.0 * r.beta_ref,
            100.0 * r.beta_alt,
            r.t_ref,
            r.t_alt,
            r.delta_t_pct
        );
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutputs {
    pub files: Vec<PathBuf>,
    pub records: Vec<CellRecord>,
    /// Cells that failed, as `schedule S B regime: reason`.
    pub failures: Vec<String>,
}

fn write(dir: &Path, name: &str, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let p = dir.join(name);
    std::fs::write(&p, text)?;
    files.push(p);
    Ok(())
}

/// Runs every dataset selected in the config and writes its CSV files plus
/// `sweep_cells.csv` (every evaluated cell, including failures) into `out`.
pub fn run_sweep(cfg: &Config, out: &Path) -> Result<SweepOutputs> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let sw = &cfg.sweep;
    let grid = build_regimes(&cfg.system, sw.factor)?;
    let baseline = grid.at(Speed::Mid, Speed::Mid).name.clone();
    let column_regimes: Vec<(&str, String)> =
        COLUMN_REGIMES.iter().map(|(c, n, k)| (*c, grid.at(*n, *k).name.clone())).collect();
    let column_refs: Vec<(&str, &str)> = column_regimes.iter().map(|(c, n)| (*c, n.as_str())).collect();
    let base_specs: Vec<ScheduleSpec> = UNIDIRECTIONAL_AND_CHIMERA.iter().map(|&k| ScheduleSpec::new(k)).collect();
    let spec = |schedules: Vec<ScheduleSpec>, stages: Vec<usize>, microbatches: Vec<usize>, regimes: Vec<&str>| {
        let model = cfg.model.clone();
        grid.subset(&regimes).map(|regimes| SweepSpec {
            schedules,
            stages,
            microbatches,
            model,
            regimes,
            graph: GraphOptions::default(),
        })
    };

    let mut outputs = SweepOutputs::default();
    let mut all: Vec<CellRecord> = Vec::new();
    let selected = |d: Dataset| sw.datasets.contains(&d);

    if selected(Dataset::FormulaComparison) || selected(Dataset::TimelineComparison) {
        let regimes: Vec<&str> = column_refs.iter().map(|(_, n)| *n).collect();
        let s = spec(base_specs.clone(), vec![sw.comparison_stages], sw.microbatches.clone(), regimes)?;
        let recs = run_cells(&s);
        if selected(Dataset::FormulaComparison) {
            let text = formula_comparison_csv(&recs, sw.comparison_stages, &sw.microbatches, &baseline);
            write(out, "formula_comparison.csv", &text, &mut outputs.files)?;
        }
        if selected(Dataset::TimelineComparison) {
            let (bubble, runtime) = timeline_comparison_csvs(&recs, sw.comparison_stages, &sw.microbatches, &column_refs);
            write(out, "timeline_comparison_bubble.csv", &bubble, &mut outputs.files)?;
            write(out, "timeline_comparison_runtime.csv", &runtime, &mut outputs.files)?;
        }
        all.extend(recs);
    }
    if selected(Dataset::Memory) {
        let s = spec(base_specs.clone(), sw.stages.clone(), sw.microbatches.clone(), vec![baseline.as_str()])?;
        let recs = run_cells(&s);
        write(out, "memory.csv", &memory_csv(&recs, &sw.stages, &sw.microbatches, &baseline), &mut outputs.files)?;
        all.extend(recs);
    }
    if selected(Dataset::UnbalancedRuntime) {
        let regimes: Vec<&str> = column_refs.iter().map(|(_, n)| *n).collect();
        let mut s = spec(
            vec![ScheduleSpec::new(ScheduleKind::Chimera), ScheduleSpec::asymmetric_chimera()],
            sw.stages.clone(),
            sw.microbatches.clone(),
            regimes,
        )?;
        s.model.blocks = sw.asymmetric_blocks;
        let recs = run_cells(&s);
        let report = compare_report(&recs, CompareMode::AsymVsSym);
        // fast network first, as in the column schema
        let cols: Vec<(&str, &str)> = column_refs.iter().rev().copied().collect();
        let text = unbalanced_runtime_csv(&report, &sw.stages, &sw.microbatches, &cols);
        write(out, "unbalanced_runtime.csv", &text, &mut outputs.files)?;
        all.extend(recs);
    }
    if selected(Dataset::HanayoTable) {
        let p = sw.hanayo_point;
        let sched = |k| ScheduleSpec { waves: sw.hanayo_waves, ..ScheduleSpec::new(k) };
        let s = spec(
            vec![sched(ScheduleKind::Chimera), sched(ScheduleKind::Hanayo)],
            vec![p],
            vec![p],
            grid.names(),
        )?;
        let recs = run_cells(&s);
        let report = compare_report(&recs, CompareMode::HanayoVsChimera);
        write(out, "hanayo_table.csv", &hanayo_table_csv(&report), &mut outputs.files)?;
        all.extend(recs);
    }

    outputs.failures = all
        .iter()
        .filter_map(|r| {
            r.error.as_ref().map(|e| format!("{} S={} B={} {}: {e}", r.schedule, r.stages, r.microbatches, r.regime))
        })
        .collect();
    let cells = out.join("sweep_cells.csv");
    write_cells_csv(&all, &cells)?;
    outputs.files.push(cells);
    outputs.records = all;
    Ok(outputs)
}
