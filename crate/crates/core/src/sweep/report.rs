//! Side-by-side runtime comparisons of two schedules over shared cells.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::CellRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareMode {
    /// Hanayo against Chimera on the same (S, B, regime).
    HanayoVsChimera,
    /// Asymmetric against balanced Chimera on the same (S, B, regime).
    AsymVsSym,
}

impl CompareMode {
    fn labels(self) -> (&'static str, &'static str) {
        match self {
            CompareMode::HanayoVsChimera => ("chimera", "hanayo"),
            CompareMode::AsymVsSym => ("chimera", "chimera_asym"),
        }
    }
}

impl std::str::FromStr for CompareMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "hanayo_vs_chimera" => Ok(CompareMode::HanayoVsChimera),
            "asym_vs_sym" => Ok(CompareMode::AsymVsSym),
            other => Err(crate::Error::Config(format!(
                "unknown report mode `{other}` (expected hanayo_vs_chimera or asym_vs_sym)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub stages: usize,
    pub microbatches: usize,
    pub regime: String,
    pub beta_ref: f64,
    pub beta_alt: f64,
    pub t_ref: f64,
    pub t_alt: f64,
    /// `100·(T_alt − T_ref)/T_ref`; negative means the alternative is faster.
    pub delta_t_pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    /// Cells present for one side only, or present but failed.
    pub missing: Vec<String>,
}

pub fn delta_t_pct(t_ref: f64, t_alt: f64) -> f64 {
    100.0 * (t_alt - t_ref) / t_ref
}

type Group = (usize, usize, u32);
type Key = (Group, String);

struct Side {
    ok: BTreeMap<Key, (usize, f64, f64)>,
    failed: BTreeMap<Key, String>,
    groups: BTreeSet<Group>,
}

/// Splits one schedule's records into successful and failed cells. The first
/// record of a duplicated key wins.
fn side(records: &[CellRecord], label: &str) -> Side {
    let mut out = Side { ok: BTreeMap::new(), failed: BTreeMap::new(), groups: BTreeSet::new() };
    for (i, r) in records.iter().enumerate().filter(|(_, r)| r.schedule == label) {
        let group = (r.stages, r.microbatches, r.blocks);
        out.groups.insert(group);
        let key = (group, r.regime.clone());
        if out.ok.contains_key(&key) || out.failed.contains_key(&key) {
            continue;
        }
        match (r.t_sim, r.beta_idle, &r.error) {
            (Some(t), Some(b), None) => {
                out.ok.insert(key, (i, t, b));
            }
            (_, _, e) => {
                out.failed.insert(key, e.clone().unwrap_or_else(|| "no metrics".into()));
            }
        }
    }
    out
}

fn describe(label: &str, key: &Key, why: &str) -> String {
    let ((s, b, n), regime) = key;
    format!("{label} S={s} B={b} N={n} {regime}: {why}")
}

/// Pairs reference and alternative cells with equal (S, B, block count,
/// regime). Only shapes that both schedules were run on are compared; within
/// them every unpaired or failed cell is listed as missing. Rows follow the
/// order of the alternative schedule's cells in `records`.
pub fn compare_report(records: &[CellRecord], mode: CompareMode) -> CompareReport {
    let (ref_label, alt_label) = mode.labels();
    let (refs, alts) = (side(records, ref_label), side(records, alt_label));
    let shared: BTreeSet<Group> = refs.groups.intersection(&alts.groups).copied().collect();
    let mut report = CompareReport::default();
    let mut ordered: Vec<(&Key, &(usize, f64, f64))> = refs.ok.iter().filter(|(k, _)| shared.contains(&k.0)).collect();
    ordered.sort_by_key(|(k, v)| (alts.ok.get(*k).map_or(usize::MAX, |a| a.0), v.0));
    for (key, &(_, t_ref, beta_ref)) in ordered {
        let Some(&(_, t_alt, beta_alt)) = alts.ok.get(key) else {
            let why = alts.failed.get(key).map_or("absent".to_string(), |e| format!("failed: {e}"));
            report.missing.push(describe(alt_label, key, &why));
            continue;
        };
        let ((stages, microbatches, _), regime) = key;
        report.rows.push(CompareRow {
            stages: *stages,
            microbatches: *microbatches,
            regime: regime.clone(),
            beta_ref,
            beta_alt,
            t_ref,
            t_alt,
            delta_t_pct: delta_t_pct(t_ref, t_alt),
        });
    }
    for key in alts.ok.keys().filter(|k| shared.contains(&k.0) && !refs.ok.contains_key(*k)) {
        let why = refs.failed.get(key).map_or("absent".to_string(), |e| format!("failed: {e}"));
        report.missing.push(describe(ref_label, key, &why));
    }
    for (label, this, other) in [(ref_label, &refs, &alts), (alt_label, &alts, &refs)] {
        for (key, e) in this.failed.iter().filter(|(k, _)| shared.contains(&k.0) && !other.ok.contains_key(*k)) {
            report.missing.push(describe(label, key, &format!("failed: {e}")));
        }
    }
    report
}

impl CompareReport {
    /// Fixed-width text table, one line per paired cell, then missing cells.
    pub fn text(&self, mode: CompareMode) -> String {
        let (r, a) = mode.labels();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<18} {:>3} {:>4} {:>10} {:>10} {:>12} {:>12} {:>9}",
            "system",
            "S",
            "B",
            format!("beta_{}", short(r)),
            format!("beta_{}", short(a)),
            format!("t_{}[s]", short(r)),
            format!("t_{}[s]", short(a)),
            "dT[%]"
        );
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{:<18} {:>3} {:>4} {:>10.2} {:>10.2} {:>12.4} {:>12.4} {:>9.2}",
                row.regime,
                row.stages,
                row.microbatches,
                100.0 * row.beta_ref,
                100.0 * row.beta_alt,
                row.t_ref,
                row.t_alt,
                row.delta_t_pct
            );
        }
        for m in &self.missing {
            let _ = writeln!(out, "missing: {m}");
        }
        out
    }
}

fn short(label: &str) -> &str {
    match label {
        "chimera" => "c",
        "hanayo" => "h",
        "chimera_asym" => "asym",
        other => other,
    }
}
