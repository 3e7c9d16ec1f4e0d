//! Table validity rules.

use std::collections::BTreeMap;
use std::fmt;

use super::{Hop, Phase, ScheduleTable};

/// Which validity rule a violation breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    /// A cell names a microbatch, lane or worker that does not fit the schedule.
    Placement,
    /// A required phase is missing or scheduled more than once.
    Completeness,
    /// Phases of one (microbatch, lane, stage) appear out of causal order.
    CausalOrder,
    /// A forward (or activation gradient) does not follow its upstream stage.
    CrossWorker,
    /// The optimizer step is missing, duplicated or precedes a Wgrad.
    Optimizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub worker: usize,
    /// `None` for missing cells.
    pub slot: Option<usize>,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slot {
            Some(t) => write!(f, "worker {} slot {}: {:?}: {}", self.worker, t, self.rule, self.detail),
            None => write!(f, "worker {}: {:?}: {}", self.worker, self.rule, self.detail),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn summary(&self, limit: usize) -> String {
        let mut parts: Vec<String> = self.violations.iter().take(limit).map(|v| v.to_string()).collect();
        if self.violations.len() > limit {
            parts.push(format!("... {} more", self.violations.len() - limit));
        }
        parts.join("; ")
    }
}

/// Checks every table invariant and reports all violations found.
pub fn validate_table(table: &ScheduleTable) -> ValidationReport {
    let mut out = Vec::new();
    let mut seen: BTreeMap<(Hop, Phase), Vec<(usize, usize)>> = BTreeMap::new();
    let mut opt_slots: Vec<Vec<usize>> = vec![Vec::new(); table.workers()];
    let mut last_wgrad: Vec<Option<usize>> = vec![None; table.workers()];

    for w in 0..table.workers() {
        for (t, cell) in table.row_cells(w) {
            let mut bad = |detail: String| {
                out.push(Violation { worker: w, slot: Some(t), rule: Rule::Placement, detail })
            };
            if cell.phase == Phase::Opt {
                opt_slots[w].push(t);
                continue;
            }
            if cell.microbatch as usize >= table.microbatches {
                bad(format!("microbatch {} out of range", cell.microbatch));
                continue;
            }
            if !table.route(cell.microbatch as usize).contains(&cell.lane) {
                bad(format!("microbatch {} never visits lane {}", cell.microbatch, cell.lane));
                continue;
            }
            let Some(stage) = table.placement.stage_on(cell.lane, w) else {
                bad(format!("worker hosts no stage of lane {}", cell.lane));
                continue;
            };
            if cell.phase == Phase::Recomp && !table.recompute {
                bad("recompute cell in a table built without recompute".into());
                continue;
            }
            if cell.phase == Phase::Wgrad {
                last_wgrad[w] = Some(last_wgrad[w].map_or(t, |x| x.max(t)));
            }
            let hop = Hop { microbatch: cell.microbatch, lane: cell.lane, stage };
            seen.entry((hop, cell.phase)).or_default().push((w, t));
        }
    }

    let mut required = vec![Phase::Fwd];
    required.extend_from_slice(table.backward_phases());
    let slot_of = |hop: Hop, phase: Phase| seen.get(&(hop, phase)).map(|v| v[0]);

    for mb in 0..table.microbatches {
        let hops = table.hops(mb);
        for hop in &hops {
            let host = table.placement.slot(hop.lane, hop.stage).map_or(0, |s| s.worker);
            for &phase in &required {
                match seen.get(&(*hop, phase)) {
                    None => out.push(Violation {
                        worker: host,
                        slot: None,
                        rule: Rule::Completeness,
                        detail: format!("missing {phase:?} of {}", describe(hop)),
                    }),
                    Some(locs) => {
                        for &(w, t) in &locs[1..] {
                            out.push(Violation {
                                worker: w,
                                slot: Some(t),
                                rule: Rule::Completeness,
                                detail: format!("duplicate {phase:?} of {}", describe(hop)),
                            });
                        }
                    }
                }
            }
            // causal order within the hop
            let present: Vec<(Phase, (usize, usize))> =
                required.iter().filter_map(|&p| slot_of(*hop, p).map(|s| (p, s))).collect();
            for pair in present.windows(2) {
                let ((pa, (_, ta)), (pb, (wb, tb))) = (pair[0], pair[1]);
                if tb <= ta {
                    out.push(Violation {
                        worker: wb,
                        slot: Some(tb),
                        rule: Rule::CausalOrder,
                        detail: format!("{pb:?} of {} at slot {tb} not after {pa:?} at slot {ta}", describe(hop)),
                    });
                }
            }
        }
        for pair in hops.windows(2) {
            let (up, down) = (pair[0], pair[1]);
            if let (Some((_, tu)), Some((wd, td))) = (slot_of(up, Phase::Fwd), slot_of(down, Phase::Fwd)) {
                if td <= tu {
                    out.push(Violation {
                        worker: wd,
                        slot: Some(td),
                        rule: Rule::CrossWorker,
                        detail: format!("Fwd of {} not after Fwd of {}", describe(&down), describe(&up)),
                    });
                }
            }
            if let (Some((wu, tu)), Some((_, td))) = (slot_of(up, Phase::Agrad), slot_of(down, Phase::Agrad)) {
                if tu <= td {
                    out.push(Violation {
                        worker: wu,
                        slot: Some(tu),
                        rule: Rule::CrossWorker,
                        detail: format!("Agrad of {} not after Agrad of {}", describe(&up), describe(&down)),
                    });
                }
            }
        }
    }

    for w in 0..table.workers() {
        let hosts_work = !table.placement.hosted(w).is_empty();
        match opt_slots[w].as_slice() {
            [] if hosts_work => out.push(Violation {
                worker: w,
                slot: None,
                rule: Rule::Optimizer,
                detail: "missing Opt".into(),
            }),
            [] => {}
            [t, rest @ ..] => {
                for &extra in rest {
                    out.push(Violation {
                        worker: w,
                        slot: Some(extra),
                        rule: Rule::Optimizer,
                        detail: "duplicate Opt".into(),
                    });
                }
                if let Some(lw) = last_wgrad[w] {
                    if *t <= lw {
                        out.push(Violation {
                            worker: w,
                            slot: Some(*t),
                            rule: Rule::Optimizer,
                            detail: format!("Opt precedes Wgrad at slot {lw}"),
                        });
                    }
                }
            }
        }
    }
    ValidationReport { violations: out }
}

fn describe(hop: &Hop) -> String {
    let Hop { microbatch, lane, stage } = hop;
    format!("mb {microbatch} lane {lane} stage {stage}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_schedule, BuildOptions, Cell, Lane, ScheduleKind, StagePlacement};

    fn gpipe(s: usize, b: usize) -> ScheduleTable {
        let p = StagePlacement::uniform(s, 128).unwrap();
        build_schedule(ScheduleKind::GPipe, s, b, &p, BuildOptions::default()).unwrap()
    }

    #[test]
    fn built_table_is_valid() {
        assert!(validate_table(&gpipe(4, 8)).is_valid());
    }

    #[test]
    fn agrad_before_fwd_names_the_cell() {
        // single-stage table so only the in-hop order rule can fire
        let p = StagePlacement::uniform(1, 4).unwrap();
        let mut t = ScheduleTable {
            kind: ScheduleKind::GPipe,
            stages: 1,
            microbatches: 1,
            waves: 1,
            recompute: false,
            placement: p,
            slot_weights: Default::default(),
            grid: vec![vec![None; 8]],
        };
        t.grid[0][3] = Some(Cell::new(0, Lane::DOWN, Phase::Agrad));
        t.grid[0][5] = Some(Cell::new(0, Lane::DOWN, Phase::Fwd));
        t.grid[0][6] = Some(Cell::new(0, Lane::DOWN, Phase::Wgrad));
        t.grid[0][7] = Some(Cell::opt());
        let r = validate_table(&t);
        let v = r.violations.iter().find(|v| v.rule == Rule::CausalOrder).expect("causal violation");
        assert_eq!((v.worker, v.slot), (0, Some(3)));
        assert!(v.detail.contains("mb 0"));
    }

    #[test]
    fn missing_wgrad_is_a_completeness_violation() {
        let mut t = gpipe(4, 8);
        let slot = t
            .row_cells(1)
            .find(|(_, c)| c.phase == Phase::Wgrad && c.microbatch == 2)
            .map(|(s, _)| s)
            .unwrap();
        t.grid[1][slot] = None;
        let r = validate_table(&t);
        assert_eq!(r.violations.len(), 1);
        let v = &r.violations[0];
        assert_eq!(v.rule, Rule::Completeness);
        assert_eq!(v.worker, 1);
        assert!(v.detail.contains("Wgrad of mb 2 lane D stage 1"));
    }

    #[test]
    fn cross_worker_order_is_checked() {
        let mut t = gpipe(2, 1);
        // move stage-1 forward to slot 0, before stage-0 forward completes
        let s = t.row_cells(1).find(|(_, c)| c.phase == Phase::Fwd).unwrap().0;
        let cell = t.grid[1][s].take();
        t.grid[1][0] = cell;
        let r = validate_table(&t);
        assert!(r.violations.iter().any(|v| v.rule == Rule::CrossWorker));
    }

    #[test]
    fn duplicate_and_misplaced_opt() {
        let mut t = gpipe(2, 2);
        t.grid[0][0] = Some(Cell::opt());
        let r = validate_table(&t);
        assert!(r.violations.iter().any(|v| v.rule == Rule::Optimizer));
    }
}
