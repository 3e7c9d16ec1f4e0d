//! Tabular schedule abstraction.
//!
//! A [`ScheduleTable`] is a W×T grid where each worker/slot holds at most one
//! [`Cell`]. Tables are produced by [`build_schedule`], checked by
//! [`validate_table`] and summarized by [`structural_metrics`] and
//! [`activation_lifetimes`].

mod build;
mod metrics;
mod placement;
mod render;
mod validate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use build::{build_schedule, BuildOptions};
pub use metrics::{
    activation_lifetimes, structural_metrics, structural_metrics_with, ActivationProfile,
    IdleAccounting, RetentionInterval, StructuralMetrics,
};
pub use placement::{StagePlacement, StageSlot};
pub use render::{parse_table_csv, render_table, TableFormat};
pub use validate::{validate_table, Rule, ValidationReport, Violation};

/// Work performed in one table cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Fwd,
    Agrad,
    Wgrad,
    Opt,
    Recomp,
}

impl Phase {
    pub const ALL: [Phase; 5] = [Phase::Fwd, Phase::Agrad, Phase::Wgrad, Phase::Opt, Phase::Recomp];

    pub fn letter(self) -> char {
        match self {
            Phase::Fwd => 'F',
            Phase::Agrad => 'A',
            Phase::Wgrad => 'W',
            Phase::Opt => 'O',
            Phase::Recomp => 'R',
        }
    }

    pub fn from_letter(c: char) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.letter() == c)
    }
}

/// Direction a pipeline pass flows through the workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    Down,
    Up,
}

impl Branch {
    pub fn letter(self) -> char {
        match self {
            Branch::Down => 'D',
            Branch::Up => 'U',
        }
    }
}

/// One pipeline pass: a branch plus a wave index.
///
/// GPipe, 1F1B and Chimera only use wave 0. Hanayo microbatches traverse
/// `Down0, Up0, Down1, Up1, ...` in sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Lane {
    pub branch: Branch,
    pub wave: u8,
}

impl Lane {
    pub const DOWN: Lane = Lane { branch: Branch::Down, wave: 0 };
    pub const UP: Lane = Lane { branch: Branch::Up, wave: 0 };

    pub fn new(branch: Branch, wave: u8) -> Self {
        Lane { branch, wave }
    }
}

impl fmt::Display for Lane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.branch.letter())?;
        if self.wave > 0 {
            write!(f, "{}", self.wave)?;
        }
        Ok(())
    }
}

impl FromStr for Lane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        let branch = match chars.next() {
            Some('D') => Branch::Down,
            Some('U') => Branch::Up,
            _ => return Err(Error::Config(format!("bad branch `{s}`"))),
        };
        let rest = chars.as_str();
        let wave = if rest.is_empty() {
            0
        } else {
            rest.parse().map_err(|_| Error::Config(format!("bad wave in `{s}`")))?
        };
        Ok(Lane { branch, wave })
    }
}

/// Content of an occupied slot. Opt cells carry microbatch 0 on the Down lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub microbatch: u32,
    pub lane: Lane,
    pub phase: Phase,
}

impl Cell {
    pub fn new(microbatch: u32, lane: Lane, phase: Phase) -> Self {
        Cell { microbatch, lane, phase }
    }

    pub fn opt() -> Self {
        Cell { microbatch: 0, lane: Lane::DOWN, phase: Phase::Opt }
    }
}

/// Schedule family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    GPipe,
    OneF1B,
    Chimera,
    Hanayo,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 4] =
        [ScheduleKind::GPipe, ScheduleKind::OneF1B, ScheduleKind::Chimera, ScheduleKind::Hanayo];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::GPipe => "gpipe",
            ScheduleKind::OneF1B => "onef1b",
            ScheduleKind::Chimera => "chimera",
            ScheduleKind::Hanayo => "hanayo",
        }
    }

    /// Whether cells of this family can sit on more than one lane.
    pub fn is_bidirectional(self) -> bool {
        matches!(self, ScheduleKind::Chimera | ScheduleKind::Hanayo)
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gpipe" => Ok(ScheduleKind::GPipe),
            "onef1b" | "1f1b" => Ok(ScheduleKind::OneF1B),
            "chimera" => Ok(ScheduleKind::Chimera),
            "hanayo" => Ok(ScheduleKind::Hanayo),
            other => Err(Error::Config(format!("unknown schedule kind `{other}`"))),
        }
    }
}

/// Relative duration of each phase in multiples of one forward slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotWeights {
    pub fwd: f64,
    pub agrad: f64,
    pub wgrad: f64,
    pub opt: f64,
    pub recomp: f64,
}

impl Default for SlotWeights {
    fn default() -> Self {
        SlotWeights { fwd: 1.0, agrad: 1.0, wgrad: 1.0, opt: 0.0, recomp: 1.0 }
    }
}

impl SlotWeights {
    pub fn of(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Fwd => self.fwd,
            Phase::Agrad => self.agrad,
            Phase::Wgrad => self.wgrad,
            Phase::Opt => self.opt,
            Phase::Recomp => self.recomp,
        }
    }
}

/// A (microbatch, lane, stage) position along a microbatch's route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Hop {
    pub microbatch: u32,
    pub lane: Lane,
    pub stage: usize,
}

/// The ordered lanes a microbatch traverses for a given schedule family.
pub fn route(kind: ScheduleKind, waves: usize, microbatches: usize, mb: usize) -> Vec<Lane> {
    match kind {
        ScheduleKind::GPipe | ScheduleKind::OneF1B => vec![Lane::DOWN],
        ScheduleKind::Chimera => {
            if mb < microbatches / 2 {
                vec![Lane::DOWN]
            } else {
                vec![Lane::UP]
            }
        }
        ScheduleKind::Hanayo => (0..waves)
            .flat_map(|v| [Lane::new(Branch::Down, v as u8), Lane::new(Branch::Up, v as u8)])
            .collect(),
    }
}

/// A built (or parsed) schedule table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleTable {
    pub kind: ScheduleKind,
    pub stages: usize,
    pub microbatches: usize,
    pub waves: usize,
    pub recompute: bool,
    pub placement: StagePlacement,
    pub slot_weights: SlotWeights,
    /// One row per worker; all rows have the same length.
    pub grid: Vec<Vec<Option<Cell>>>,
}

impl ScheduleTable {
    pub fn workers(&self) -> usize {
        self.grid.len()
    }

    pub fn slots(&self) -> usize {
        self.grid.first().map_or(0, Vec::len)
    }

    pub fn cell(&self, worker: usize, slot: usize) -> Option<Cell> {
        self.grid.get(worker).and_then(|row| row.get(slot)).copied().flatten()
    }

    pub fn route(&self, mb: usize) -> Vec<Lane> {
        route(self.kind, self.waves, self.microbatches, mb)
    }

    /// Every (lane, stage) a microbatch visits, in order.
    pub fn hops(&self, mb: usize) -> Vec<Hop> {
        self.route(mb)
            .into_iter()
            .flat_map(|lane| {
                (0..self.stages).map(move |stage| Hop { microbatch: mb as u32, lane, stage })
            })
            .collect()
    }

    /// Backward phases of one hop in execution order.
    pub fn backward_phases(&self) -> &'static [Phase] {
        if self.recompute {
            &[Phase::Recomp, Phase::Agrad, Phase::Wgrad]
        } else {
            &[Phase::Agrad, Phase::Wgrad]
        }
    }

    /// Non-idle cells of one worker in slot order.
    pub fn row_cells(&self, worker: usize) -> impl Iterator<Item = (usize, Cell)> + '_ {
        self.grid[worker].iter().enumerate().filter_map(|(t, c)| c.map(|c| (t, c)))
    }

    /// Stage index of a cell given the worker it sits on.
    pub fn stage_of(&self, worker: usize, cell: &Cell) -> Option<usize> {
        self.placement.stage_on(cell.lane, worker)
    }
}
