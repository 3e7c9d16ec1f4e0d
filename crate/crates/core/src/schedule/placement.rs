//! Assignment of transformer blocks and stages to workers.

use std::collections::BTreeMap;

use super::{Branch, Lane, ScheduleKind};
use crate::error::{Error, Result};

/// Where one stage of one lane lives and how many blocks it holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSlot {
    pub worker: usize,
    pub blocks: u32,
}

/// Per (lane, stage) block counts and host workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlacement {
    workers: usize,
    stages: usize,
    total_blocks: u32,
    lanes: BTreeMap<Lane, Vec<StageSlot>>,
}

impl StagePlacement {
    /// Builds a placement from explicit per-lane stage slots.
    ///
    /// Each lane must list `stages` slots, and a worker may host at most one
    /// stage of a given lane.
    pub fn new(
        workers: usize,
        stages: usize,
        total_blocks: u32,
        lanes: BTreeMap<Lane, Vec<StageSlot>>,
    ) -> Result<Self> {
        for (lane, slots) in &lanes {
            if slots.len() != stages {
                return Err(Error::Placement(format!(
                    "lane {lane} lists {} stages, expected {stages}",
                    slots.len()
                )));
            }
            let mut seen = vec![false; workers];
            for (k, slot) in slots.iter().enumerate() {
                if slot.worker >= workers {
                    return Err(Error::Placement(format!(
                        "lane {lane} stage {k} on worker {} of {workers}",
                        slot.worker
                    )));
                }
                if slot.blocks == 0 {
                    return Err(Error::Placement(format!("lane {lane} stage {k} holds no blocks")));
                }
                if std::mem::replace(&mut seen[slot.worker], true) {
                    return Err(Error::Placement(format!(
                        "worker {} hosts two stages of lane {lane}",
                        slot.worker
                    )));
                }
            }
        }
        Ok(StagePlacement { workers, stages, total_blocks, lanes })
    }

    /// Unidirectional placement: stage k on worker k with N/S blocks each.
    pub fn uniform(stages: usize, total_blocks: u32) -> Result<Self> {
        let per = even_split(stages, total_blocks, 1)?;
        let slots = (0..stages).map(|k| StageSlot { worker: k, blocks: per }).collect();
        Self::new(stages, stages, total_blocks, BTreeMap::from([(Lane::DOWN, slots)]))
    }

    /// Symmetric Chimera: Up stage i shares a worker with Down stage S−1−i.
    pub fn chimera(stages: usize, total_blocks: u32) -> Result<Self> {
        if stages % 2 != 0 {
            return Err(Error::Precondition(format!("Chimera requires S even, got S={stages}")));
        }
        let per = even_split(stages, total_blocks, 1)?;
        Self::chimera_with(stages, total_blocks, &vec![per; stages])
    }

    /// Chimera with a 1:2 block ratio between the first and second half of
    /// each branch. Every worker ends up hosting the same number of blocks.
    pub fn chimera_asymmetric(stages: usize, total_blocks: u32) -> Result<Self> {
        if stages < 2 || stages % 2 != 0 {
            return Err(Error::Precondition(format!(
                "asymmetric placement requires an even stage count, got S={stages}"
            )));
        }
        let half = stages as u32 / 2;
        if (total_blocks % (3 * half)) != 0 {
            return Err(Error::Precondition(format!(
                "asymmetric 1:2 placement requires N divisible by 3S/2 = {}, got N={total_blocks}",
                3 * half
            )));
        }
        let k = total_blocks / (3 * half);
        let per_stage: Vec<u32> =
            (0..stages).map(|i| if i < stages / 2 { k } else { 2 * k }).collect();
        Self::chimera_with(stages, total_blocks, &per_stage)
    }

    fn chimera_with(stages: usize, total_blocks: u32, per_stage: &[u32]) -> Result<Self> {
        let down = (0..stages).map(|k| StageSlot { worker: k, blocks: per_stage[k] }).collect();
        let up =
            (0..stages).map(|k| StageSlot { worker: stages - 1 - k, blocks: per_stage[k] }).collect();
        Self::new(stages, stages, total_blocks, BTreeMap::from([(Lane::DOWN, down), (Lane::UP, up)]))
    }

    /// Hanayo placement: the model is cut into 2·waves·S chunks; Down lanes
    /// place stage k on worker k, Up lanes on worker S−1−k. Each chunk exists
    /// once, so there is no parameter duplication.
    pub fn hanayo(stages: usize, total_blocks: u32, waves: usize) -> Result<Self> {
        if waves == 0 {
            return Err(Error::Precondition("Hanayo requires waves ≥ 1".into()));
        }
        let per = even_split(2 * waves * stages, total_blocks, 1)?;
        let mut lanes = BTreeMap::new();
        for v in 0..waves {
            let down = (0..stages).map(|k| StageSlot { worker: k, blocks: per }).collect();
            let up = (0..stages).map(|k| StageSlot { worker: stages - 1 - k, blocks: per }).collect();
            lanes.insert(Lane::new(Branch::Down, v as u8), down);
            lanes.insert(Lane::new(Branch::Up, v as u8), up);
        }
        Self::new(stages, stages, total_blocks, lanes)
    }

    /// Default placement for a schedule family.
    pub fn for_kind(kind: ScheduleKind, stages: usize, total_blocks: u32, waves: usize) -> Result<Self> {
        match kind {
            ScheduleKind::GPipe | ScheduleKind::OneF1B => Self::uniform(stages, total_blocks),
            ScheduleKind::Chimera => Self::chimera(stages, total_blocks),
            ScheduleKind::Hanayo => Self::hanayo(stages, total_blocks, waves),
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn total_blocks(&self) -> u32 {
        self.total_blocks
    }

    pub fn lanes(&self) -> impl Iterator<Item = Lane> + '_ {
        self.lanes.keys().copied()
    }

    pub fn has_lane(&self, lane: Lane) -> bool {
        self.lanes.contains_key(&lane)
    }

    pub fn slot(&self, lane: Lane, stage: usize) -> Option<StageSlot> {
        self.lanes.get(&lane).and_then(|s| s.get(stage)).copied()
    }

    /// Stage of `lane` hosted on `worker`, if any.
    pub fn stage_on(&self, lane: Lane, worker: usize) -> Option<usize> {
        self.lanes.get(&lane)?.iter().position(|s| s.worker == worker)
    }

    /// Block counts of one lane listed by hosting worker.
    pub fn blocks_by_worker(&self, lane: Lane) -> Vec<u32> {
        let mut out = vec![0; self.workers];
        if let Some(slots) = self.lanes.get(&lane) {
            for s in slots {
                out[s.worker] += s.blocks;
            }
        }
        out
    }

    /// Block counts of one lane listed by stage index.
    pub fn blocks_by_stage(&self, lane: Lane) -> Vec<u32> {
        self.lanes.get(&lane).map(|s| s.iter().map(|x| x.blocks).collect()).unwrap_or_default()
    }

    /// All (lane, stage, blocks) hosted on a worker.
    pub fn hosted(&self, worker: usize) -> Vec<(Lane, usize, u32)> {
        self.lanes
            .iter()
            .flat_map(|(lane, slots)| {
                slots
                    .iter()
                    .enumerate()
                    .filter(move |(_, s)| s.worker == worker)
                    .map(move |(k, s)| (*lane, k, s.blocks))
            })
            .collect()
    }

    /// Total blocks hosted on a worker across all lanes.
    pub fn worker_blocks(&self, worker: usize) -> u32 {
        self.hosted(worker).iter().map(|h| h.2).sum()
    }

    /// Sum of block counts along a sequence of lanes.
    pub fn route_blocks(&self, route: &[Lane]) -> u32 {
        route.iter().map(|l| self.blocks_by_stage(*l).iter().sum::<u32>()).sum()
    }
}

fn even_split(parts: usize, total: u32, min: u32) -> Result<u32> {
    if parts == 0 || total % parts as u32 != 0 || total / (parts as u32) < min {
        return Err(Error::Precondition(format!(
            "block count N={total} must split evenly into {parts} stage chunks"
        )));
    }
    Ok(total / parts as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asymmetric_blocks_match_worked_example() {
        let p = StagePlacement::chimera_asymmetric(4, 120).unwrap();
        assert_eq!(p.blocks_by_stage(Lane::DOWN), vec![20, 20, 40, 40]);
        assert_eq!(p.blocks_by_worker(Lane::DOWN), vec![20, 20, 40, 40]);
        assert_eq!(p.blocks_by_worker(Lane::UP), vec![40, 40, 20, 20]);
        for w in 0..4 {
            assert_eq!(p.worker_blocks(w), 60);
        }
    }

    #[test]
    fn asymmetric_rejects_indivisible_block_count() {
        let err = StagePlacement::chimera_asymmetric(4, 128).unwrap_err();
        assert!(err.to_string().contains("3S/2"));
    }

    #[test]
    fn chimera_up_stage_mirrors_down() {
        let p = StagePlacement::chimera(8, 128).unwrap();
        for i in 0..8 {
            assert_eq!(p.slot(Lane::UP, i).unwrap().worker, p.slot(Lane::DOWN, 7 - i).unwrap().worker);
        }
    }

    #[test]
    fn hanayo_holds_each_block_once() {
        let p = StagePlacement::hanayo(8, 128, 2).unwrap();
        let total: u32 = (0..8).map(|w| p.worker_blocks(w)).sum();
        assert_eq!(total, 128);
        assert_eq!(p.worker_blocks(3), 16);
    }

    #[test]
    fn duplicate_worker_in_lane_is_rejected() {
        let slots = vec![StageSlot { worker: 0, blocks: 1 }, StageSlot { worker: 0, blocks: 1 }];
        let err = StagePlacement::new(2, 2, 2, BTreeMap::from([(Lane::DOWN, slots)])).unwrap_err();
        assert!(matches!(err, Error::Placement(_)));
    }
}
