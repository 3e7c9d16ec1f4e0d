//! JSON configuration with `model`, `system` and `sweep` sections.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::costmodel::{ModelConfig, SystemConfig};
use crate::error::{Error, Result};

/// Dataset files a sweep can emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    FormulaComparison,
    TimelineComparison,
    Memory,
    UnbalancedRuntime,
    HanayoTable,
}

impl Dataset {
    pub const ALL: [Dataset; 5] = [
        Dataset::FormulaComparison,
        Dataset::TimelineComparison,
        Dataset::Memory,
        Dataset::UnbalancedRuntime,
        Dataset::HanayoTable,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Microbatch axis shared by every dataset.
    pub microbatches: Vec<usize>,
    /// Stage count of the formula and timeline comparisons.
    pub comparison_stages: usize,
    /// Stage counts of the memory and unbalanced-placement datasets.
    pub stages: Vec<usize>,
    /// Scale between adjacent speeds of the regime grid.
    pub factor: f64,
    /// V-shaped passes per Hanayo microbatch.
    pub hanayo_waves: usize,
    /// Hanayo is compared at S = B = this value.
    pub hanayo_point: usize,
    /// Block count of the symmetric/asymmetric Chimera comparison.
    pub asymmetric_blocks: u32,
    pub datasets: Vec<Dataset>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            microbatches: vec![8, 16, 32, 64, 128, 256],
            comparison_stages: 8,
            stages: vec![4, 8],
            factor: 10.0,
            hanayo_waves: 2,
            hanayo_point: 8,
            asymmetric_blocks: 120,
            datasets: Dataset::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub system: SystemConfig,
    pub sweep: SweepSection,
}

impl Config {
    /// Missing keys take their defaults; unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Config> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let m = &self.model;
        let positive = [
            ("blocks", m.blocks as u64),
            ("hidden", m.hidden),
            ("seq_len", m.seq_len),
            ("ffn_dim", m.ffn_dim),
            ("minibatch", m.minibatch),
            ("dtype_bytes", m.dtype_bytes),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{k} must be > 0")));
            }
        }
        let s = &self.sweep;
        if s.microbatches.is_empty() || s.microbatches.contains(&0) {
            return Err(Error::Config("sweep.microbatches must be non-empty and positive".into()));
        }
        if s.comparison_stages < 2 || s.stages.iter().any(|&x| x < 2) {
            return Err(Error::Config("sweep stage counts must be ≥ 2".into()));
        }
        if s.hanayo_waves == 0 {
            return Err(Error::Config("sweep.hanayo_waves must be ≥ 1".into()));
        }
        Ok(())
    }
}
