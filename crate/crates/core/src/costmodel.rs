//! Hockney transfer costs, roofline compute costs and transformer accounting.
//!
//! Transfer time is `V_net / BW_net + L_net`. Compute time is
//! `max(F / (TP·e_c) + L_c, V_m / (BW_m·e_m) + L_m)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{Phase, StagePlacement};

/// Machine description. Rates in FLOP/s or bytes/s, latencies in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub name: String,
    /// Peak compute throughput TP, FLOP/s.
    pub peak_flops: f64,
    /// Achieved fraction of peak compute, e_c.
    pub compute_efficiency: f64,
    /// Compute startup latency L_c, s.
    pub compute_latency: f64,
    /// Memory bandwidth BW_m, bytes/s.
    pub mem_bandwidth: f64,
    /// Achieved fraction of memory bandwidth, e_m.
    pub mem_efficiency: f64,
    /// Memory latency L_m, s.
    pub mem_latency: f64,
    /// Point-to-point network bandwidth BW_net, bytes/s. May be infinite.
    pub net_bandwidth: f64,
    /// Network latency L_net, s.
    pub net_latency: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig::baseline()
    }
}

impl SystemConfig {
    /// Default compute efficiency. Calibrated so that the regime grid keeps
    /// GPipe and 1F1B runtime-equivalent and reproduces the Hanayo/Chimera
    /// sign pattern; see the README for the sensitivity discussion.
    pub const DEFAULT_COMPUTE_EFFICIENCY: f64 = 0.1;

    /// Roughly 1 PFLOP/s, 34 TB/s memory at 50 ns, 50 GB/s links at 500 ns.
    pub fn baseline() -> Self {
        SystemConfig {
            name: "baseline".into(),
            peak_flops: 1e15,
            compute_efficiency: Self::DEFAULT_COMPUTE_EFFICIENCY,
            compute_latency: 1e-6,
            mem_bandwidth: 3.4e13,
            mem_efficiency: 0.8,
            mem_latency: 5e-8,
            net_bandwidth: 5e10,
            net_latency: 5e-7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("peak_flops", self.peak_flops),
            ("mem_bandwidth", self.mem_bandwidth),
            ("net_bandwidth", self.net_bandwidth),
        ];
        for (k, v) in rates {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::Config(format!("{k} must be > 0, got {v}")));
            }
        }
        for (k, v) in [("compute_efficiency", self.compute_efficiency), ("mem_efficiency", self.mem_efficiency)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{k} must be in (0, 1], got {v}")));
            }
        }
        let lats = [
            ("compute_latency", self.compute_latency),
            ("mem_latency", self.mem_latency),
            ("net_latency", self.net_latency),
        ];
        for (k, v) in lats {
            if v.is_nan() || v < 0.0 {
                return Err(Error::Config(format!("{k} must be ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Transformer shape and training batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Transformer blocks N.
    pub blocks: u32,
    /// Hidden size d.
    pub hidden: u64,
    /// Attention heads (not used by the FLOP count).
    pub heads: u64,
    /// Sequence length s, tokens.
    pub seq_len: u64,
    /// Feed-forward width.
    pub ffn_dim: u64,
    /// Global minibatch M_glob, sequences.
    pub minibatch: u64,
    /// Bytes per element.
    pub dtype_bytes: u64,
    /// Retained activation bytes per token, per hidden element, per block.
    pub c_act: u64,
    /// Optimizer state bytes per parameter byte.
    pub optimizer_multiplier: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            blocks: 128,
            hidden: 4096,
            heads: 80,
            seq_len: 4096,
            ffn_dim: 4 * 4096,
            minibatch: 256,
            dtype_bytes: 2,
            c_act: 16,
            optimizer_multiplier: 6,
        }
    }
}

impl ModelConfig {
    /// Sequences per microbatch, m = M_glob / B.
    pub fn microbatch_size(&self, microbatches: usize) -> Result<u64> {
        let b = microbatches as u64;
        if b == 0 || self.minibatch % b != 0 {
            return Err(Error::Precondition(format!(
                "minibatch {} is not divisible by B={microbatches}",
                self.minibatch
            )));
        }
        Ok(self.minibatch / b)
    }

    /// Parameters of one block: attention projections plus the two FFN matrices.
    pub fn block_params(&self) -> u64 {
        4 * self.hidden * self.hidden + 2 * self.hidden * self.ffn_dim
    }

    pub fn block_weight_bytes(&self) -> u64 {
        self.block_params() * self.dtype_bytes
    }

    /// Forward FLOPs of one block for `m` sequences.
    pub fn block_fwd_flops(&self, m: u64) -> f64 {
        let (d, s, m) = (self.hidden as f64, self.seq_len as f64, m as f64);
        m * s * (2.0 * self.block_params() as f64 + 4.0 * s * d)
    }
}

/// Compute and memory inputs for one node; `duration` is filled against a system.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostAnnotation {
    pub flops: f64,
    pub mem_bytes: f64,
    pub net_bytes: f64,
    pub duration: Option<f64>,
}

/// Hockney transfer time.
pub fn comm_time(bytes: f64, sys: &SystemConfig) -> f64 {
    bytes / sys.net_bandwidth + sys.net_latency
}

/// Roofline compute time.
pub fn compute_time(flops: f64, mem_bytes: f64, sys: &SystemConfig) -> f64 {
    let compute = flops / (sys.peak_flops * sys.compute_efficiency) + sys.compute_latency;
    let memory = mem_bytes / (sys.mem_bandwidth * sys.mem_efficiency) + sys.mem_latency;
    compute.max(memory)
}

/// FLOPs and memory traffic of one phase over a stage of `blocks` blocks.
pub fn stage_costs(model: &ModelConfig, blocks: u32, m: u64, phase: Phase) -> (f64, f64) {
    let n = blocks as f64;
    let weights = model.block_weight_bytes() as f64;
    let acts = (model.c_act * m * model.seq_len * model.hidden) as f64;
    match phase {
        Phase::Opt => {
            // read and write parameters, gradients and optimizer state
            let state = weights * (2 + model.optimizer_multiplier) as f64;
            (0.0, n * 2.0 * state)
        }
        _ => (n * model.block_fwd_flops(m), n * (weights + acts)),
    }
}

/// Bytes of one stage-boundary tensor for `m` sequences.
pub fn activation_bytes(model: &ModelConfig, m: u64) -> u64 {
    m * model.seq_len * model.hidden * model.dtype_bytes
}

/// Activation bytes retained by a stage of `blocks` blocks for one microbatch.
pub fn stage_activation_bytes(model: &ModelConfig, blocks: u32, m: u64) -> u64 {
    blocks as u64 * model.c_act * m * model.seq_len * model.hidden
}

/// Parameters, gradients and optimizer state resident on a worker.
pub fn persistent_bytes(placement: &StagePlacement, model: &ModelConfig, worker: usize, optimizer_multiplier: u64) -> u64 {
    placement
        .hosted(worker)
        .iter()
        .map(|&(_, _, blocks)| blocks as u64 * model.block_weight_bytes() * (2 + optimizer_multiplier))
        .sum()
}

impl CostAnnotation {
    pub fn compute(flops: f64, mem_bytes: f64) -> Self {
        CostAnnotation { flops, mem_bytes, net_bytes: 0.0, duration: None }
    }

    pub fn transfer(net_bytes: f64) -> Self {
        CostAnnotation { flops: 0.0, mem_bytes: 0.0, net_bytes, duration: None }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn hockney_examples() {
        let mut sys = SystemConfig::baseline();
        assert!(close(comm_time(1e8, &sys), 0.0020005, 1e-12));
        assert_eq!(comm_time(0.0, &sys), 5e-7);
        sys.net_bandwidth *= 10.0;
        sys.net_latency /= 10.0;
        assert!(close(comm_time(1e8, &sys), 0.00020005, 1e-12));
    }

    #[test]
    fn roofline_examples() {
        let mut sys = SystemConfig::baseline();
        sys.compute_efficiency = 0.5;
        assert!(close(compute_time(1e12, 1e9, &sys), 2.001e-3, 1e-12));
        assert_eq!(compute_time(0.0, 0.0, &sys), 1e-6_f64.max(5e-8));
        let mem = 1e12 / (3.4e13 * 0.8) + 5e-8;
        assert!(close(compute_time(1e9, 1e12, &sys), mem, 1e-12));
    }

    #[test]
    fn forward_flops_match_independent_arithmetic() {
        let model = ModelConfig::default();
        let (f, _) = stage_costs(&model, 1, 32, Phase::Fwd);
        let d = 4096f64;
        let s = 4096f64;
        let oracle = 32.0 * s * (24.0 * d * d + 4.0 * s * d);
        assert_eq!(f, oracle);
        // 6.0e13 is the rounded value; the exact product is 6.16e13
        assert!(close(f, 6.0e13, 0.03));
    }

    #[test]
    fn backward_is_twice_forward_and_linear_in_blocks() {
        let model = ModelConfig::default();
        let (ff, _) = stage_costs(&model, 3, 4, Phase::Fwd);
        let (fa, _) = stage_costs(&model, 3, 4, Phase::Agrad);
        let (fw, _) = stage_costs(&model, 3, 4, Phase::Wgrad);
        assert_eq!(fa + fw, 2.0 * ff);
        let one = stage_costs(&model, 1, 4, Phase::Fwd);
        let sixteen = stage_costs(&model, 16, 4, Phase::Fwd);
        assert_eq!(sixteen.0, 16.0 * one.0);
        assert_eq!(sixteen.1, 16.0 * one.1);
    }

    #[test]
    fn boundary_tensor_bytes() {
        let model = ModelConfig::default();
        assert_eq!(activation_bytes(&model, 32), 1_073_741_824);
        assert_eq!(activation_bytes(&model, 1), 33_554_432);
        let m8 = model.microbatch_size(8).unwrap();
        let m16 = model.microbatch_size(16).unwrap();
        assert_eq!(activation_bytes(&model, m8), 2 * activation_bytes(&model, m16));
    }

    #[test]
    fn persistent_bytes_examples() {
        let model = ModelConfig::default();
        let p = StagePlacement::uniform(8, 128).unwrap();
        let g = persistent_bytes(&p, &model, 0, 6);
        assert_eq!(g, 16 * 12 * 4096 * 4096 * 2 * 8);
        assert!(close(g as f64, 51.5e9, 0.001));
        let c = StagePlacement::chimera(8, 128).unwrap();
        assert_eq!(persistent_bytes(&c, &model, 0, 6), 2 * g);
        let a = StagePlacement::chimera_asymmetric(4, 120).unwrap();
        let per: Vec<u64> = (0..4).map(|w| persistent_bytes(&a, &model, w, 6)).collect();
        assert!(per.iter().all(|&x| x == per[0]));
        assert_eq!(per[0], 60 * model.block_weight_bytes() * 8);
    }

    #[test]
    fn compute_regime_scaling_is_exact_for_compute_bound_work() {
        let base = SystemConfig::baseline();
        let mut fast = base.clone();
        fast.peak_flops *= 10.0;
        fast.mem_bandwidth *= 10.0;
        fast.compute_latency /= 10.0;
        fast.mem_latency /= 10.0;
        let (f, v) = stage_costs(&ModelConfig::default(), 16, 32, Phase::Fwd);
        assert!(close(compute_time(f, v, &fast), compute_time(f, v, &base) / 10.0, 1e-12));
    }

    #[test]
    fn backward_duration_ratio_near_two() {
        let sys = SystemConfig::baseline();
        let model = ModelConfig::default();
        let (ff, vf) = stage_costs(&model, 16, 32, Phase::Fwd);
        let tf = compute_time(ff, vf, &sys);
        let tb = compute_time(2.0 * ff, 2.0 * vf, &sys);
        let r = tb / tf;
        assert!((1.9..=2.0).contains(&r), "{r}");
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut sys = SystemConfig::baseline();
        sys.compute_efficiency = 1.5;
        assert!(sys.validate().is_err());
        let mut sys = SystemConfig::baseline();
        sys.net_bandwidth = f64::INFINITY;
        assert!(sys.validate().is_ok());
    }
}
