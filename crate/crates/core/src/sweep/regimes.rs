//! The 3×3 grid of network and compute speeds around a baseline system.

use std::fmt;

use crate::costmodel::SystemConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Speed {
    Fast,
    Mid,
    Slow,
}

impl Speed {
    pub const ALL: [Speed; 3] = [Speed::Fast, Speed::Mid, Speed::Slow];

    pub fn name(self) -> &'static str {
        match self {
            Speed::Fast => "fast",
            Speed::Mid => "mid",
            Speed::Slow => "slow",
        }
    }

    /// Multiplier applied to rates; latencies get the reciprocal.
    fn scale(self, factor: f64) -> f64 {
        match self {
            Speed::Fast => factor,
            Speed::Mid => 1.0,
            Speed::Slow => 1.0 / factor,
        }
    }
}

impl fmt::Display for Speed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regime {
    pub name: String,
    pub network: Speed,
    pub compute: Speed,
    pub system: SystemConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeGrid {
    pub baseline: SystemConfig,
    pub factor: f64,
    /// Network speed major, fast first; the centre cell is named `baseline`.
    pub regimes: Vec<Regime>,
}

pub const BASELINE_NAME: &str = "baseline";

/// `fast_nw_slow_cp` style name; the centre of the grid is `baseline`.
pub fn regime_name(network: Speed, compute: Speed) -> String {
    if network == Speed::Mid && compute == Speed::Mid {
        BASELINE_NAME.to_string()
    } else {
        format!("{network}_nw_{compute}_cp")
    }
}

/// Scales both rate and latency: compute speed moves the peak FLOP rate,
/// memory bandwidth and both compute-side latencies; network speed moves the
/// link bandwidth and latency.
pub fn build_regimes(baseline: &SystemConfig, factor: f64) -> Result<RegimeGrid> {
    if factor.is_nan() || factor <= 1.0 || factor.is_infinite() {
        return Err(Error::Precondition(format!("regime scale factor must be finite and > 1, got {factor}")));
    }
    let mut regimes = Vec::with_capacity(9);
    for network in Speed::ALL {
        for compute in Speed::ALL {
            let (c, n) = (compute.scale(factor), network.scale(factor));
            let mut system = baseline.clone();
            system.peak_flops *= c;
            system.mem_bandwidth *= c;
            system.compute_latency /= c;
            system.mem_latency /= c;
            system.net_bandwidth *= n;
            system.net_latency /= n;
            let name = regime_name(network, compute);
            system.name = name.clone();
            regimes.push(Regime { name, network, compute, system });
        }
    }
    Ok(RegimeGrid { baseline: baseline.clone(), factor, regimes })
}

impl RegimeGrid {
    /// Looks a regime up by name; `mid_nw_mid_cp` is accepted for the centre.
    pub fn get(&self, name: &str) -> Option<&Regime> {
        let name = if name == "mid_nw_mid_cp" { BASELINE_NAME } else { name };
        self.regimes.iter().find(|r| r.name == name)
    }

    pub fn at(&self, network: Speed, compute: Speed) -> &Regime {
        self.regimes
            .iter()
            .find(|r| r.network == network && r.compute == compute)
            .expect("grid holds every speed pair")
    }

    pub fn names(&self) -> Vec<&str> {
        self.regimes.iter().map(|r| r.name.as_str()).collect()
    }

    /// Keeps only the named regimes, in grid order.
    pub fn subset(&self, names: &[&str]) -> Result<Vec<Regime>> {
        let mut out = Vec::new();
        for n in names {
            let r = self.get(n).ok_or_else(|| Error::Config(format!("unknown regime `{n}`")))?;
            out.push(r.clone());
        }
        out.sort_by_key(|r| self.index_of(&r.name));
        out.dedup_by(|a, b| a.name == b.name);
        Ok(out)
    }

    pub fn index_of(&self, name: &str) -> usize {
        self.get(name)
            .and_then(|r| self.regimes.iter().position(|x| x.name == r.name))
            .unwrap_or(usize::MAX)
    }
}
