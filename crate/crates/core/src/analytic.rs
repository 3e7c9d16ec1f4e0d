//! Closed-form bubble ratios.
//!
//! All formulas assume synchronous execution, no communication cost and
//! `t_bwd = 2·t_fwd`. Fill and drain each cost `(stages on the critical path − 1)`
//! forward/backward groups against `B` groups of useful work per worker; the
//! backward factor cancels. Chimera halves the per-branch pipeline depth and
//! runs two branches, giving `(S−2)/(S−2+2B)`.

use crate::error::{Error, Result};
use crate::schedule::ScheduleKind;

#[derive(Debug, Clone, PartialEq)]
pub struct FormulaResult {
    pub bubble_ratio: f64,
    pub assumptions: &'static str,
}

const ASSUMPTIONS: &str = "t_bwd = 2·t_fwd, synchronous, no communication";

/// Closed-form bubble ratio. Hanayo has no closed form and is rejected.
pub fn formula_bubble_ratio(kind: ScheduleKind, stages: usize, microbatches: usize) -> Result<FormulaResult> {
    if stages < 2 {
        return Err(Error::Precondition(format!("formula requires S ≥ 2, got S={stages}")));
    }
    if microbatches == 0 {
        return Err(Error::Precondition("formula requires B ≥ 1".into()));
    }
    let (s, b) = (stages as f64, microbatches as f64);
    let ratio = match kind {
        ScheduleKind::GPipe | ScheduleKind::OneF1B => (s - 1.0) / (s - 1.0 + b),
        ScheduleKind::Chimera => {
            if stages % 2 != 0 {
                return Err(Error::Precondition(format!("Chimera requires S even, got S={stages}")));
            }
            (s - 2.0) / (s - 2.0 + 2.0 * b)
        }
        ScheduleKind::Hanayo => {
            return Err(Error::Precondition("no closed-form bubble ratio exists for Hanayo".into()))
        }
    };
    Ok(FormulaResult { bubble_ratio: ratio, assumptions: ASSUMPTIONS })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(kind: ScheduleKind, s: usize, b: usize) -> f64 {
        formula_bubble_ratio(kind, s, b).unwrap().bubble_ratio
    }

    #[test]
    fn anchored_values() {
        assert!((f(ScheduleKind::Chimera, 8, 16) - 6.0 / 38.0).abs() < 1e-15);
        assert!((f(ScheduleKind::Chimera, 4, 16) - 2.0 / 34.0).abs() < 1e-15);
        assert_eq!(f(ScheduleKind::GPipe, 2, 1), 0.5);
    }

    #[test]
    fn gpipe_and_one_f_one_b_agree() {
        for s in 2..12 {
            for b in 1..40 {
                assert_eq!(f(ScheduleKind::GPipe, s, b), f(ScheduleKind::OneF1B, s, b));
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(formula_bubble_ratio(ScheduleKind::Chimera, 5, 4).is_err());
        assert!(formula_bubble_ratio(ScheduleKind::GPipe, 1, 4).is_err());
        assert!(formula_bubble_ratio(ScheduleKind::GPipe, 4, 0).is_err());
        assert!(formula_bubble_ratio(ScheduleKind::Hanayo, 8, 8).is_err());
    }
}
