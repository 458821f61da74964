use alloc::format;

#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;

use crate::{Error, Result};

/// Time-dependent rescaling `α(t)` of the exponent scale in the direction
/// dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlphaSchedule {
    /// `α ≡ 1`.
    Unit,
    /// `1 / log t`, defined for `t > 1`.
    InvLog,
    /// `log t`, defined for `t > 1`.
    Log,
    /// `log log t`, defined for `t > e`.
    LogLog,
    /// `exp t`.
    Exp,
    /// `t`, defined for `t > 0`.
    Linear,
}

impl AlphaSchedule {
    pub fn alpha(self, t: f64) -> Result<f64> {
        let domain = |lo: f64| {
            if t > lo {
                Ok(())
            } else {
                Err(Error::Domain(format!("schedule {self:?} is undefined at t = {t}")))
            }
        };
        match self {
            AlphaSchedule::Unit => Ok(1.0),
            AlphaSchedule::InvLog => domain(1.0).map(|_| 1.0 / t.ln()),
            AlphaSchedule::Log => domain(1.0).map(|_| t.ln()),
            AlphaSchedule::LogLog => domain(core::f64::consts::E).map(|_| t.ln().ln()),
            AlphaSchedule::Exp => Ok(t.exp()),
            AlphaSchedule::Linear => domain(0.0).map(|_| t),
        }
    }

    /// Smallest start time at which the schedule is defined and positive.
    pub fn min_time(self) -> f64 {
        match self {
            AlphaSchedule::Unit | AlphaSchedule::Exp => f64::NEG_INFINITY,
            AlphaSchedule::InvLog | AlphaSchedule::Log => 1.0,
            AlphaSchedule::LogLog => core::f64::consts::E,
            AlphaSchedule::Linear => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_and_domains() {
        let e = core::f64::consts::E;
        assert_eq!(AlphaSchedule::Unit.alpha(-3.0).unwrap(), 1.0);
        assert!((AlphaSchedule::Log.alpha(e).unwrap() - 1.0).abs() < 1e-15);
        assert!((AlphaSchedule::InvLog.alpha(e).unwrap() - 1.0).abs() < 1e-15);
        assert!(AlphaSchedule::Log.alpha(1.0).is_err());
        assert!(AlphaSchedule::LogLog.alpha(2.0).is_err());
        assert!(AlphaSchedule::LogLog.alpha(e * e).unwrap() > 0.0);
        assert!(AlphaSchedule::Linear.alpha(0.0).is_err());
    }
}
