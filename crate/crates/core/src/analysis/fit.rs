//! Least-squares fits of asymptotic rate laws.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;

use crate::{Error, Result};

/// Minimum number of points a fit window must contain.
pub const MIN_FIT_POINTS: usize = 8;

/// Rate-law family, each fitted as a straight line in its own coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RateFamily {
    /// `v = C log t + c`, linear in `log t`.
    LogGrowth,
    /// `v = a / log t + c`, linear in `1/log t`.
    InvLog,
    /// `v = a t^{-b log t}`, i.e. `log v` linear in `(log t)²`.
    LogQuadratic,
    /// `v = a t^{-c}`, `log v` linear in `log t`.
    Power,
}

/// A fitted rate law. `scale` is `C`, `a` or the prefactor; `exponent` is `b`
/// or `c`; `offset` is the additive constant of the linear-value families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateModel {
    pub family: RateFamily,
    pub scale: f64,
    pub exponent: f64,
    pub offset: f64,
    /// Coefficient of determination in the family's linearized coordinates.
    pub r_squared: f64,
    pub window: (f64, f64),
    pub points: usize,
}

impl RateModel {
    pub fn predict(&self, t: f64) -> f64 {
        let l = t.ln();
        match self.family {
            RateFamily::LogGrowth => self.scale * l + self.offset,
            RateFamily::InvLog => self.scale / l + self.offset,
            RateFamily::LogQuadratic => self.scale * (-self.exponent * l * l).exp(),
            RateFamily::Power => self.scale * (-self.exponent * l).exp(),
        }
    }
}

struct Line {
    intercept: f64,
    slope: f64,
    r_squared: f64,
}

fn fit_line(xs: &[f64], ys: &[f64]) -> Line {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r_squared = if syy > 0.0 {
        (1.0 - ss_res / syy).max(0.0)
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    Line {
        intercept,
        slope,
        r_squared,
    }
}

/// Fits `family` to the points of `series` with `t` inside `window`
/// (inclusive). Log-based families need `t > 1`; log-value families need
/// positive values.
pub fn fit_rate(series: &[(f64, f64)], family: RateFamily, window: (f64, f64)) -> Result<RateModel> {
    let (lo, hi) = window;
    let pts: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|(t, _)| *t >= lo && *t <= hi)
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} points in [{lo}, {hi}], need {MIN_FIT_POINTS}",
            pts.len()
        )));
    }
    if pts.iter().any(|(t, v)| !(t.is_finite() && v.is_finite())) {
        return Err(Error::NonFinite("rate-fit series"));
    }
    if pts.iter().any(|(t, _)| *t <= 1.0) {
        return Err(Error::Domain(format!("fit window [{lo}, {hi}] must lie in t > 1")));
    }
    let log_values = matches!(family, RateFamily::LogQuadratic | RateFamily::Power);
    if log_values && pts.iter().any(|(_, v)| *v <= 0.0) {
        return Err(Error::Domain("values must be positive for this family".into()));
    }
    let xs: Vec<f64> = pts
        .iter()
        .map(|(t, _)| {
            let l = t.ln();
            match family {
                RateFamily::LogGrowth | RateFamily::Power => l,
                RateFamily::InvLog => 1.0 / l,
                RateFamily::LogQuadratic => l * l,
            }
        })
        .collect();
    let ys: Vec<f64> = pts
        .iter()
        .map(|(_, v)| if log_values { v.ln() } else { *v })
        .collect();
    let line = fit_line(&xs, &ys);
    let (scale, exponent, offset) = match family {
        RateFamily::LogGrowth | RateFamily::InvLog => (line.slope, 0.0, line.intercept),
        RateFamily::LogQuadratic | RateFamily::Power => (line.intercept.exp(), -line.slope, 0.0),
    };
    Ok(RateModel {
        family,
        scale,
        exponent,
        offset,
        r_squared: line.r_squared,
        window,
        points: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        (0..40)
            .map(|i| {
                let t = 10f64.powf(1.0 + i as f64 * 0.1);
                (t, f(t))
            })
            .collect()
    }

    #[test]
    fn exact_inverse_log() {
        let m = fit_rate(&series(|t| 3.0 / t.ln()), RateFamily::InvLog, (10.0, 1e5)).unwrap();
        assert!((m.scale - 3.0).abs() < 1e-6);
        assert!(m.r_squared > 1.0 - 1e-9);
    }

    #[test]
    fn exact_log_quadratic() {
        let s = series(|t| (-0.5 * t.ln() * t.ln()).exp());
        let m = fit_rate(&s, RateFamily::LogQuadratic, (10.0, 1e3)).unwrap();
        assert!((m.exponent - 0.5).abs() < 1e-6);
        assert!(m.r_squared > 1.0 - 1e-9);
    }

    #[test]
    fn too_few_points() {
        let s = series(|t| t.ln());
        assert!(matches!(
            fit_rate(&s, RateFamily::LogGrowth, (10.0, 20.0)),
            Err(Error::InsufficientData(_))
        ));
    }
}
