//! Verdicts and summaries computed from states and trajectories.

pub mod fit;

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;

use nalgebra::SymmetricEigen;

pub use fit::{fit_rate, RateFamily, RateModel, MIN_FIT_POINTS};

use crate::dynamics::{field_unconstrained, loss_weights, ExponentMode};
use crate::integrator::Record;
use crate::net::forward_and_grad;
use crate::oracles::{ei, ei_inverse};
use crate::{Dataset, Error, Matrix, NetworkParams, Result, Vector};

/// Default dominance threshold `ln 1000` on `ρ·Δ₂`.
pub const DOMINANCE_LOG_RATIO: f64 = 6.907_755_278_982_137;

/// Default per-step tolerance for margin decreases.
pub const MONOTONE_TOL: f64 = 1e-8;

/// `max_{k,k'} |r_k − r_k'| / (1 + max_k |r_k|)` for `r_k = 2⟨W_k, Ẇ_k⟩`,
/// evaluated from the field with a shared exponent shift. Zero for `K = 1`.
pub fn norm_balance_residual(w: &NetworkParams, data: &Dataset) -> Result<f64> {
    if w.depth() < 2 {
        return Ok(0.0);
    }
    let wdot = field_unconstrained(w, data, ExponentMode::Shifted)?;
    let rates: Vec<f64> = w
        .layers()
        .iter()
        .zip(&wdot.value)
        .map(|(a, b)| 2.0 * a.dot(b))
        .collect();
    let max_abs = rates.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Ok(spread(&rates) / (1.0 + max_abs))
}

fn spread(v: &[f64]) -> f64 {
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// `(max_k r_k − min_k r_k) / max_k |r_k|`; zero when all rates vanish.
pub fn relative_spread(rates: &[f64]) -> f64 {
    let max_abs = rates.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    if max_abs == 0.0 {
        0.0
    } else {
        spread(rates) / max_abs
    }
}

/// Outcome of the margin monotonicity check.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginMonotone {
    /// No two consecutive records share a dominating support set.
    NotApplicable,
    Verdict {
        monotone: bool,
        /// Number of maximal runs of dominated records with one support set.
        epochs: usize,
        /// Step and time of the first dominated record.
        dominance_step: usize,
        dominance_time: f64,
        /// Most negative margin change inside a dominance epoch (or 0).
        worst_step: f64,
        worst_time: f64,
        /// Margin growth per unit `log t` of each separated support-set
        /// epoch, in time order.
        epoch_rates: Vec<EpochRate>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRate {
    pub log_t_start: f64,
    pub log_t_end: f64,
    pub rate: f64,
}

/// Whether the support set (a single sample or a tie set) dominates the loss
/// at `r`: the data are separated and `ρ·Δ > log_ratio`, where `Δ` is the
/// normalized margin gap between the support set and every other sample.
pub fn dominated(r: &Record, log_ratio: f64) -> bool {
    r.raw_margin > 0.0 && (r.gap.is_infinite() || r.rho * r.gap > log_ratio)
}

/// Checks that the normalized margin never decreases by more than `tol`
/// between consecutive records that are both dominated by the same support
/// set.
pub fn check_margin_monotone(records: &[Record], log_ratio: f64, tol: f64) -> MarginMonotone {
    let mut first = None;
    let mut epochs = 0;
    let mut worst_step = 0.0f64;
    let mut worst_time = f64::NAN;
    let mut open = false;
    for pair in records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if !(dominated(a, log_ratio) && dominated(b, log_ratio) && a.support == b.support) {
            open = false;
            continue;
        }
        if !open {
            epochs += 1;
            open = true;
        }
        first.get_or_insert(a);
        let d = b.margin - a.margin;
        if d < worst_step || worst_time.is_nan() {
            worst_step = worst_step.min(d);
            worst_time = b.time;
        }
    }
    let Some(first) = first else {
        return MarginMonotone::NotApplicable;
    };
    MarginMonotone::Verdict {
        monotone: worst_step > -tol,
        epochs,
        dominance_step: first.step,
        dominance_time: first.time,
        worst_step,
        worst_time,
        epoch_rates: epoch_rates(records),
    }
}

fn epoch_rates(records: &[Record]) -> Vec<EpochRate> {
    let mut out = Vec::new();
    let mut begin: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        if r.raw_margin <= 0.0 {
            begin = None;
            continue;
        }
        match begin {
            None => begin = Some(i),
            Some(b) if records[b].support != r.support => {
                push_epoch(&mut out, &records[b], &records[i - 1]);
                begin = Some(i);
            }
            _ => {}
        }
    }
    if let Some(b) = begin {
        push_epoch(&mut out, &records[b], &records[records.len() - 1]);
    }
    out
}

fn push_epoch(out: &mut Vec<EpochRate>, a: &Record, b: &Record) {
    if b.log_time > a.log_time && a.log_time.is_finite() {
        out.push(EpochRate {
            log_t_start: a.log_time,
            log_t_end: b.log_time,
            rate: (b.margin - a.margin) / (b.log_time - a.log_time),
        });
    }
}

/// Per-layer `‖Σ_n e^{-ρ y_n f_V} y_n (∂f_V/∂V_k − V_k f_V)‖_F / Σ_n e^{-ρ y_n f_V}`.
pub fn stationarity_residual(dirs: &[Matrix], rho: f64, data: &Dataset) -> Result<Vec<f64>> {
    let mut outs = Vec::with_capacity(data.len());
    let mut grads = Vec::with_capacity(data.len());
    for s in data.samples() {
        let (f, g) = forward_and_grad(dirs, &s.x)?;
        outs.push(f);
        grads.push(g);
    }
    let margins: Vec<f64> = outs
        .iter()
        .zip(data.samples())
        .map(|(f, s)| rho * s.y.sign() * f)
        .collect();
    let (weights, _) = loss_weights(&margins, ExponentMode::Shifted);
    let total: f64 = weights.iter().sum();
    let mut res = Vec::with_capacity(dirs.len());
    for (k, v) in dirs.iter().enumerate() {
        let mut acc = Matrix::zeros(v.nrows(), v.ncols());
        for n in 0..data.len() {
            let c = weights[n] * data.samples()[n].y.sign();
            acc.zip_apply(&grads[n][k], |a, g| *a += c * g);
            let cf = c * outs[n];
            acc.zip_apply(v, |a, vv| *a -= cf * vv);
        }
        res.push(acc.norm() / total);
    }
    Ok(res)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Definiteness {
    PositiveDefinite,
    PositiveSemidefinite,
    Indefinite,
}

/// Spectrum summary of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianReport {
    pub dim: usize,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub verdict: Definiteness,
}

/// Classifies a symmetric matrix with tolerance `1e-10·max|λ|`.
pub fn hessian_report(h: &Matrix) -> Result<HessianReport> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Hessian"));
    }
    if !h.is_square() {
        return Err(Error::Shape(format!("Hessian is {}x{}", h.nrows(), h.ncols())));
    }
    let eig = SymmetricEigen::new(h.clone()).eigenvalues;
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-10 * eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let verdict = if min > tol {
        Definiteness::PositiveDefinite
    } else if min >= -tol {
        Definiteness::PositiveSemidefinite
    } else {
        Definiteness::Indefinite
    };
    Ok(HessianReport {
        dim: h.nrows(),
        min_eigenvalue: min,
        max_eigenvalue: max,
        verdict,
    })
}

/// `H = Σ_n e^{-ρ y_n vᵀx_n} (ρ² x_n x_nᵀ + ρ y_n vᵀx_n I)` for a linear net.
pub fn linear_hessian_matrix(v: &Vector, rho: f64, data: &Dataset) -> Result<Matrix> {
    if v.len() != data.dim() {
        return Err(Error::Shape(format!(
            "direction has {} entries, data dimension is {}",
            v.len(),
            data.dim()
        )));
    }
    let d = v.len();
    let mut h = Matrix::zeros(d, d);
    for s in data.samples() {
        let m = s.y.sign() * v.dot(&s.x);
        let e = (-rho * m).exp();
        h.ger(e * rho * rho, &s.x, &s.x, 1.0);
        for i in 0..d {
            h[(i, i)] += e * rho * m;
        }
    }
    Ok(h)
}

pub fn linear_hessian(v: &Vector, rho: f64, data: &Dataset) -> Result<HessianReport> {
    hessian_report(&linear_hessian_matrix(v, rho, data)?)
}

/// Reference growth of the product norm `ρ(t)` in the equal-layer,
/// single-dominant-sample regime with normalized margin `u`:
/// `R = e^{ρu}` obeys `Ṙ = K u^{2/K} (log R)^{2−2/K}`, anchored so that
/// `ρ(t0) = rho0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoReference {
    depth: usize,
    margin: f64,
    t0: f64,
    rho0: f64,
    /// Integration constant (`K = 1`: `R(0)`, `K = 2`: `li(R) − 2ut`).
    constant: f64,
}

impl RhoReference {
    pub fn new(depth: usize, margin: f64, t0: f64, rho0: f64) -> Result<RhoReference> {
        if depth == 0 {
            return Err(Error::Domain("depth must be at least 1".into()));
        }
        if !(margin > 0.0 && rho0 > 0.0 && t0.is_finite()) {
            return Err(Error::Domain(format!(
                "need positive margin and norm (margin {margin}, rho0 {rho0})"
            )));
        }
        let s0 = margin * rho0;
        let constant = match depth {
            1 => s0.exp() - margin * margin * t0,
            2 => ei(s0)? - 2.0 * margin * t0,
            _ => 0.0,
        };
        Ok(RhoReference {
            depth,
            margin,
            t0,
            rho0,
            constant,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `ρ_ref(t)`.
    pub fn rho_at(&self, t: f64) -> Result<f64> {
        let u = self.margin;
        match self.depth {
            1 => {
                let r = u * u * t + self.constant;
                if r <= 1.0 {
                    return Err(Error::Domain(format!("t = {t} precedes the reference's range")));
                }
                Ok(r.ln() / u)
            }
            2 => Ok(ei_inverse(2.0 * u * t + self.constant)? / u),
            k => self.integrate_deep(k, t),
        }
    }

    /// RK4 in `log t` on `ṡ = K u^{2/K} s^{2−2/K} e^{-s}` for `s = log R`.
    fn integrate_deep(&self, k: usize, t: f64) -> Result<f64> {
        if !(self.t0 > 0.0 && t > 0.0) {
            return Err(Error::Domain("deep reference needs positive times".into()));
        }
        let kf = k as f64;
        let u = self.margin;
        let c = kf * u.powf(2.0 / kf);
        let rhs = |lt: f64, s: f64| c * s.powf(2.0 - 2.0 / kf) * (-s).exp() * lt.exp();
        let (a, b) = (self.t0.ln(), t.ln());
        let n = (((b - a).abs() * 2000.0).ceil() as usize).max(1);
        let h = (b - a) / n as f64;
        let mut s = u * self.rho0;
        let mut lt = a;
        for _ in 0..n {
            let k1 = rhs(lt, s);
            let k2 = rhs(lt + h / 2.0, s + h / 2.0 * k1);
            let k3 = rhs(lt + h / 2.0, s + h / 2.0 * k2);
            let k4 = rhs(lt + h, s + h * k3);
            s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            lt += h;
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Domain(format!("reference left its domain before t = {t}")));
            }
        }
        Ok(s / u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Label, Sample};
    use alloc::vec;

    fn pair() -> Dataset {
        Dataset::new(
            "pair",
            vec![
                Sample::new(&[1.0, 0.2], Label::Positive),
                Sample::new(&[-0.5, 1.0], Label::Negative),
            ],
            false,
        )
        .unwrap()
    }

    #[test]
    fn linear_single_sample_stationary_point() {
        let data = Dataset::new("one", vec![Sample::new(&[3.0, 4.0], Label::Positive)], false).unwrap();
        let v = Matrix::from_row_slice(1, 2, &[0.6, 0.8]);
        let r = stationarity_residual(&[v], 3.0, &data).unwrap();
        assert!(r[0] < 1e-12);
        let off = Matrix::from_row_slice(1, 2, &[0.8, 0.6]);
        assert!(stationarity_residual(&[off], 3.0, &data).unwrap()[0] > 0.0);
    }

    #[test]
    fn separable_linear_hessian_is_positive_definite() {
        let v = Vector::from_vec(vec![0.8, -0.6]);
        let rep = linear_hessian(&v, 2.0, &pair()).unwrap();
        assert_eq!(rep.verdict, Definiteness::PositiveDefinite);
        let far = linear_hessian(&v, 20.0, &pair()).unwrap();
        assert!(far.min_eigenvalue < rep.min_eigenvalue);
    }

    #[test]
    fn single_layer_balance_is_vacuous() {
        let w = NetworkParams::linear(&[1.0, 2.0]);
        assert_eq!(norm_balance_residual(&w, &pair()).unwrap(), 0.0);
    }

    #[test]
    fn references_start_at_anchor() {
        for k in 1..=3 {
            let r = RhoReference::new(k, 0.7, 10.0, 4.0).unwrap();
            assert!((r.rho_at(10.0).unwrap() - 4.0).abs() < 1e-9, "K = {k}");
            assert!(r.rho_at(1e4).unwrap() > 4.0);
        }
    }

    #[test]
    fn one_layer_reference_grows_like_log() {
        let r = RhoReference::new(1, 1.0, 1.0, 1.0).unwrap();
        let ratio = |t: f64| r.rho_at(t).unwrap() / t.ln();
        assert!((ratio(1e8) / ratio(1e9) - 1.0).abs() < 0.05);
    }
}
