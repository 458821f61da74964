//! Tangent projectors `S = I − ννᵀ/‖ν‖²` onto the level sets of a p-norm,
//! and the closed-form Lagrange rescaling for unit L₂ constraints.

use alloc::format;

#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;

use crate::{Error, Matrix, Result, Vector};

/// Order of the norm that a constrained flow preserves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormOrder {
    One,
    Two,
    Infinity,
    /// Finite `p > 1`, `p ≠ 2`.
    P(f64),
}

impl NormOrder {
    pub fn new(p: f64) -> Result<NormOrder> {
        if p == 1.0 {
            Ok(NormOrder::One)
        } else if p == 2.0 {
            Ok(NormOrder::Two)
        } else if p == f64::INFINITY {
            Ok(NormOrder::Infinity)
        } else if p > 1.0 && p.is_finite() {
            Ok(NormOrder::P(p))
        } else {
            Err(Error::Domain(format!("norm order p = {p} must be 1, ∞ or > 1")))
        }
    }

    pub fn exponent(self) -> f64 {
        match self {
            NormOrder::One => 1.0,
            NormOrder::Two => 2.0,
            NormOrder::Infinity => f64::INFINITY,
            NormOrder::P(p) => p,
        }
    }

    pub fn norm(self, u: &[f64]) -> f64 {
        match self {
            NormOrder::One => u.iter().map(|v| v.abs()).sum(),
            NormOrder::Two => u.iter().map(|v| v * v).sum::<f64>().sqrt(),
            NormOrder::Infinity => u.iter().fold(0.0, |m, v| m.max(v.abs())),
            NormOrder::P(p) => u.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p),
        }
    }

    /// `ν = ∂‖u‖_p/∂u`. Fails where the norm is not differentiable: a zero
    /// coordinate for `p = 1`, a tied maximum for `p = ∞`, or `u = 0`.
    pub fn gradient(self, u: &[f64]) -> Result<Vector> {
        let norm = self.norm(u);
        if norm == 0.0 {
            return Err(Error::Kink("zero vector".into()));
        }
        match self {
            NormOrder::Two => Ok(Vector::from_iterator(u.len(), u.iter().map(|v| v / norm))),
            NormOrder::One => {
                if let Some(j) = u.iter().position(|v| *v == 0.0) {
                    return Err(Error::Kink(format!("coordinate {j} is zero under the 1-norm")));
                }
                Ok(Vector::from_iterator(u.len(), u.iter().map(|v| v.signum())))
            }
            NormOrder::Infinity => {
                let k = argmax_abs(u);
                if u
                    .iter()
                    .enumerate()
                    .any(|(j, v)| j != k && v.abs() == u[k].abs())
                {
                    return Err(Error::Kink("maximum coordinate is not unique".into()));
                }
                let mut nu = Vector::zeros(u.len());
                nu[k] = u[k].signum();
                Ok(nu)
            }
            NormOrder::P(p) => Ok(Vector::from_iterator(
                u.len(),
                u.iter().map(|v| v.signum() * (v.abs() / norm).powf(p - 1.0)),
            )),
        }
    }
}

pub(crate) fn argmax_abs(u: &[f64]) -> usize {
    let mut k = 0;
    for (j, v) in u.iter().enumerate() {
        if v.abs() > u[k].abs() {
            k = j;
        }
    }
    k
}

/// The map `g ↦ g − ν(νᵀg)/‖ν‖²`, stored through its axis `ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    axis: Vector,
    axis_sq: f64,
}

impl Projector {
    /// Projector for an arbitrary nonzero axis.
    pub fn new(axis: Vector) -> Result<Projector> {
        let axis_sq = axis.norm_squared();
        if !(axis_sq > 0.0) {
            return Err(Error::Domain("projector axis must be nonzero".into()));
        }
        Ok(Projector { axis, axis_sq })
    }

    /// `S = I − vvᵀ` for the L₂ sphere through `v`.
    pub fn sphere(v: &[f64]) -> Result<Projector> {
        Projector::new(Vector::from_column_slice(v))
    }

    /// Tangent projector of the p-norm level set through `u`.
    pub fn for_norm(u: &[f64], p: NormOrder) -> Result<Projector> {
        Projector::new(p.gradient(u)?)
    }

    pub fn axis(&self) -> &Vector {
        &self.axis
    }

    pub fn apply(&self, g: &Vector) -> Vector {
        let c = self.axis.dot(g) / self.axis_sq;
        g - &self.axis * c
    }

    pub fn apply_matrix(&self, g: &Matrix) -> Matrix {
        let flat = Vector::from_column_slice(g.as_slice());
        let out = self.apply(&flat);
        Matrix::from_column_slice(g.nrows(), g.ncols(), out.as_slice())
    }

    /// Dense `I − ννᵀ/‖ν‖²`; only used for checks on small problems.
    pub fn to_dense(&self) -> Matrix {
        let n = self.axis.len();
        Matrix::identity(n, n) - (&self.axis * self.axis.transpose()) / self.axis_sq
    }
}

/// Tangent-gradient increment `h = S_p g` with `ν = ∂‖u‖_p/∂u`, so that
/// `d‖u‖_p/dt = νᵀh = 0`.
pub fn tangent_project(u: &Vector, g: &Vector, p: NormOrder) -> Result<Vector> {
    if u.len() != g.len() {
        return Err(Error::Shape(format!(
            "point has {} coordinates, increment has {}",
            u.len(),
            g.len()
        )));
    }
    Ok(Projector::for_norm(u.as_slice(), p)?.apply(g))
}

/// Closed-form Lagrange rescaling: the `α` with `‖αv + g‖₂ = 1` for a unit
/// vector `v`, together with the multiplier `λ = (α − 1)/2`.
pub fn lagrange_alpha(v: &Vector, g: &Vector) -> Result<(f64, f64)> {
    if v.len() != g.len() {
        return Err(Error::Shape(format!(
            "point has {} coordinates, increment has {}",
            v.len(),
            g.len()
        )));
    }
    let vg = v.dot(g);
    let radicand = 1.0 - g.norm_squared() + vg * vg;
    if radicand < 0.0 {
        return Err(Error::StepTooLarge(radicand));
    }
    let alpha = radicand.sqrt() - vg;
    Ok((alpha, (alpha - 1.0) / 2.0))
}
