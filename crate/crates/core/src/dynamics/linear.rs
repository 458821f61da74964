//! `K = 1` specializations, `f = wᵀx`.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;

use super::{loss_weights, ExponentMode, Scaled};
use crate::{Dataset, Error, Matrix, Result, Vector};

fn check_dim(w: &Vector, data: &Dataset) -> Result<()> {
    if w.len() != data.dim() {
        return Err(Error::Shape(format!(
            "weights have {} entries, data dimension is {}",
            w.len(),
            data.dim()
        )));
    }
    Ok(())
}

fn signed(w: &Vector, data: &Dataset) -> Vec<f64> {
    data.samples().iter().map(|s| s.y.sign() * w.dot(&s.x)).collect()
}

/// `ẇ = Σ_n y_n x_n e^{-y_n wᵀx_n}`.
pub fn field_linear_unconstrained(
    w: &Vector,
    data: &Dataset,
    mode: ExponentMode,
) -> Result<Scaled<Vector>> {
    check_dim(w, data)?;
    let (weights, log_scale) = loss_weights(&signed(w, data), mode);
    let mut out = Vector::zeros(w.len());
    for (s, e) in data.samples().iter().zip(&weights) {
        out.axpy(e * s.y.sign(), &s.x, 1.0);
    }
    Ok(Scaled {
        value: out,
        log_scale,
    })
}

/// `v̇ = ρ Σ_n e^{-ρ y_n vᵀx_n} y_n (x_n − v vᵀx_n)` for a unit `v`.
pub fn field_linear_constrained(
    v: &Vector,
    rho: f64,
    data: &Dataset,
    mode: ExponentMode,
) -> Result<Scaled<Vector>> {
    check_dim(v, data)?;
    let margins: Vec<f64> = signed(v, data).iter().map(|m| rho * m).collect();
    let (weights, log_scale) = loss_weights(&margins, mode);
    let mut out = Vector::zeros(v.len());
    for (s, e) in data.samples().iter().zip(&weights) {
        let c = rho * e * s.y.sign();
        out.axpy(c, &s.x, 1.0);
        out.axpy(-c * v.dot(&s.x), v, 1.0);
    }
    Ok(Scaled {
        value: out,
        log_scale,
    })
}

/// The multiplier `λ = (ρ/2) Σ_n e^{-ρ y_n vᵀx_n} y_n vᵀx_n` that keeps `‖v‖ = 1`.
pub fn linear_lambda(v: &Vector, rho: f64, data: &Dataset) -> Result<f64> {
    check_dim(v, data)?;
    Ok(0.5
        * rho
        * signed(v, data)
            .iter()
            .map(|m| (-rho * m).exp() * m)
            .sum::<f64>())
}

/// Jacobian of the unconstrained linear field, `∂ẇ/∂w = −Σ_n e^{-y_n wᵀx_n} x_n x_nᵀ`.
pub fn field_linear_jacobian(w: &Vector, data: &Dataset) -> Result<Matrix> {
    check_dim(w, data)?;
    let d = w.len();
    let mut out = Matrix::zeros(d, d);
    for (s, m) in data.samples().iter().zip(signed(w, data)) {
        out.ger(-(-m).exp(), &s.x, &s.x, 1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Label, Sample};
    use alloc::vec;

    fn two_point_pair() -> Dataset {
        Dataset::new(
            "pair",
            vec![
                Sample::new(&[1.0], Label::Negative),
                Sample::new(&[2.0], Label::Positive),
            ],
            false,
        )
        .unwrap()
    }

    #[test]
    fn one_dimensional_pair_equilibrium() {
        let data = two_point_pair();
        let w_star = Vector::from_vec(vec![2f64.ln() / 3.0]);
        let f = field_linear_unconstrained(&w_star, &data, ExponentMode::Raw).unwrap();
        assert!(f.value[0].abs() < 1e-12);
        let w = Vector::from_vec(vec![0.7]);
        let f = field_linear_unconstrained(&w, &data, ExponentMode::Raw).unwrap();
        let expect = -(0.7f64).exp() + 2.0 * (-1.4f64).exp();
        assert!((f.value[0] - expect).abs() < 1e-14);
        assert!(field_linear_jacobian(&w_star, &data).unwrap()[(0, 0)] < 0.0);
    }

    #[test]
    fn shifted_mode_is_a_positive_rescaling() {
        let data = two_point_pair();
        let w = Vector::from_vec(vec![-3.0]);
        let raw = field_linear_unconstrained(&w, &data, ExponentMode::Raw).unwrap();
        let sh = field_linear_unconstrained(&w, &data, ExponentMode::Shifted).unwrap();
        assert!((raw.value[0] - sh.value[0] * sh.log_scale.exp()).abs() < 1e-12 * raw.value[0].abs());
    }

    #[test]
    fn constrained_single_sample_critical_point() {
        let data = Dataset::new("one", vec![Sample::new(&[3.0, 4.0], Label::Positive)], false).unwrap();
        let v = Vector::from_vec(vec![0.6, 0.8]);
        let f = field_linear_constrained(&v, 2.0, &data, ExponentMode::Raw).unwrap();
        assert!(f.value.norm() < 1e-15);
        let lam = linear_lambda(&v, 2.0, &data).unwrap();
        assert!((lam - 5.0 * (-10.0f64).exp()).abs() < 1e-15);
    }
}
