//! Independent ground truth: finite-difference gradients, exact small-scale
//! max-margin solutions, closed-form equilibria and the logarithmic integral.
//!
//! Nothing here calls the network evaluation, field or analysis code it is
//! used to check.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;

use nalgebra::LU;

use crate::{Dataset, Error, Matrix, Result, Vector};

fn relu_forward(layers: &[Matrix], x: &Vector) -> (f64, f64) {
    let mut a = x.clone();
    let mut closest = f64::INFINITY;
    for w in &layers[..layers.len() - 1] {
        let z = w * &a;
        closest = z.iter().fold(closest, |m, v| m.min(v.abs()));
        a = z.map(|v| v.max(0.0));
    }
    let out = (&layers[layers.len() - 1] * &a)[(0, 0)];
    (out, closest)
}

/// Central-difference gradient of `f(W;x)` with respect to every weight.
///
/// Fails with a kink error if any hidden pre-activation, at the base point
/// or at a perturbed point, is within `10·step` of zero.
pub fn fd_gradient(layers: &[Matrix], x: &Vector, step: f64) -> Result<Vec<Matrix>> {
    if layers.is_empty() || x.len() != layers[0].ncols() {
        return Err(Error::Shape("input does not match the first layer".into()));
    }
    let guard = 10.0 * step;
    let (_, closest) = relu_forward(layers, x);
    if closest < guard {
        return Err(Error::Kink(format!("pre-activation {closest:e} within {guard:e} of zero")));
    }
    let mut work: Vec<Matrix> = layers.to_vec();
    let mut out = Vec::with_capacity(layers.len());
    for k in 0..layers.len() {
        let mut g = Matrix::zeros(layers[k].nrows(), layers[k].ncols());
        for i in 0..layers[k].nrows() {
            for j in 0..layers[k].ncols() {
                let base = work[k][(i, j)];
                work[k][(i, j)] = base + step;
                let (fp, cp) = relu_forward(&work, x);
                work[k][(i, j)] = base - step;
                let (fm, cm) = relu_forward(&work, x);
                work[k][(i, j)] = base;
                if cp.min(cm) < guard {
                    return Err(Error::Kink(format!(
                        "perturbing layer {k} entry ({i}, {j}) approaches a kink"
                    )));
                }
                g[(i, j)] = (fp - fm) / (2.0 * step);
            }
        }
        out.push(g);
    }
    Ok(out)
}

/// Exact max-margin solution of a linear separable problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxMarginSolution {
    /// Unit max-margin direction.
    pub direction: Vector,
    /// `min_n y_n ⟨direction, x_n⟩`.
    pub margin: f64,
    pub support: Vec<usize>,
}

fn next_subset(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Minimum-norm `w` with `y_n wᵀx_n ≥ 1` for all `n`, found by enumerating
/// every candidate support set of at most `d` samples, solving its
/// equal-margin system `Σ_j α_j y_i y_j x_iᵀx_j = 1` and keeping the smallest
/// feasible solution. Samples within `resolution` (relative) of the margin
/// form the support set.
pub fn hard_margin_direction(data: &Dataset, resolution: f64) -> Result<MaxMarginSolution> {
    let xs: Vec<Vector> = data
        .samples()
        .iter()
        .map(|s| &s.x * s.y.sign())
        .collect();
    let n = xs.len();
    let d = data.dim();
    let mut best: Option<Vector> = None;
    for size in 1..=d.min(n) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let gram = Matrix::from_fn(size, size, |a, b| xs[idx[a]].dot(&xs[idx[b]]));
            if let Some(alpha) = LU::new(gram).solve(&Vector::from_element(size, 1.0)) {
                let mut w = Vector::zeros(d);
                for (a, &i) in alpha.iter().zip(&idx) {
                    w.axpy(*a, &xs[i], 1.0);
                }
                let feasible = w.iter().all(|v| v.is_finite())
                    && xs.iter().all(|x| w.dot(x) >= 1.0 - 1e-9);
                if feasible && best.as_ref().is_none_or(|b| w.norm() < b.norm()) {
                    best = Some(w);
                }
            }
            if !next_subset(&mut idx, n) {
                break;
            }
        }
    }
    let w = best.ok_or_else(|| Error::Infeasible(format!("{} is not linearly separable", data.name())))?;
    let direction = &w / w.norm();
    let values: Vec<f64> = xs.iter().map(|x| direction.dot(x)).collect();
    let margin = values.iter().copied().fold(f64::INFINITY, f64::min);
    let support = values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v <= margin + resolution * (margin.abs() + 1.0))
        .map(|(i, _)| i)
        .collect();
    Ok(MaxMarginSolution {
        direction,
        margin,
        support,
    })
}

/// Best normalized margin of a two-layer net `w₂ᵀσ(W₁x)` found on a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepMarginGrid {
    pub first: Matrix,
    pub second: Matrix,
    pub margin: f64,
    /// Other lattice points within `1e-6` of the best margin.
    pub near_ties: usize,
}

fn lattice_directions(dim: usize, per_axis: usize) -> Vec<Vector> {
    let side = 2 * per_axis + 1;
    let total = side.pow(dim as u32);
    let mut out = Vec::new();
    for code in 0..total {
        let mut c = code;
        let v = Vector::from_fn(dim, |_, _| {
            let digit = (c % side) as f64 - per_axis as f64;
            c /= side;
            digit
        });
        let n = v.norm();
        if n > 0.0 {
            out.push(v / n);
        }
    }
    out
}

/// Grid search over unit-Frobenius pairs `(W₁, w₂)` with `hidden ≤ 3`
/// units; every layer ranges over the normalized integer lattice
/// `{−m, …, m}^size`. A backstop for tiny problems only.
pub fn deep_margin_grid(data: &Dataset, hidden: usize, per_axis: usize) -> Result<DeepMarginGrid> {
    if hidden == 0 || hidden > 3 {
        return Err(Error::Domain(format!("hidden width {hidden} outside 1..=3")));
    }
    let d = data.dim();
    let side = (2 * per_axis + 1) as f64;
    if side.powi((hidden * d + hidden) as i32) > 2e7 {
        return Err(Error::Domain("grid too large".into()));
    }
    let firsts = lattice_directions(hidden * d, per_axis);
    let seconds = lattice_directions(hidden, per_axis);
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    let mut margins = Vec::with_capacity(firsts.len() * seconds.len());
    for (i, f) in firsts.iter().enumerate() {
        let w1 = Matrix::from_column_slice(hidden, d, f.as_slice());
        let hiddens: Vec<(Vector, f64)> = data
            .samples()
            .iter()
            .map(|s| ((&w1 * &s.x).map(|v| v.max(0.0)), s.y.sign()))
            .collect();
        for (j, w2) in seconds.iter().enumerate() {
            let m = hiddens
                .iter()
                .map(|(h, y)| y * w2.dot(h))
                .fold(f64::INFINITY, f64::min);
            margins.push(m);
            if m > best.0 {
                best = (m, i, j);
            }
        }
    }
    let near_ties = margins.iter().filter(|m| **m >= best.0 - 1e-6).count() - 1;
    Ok(DeepMarginGrid {
        first: Matrix::from_column_slice(hidden, d, firsts[best.1].as_slice()),
        second: Matrix::from_row_slice(1, hidden, seconds[best.2].as_slice()),
        margin: best.0,
        near_ties,
    })
}

/// Equilibrium `w* = log(x2/x1)/(x1 + x2)` of the one-dimensional pair
/// `(x1, −1)`, `(x2, +1)`.
pub fn closed_form_1d(x1: f64, x2: f64) -> Result<f64> {
    if !(x1 > 0.0 && x2 > 0.0 && x1.is_finite() && x2.is_finite()) {
        return Err(Error::Domain(format!("inputs ({x1}, {x2}) must be positive")));
    }
    Ok((x2 / x1).ln() / (x1 + x2))
}

/// Unit representative `x/‖x‖` of the fixed point `vvᵀx = x`.
pub fn pseudoinverse_fixed_point(x: &Vector) -> Result<Vector> {
    let n = x.norm();
    if !(n > 0.0) {
        return Err(Error::Domain("the fixed point of the zero vector is undefined".into()));
    }
    Ok(x / n)
}

fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, 48)
}

const QUAD_TOL: f64 = 1e-13;

/// `Shi(x) = ∫₀ˣ sinh(u)/u du`.
fn shi(x: f64) -> f64 {
    let f = |u: f64| if u == 0.0 { 1.0 } else { u.sinh() / u };
    // Split at unit intervals so the relative tolerance holds for the fast
    // growth of sinh.
    let mut total = 0.0;
    let mut a = 0.0;
    while a < x {
        let b = (a + 1.0).min(x);
        total += adaptive_simpson(f, a, b, QUAD_TOL * f(b).max(1.0));
        a = b;
    }
    total
}

/// `E₁(x) = ∫ₓ^∞ e^{-t}/t dt = ∫_{ln x}^∞ e^{-e^q} dq` for `x > 0`.
fn e1(x: f64) -> f64 {
    let lo = x.ln();
    let hi = 6.7f64.max(lo + 1.0);
    let f = |q: f64| (-q.exp()).exp();
    let mut total = 0.0;
    let mut a = lo;
    while a < hi {
        let b = (a + 1.0).min(hi);
        total += adaptive_simpson(f, a, b, QUAD_TOL * 1e-3);
        a = b;
    }
    total
}

/// Exponential integral `Ei(x)` (principal value), `x ≠ 0`, through
/// `Ei(x) = 2 Shi(x) − E₁(x)` for `x > 0` and `Ei(x) = −E₁(−x)` for `x < 0`.
pub fn ei(x: f64) -> Result<f64> {
    if x == 0.0 || !x.is_finite() {
        return Err(Error::Domain(format!("Ei is undefined at {x}")));
    }
    if x > 709.0 {
        return Err(Error::Domain(format!("Ei({x}) overflows")));
    }
    Ok(if x > 0.0 { 2.0 * shi(x) - e1(x) } else { -e1(-x) })
}

/// The `s > 0` with `Ei(s) = y`, by bracketing, bisection and Newton steps.
pub fn ei_inverse(y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::Domain(format!("Ei⁻¹ is undefined at {y}")));
    }
    let mut lo = 1.0;
    let mut hi = 1.0;
    while ei(lo)? > y {
        lo /= 2.0;
        if lo < 1e-300 {
            return Err(Error::Domain(format!("Ei⁻¹({y}) underflows")));
        }
    }
    while ei(hi)? < y {
        hi *= 2.0;
        if hi > 709.0 {
            hi = 709.0;
            if ei(hi)? < y {
                return Err(Error::Domain(format!("Ei⁻¹({y}) overflows")));
            }
        }
    }
    while (hi - lo) > 1e-4 * lo {
        let mid = 0.5 * (lo + hi);
        if ei(mid)? < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..50 {
        let next = s - (ei(s)? - y) * s / s.exp();
        let next = next.clamp(lo, hi);
        if (next - s).abs() <= 1e-15 * s {
            s = next;
            break;
        }
        s = next;
    }
    Ok(s)
}

/// Logarithmic integral `li(z) = PV ∫₀ᶻ dt/ln t = Ei(ln z)`, `z > 0`, `z ≠ 1`.
pub fn li(z: f64) -> Result<f64> {
    if !(z > 0.0) || z == 1.0 {
        return Err(Error::Domain(format!("li is undefined at {z}")));
    }
    ei(z.ln())
}

/// The `z > 1` with `li(z) = y`.
pub fn li_inverse(y: f64) -> Result<f64> {
    Ok(ei_inverse(y)?.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Label, Sample};
    use alloc::vec;

    #[test]
    fn linear_fd_gradient_is_input() {
        let w = vec![Matrix::from_row_slice(1, 3, &[0.3, -1.0, 2.0])];
        let x = Vector::from_vec(vec![1.5, 2.0, -0.5]);
        let g = fd_gradient(&w, &x, 1e-2).unwrap();
        assert!((&g[0].transpose() - &x).norm() < 1e-12);
    }

    #[test]
    fn fd_rejects_kinks() {
        let w = vec![
            Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            Matrix::from_row_slice(1, 2, &[1.0, 1.0]),
        ];
        let x = Vector::from_vec(vec![1.0, 1e-7]);
        assert!(matches!(fd_gradient(&w, &x, 1e-6), Err(Error::Kink(_))));
    }

    #[test]
    fn symmetric_pair_margin() {
        let data = Dataset::from_rows(
            "sym",
            &[(vec![1.0], Label::Positive), (vec![-1.0], Label::Negative)],
            true,
        )
        .unwrap();
        let sol = hard_margin_direction(&data, 1e-9).unwrap();
        assert!((sol.direction[0] - 1.0).abs() < 1e-12 && sol.direction[1].abs() < 1e-12);
        assert!((sol.margin - 1.0).abs() < 1e-12);
        assert_eq!(sol.support, vec![0, 1]);
    }

    #[test]
    fn interior_point_does_not_move_solution() {
        let base = [
            (vec![2.0, 1.0], Label::Positive),
            (vec![-1.0, -1.5], Label::Negative),
            (vec![1.0, 2.5], Label::Positive),
        ];
        let a = hard_margin_direction(&Dataset::from_rows("a", &base, true).unwrap(), 1e-9).unwrap();
        let mut more = base.to_vec();
        more.push((vec![5.0, 5.0], Label::Positive));
        let b = hard_margin_direction(&Dataset::from_rows("b", &more, true).unwrap(), 1e-9).unwrap();
        assert!((a.direction - b.direction).norm() < 1e-12);
    }

    #[test]
    fn non_separable_is_infeasible() {
        let data = Dataset::new(
            "xor",
            vec![
                Sample::new(&[1.0, 1.0], Label::Positive),
                Sample::new(&[-1.0, -1.0], Label::Positive),
                Sample::new(&[1.0, -1.0], Label::Negative),
                Sample::new(&[-1.0, 1.0], Label::Negative),
            ],
            false,
        )
        .unwrap();
        assert!(matches!(hard_margin_direction(&data, 1e-9), Err(Error::Infeasible(_))));
    }

    #[test]
    fn closed_form_values() {
        assert!((closed_form_1d(1.0, 2.0).unwrap() - 0.231_049_060_186_648_4).abs() < 1e-15);
        assert_eq!(closed_form_1d(3.0, 3.0).unwrap(), 0.0);
        assert!(closed_form_1d(0.0, 1.0).is_err());
    }

    #[test]
    fn pseudoinverse_fixed_point_values() {
        let x = Vector::from_vec(vec![3.0, 4.0]);
        let v = pseudoinverse_fixed_point(&x).unwrap();
        assert_eq!(v.as_slice(), &[0.6, 0.8]);
        assert!((&v * v.dot(&x) - &x).norm() < 1e-14);
        assert!(pseudoinverse_fixed_point(&Vector::zeros(2)).is_err());
    }

    #[test]
    fn li_round_trip() {
        assert!((li_inverse(li(5.0).unwrap()).unwrap() - 5.0).abs() < 5e-9);
        assert!(li(1.0).is_err());
    }

    #[test]
    fn deep_grid_finds_positive_margin() {
        let data = Dataset::from_rows(
            "sep",
            &[(vec![1.0], Label::Positive), (vec![-1.0], Label::Negative)],
            true,
        )
        .unwrap();
        let g = deep_margin_grid(&data, 2, 2).unwrap();
        assert!(g.margin > 0.0);
        assert!((g.first.norm() - 1.0).abs() < 1e-12);
    }
}
