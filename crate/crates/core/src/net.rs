//! K-layer ReLU networks `f(W;x) = W_K σ(W_{K-1} ⋯ σ(W_1 x))`, their exact
//! per-layer gradients, and the norm/direction decomposition `W_k = ρ_k V_k`.
//!
//! Every hidden layer applies `σ(z) = max(z, 0)`; the output layer is linear
//! and has a single row. Biases are never stored in the layers: a dataset may
//! instead carry a constant `1` as its last input coordinate.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;


use crate::{Error, Matrix, Result, Vector};

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    /// Maps `+1` / `-1` to a label; anything else is rejected.
    pub fn from_sign(y: f64) -> Option<Label> {
        if y == 1.0 {
            Some(Label::Positive)
        } else if y == -1.0 {
            Some(Label::Negative)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vector,
    pub y: Label,
}

impl Sample {
    pub fn new(x: &[f64], y: Label) -> Self {
        Sample {
            x: Vector::from_column_slice(x),
            y,
        }
    }
}

/// A labelled binary dataset. When `bias` is set the last coordinate of every
/// input is the constant 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    samples: Vec<Sample>,
    bias: bool,
}

impl Dataset {
    pub fn new(name: impl Into<String>, samples: Vec<Sample>, bias: bool) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::InvalidData("dataset has no samples".into()));
        };
        let d = first.x.len();
        if d == 0 {
            return Err(Error::InvalidData("inputs have dimension 0".into()));
        }
        for (n, s) in samples.iter().enumerate() {
            if s.x.len() != d {
                return Err(Error::InvalidData(format!(
                    "sample {n} has dimension {} (expected {d})",
                    s.x.len()
                )));
            }
            if s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("sample {n} has a non-finite feature")));
            }
            if bias && s.x[d - 1] != 1.0 {
                return Err(Error::InvalidData(format!(
                    "sample {n}: bias coordinate is {} (expected 1)",
                    s.x[d - 1]
                )));
            }
        }
        Ok(Dataset {
            name: name.into(),
            samples,
            bias,
        })
    }

    /// Builds a dataset from raw feature rows, appending the bias coordinate
    /// when requested.
    pub fn from_rows(
        name: impl Into<String>,
        rows: &[(Vec<f64>, Label)],
        bias: bool,
    ) -> Result<Self> {
        let samples = rows
            .iter()
            .map(|(x, y)| {
                let mut x = x.clone();
                if bias {
                    x.push(1.0);
                }
                Sample::new(&x, *y)
            })
            .collect();
        Dataset::new(name, samples, bias)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].x.len()
    }

    pub fn has_bias(&self) -> bool {
        self.bias
    }

    /// Keeps only the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut samples = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self.samples.get(i).ok_or_else(|| {
                Error::InvalidData(format!("subset index {i} out of range ({})", self.len()))
            })?;
            samples.push(s.clone());
        }
        Dataset::new(self.name.clone(), samples, self.bias)
    }
}

/// Per-layer activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `pre[k] = W_k a_k` for the hidden layers.
    pub pre: Vec<Vector>,
    /// `act[0] = x`, `act[k+1] = σ(pre[k])`.
    pub act: Vec<Vector>,
    pub output: f64,
}

impl ForwardPass {
    /// Smallest |pre-activation| over all hidden units; `+∞` for linear nets.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.pre
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

/// Weights `W_1, …, W_K` of a ReLU network; layer `k` has shape `h_k × h_{k-1}`
/// and the last layer has a single row.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layers: Vec<Matrix>,
}

impl NetworkParams {
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        check_layers(&layers)?;
        if layers.iter().any(|w| w.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("network weights"));
        }
        Ok(NetworkParams { layers })
    }

    /// Single-layer (linear) network `f = wᵀx`.
    pub fn linear(w: &[f64]) -> Self {
        NetworkParams {
            layers: alloc::vec![Matrix::from_row_slice(1, w.len(), w)],
        }
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Matrix> {
        self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].ncols()
    }

    /// Layer sizes `(d = h_0, h_1, …, h_K = 1)`.
    pub fn dims(&self) -> Vec<usize> {
        dims_of(&self.layers)
    }

    /// Product of the per-layer Frobenius norms.
    pub fn rho(&self) -> f64 {
        self.layers.iter().map(|w| w.norm()).product()
    }

    /// Copy with layer `k` multiplied by `alpha`.
    pub fn scale_layer(&self, k: usize, alpha: f64) -> NetworkParams {
        let mut layers = self.layers.clone();
        layers[k] *= alpha;
        NetworkParams { layers }
    }

    pub fn forward_pass(&self, x: &Vector) -> Result<ForwardPass> {
        forward_pass(&self.layers, x)
    }

    pub fn forward(&self, x: &Vector) -> Result<f64> {
        Ok(forward_pass(&self.layers, x)?.output)
    }

    /// Exact gradients `∂f/∂W_k` at fixed `x`. The ReLU derivative at exactly
    /// zero is taken as 0.
    pub fn grad_weights(&self, x: &Vector) -> Result<Vec<Matrix>> {
        Ok(self.forward_and_grad(x)?.1)
    }

    pub fn forward_and_grad(&self, x: &Vector) -> Result<(f64, Vec<Matrix>)> {
        forward_and_grad(&self.layers, x)
    }

    /// `r_k = |⟨W_k, ∂f/∂W_k⟩ − f(W;x)|` for every layer.
    pub fn structural_residual(&self, x: &Vector) -> Result<Vec<f64>> {
        let (f, grads) = self.forward_and_grad(x)?;
        Ok(self
            .layers
            .iter()
            .zip(&grads)
            .map(|(w, g)| (w.dot(g) - f).abs())
            .collect())
    }

    /// Frobenius norm of `(∂²f/∂W_k²)·W_k`, the directional derivative of the
    /// layer gradient along the layer itself, estimated by a central
    /// difference of step `h`. Piecewise linearity makes this vanish away from
    /// kinks.
    pub fn second_order_residual(&self, x: &Vector, h: f64) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.depth());
        for k in 0..self.depth() {
            let up = self.scale_layer(k, 1.0 + h).grad_weights(x)?;
            let down = self.scale_layer(k, 1.0 - h).grad_weights(x)?;
            out.push(((&up[k] - &down[k]) / (2.0 * h)).norm());
        }
        Ok(out)
    }

    /// Splits every layer into `ρ_k = ‖W_k‖_F` and `V_k = W_k / ρ_k`.
    pub fn decompose(&self) -> Result<NormalizedParams> {
        let mut rhos = Vec::with_capacity(self.depth());
        let mut dirs = Vec::with_capacity(self.depth());
        for (k, w) in self.layers.iter().enumerate() {
            let rho = w.norm();
            if rho <= 0.0 {
                return Err(Error::DegenerateLayer { layer: k });
            }
            rhos.push(rho);
            dirs.push(w / rho);
        }
        Ok(NormalizedParams::from_parts_unchecked(rhos, dirs))
    }

    /// `y_n f(W;x_n)` for every sample.
    pub fn signed_outputs(&self, data: &Dataset) -> Result<Vec<f64>> {
        data.samples()
            .iter()
            .map(|s| Ok(s.y.sign() * self.forward(&s.x)?))
            .collect()
    }

    /// Margin `min_n y_n f(W;x_n)` and the samples within the support band.
    pub fn margin_and_support(&self, data: &Dataset, tol_sv: f64) -> Result<(f64, Vec<usize>)> {
        Ok(margin_and_support(&self.signed_outputs(data)?, tol_sv))
    }

    /// True iff every sample is classified correctly.
    pub fn separates(&self, data: &Dataset) -> Result<bool> {
        Ok(self.margin_and_support(data, 0.0)?.0 > 0.0)
    }
}

/// Norms `ρ_k` and unit-Frobenius-norm directions `V_k` with `W_k = ρ_k V_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedParams {
    rhos: Vec<f64>,
    dirs: Vec<Matrix>,
    rho: f64,
}

/// Tolerance on `‖V_k‖_F − 1` accepted by [`NormalizedParams::new`].
pub const UNIT_NORM_TOL: f64 = 1e-9;

impl NormalizedParams {
    pub fn new(rhos: Vec<f64>, dirs: Vec<Matrix>) -> Result<Self> {
        check_layers(&dirs)?;
        if rhos.len() != dirs.len() {
            return Err(Error::Shape(format!(
                "{} norms for {} layers",
                rhos.len(),
                dirs.len()
            )));
        }
        for (k, &r) in rhos.iter().enumerate() {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::DegenerateLayer { layer: k });
            }
        }
        check_unit_norm(&dirs, UNIT_NORM_TOL)?;
        Ok(Self::from_parts_unchecked(rhos, dirs))
    }

    pub(crate) fn from_parts_unchecked(rhos: Vec<f64>, dirs: Vec<Matrix>) -> Self {
        let rho = rhos.iter().product();
        NormalizedParams { rhos, dirs, rho }
    }

    pub fn rhos(&self) -> &[f64] {
        &self.rhos
    }

    pub fn dirs(&self) -> &[Matrix] {
        &self.dirs
    }

    /// Product norm `ρ = ∏ ρ_k`.
    pub fn rho_product(&self) -> f64 {
        self.rho
    }

    pub fn depth(&self) -> usize {
        self.dirs.len()
    }

    /// `W_k = ρ_k V_k`.
    pub fn compose(&self) -> NetworkParams {
        NetworkParams {
            layers: self
                .rhos
                .iter()
                .zip(&self.dirs)
                .map(|(r, v)| v * *r)
                .collect(),
        }
    }

    /// The unit-norm network `f(V; ·)`.
    pub fn direction_net(&self) -> NetworkParams {
        NetworkParams {
            layers: self.dirs.clone(),
        }
    }
}

/// Margin and support set from precomputed values `y_n f(x_n)`.
///
/// The support band is `y_n f ≤ margin + tol_sv·(|margin| + 1)`, which equals
/// `margin·(1 + tol_sv) + tol_sv` for positive margins.
pub fn margin_and_support(signed: &[f64], tol_sv: f64) -> (f64, Vec<usize>) {
    let margin = signed.iter().copied().fold(f64::INFINITY, f64::min);
    let band = margin + tol_sv * (margin.abs() + 1.0);
    let support = signed
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= band)
        .map(|(n, _)| n)
        .collect();
    (margin, support)
}

pub(crate) fn dims_of(layers: &[Matrix]) -> Vec<usize> {
    let mut dims = Vec::with_capacity(layers.len() + 1);
    dims.push(layers[0].ncols());
    dims.extend(layers.iter().map(|w| w.nrows()));
    dims
}

pub(crate) fn check_layers(layers: &[Matrix]) -> Result<()> {
    let Some(last) = layers.last() else {
        return Err(Error::Shape("a network needs at least one layer".into()));
    };
    if last.nrows() != 1 {
        return Err(Error::Shape(format!(
            "output layer has {} rows (expected 1)",
            last.nrows()
        )));
    }
    for (k, pair) in layers.windows(2).enumerate() {
        if pair[1].ncols() != pair[0].nrows() {
            return Err(Error::Shape(format!(
                "layer {} expects {} inputs but layer {k} has {} outputs",
                k + 1,
                pair[1].ncols(),
                pair[0].nrows()
            )));
        }
    }
    if layers.iter().any(|w| w.is_empty()) {
        return Err(Error::Shape("empty layer".into()));
    }
    Ok(())
}

pub(crate) fn check_unit_norm(dirs: &[Matrix], tol: f64) -> Result<()> {
    for (k, v) in dirs.iter().enumerate() {
        let norm = v.norm();
        if (norm - 1.0).abs() > tol {
            return Err(Error::NotUnitNorm { layer: k, norm });
        }
    }
    Ok(())
}

pub(crate) fn forward_pass(layers: &[Matrix], x: &Vector) -> Result<ForwardPass> {
    if x.len() != layers[0].ncols() {
        return Err(Error::Shape(format!(
            "input has dimension {} (network expects {})",
            x.len(),
            layers[0].ncols()
        )));
    }
    let depth = layers.len();
    let mut pre = Vec::with_capacity(depth - 1);
    let mut act = Vec::with_capacity(depth);
    act.push(x.clone());
    for w in &layers[..depth - 1] {
        let z = w * act.last().unwrap();
        act.push(z.map(|v| if v > 0.0 { v } else { 0.0 }));
        pre.push(z);
    }
    let output = (layers[depth - 1].row(0) * act.last().unwrap())[(0, 0)];
    Ok(ForwardPass { pre, act, output })
}

pub(crate) fn forward_and_grad(layers: &[Matrix], x: &Vector) -> Result<(f64, Vec<Matrix>)> {
    let pass = forward_pass(layers, x)?;
    let depth = layers.len();
    let mut grads: Vec<Matrix> = Vec::with_capacity(depth);
    // delta = ∂f/∂(output of layer k), walking from the top.
    let mut delta = Vector::from_element(1, 1.0);
    for k in (0..depth).rev() {
        grads.push(&delta * pass.act[k].transpose());
        if k > 0 {
            let mut back = layers[k].tr_mul(&delta);
            for (b, z) in back.iter_mut().zip(pass.pre[k - 1].iter()) {
                if *z <= 0.0 {
                    *b = 0.0;
                }
            }
            delta = back;
        }
    }
    grads.reverse();
    Ok((pass.output, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn linear_forward_and_gradient() {
        let net = NetworkParams::linear(&[1.0, 2.0]);
        let x = Vector::from_vec(vec![3.0, -1.0]);
        assert_eq!(net.forward(&x).unwrap(), 1.0);
        let g = net.grad_weights(&x).unwrap();
        assert_eq!(g[0], mat(1, 2, &[3.0, -1.0]));
    }

    #[test]
    fn two_layer_hand_evaluation() {
        let net = NetworkParams::new(vec![
            mat(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            mat(1, 2, &[1.0, -1.0]),
        ])
        .unwrap();
        let x = Vector::from_vec(vec![2.0, -3.0]);
        assert_eq!(net.forward(&x).unwrap(), 2.0);
        let g = net.grad_weights(&x).unwrap();
        // Only the first hidden unit is active.
        assert_eq!(g[1], mat(1, 2, &[2.0, 0.0]));
        assert_eq!(g[0], mat(2, 2, &[2.0, -3.0, 0.0, 0.0]));
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let net = NetworkParams::new(vec![
            mat(3, 2, &[0.3, -1.2, 0.5, 0.7, -0.4, 2.0]),
            mat(1, 3, &[1.0, -2.0, 0.5]),
        ])
        .unwrap();
        assert_eq!(net.forward(&Vector::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn dead_hidden_layer_kills_everything_below() {
        let net = NetworkParams::new(vec![
            mat(2, 2, &[-1.0, 0.0, 0.0, -1.0]),
            mat(1, 2, &[1.0, 1.0]),
        ])
        .unwrap();
        let x = Vector::from_vec(vec![1.0, 2.0]);
        let (f, g) = net.forward_and_grad(&x).unwrap();
        assert_eq!(f, 0.0);
        assert!(g.iter().all(|m| m.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(
            NetworkParams::new(vec![mat(2, 2, &[1.0; 4])]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            NetworkParams::new(vec![mat(2, 3, &[1.0; 6]), mat(1, 3, &[1.0; 3])]),
            Err(Error::Shape(_))
        ));
        let net = NetworkParams::linear(&[1.0, 2.0]);
        assert!(matches!(
            net.forward(&Vector::zeros(3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn decompose_and_compose() {
        let net = NetworkParams::linear(&[3.0, 4.0]);
        let norm = net.decompose().unwrap();
        assert_eq!(norm.rhos(), &[5.0]);
        assert_eq!(norm.dirs()[0], mat(1, 2, &[0.6, 0.8]));
        assert_eq!(norm.compose(), net);

        let unit = NetworkParams::linear(&[0.6, 0.8]);
        let n = unit.decompose().unwrap();
        assert_eq!(n.rhos(), &[1.0]);
        assert_eq!(n.compose(), unit);

        let zero = NetworkParams::linear(&[0.0, 0.0]);
        assert_eq!(zero.decompose(), Err(Error::DegenerateLayer { layer: 0 }));
    }

    #[test]
    fn normalized_params_validate() {
        assert!(NormalizedParams::new(vec![5.0], vec![mat(1, 2, &[0.6, 0.8])]).is_ok());
        assert!(matches!(
            NormalizedParams::new(vec![5.0], vec![mat(1, 2, &[3.0, 4.0])]),
            Err(Error::NotUnitNorm { layer: 0, .. })
        ));
        assert!(matches!(
            NormalizedParams::new(vec![-1.0], vec![mat(1, 2, &[0.6, 0.8])]),
            Err(Error::DegenerateLayer { layer: 0 })
        ));
    }

    #[test]
    fn margin_support_band() {
        let (m, s) = margin_and_support(&[0.5, 2.0], 1e-3);
        assert_eq!(m, 0.5);
        assert_eq!(s, vec![0]);
        let (m, s) = margin_and_support(&[1.5, 1.5, 1.5], 1e-3);
        assert_eq!(m, 1.5);
        assert_eq!(s, vec![0, 1, 2]);
    }

    #[test]
    fn bias_convention_checked() {
        let bad = Dataset::new("b", vec![Sample::new(&[1.0, 0.5], Label::Positive)], true);
        assert!(matches!(bad, Err(Error::InvalidData(_))));
        let ok = Dataset::from_rows("b", &[(vec![1.0], Label::Positive)], true).unwrap();
        assert_eq!(ok.samples()[0].x.as_slice(), &[1.0, 1.0]);
        assert!(Dataset::new("e", vec![], false).is_err());
    }

    #[test]
    fn second_order_residual_vanishes() {
        let net = NetworkParams::new(vec![
            mat(3, 2, &[0.3, -1.2, 0.5, 0.7, -0.4, 2.0]),
            mat(1, 3, &[1.0, -2.0, 0.5]),
        ])
        .unwrap();
        let x = Vector::from_vec(vec![0.8, -0.3]);
        for r in net.second_order_residual(&x, 1e-4).unwrap() {
            assert!(r < 1e-9, "residual {r}");
        }
    }
}
