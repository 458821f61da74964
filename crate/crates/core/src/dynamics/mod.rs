//! Time-derivative fields of the exponential-loss gradient flow in its
//! unconstrained, constrained, reparameterized and normalized forms.
//!
//! Every field is a pure function of the state and the dataset. Sample
//! weights `e^{-y_n ρ f(V;x_n)}` are computed either raw or with a shared
//! max-shift ([`ExponentMode::Shifted`]): the shift multiplies the whole
//! field by one positive scalar `e^{-log_scale}`, which is a change of time
//! variable and leaves trajectories, stationary points and norm ratios
//! unchanged. The factor is reported alongside the value so that callers can
//! recover physical time.

pub mod batchnorm;
pub mod linear;
pub mod projector;
pub mod schedule;

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;


pub use batchnorm::field_batch_norm_core;
pub use projector::{lagrange_alpha, tangent_project, NormOrder, Projector};
pub use schedule::AlphaSchedule;

use crate::net::{check_unit_norm, forward_and_grad, margin_and_support, UNIT_NORM_TOL};
use crate::{Dataset, Error, Matrix, NetworkParams, NormalizedParams, Result, Vector};

/// How the exponential sample weights are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExponentMode {
    /// `e^{-(m_n - min_j m_j)}`; the field is returned divided by `e^{-min m}`.
    #[default]
    Shifted,
    /// `e^{-m_n}` exactly; overflows for badly misclassified samples.
    Raw,
}

/// A field value `true = e^{log_scale} · value`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaled<T> {
    pub value: T,
    pub log_scale: f64,
}

/// Sample weights for margins `m_n` and the log of the factor removed.
pub fn loss_weights(margins: &[f64], mode: ExponentMode) -> (Vec<f64>, f64) {
    match mode {
        ExponentMode::Raw => (margins.iter().map(|m| (-m).exp()).collect(), 0.0),
        ExponentMode::Shifted => {
            let shift = margins.iter().copied().fold(f64::INFINITY, f64::min);
            (
                margins.iter().map(|m| (-(m - shift)).exp()).collect(),
                -shift,
            )
        }
    }
}

/// `log Σ_n e^{-m_n}`, stable for any margins.
pub fn log_loss(margins: &[f64]) -> f64 {
    let shift = margins.iter().copied().fold(f64::INFINITY, f64::min);
    -shift + margins.iter().map(|m| (-(m - shift)).exp()).sum::<f64>().ln()
}

/// Smallest fixed `ρ` at which the weight of the runner-up margin group,
/// relative to the support, falls below machine epsilon. `None` when all
/// samples tie.
pub fn machine_precision_rho(signed: &[f64], tol_sv: f64) -> Option<f64> {
    let (margin, support) = margin_and_support(signed, tol_sv);
    let runner_up = signed
        .iter()
        .enumerate()
        .filter(|(n, _)| !support.contains(n))
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    if !runner_up.is_finite() {
        return None;
    }
    Some(-f64::EPSILON.ln() / (runner_up - margin))
}

/// Per-layer norm and direction rates `(ρ̇_k, V̇_k)` (or `(ġ_k, v̇_k)`).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRates {
    pub rho_dot: Vec<f64>,
    pub dir_dot: Vec<Matrix>,
}

struct Terms {
    f: Vec<f64>,
    grads: Vec<Vec<Matrix>>,
}

fn sample_terms(layers: &[Matrix], data: &Dataset) -> Result<Terms> {
    let mut f = Vec::with_capacity(data.len());
    let mut grads = Vec::with_capacity(data.len());
    for s in data.samples() {
        let (out, g) = forward_and_grad(layers, &s.x)?;
        f.push(out);
        grads.push(g);
    }
    Ok(Terms { f, grads })
}

impl Terms {
    fn signed(&self, data: &Dataset) -> Vec<f64> {
        self.f
            .iter()
            .zip(data.samples())
            .map(|(f, s)| s.y.sign() * f)
            .collect()
    }

    /// `Σ_n w_n y_n ∂f(x_n)/∂layer_k` for every layer.
    fn weighted_grads(&self, data: &Dataset, weights: &[f64]) -> Vec<Matrix> {
        let mut acc: Vec<Matrix> = self.grads[0]
            .iter()
            .map(|g| Matrix::zeros(g.nrows(), g.ncols()))
            .collect();
        for ((g, w), s) in self.grads.iter().zip(weights).zip(data.samples()) {
            let c = w * s.y.sign();
            for (a, gk) in acc.iter_mut().zip(g) {
                a.zip_apply(gk, |x, g| *x += c * g);
            }
        }
        acc
    }

    /// `Σ_n w_n y_n f(x_n)`.
    fn weighted_outputs(&self, data: &Dataset, weights: &[f64]) -> f64 {
        self.f
            .iter()
            .zip(weights)
            .zip(data.samples())
            .map(|((f, w), s)| w * s.y.sign() * f)
            .sum()
    }
}

/// `a − v⟨v, a⟩` for a unit-norm `v` (vectorized inner product).
fn project_out(v: &Matrix, a: &Matrix) -> Matrix {
    a - v * v.dot(a)
}

fn unit(m: &Matrix, layer: usize) -> Result<Matrix> {
    let n = m.norm();
    if n > 0.0 {
        Ok(m / n)
    } else {
        Err(Error::DegenerateLayer { layer })
    }
}

fn units(ms: &[Matrix]) -> Result<Vec<Matrix>> {
    ms.iter().enumerate().map(|(k, m)| unit(m, k)).collect()
}

/// Unconstrained gradient flow `Ẇ_k = Σ_n y_n ∂f(W;x_n)/∂W_k e^{-y_n f(W;x_n)}`.
pub fn field_unconstrained(
    w: &NetworkParams,
    data: &Dataset,
    mode: ExponentMode,
) -> Result<Scaled<Vec<Matrix>>> {
    let terms = sample_terms(w.layers(), data)?;
    let (weights, log_scale) = loss_weights(&terms.signed(data), mode);
    Ok(Scaled {
        value: terms.weighted_grads(data, &weights),
        log_scale,
    })
}

struct ConstrainedParts {
    /// Unprojected `ρ Σ_n w_n y_n ∂f(V;x_n)/∂V_k`.
    raw: Vec<Matrix>,
    /// `ρ S_k Σ_n w_n y_n ∂f(V;x_n)/∂V_k`.
    projected: Vec<Matrix>,
    /// `Σ_n w_n y_n f(V;x_n)`.
    output_sum: f64,
    log_scale: f64,
}

fn constrained_parts(
    dirs: &[Matrix],
    rho: f64,
    data: &Dataset,
    mode: ExponentMode,
) -> Result<ConstrainedParts> {
    let terms = sample_terms(dirs, data)?;
    let margins: Vec<f64> = terms.signed(data).iter().map(|m| rho * m).collect();
    let (weights, log_scale) = loss_weights(&margins, mode);
    let sums = terms.weighted_grads(data, &weights);
    let projected = dirs
        .iter()
        .zip(&sums)
        .map(|(v, a)| project_out(v, a) * rho)
        .collect();
    Ok(ConstrainedParts {
        raw: sums.into_iter().map(|a| a * rho).collect(),
        projected,
        output_sum: terms.weighted_outputs(data, &weights),
        log_scale,
    })
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("fixed rho = {rho} must be positive and finite")))
    }
}

/// Constrained flow at fixed `ρ`:
/// `V̇_k = ρ Σ_n e^{-ρ y_n f(V;x_n)} y_n S_k ∂f(V;x_n)/∂V_k`, `S_k = I − V_kV_kᵀ`.
pub fn field_constrained_fixed_rho(
    dirs: &[Matrix],
    rho: f64,
    data: &Dataset,
    mode: ExponentMode,
) -> Result<Scaled<Vec<Matrix>>> {
    check_rho(rho)?;
    check_unit_norm(dirs, UNIT_NORM_TOL)?;
    let parts = constrained_parts(dirs, rho, data, mode)?;
    Ok(Scaled {
        value: parts.projected,
        log_scale: parts.log_scale,
    })
}

/// The Lagrange multiplier `λ_k = ½ ρ Σ_n e^{-ρ y_n f(V;x_n)} y_n f(V;x_n)`
/// that keeps `‖V_k‖ = 1` (identical for every layer).
pub fn constrained_lambda(dirs: &[Matrix], rho: f64, data: &Dataset) -> Result<f64> {
    Ok(0.5 * rho * constrained_parts(dirs, rho, data, ExponentMode::Raw)?.output_sum)
}

/// Full Lagrange system in `(ρ_k, V_k)`:
/// `ρ̇_k = (ρ/ρ_k) Σ_n e^{-ρ y_n f_V} y_n f_V`, `V̇_k = ρ Σ_n e^{-ρ y_n f_V} y_n S_k ∂f_V/∂V_k`.
pub fn field_full_lagrange(
    state: &NormalizedParams,
    data: &Dataset,
    mode: ExponentMode,
) -> Result<Scaled<NormalizedRates>> {
    check_unit_norm(state.dirs(), UNIT_NORM_TOL)?;
    full_lagrange(state.rhos(), state.dirs(), data, mode)
}

fn full_lagrange(
    rhos: &[f64],
    dirs: &[Matrix],
    data: &Dataset,
    mode: ExponentMode,
) -> Result<Scaled<NormalizedRates>> {
    let rho: f64 = rhos.iter().product();
    let parts = constrained_parts(dirs, rho, data, mode)?;
    Ok(Scaled {
        value: NormalizedRates {
            rho_dot: rhos.iter().map(|r| rho / r * parts.output_sum).collect(),
            dir_dot: parts.projected,
        },
        log_scale: parts.log_scale,
    })
}

/// Unconstrained flow expressed in `(ρ_k, V_k)` through the chain rule:
/// `ρ̇_k = V_kᵀẆ_k`, `V̇_k = S_k Ẇ_k / ρ_k`.
pub fn field_reparameterized(
    w: &NetworkParams,
    data: &Dataset,
    mode: ExponentMode,
) -> Result<Scaled<NormalizedRates>> {
    let norm = w.decompose()?;
    let wdot = field_unconstrained(w, data, mode)?;
    let mut rho_dot = Vec::with_capacity(w.depth());
    let mut dir_dot = Vec::with_capacity(w.depth());
    for ((v, r), wd) in norm.dirs().iter().zip(norm.rhos()).zip(&wdot.value) {
        rho_dot.push(v.dot(wd));
        dir_dot.push(project_out(v, wd) / *r);
    }
    Ok(Scaled {
        value: NormalizedRates { rho_dot, dir_dot },
        log_scale: wdot.log_scale,
    })
}

fn weight_norm_network(g: &[f64], v: &[Matrix]) -> Result<(NetworkParams, Vec<Matrix>, Vec<f64>)> {
    if g.len() != v.len() {
        return Err(Error::Shape(format!("{} scales for {} layers", g.len(), v.len())));
    }
    let vhat = units(v)?;
    let vnorm: Vec<f64> = v.iter().map(|m| m.norm()).collect();
    let w = NetworkParams::new(vhat.iter().zip(g).map(|(d, s)| d * *s).collect())?;
    Ok((w, vhat, vnorm))
}

/// Weight normalization `w = g v/‖v‖`:
/// `ġ = vᵀẇ/‖v‖`, `v̇ = (g/‖v‖) S ẇ` with `S = I − vvᵀ/‖v‖²`.
pub fn field_weight_norm(
    g: &[f64],
    v: &[Matrix],
    data: &Dataset,
    mode: ExponentMode,
) -> Result<Scaled<NormalizedRates>> {
    let (w, vhat, vnorm) = weight_norm_network(g, v)?;
    let wdot = field_unconstrained(&w, data, mode)?;
    let mut rho_dot = Vec::with_capacity(g.len());
    let mut dir_dot = Vec::with_capacity(g.len());
    for k in 0..g.len() {
        rho_dot.push(vhat[k].dot(&wdot.value[k]));
        dir_dot.push(project_out(&vhat[k], &wdot.value[k]) * (g[k] / vnorm[k]));
    }
    Ok(Scaled {
        value: NormalizedRates { rho_dot, dir_dot },
        log_scale: wdot.log_scale,
    })
}

/// Weight-normalization flow whose direction update goes through the
/// batch-norm core Jacobian, treating `vec(v_k)` as the batch of one unit:
/// `v̇_k = (g_k/‖v_k‖) σ_B J_ε(v_k) ẇ_k`. For `ε → 0` this is exactly
/// [`field_weight_norm`]; `ε > 0` slows the direction by `σ_B/√(σ_B² + ε)`.
pub fn field_batch_norm_flow(
    g: &[f64],
    v: &[Matrix],
    eps: f64,
    data: &Dataset,
    mode: ExponentMode,
) -> Result<Scaled<NormalizedRates>> {
    let (w, vhat, vnorm) = weight_norm_network(g, v)?;
    let wdot = field_unconstrained(&w, data, mode)?;
    let mut rho_dot = Vec::with_capacity(g.len());
    let mut dir_dot = Vec::with_capacity(g.len());
    for k in 0..g.len() {
        let n = v[k].len();
        let col = Matrix::from_column_slice(n, 1, v[k].as_slice());
        let up = Matrix::from_column_slice(n, 1, wdot.value[k].as_slice());
        let sigma = batchnorm::batch_scale(v[k].as_slice());
        let jac = field_batch_norm_core(&col, &up, eps)?;
        let scaled = jac * (sigma * g[k] / vnorm[k]);
        rho_dot.push(vhat[k].dot(&wdot.value[k]));
        dir_dot.push(Matrix::from_column_slice(
            v[k].nrows(),
            v[k].ncols(),
            scaled.as_slice(),
        ));
    }
    Ok(Scaled {
        value: NormalizedRates { rho_dot, dir_dot },
        log_scale: wdot.log_scale,
    })
}

/// Reparameterized flow with the exponent scale of the direction dynamics
/// multiplied by `alpha`:
/// `V̇_k = α (ρ/ρ_k²) Σ_n e^{-αρ y_n f_V} y_n S_k ∂f_V/∂V_k`; `ρ̇_k` is unchanged.
/// Both parts share one shift so that the pair stays a single scaled field.
pub fn field_rescaled(
    state: &NormalizedParams,
    alpha: f64,
    data: &Dataset,
    mode: ExponentMode,
) -> Result<Scaled<NormalizedRates>> {
    check_unit_norm(state.dirs(), UNIT_NORM_TOL)?;
    rescaled(state.rhos(), state.dirs(), alpha, data, mode)
}

fn rescaled(
    rhos: &[f64],
    dirs: &[Matrix],
    alpha: f64,
    data: &Dataset,
    mode: ExponentMode,
) -> Result<Scaled<NormalizedRates>> {
    let rho: f64 = rhos.iter().product();
    let terms = sample_terms(dirs, data)?;
    let signed = terms.signed(data);
    let shift = match mode {
        ExponentMode::Raw => 0.0,
        ExponentMode::Shifted => signed
            .iter()
            .flat_map(|s| [rho * s, alpha * rho * s])
            .fold(f64::INFINITY, f64::min),
    };
    let w_rho: Vec<f64> = signed.iter().map(|s| (-(rho * s - shift)).exp()).collect();
    let w_dir: Vec<f64> = signed
        .iter()
        .map(|s| (-(alpha * rho * s - shift)).exp())
        .collect();
    let out_sum = terms.weighted_outputs(data, &w_rho);
    let sums = terms.weighted_grads(data, &w_dir);
    Ok(Scaled {
        value: NormalizedRates {
            rho_dot: rhos.iter().map(|r| rho / r * out_sum).collect(),
            dir_dot: dirs
                .iter()
                .zip(&sums)
                .zip(rhos)
                .map(|((v, a), r)| project_out(v, a) * (alpha * rho / (r * r)))
                .collect(),
        },
        log_scale: -shift,
    })
}

/// Tangent-gradient flow on the unit p-norm sphere of every layer at fixed
/// `ρ`: `u̇_k = S_p(u_k) ρ Σ_n e^{-ρ y_n f(U;x_n)} y_n ∂f(U;x_n)/∂U_k`.
pub fn field_tangent_lp(
    dirs: &[Matrix],
    p: NormOrder,
    rho: f64,
    data: &Dataset,
    mode: ExponentMode,
) -> Result<Scaled<Vec<Matrix>>> {
    check_rho(rho)?;
    let parts = constrained_parts(dirs, rho, data, mode)?;
    let mut out = Vec::with_capacity(dirs.len());
    for (u, g) in dirs.iter().zip(&parts.raw) {
        let h = tangent_project(
            &Vector::from_column_slice(u.as_slice()),
            &Vector::from_column_slice(g.as_slice()),
            p,
        )?;
        out.push(Matrix::from_column_slice(u.nrows(), u.ncols(), h.as_slice()));
    }
    Ok(Scaled {
        value: out,
        log_scale: parts.log_scale,
    })
}

/// Which flow a [`FlowField`] integrates, with its kind-specific parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowKind {
    Unconstrained,
    ConstrainedFixedRho { rho: f64 },
    FullLagrange,
    Reparameterized,
    WeightNorm,
    BatchNormCore { eps: f64 },
    TangentLp { p: NormOrder, rho: f64 },
    RescaledAlpha { schedule: AlphaSchedule },
}

impl FlowKind {
    pub fn coordinates(&self) -> Coordinates {
        match self {
            FlowKind::Unconstrained => Coordinates::Weights,
            FlowKind::ConstrainedFixedRho { .. } | FlowKind::TangentLp { .. } => {
                Coordinates::Directions
            }
            FlowKind::FullLagrange | FlowKind::Reparameterized | FlowKind::RescaledAlpha { .. } => {
                Coordinates::Normalized
            }
            FlowKind::WeightNorm | FlowKind::BatchNormCore { .. } => Coordinates::WeightNorm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            FlowKind::ConstrainedFixedRho { rho } | FlowKind::TangentLp { rho, .. } => {
                check_rho(rho)
            }
            FlowKind::BatchNormCore { eps } if !(eps >= 0.0 && eps.is_finite()) => {
                Err(Error::Domain(format!("epsilon {eps} must be non-negative")))
            }
            _ => Ok(()),
        }
    }
}

/// State space of a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinates {
    /// Raw weights `W_k`.
    Weights,
    /// Norms `ρ_k` (scales) and directions `V_k`.
    Normalized,
    /// Directions only; the norm is a flow parameter.
    Directions,
    /// Weight-normalization gains `g_k` (scales) and vectors `v_k`.
    WeightNorm,
}

/// A point of a flow's state space. `scales` is empty for
/// [`Coordinates::Weights`] and [`Coordinates::Directions`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    coords: Coordinates,
    scales: Vec<f64>,
    layers: Vec<Matrix>,
}

/// A time derivative with the same layout as a [`FlowState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    pub scales: Vec<f64>,
    pub layers: Vec<Matrix>,
}

/// Field value at a state: `true derivative = e^{log_scale} · derivative`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldValue {
    pub derivative: Tangent,
    pub log_scale: f64,
}

impl FlowState {
    pub fn weights(net: NetworkParams) -> FlowState {
        FlowState {
            coords: Coordinates::Weights,
            scales: Vec::new(),
            layers: net.into_layers(),
        }
    }

    pub fn normalized(p: &NormalizedParams) -> FlowState {
        FlowState {
            coords: Coordinates::Normalized,
            scales: p.rhos().to_vec(),
            layers: p.dirs().to_vec(),
        }
    }

    pub fn directions(dirs: Vec<Matrix>) -> FlowState {
        FlowState {
            coords: Coordinates::Directions,
            scales: Vec::new(),
            layers: dirs,
        }
    }

    pub fn weight_norm(g: Vec<f64>, v: Vec<Matrix>) -> FlowState {
        FlowState {
            coords: Coordinates::WeightNorm,
            scales: g,
            layers: v,
        }
    }

    pub fn coordinates(&self) -> Coordinates {
        self.coords
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn scales_mut(&mut self) -> &mut [f64] {
        &mut self.scales
    }

    pub fn layers_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    pub fn is_finite(&self) -> bool {
        self.scales.iter().all(|v| v.is_finite())
            && self.layers.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// `self += h · d`.
    pub fn axpy(&mut self, h: f64, d: &Tangent) {
        for (s, ds) in self.scales.iter_mut().zip(&d.scales) {
            *s += h * ds;
        }
        for (m, dm) in self.layers.iter_mut().zip(&d.layers) {
            m.zip_apply(dm, |x, d| *x += h * d);
        }
    }

    /// Scales followed by every layer in column-major order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.scales.clone();
        for m in &self.layers {
            out.extend_from_slice(m.as_slice());
        }
        out
    }
}

impl Tangent {
    pub fn zeros_like(state: &FlowState) -> Tangent {
        Tangent {
            scales: alloc::vec![0.0; state.scales.len()],
            layers: state
                .layers
                .iter()
                .map(|m| Matrix::zeros(m.nrows(), m.ncols()))
                .collect(),
        }
    }

    /// `self += h · other`.
    pub fn axpy(&mut self, h: f64, other: &Tangent) {
        for (s, o) in self.scales.iter_mut().zip(&other.scales) {
            *s += h * o;
        }
        for (m, o) in self.layers.iter_mut().zip(&other.layers) {
            m.zip_apply(o, |x, d| *x += h * d);
        }
    }
}

/// A vector field over some state space, as consumed by the integrator.
pub trait Flow {
    fn dataset(&self) -> &Dataset;

    fn coordinates(&self) -> Coordinates;

    /// Field value at physical time `t`.
    fn evaluate(&self, t: f64, state: &FlowState) -> Result<FieldValue>;

    /// The network `W` whose outputs `f(W;x)` a state represents.
    fn effective_network(&self, state: &FlowState) -> Result<NetworkParams> {
        default_effective_network(state)
    }

    /// Pulls a state back onto its constraint surface after a discrete step.
    fn renormalize(&self, state: &mut FlowState) {
        match state.coords {
            Coordinates::Weights => {}
            _ => {
                for m in &mut state.layers {
                    let n = m.norm();
                    if n > 0.0 {
                        *m /= n;
                    }
                }
            }
        }
    }

    /// Rejects a step that crossed a point where the field is undefined.
    fn check_step(&self, _before: &FlowState, _after: &FlowState) -> Result<()> {
        Ok(())
    }

    /// Unprojected direction increments `ρ Σ_n w_n y_n ∂f_V/∂V_k` (and the
    /// norm rates) for the closed-form Lagrange step; `None` when the flow has
    /// no unit-L₂ constraint.
    fn lagrange_gradient(&self, _t: f64, _state: &FlowState) -> Result<Option<FieldValue>> {
        Ok(None)
    }

    /// Instantaneous `d‖W_k‖²/dt` in physical time per layer, divided by
    /// `e^{value.log_scale}`.
    fn norm_rates(&self, state: &FlowState, value: &FieldValue) -> Vec<f64> {
        let d = &value.derivative;
        match state.coords {
            Coordinates::Weights => state
                .layers
                .iter()
                .zip(&d.layers)
                .map(|(w, wd)| 2.0 * w.dot(wd))
                .collect(),
            Coordinates::Normalized | Coordinates::WeightNorm => state
                .scales
                .iter()
                .zip(&d.scales)
                .map(|(r, rd)| 2.0 * r * rd)
                .collect(),
            Coordinates::Directions => alloc::vec![0.0; state.layers.len()],
        }
    }
}

fn default_effective_network(state: &FlowState) -> Result<NetworkParams> {
    match state.coords {
        Coordinates::Weights => NetworkParams::new(state.layers.clone()),
        Coordinates::Normalized | Coordinates::WeightNorm => NetworkParams::new(
            units(&state.layers)?
                .into_iter()
                .zip(&state.scales)
                .map(|(v, r)| v * *r)
                .collect(),
        ),
        Coordinates::Directions => Err(Error::Config(
            "direction-only states need the flow's norm to build a network".into(),
        )),
    }
}

/// Concrete flow of a given [`FlowKind`] over a dataset.
#[derive(Debug, Clone)]
pub struct FlowField {
    kind: FlowKind,
    data: Dataset,
    mode: ExponentMode,
}

impl FlowField {
    pub fn new(kind: FlowKind, data: Dataset, mode: ExponentMode) -> Result<FlowField> {
        kind.validate()?;
        Ok(FlowField { kind, data, mode })
    }

    pub fn kind(&self) -> FlowKind {
        self.kind
    }

    pub fn mode(&self) -> ExponentMode {
        self.mode
    }

    /// Maps raw weights into this flow's coordinates.
    pub fn initial_state(&self, net: &NetworkParams) -> Result<FlowState> {
        Ok(match self.kind.coordinates() {
            Coordinates::Weights => FlowState::weights(net.clone()),
            Coordinates::Normalized => FlowState::normalized(&net.decompose()?),
            Coordinates::WeightNorm => {
                let n = net.decompose()?;
                FlowState::weight_norm(n.rhos().to_vec(), n.dirs().to_vec())
            }
            Coordinates::Directions => {
                let n = net.decompose()?;
                let mut s = FlowState::directions(n.dirs().to_vec());
                self.renormalize(&mut s);
                s
            }
        })
    }

    fn check_coords(&self, state: &FlowState) -> Result<()> {
        if state.coords != self.kind.coordinates() {
            return Err(Error::Config(format!(
                "{:?} flow cannot evaluate a {:?} state",
                self.kind, state.coords
            )));
        }
        Ok(())
    }
}

fn rates_value(r: Scaled<NormalizedRates>) -> FieldValue {
    FieldValue {
        derivative: Tangent {
            scales: r.value.rho_dot,
            layers: r.value.dir_dot,
        },
        log_scale: r.log_scale,
    }
}

fn layers_value(r: Scaled<Vec<Matrix>>) -> FieldValue {
    FieldValue {
        derivative: Tangent {
            scales: Vec::new(),
            layers: r.value,
        },
        log_scale: r.log_scale,
    }
}

impl Flow for FlowField {
    fn dataset(&self) -> &Dataset {
        &self.data
    }

    fn coordinates(&self) -> Coordinates {
        self.kind.coordinates()
    }

    fn evaluate(&self, t: f64, state: &FlowState) -> Result<FieldValue> {
        self.check_coords(state)?;
        let data = &self.data;
        let mode = self.mode;
        match self.kind {
            FlowKind::Unconstrained => Ok(layers_value(field_unconstrained(
                &NetworkParams::new(state.layers.clone())?,
                data,
                mode,
            )?)),
            FlowKind::ConstrainedFixedRho { rho } => {
                let dirs = units(&state.layers)?;
                let parts = constrained_parts(&dirs, rho, data, mode)?;
                Ok(FieldValue {
                    derivative: Tangent {
                        scales: Vec::new(),
                        layers: parts.projected,
                    },
                    log_scale: parts.log_scale,
                })
            }
            FlowKind::FullLagrange => Ok(rates_value(full_lagrange(
                &state.scales,
                &units(&state.layers)?,
                data,
                mode,
            )?)),
            FlowKind::Reparameterized => {
                let w = default_effective_network(state)?;
                Ok(rates_value(field_reparameterized(&w, data, mode)?))
            }
            FlowKind::WeightNorm => Ok(rates_value(field_weight_norm(
                &state.scales,
                &state.layers,
                data,
                mode,
            )?)),
            FlowKind::BatchNormCore { eps } => Ok(rates_value(field_batch_norm_flow(
                &state.scales,
                &state.layers,
                eps,
                data,
                mode,
            )?)),
            FlowKind::TangentLp { p, rho } => Ok(layers_value(field_tangent_lp(
                &state.layers,
                p,
                rho,
                data,
                mode,
            )?)),
            FlowKind::RescaledAlpha { schedule } => Ok(rates_value(rescaled(
                &state.scales,
                &units(&state.layers)?,
                schedule.alpha(t)?,
                data,
                mode,
            )?)),
        }
    }

    fn effective_network(&self, state: &FlowState) -> Result<NetworkParams> {
        match self.kind {
            FlowKind::ConstrainedFixedRho { rho } => {
                let per_layer = rho.powf(1.0 / state.layers.len() as f64);
                NetworkParams::new(
                    units(&state.layers)?
                        .into_iter()
                        .map(|v| v * per_layer)
                        .collect(),
                )
            }
            FlowKind::TangentLp { rho, .. } => {
                let per_layer = rho.powf(1.0 / state.layers.len() as f64);
                NetworkParams::new(state.layers.iter().map(|u| u * per_layer).collect())
            }
            _ => default_effective_network(state),
        }
    }

    fn renormalize(&self, state: &mut FlowState) {
        if let FlowKind::TangentLp { p, .. } = self.kind {
            for m in &mut state.layers {
                let n = p.norm(m.as_slice());
                if n > 0.0 {
                    *m /= n;
                }
            }
            return;
        }
        match state.coords {
            Coordinates::Weights => {}
            _ => {
                for m in &mut state.layers {
                    let n = m.norm();
                    if n > 0.0 {
                        *m /= n;
                    }
                }
            }
        }
    }

    fn check_step(&self, before: &FlowState, after: &FlowState) -> Result<()> {
        let FlowKind::TangentLp { p, .. } = self.kind else {
            return Ok(());
        };
        for (k, (a, b)) in before.layers.iter().zip(&after.layers).enumerate() {
            match p {
                NormOrder::One => {
                    if a
                        .iter()
                        .zip(b.iter())
                        .any(|(x, y)| x.signum() != y.signum() || *y == 0.0)
                    {
                        return Err(Error::Kink(format!(
                            "layer {k}: a coordinate crossed zero under the 1-norm"
                        )));
                    }
                }
                NormOrder::Infinity => {
                    let ia = projector::argmax_abs(a.as_slice());
                    let ib = projector::argmax_abs(b.as_slice());
                    if ia != ib {
                        return Err(Error::Kink(format!(
                            "layer {k}: maximum moved from coordinate {ia} to {ib}"
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn lagrange_gradient(&self, _t: f64, state: &FlowState) -> Result<Option<FieldValue>> {
        let (rho, scales_dot) = match self.kind {
            FlowKind::ConstrainedFixedRho { rho } => (rho, None),
            FlowKind::FullLagrange => (state.scales.iter().product(), Some(())),
            _ => return Ok(None),
        };
        let dirs = units(&state.layers)?;
        let parts = constrained_parts(&dirs, rho, &self.data, self.mode)?;
        let scales = match scales_dot {
            Some(()) => state
                .scales
                .iter()
                .map(|r| rho / r * parts.output_sum)
                .collect(),
            None => Vec::new(),
        };
        Ok(Some(FieldValue {
            derivative: Tangent {
                scales,
                layers: parts.raw,
            },
            log_scale: parts.log_scale,
        }))
    }
}

/// Wraps a reparameterized flow with an `α(t)` rescaling of its direction
/// dynamics.
pub fn rescale_field(base: FlowField, schedule: AlphaSchedule) -> Result<FlowField> {
    match base.kind {
        FlowKind::Reparameterized | FlowKind::RescaledAlpha { .. } => Ok(FlowField {
            kind: FlowKind::RescaledAlpha { schedule },
            ..base
        }),
        other => Err(Error::Config(format!(
            "only the reparameterized flow can be rescaled (got {other:?})"
        ))),
    }
}
