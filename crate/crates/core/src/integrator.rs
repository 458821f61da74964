//! Fixed-step integration of a [`Flow`] with trajectory recording and event
//! detection.
//!
//! Steps are taken in the flow's own time variable `τ`. When the field is
//! evaluated with a shifted exponent, `dt/dτ = e^{-log_scale}` and physical
//! time is integrated alongside the state with the same scheme, so horizons,
//! records and events are always in physical time.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::analysis::stationarity_residual;
use crate::dynamics::{lagrange_alpha, log_loss, FieldValue, Flow, FlowState};
use crate::net::margin_and_support;
use crate::{Error, Matrix, NetworkParams, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    RK4,
    /// Euler step on the unprojected direction gradient followed by the
    /// closed-form rescaling `V ← αV + g` with `‖αV + g‖ = 1`. Only for
    /// flows with unit-L₂ direction constraints.
    LagrangeEuler,
}

/// Step size, horizon, stop rules and recording policy.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPolicy {
    pub scheme: Scheme,
    /// Step `h > 0` in the flow's time variable.
    pub step: f64,
    pub max_steps: usize,
    pub t_start: f64,
    /// Halt once physical time reaches this value.
    pub t_end: Option<f64>,
    /// Halt once the loss `Σ_n e^{-y_n f}` falls below this value.
    pub stop_loss: Option<f64>,
    /// Halt once the product norm exceeds this value.
    pub stop_rho: Option<f64>,
    /// Rescale constrained layers back onto their unit sphere after each step.
    pub renormalize: bool,
    /// Record every `record_every` steps (the first and last state are always kept).
    pub record_every: usize,
    /// Additionally record whenever physical time has grown by this factor
    /// since the last record (log-spaced sampling for rate fits).
    pub record_ratio: Option<f64>,
    /// Relative-plus-absolute support band width.
    pub tol_sv: f64,
    /// Minimum increase of the normalized margin between two margin-record events.
    pub margin_record_gain: f64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy {
            scheme: Scheme::RK4,
            step: 1e-2,
            max_steps: 100_000,
            t_start: 0.0,
            t_end: None,
            stop_loss: None,
            stop_rho: None,
            renormalize: true,
            record_every: 100,
            record_ratio: None,
            tol_sv: 1e-3,
            margin_record_gain: 1e-3,
        }
    }
}

impl StepPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("step {} must be positive", self.step)));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        if self.max_steps == 0
            && self.t_end.is_none()
            && self.stop_loss.is_none()
            && self.stop_rho.is_none()
        {
            return Err(Error::Config("no stop condition set".into()));
        }
        if let Some(r) = self.record_ratio {
            if !(r > 1.0) {
                return Err(Error::Config(format!("record_ratio {r} must exceed 1")));
            }
        }
        if !(self.tol_sv >= 0.0) {
            return Err(Error::Config(format!("tol_sv {} must be non-negative", self.tol_sv)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Independent `N(0, init_scale²)` entries.
    Gaussian,
    /// Each layer uniform on the Frobenius sphere of radius `init_scale`.
    UnitSphere,
}

/// Seeded initialization of network weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSeed {
    pub seed: u64,
    pub init_scale: f64,
    pub init_scheme: InitScheme,
}

impl RunSeed {
    /// Draws weights for layer sizes `dims = [d, h_1, …, 1]`.
    pub fn init_network(&self, dims: &[usize]) -> Result<NetworkParams> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {dims:?}")));
        }
        if *dims.last().unwrap() != 1 {
            return Err(Error::Shape(format!("last layer size must be 1, got {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let mut m = Matrix::from_fn(w[1], w[0], |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            });
            match self.init_scheme {
                InitScheme::Gaussian => m *= self.init_scale,
                InitScheme::UnitSphere => {
                    let n = m.norm();
                    m *= self.init_scale / n;
                }
            }
            layers.push(m);
        }
        NetworkParams::new(layers)
    }
}

/// One recorded sample of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub step: usize,
    /// Physical time; saturates to `∞` beyond `f64::MAX`.
    pub time: f64,
    /// `log` of the physical time, finite past saturation (`−∞` for `t ≤ 0`).
    pub log_time: f64,
    /// The integrator's own time variable.
    pub flow_time: f64,
    pub loss: f64,
    pub log_loss: f64,
    /// `min_n y_n f(V;x_n)` for the normalized network.
    pub margin: f64,
    /// `min_n y_n f(W;x_n)`.
    pub raw_margin: f64,
    /// Product norm `ρ = ∏ ‖W_k‖_F`.
    pub rho: f64,
    /// Normalized margin gap between the support set and the nearest other
    /// sample (`∞` when every sample is a support vector).
    pub gap: f64,
    /// Gap between the two smallest normalized margins (`∞` for one sample).
    pub delta2: f64,
    /// Index of the sample with the smallest normalized margin.
    pub dominant: usize,
    pub rhos: Vec<f64>,
    /// `d‖W_k‖²/dt` in physical time divided by `e^{field_log_scale}`.
    pub drho2dt: Vec<f64>,
    pub field_log_scale: f64,
    /// Largest per-layer stationarity residual (NaN when undefined).
    pub stationarity: f64,
    pub support: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    SeparabilityOnset,
    SupportSetChange(Vec<usize>),
    MarginRecord(f64),
    /// The step crossed a point where the p-norm is not differentiable.
    NormKink,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub log_time: f64,
    pub step: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxSteps,
    TimeReached,
    LossBelow,
    RhoAbove,
    Kink,
}

/// Per-layer closed-form Lagrange rescaling at one recorded step.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeRecord {
    pub step: usize,
    pub time: f64,
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<Record>,
    /// States at the recorded points.
    pub states: Vec<FlowState>,
    pub events: Vec<Event>,
    pub initial_support: Vec<usize>,
    pub stop: StopReason,
    pub steps: usize,
    pub lagrange: Vec<LagrangeRecord>,
    /// Largest `|‖αV + g‖ − 1|` over every Lagrange step.
    pub lagrange_norm_error: f64,
}

impl Trajectory {
    /// Time of the separability-onset event.
    pub fn separability_time(&self) -> Option<f64> {
        self.events
            .iter()
            .find(|e| e.kind == EventKind::SeparabilityOnset)
            .map(|e| e.time)
    }

    pub fn support_changes(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::SupportSetChange(_)))
            .count()
    }

    pub fn final_state(&self) -> &FlowState {
        self.states.last().expect("trajectory always holds its initial state")
    }

    pub fn final_record(&self) -> &Record {
        self.records.last().expect("trajectory always holds its initial record")
    }
}

/// First recorded time with a positive margin.
pub fn detect_separability(records: &[Record]) -> Option<f64> {
    records.iter().find(|r| r.raw_margin > 0.0).map(|r| r.time)
}

/// Distinct consecutive support sets with the time each began.
pub fn support_timeline(traj: &Trajectory) -> Vec<(f64, Vec<usize>)> {
    let start = traj.records.first().map_or(0.0, |r| r.time);
    let mut out = alloc::vec![(start, traj.initial_support.clone())];
    for e in &traj.events {
        if let EventKind::SupportSetChange(s) = &e.kind {
            if out.last().map(|(_, last)| last) != Some(s) {
                out.push((e.time, s.clone()));
            }
        }
    }
    out
}

struct Observation {
    net: NetworkParams,
    signed: Vec<f64>,
    rho: f64,
    normalized: Vec<f64>,
    margin: f64,
    support: Vec<usize>,
}

fn observe<F: Flow + ?Sized>(flow: &F, state: &FlowState, tol_sv: f64) -> Result<Observation> {
    let net = flow.effective_network(state)?;
    let signed = net.signed_outputs(flow.dataset())?;
    let rho: f64 = net.layers().iter().map(|w| w.norm()).product();
    let normalized: Vec<f64> = if rho > 0.0 {
        signed.iter().map(|s| s / rho).collect()
    } else {
        signed.clone()
    };
    let (margin, support) = margin_and_support(&normalized, tol_sv);
    Ok(Observation {
        net,
        signed,
        rho,
        normalized,
        margin,
        support,
    })
}

fn make_record<F: Flow + ?Sized>(
    flow: &F,
    state: &FlowState,
    value: &FieldValue,
    obs: &Observation,
    step: usize,
    time: (f64, f64),
    flow_time: f64,
) -> Record {
    let log_l = log_loss(&obs.signed);
    let gap = obs
        .normalized
        .iter()
        .enumerate()
        .filter(|(n, _)| !obs.support.contains(n))
        .map(|(_, v)| v - obs.margin)
        .fold(f64::INFINITY, f64::min);
    let mut order: Vec<(usize, f64)> = obs.normalized.iter().copied().enumerate().collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let delta2 = order.get(1).map_or(f64::INFINITY, |s| s.1 - order[0].1);
    let stationarity = obs
        .net
        .decompose()
        .and_then(|n| stationarity_residual(n.dirs(), n.rho_product(), flow.dataset()))
        .map(|r| r.into_iter().fold(0.0, f64::max))
        .unwrap_or(f64::NAN);
    Record {
        step,
        time: time.0,
        log_time: time.1,
        flow_time,
        loss: log_l.exp(),
        log_loss: log_l,
        margin: obs.margin,
        raw_margin: obs.signed.iter().copied().fold(f64::INFINITY, f64::min),
        rho: obs.rho,
        gap,
        delta2,
        dominant: order.first().map_or(0, |s| s.0),
        rhos: obs.net.layers().iter().map(|w| w.norm()).collect(),
        drho2dt: flow.norm_rates(state, value),
        field_log_scale: value.log_scale,
        stationarity,
        support: obs.support.clone(),
    }
}

fn value_is_finite(v: &FieldValue) -> bool {
    v.log_scale.is_finite()
        && v.derivative.scales.iter().all(|x| x.is_finite())
        && v.derivative.layers.iter().all(|m| m.iter().all(|x| x.is_finite()))
}

enum Eval {
    Value(FieldValue),
    Kink,
}

fn evaluate<F: Flow + ?Sized>(flow: &F, t: f64, state: &FlowState) -> Result<Eval> {
    match flow.evaluate(t, state) {
        Ok(v) => Ok(Eval::Value(v)),
        Err(Error::Kink(_)) => Ok(Eval::Kink),
        Err(e) => Err(e),
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

fn log_of(t: f64) -> f64 {
    if t > 0.0 {
        t.ln()
    } else {
        f64::NEG_INFINITY
    }
}

struct StepResult {
    state: FlowState,
    /// `log dt` in physical time.
    log_dt: f64,
    lagrange: Option<(Vec<f64>, Vec<f64>, f64)>,
}

fn advance<F: Flow + ?Sized>(
    flow: &F,
    state: &FlowState,
    t: f64,
    k1: &FieldValue,
    policy: &StepPolicy,
) -> Result<Option<StepResult>> {
    let h = policy.step;
    match policy.scheme {
        Scheme::Euler => {
            let mut next = state.clone();
            next.axpy(h, &k1.derivative);
            Ok(Some(StepResult {
                state: next,
                log_dt: h.ln() - k1.log_scale,
                lagrange: None,
            }))
        }
        Scheme::RK4 => {
            let c1 = (-k1.log_scale).exp();
            let mut s2 = state.clone();
            s2.axpy(h / 2.0, &k1.derivative);
            let Eval::Value(k2) = evaluate(flow, t + h / 2.0 * c1, &s2)? else {
                return Ok(None);
            };
            let c2 = (-k2.log_scale).exp();
            let mut s3 = state.clone();
            s3.axpy(h / 2.0, &k2.derivative);
            let Eval::Value(k3) = evaluate(flow, t + h / 2.0 * c2, &s3)? else {
                return Ok(None);
            };
            let c3 = (-k3.log_scale).exp();
            let mut s4 = state.clone();
            s4.axpy(h, &k3.derivative);
            let Eval::Value(k4) = evaluate(flow, t + h * c3, &s4)? else {
                return Ok(None);
            };
            let mut next = state.clone();
            next.axpy(h / 6.0, &k1.derivative);
            next.axpy(h / 3.0, &k2.derivative);
            next.axpy(h / 3.0, &k3.derivative);
            next.axpy(h / 6.0, &k4.derivative);
            Ok(Some(StepResult {
                state: next,
                log_dt: (h / 6.0).ln()
                    + [
                        -k1.log_scale,
                        core::f64::consts::LN_2 - k2.log_scale,
                        core::f64::consts::LN_2 - k3.log_scale,
                        -k4.log_scale,
                    ]
                    .into_iter()
                    .fold(f64::NEG_INFINITY, log_add),
                lagrange: None,
            }))
        }
        Scheme::LagrangeEuler => {
            let grad = flow.lagrange_gradient(t, state)?.ok_or_else(|| {
                Error::Config("the Lagrange scheme needs a unit-L2 constrained flow".into())
            })?;
            let mut next = state.clone();
            for (s, ds) in next.scales_mut().iter_mut().zip(&grad.derivative.scales) {
                *s += h * ds;
            }
            let mut alphas = Vec::with_capacity(state.layers().len());
            let mut lambdas = Vec::with_capacity(state.layers().len());
            let mut worst = 0.0f64;
            for (v, g) in next.layers_mut().iter_mut().zip(&grad.derivative.layers) {
                let n = v.norm();
                if !(n > 0.0) {
                    return Err(Error::DegenerateLayer { layer: alphas.len() });
                }
                let unit = Vector::from_column_slice(v.as_slice()) / n;
                let inc = Vector::from_column_slice(g.as_slice()) * h;
                let (alpha, lambda) = lagrange_alpha(&unit, &inc)?;
                let updated = unit * alpha + inc;
                worst = worst.max((updated.norm() - 1.0).abs());
                *v = Matrix::from_column_slice(v.nrows(), v.ncols(), updated.as_slice());
                alphas.push(alpha);
                lambdas.push(lambda);
            }
            Ok(Some(StepResult {
                state: next,
                log_dt: h.ln() - grad.log_scale,
                lagrange: Some((alphas, lambdas, worst)),
            }))
        }
    }
}

/// Integrates `flow` from `init` under `policy`.
///
/// A NaN or infinity in the state or the field aborts with
/// [`Error::BlowUp`] carrying the last finite state. Reaching a p-norm kink
/// ends the run normally with a [`EventKind::NormKink`] event.
pub fn integrate<F: Flow + ?Sized>(
    flow: &F,
    init: FlowState,
    policy: &StepPolicy,
) -> Result<Trajectory> {
    policy.validate()?;
    if init.coordinates() != flow.coordinates() {
        return Err(Error::Config(format!(
            "initial state is in {:?} coordinates, the flow expects {:?}",
            init.coordinates(),
            flow.coordinates()
        )));
    }
    if !init.is_finite() {
        return Err(Error::NonFinite("initial state"));
    }
    let mut state = init;
    let mut t = policy.t_start;
    let mut log_t = log_of(t);
    let mut tau = 0.0;
    let mut step = 0usize;
    let mut obs = observe(flow, &state, policy.tol_sv)?;
    let mut events = Vec::new();
    let initial_support = obs.support.clone();
    let mut separated = obs.margin > 0.0;
    if separated {
        events.push(Event {
            time: t,
            log_time: log_t,
            step,
            kind: EventKind::SeparabilityOnset,
        });
    }
    let mut best_margin = if separated { obs.margin } else { f64::NEG_INFINITY };

    let blow_up = |step: usize, time: f64, last: &FlowState| Error::BlowUp {
        step,
        time,
        last_valid: Box::new(last.clone()),
    };

    let mut value = match evaluate(flow, t, &state)? {
        Eval::Value(v) if value_is_finite(&v) => v,
        Eval::Value(_) => return Err(blow_up(step, t, &state)),
        Eval::Kink => {
            return Err(Error::Kink("initial state sits on a norm kink".into()));
        }
    };
    let mut records = alloc::vec![make_record(flow, &state, &value, &obs, step, (t, log_t), tau)];
    let mut states = alloc::vec![state.clone()];
    let mut last_recorded_log_time = log_t;
    let mut lagrange = Vec::new();
    let mut lagrange_norm_error = 0.0f64;
    let mut last_lagrange = None;

    let stop = loop {
        if let Some(l) = policy.stop_loss {
            if log_loss(&obs.signed) < l.ln() {
                break StopReason::LossBelow;
            }
        }
        if let Some(r) = policy.stop_rho {
            if obs.rho > r {
                break StopReason::RhoAbove;
            }
        }
        if let Some(te) = policy.t_end {
            if t >= te {
                break StopReason::TimeReached;
            }
        }
        if step >= policy.max_steps {
            break StopReason::MaxSteps;
        }

        let Some(result) = advance(flow, &state, t, &value, policy)? else {
            events.push(Event {
                time: t,
                log_time: log_t,
                step,
                kind: EventKind::NormKink,
            });
            break StopReason::Kink;
        };
        let mut next = result.state;
        if !next.is_finite() || result.log_dt.is_nan() {
            return Err(blow_up(step, t, &state));
        }
        if policy.renormalize {
            flow.renormalize(&mut next);
        }
        if let Err(e) = flow.check_step(&state, &next) {
            if matches!(e, Error::Kink(_)) {
                events.push(Event {
                    time: t,
                    log_time: log_t,
                    step,
                    kind: EventKind::NormKink,
                });
                break StopReason::Kink;
            }
            return Err(e);
        }
        if let Some((alpha, lambda, err)) = result.lagrange {
            lagrange_norm_error = lagrange_norm_error.max(err);
            last_lagrange = Some((alpha, lambda));
        }
        step += 1;
        t += result.log_dt.exp();
        log_t = if t.is_finite() {
            log_of(t)
        } else {
            log_add(log_t, result.log_dt)
        };
        tau += policy.step;
        let previous = core::mem::replace(&mut state, next);
        obs = observe(flow, &state, policy.tol_sv)?;

        if !separated && obs.margin > 0.0 {
            separated = true;
            events.push(Event {
                time: t,
                log_time: log_t,
                step,
                kind: EventKind::SeparabilityOnset,
            });
        }
        if obs.support != current_support(&events, &initial_support) {
            events.push(Event {
                time: t,
                log_time: log_t,
                step,
                kind: EventKind::SupportSetChange(obs.support.clone()),
            });
        }
        if separated && obs.margin >= best_margin + policy.margin_record_gain {
            best_margin = obs.margin;
            events.push(Event {
                time: t,
                log_time: log_t,
                step,
                kind: EventKind::MarginRecord(obs.margin),
            });
        } else if separated && best_margin == f64::NEG_INFINITY {
            best_margin = obs.margin;
        }

        value = match evaluate(flow, t, &state)? {
            Eval::Value(v) if value_is_finite(&v) => v,
            Eval::Value(_) => return Err(blow_up(step, t, &previous)),
            Eval::Kink => {
                events.push(Event {
                    time: t,
                    log_time: log_t,
                    step,
                    kind: EventKind::NormKink,
                });
                records.push(make_record(flow, &state, &value, &obs, step, (t, log_t), tau));
                states.push(state.clone());
                break StopReason::Kink;
            }
        };

        let by_ratio = policy
            .record_ratio
            .is_some_and(|r| log_t >= last_recorded_log_time + r.ln());
        if step.is_multiple_of(policy.record_every) || by_ratio {
            records.push(make_record(flow, &state, &value, &obs, step, (t, log_t), tau));
            states.push(state.clone());
            last_recorded_log_time = log_t;
            if let Some((alpha, lambda)) = last_lagrange.take() {
                lagrange.push(LagrangeRecord {
                    step,
                    time: t,
                    alpha,
                    lambda,
                });
            }
        }
    };

    if records.last().map(|r| r.step) != Some(step) {
        records.push(make_record(flow, &state, &value, &obs, step, (t, log_t), tau));
        states.push(state.clone());
        if let Some((alpha, lambda)) = last_lagrange.take() {
            lagrange.push(LagrangeRecord {
                step,
                time: t,
                alpha,
                lambda,
            });
        }
    }

    Ok(Trajectory {
        records,
        states,
        events,
        initial_support,
        stop,
        steps: step,
        lagrange,
        lagrange_norm_error,
    })
}

/// The support set in force after the latest change event.
fn current_support<'a>(
    events: &'a [Event],
    initial: &'a [usize],
) -> &'a [usize] {
    events
        .iter()
        .rev()
        .find_map(|e| match &e.kind {
            EventKind::SupportSetChange(s) => Some(s.as_slice()),
            _ => None,
        })
        .unwrap_or(initial)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ExponentMode, FlowField, FlowKind, Tangent};
    use crate::{Dataset, Label, Sample};
    use alloc::vec;

    fn pair() -> Dataset {
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

    struct Zero(Dataset);

    impl Flow for Zero {
        fn dataset(&self) -> &Dataset {
            &self.0
        }
        fn coordinates(&self) -> crate::dynamics::Coordinates {
            crate::dynamics::Coordinates::Weights
        }
        fn evaluate(&self, _t: f64, state: &FlowState) -> Result<FieldValue> {
            Ok(FieldValue {
                derivative: Tangent::zeros_like(state),
                log_scale: 0.0,
            })
        }
    }

    #[test]
    fn zero_field_keeps_state() {
        let init = FlowState::weights(NetworkParams::linear(&[0.5]));
        let policy = StepPolicy {
            max_steps: 50,
            record_every: 10,
            ..StepPolicy::default()
        };
        let traj = integrate(&Zero(pair()), init.clone(), &policy).unwrap();
        assert_eq!(traj.final_state(), &init);
        let m0 = traj.records[0].margin;
        assert!(traj.records.iter().all(|r| r.margin == m0));
        assert_eq!(traj.records.len(), 6);
    }

    #[test]
    fn one_dimensional_pair_converges() {
        let flow = FlowField::new(FlowKind::Unconstrained, pair(), ExponentMode::Raw).unwrap();
        let init = flow.initial_state(&NetworkParams::linear(&[1.0])).unwrap();
        let policy = StepPolicy {
            scheme: Scheme::Euler,
            step: 1e-3,
            max_steps: 1_000_000,
            t_end: Some(50.0),
            renormalize: false,
            record_every: 1000,
            ..StepPolicy::default()
        };
        let traj = integrate(&flow, init, &policy).unwrap();
        let w = traj.final_state().layers()[0][(0, 0)];
        assert!((w - 2f64.ln() / 3.0).abs() < 1e-6, "w = {w}");
        assert!(traj.separability_time().is_none());
        assert_eq!(traj.stop, StopReason::TimeReached);
    }

    #[test]
    fn seeded_initialization_is_reproducible() {
        let seed = RunSeed {
            seed: 11,
            init_scale: 0.5,
            init_scheme: InitScheme::UnitSphere,
        };
        let a = seed.init_network(&[3, 4, 1]).unwrap();
        let b = seed.init_network(&[3, 4, 1]).unwrap();
        assert_eq!(a, b);
        assert!(a.layers().iter().all(|w| (w.norm() - 0.5).abs() < 1e-15));
    }

    #[test]
    fn blow_up_carries_last_state() {
        let flow = FlowField::new(FlowKind::Unconstrained, pair(), ExponentMode::Raw).unwrap();
        let init = flow.initial_state(&NetworkParams::linear(&[700.0])).unwrap();
        let policy = StepPolicy {
            scheme: Scheme::Euler,
            step: 1.0,
            max_steps: 10,
            ..StepPolicy::default()
        };
        match integrate(&flow, init, &policy) {
            Err(Error::BlowUp { last_valid, .. }) => assert!(last_valid.is_finite()),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }
}
