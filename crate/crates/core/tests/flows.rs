use marginflow::datasets::{generate, SyntheticSpec};
use marginflow::dynamics::{ExponentMode, FlowField, FlowKind, FlowState};
use marginflow::integrator::{
    integrate, support_timeline, EventKind, InitScheme, RunSeed, Scheme, StepPolicy, StopReason,
};
use marginflow::oracles::{adaptive_simpson, closed_form_1d, ei, li, li_inverse};
use marginflow::{Dataset, Error, NetworkParams};

fn two_point() -> Dataset {
    generate(&SyntheticSpec::TwoPoint1d { x1: 1.0, x2: 2.0 }, false).unwrap()
}

fn blobs(seed: u64) -> Dataset {
    generate(&SyntheticSpec::GaussianBlobs { d: 2, n: 10, gap: 1.0, seed }, true).unwrap()
}

fn net(seed: u64, dims: &[usize], scale: f64) -> NetworkParams {
    RunSeed { seed, init_scale: scale, init_scheme: InitScheme::Gaussian }
        .init_network(dims)
        .unwrap()
}

fn final_weight(scheme: Scheme, h: f64, t: f64) -> f64 {
    let flow = FlowField::new(FlowKind::Unconstrained, two_point(), ExponentMode::Raw).unwrap();
    let init = flow.initial_state(&NetworkParams::linear(&[0.1])).unwrap();
    let policy = StepPolicy {
        scheme,
        step: h,
        max_steps: (t / h).round() as usize,
        record_every: 1_000_000,
        ..StepPolicy::default()
    };
    let traj = integrate(&flow, init, &policy).unwrap();
    assert_eq!(traj.stop, StopReason::MaxSteps);
    traj.final_state().layers()[0][(0, 0)]
}

#[test]
fn schemes_converge_at_their_order() {
    let exact = final_weight(Scheme::RK4, 1e-4, 2.0);
    let order = |scheme, h: f64| {
        let e1 = (final_weight(scheme, h, 2.0) - exact).abs();
        let e2 = (final_weight(scheme, h / 2.0, 2.0) - exact).abs();
        (e1 / e2).log2()
    };
    let euler = order(Scheme::Euler, 0.02);
    let rk4 = order(Scheme::RK4, 0.05);
    assert!((euler - 1.0).abs() < 0.1, "euler order {euler}");
    assert!((rk4 - 4.0).abs() < 0.2, "rk4 order {rk4}");
}

#[test]
fn one_dimensional_flow_reaches_its_equilibrium() {
    let w = final_weight(Scheme::RK4, 1e-2, 60.0);
    assert!((w - closed_form_1d(1.0, 2.0).unwrap()).abs() < 1e-8);
}

#[test]
fn renormalization_keeps_constrained_layers_on_the_sphere() {
    let data = blobs(2);
    let flow = FlowField::new(FlowKind::ConstrainedFixedRho { rho: 3.0 }, data, ExponentMode::Shifted).unwrap();
    let init = flow.initial_state(&net(1, &[3, 4, 1], 1.0)).unwrap();
    let policy = StepPolicy { step: 0.05, max_steps: 2000, record_every: 50, ..StepPolicy::default() };
    let traj = integrate(&flow, init.clone(), &policy).unwrap();
    for s in &traj.states {
        for m in s.layers() {
            assert!((m.norm() - 1.0).abs() < 1e-14);
        }
    }
    let drift = integrate(&flow, init, &StepPolicy { renormalize: false, scheme: Scheme::Euler, ..policy })
        .unwrap()
        .final_state()
        .layers()
        .iter()
        .map(|m| (m.norm() - 1.0).abs())
        .fold(0.0, f64::max);
    assert!(drift > 1e-12, "Euler without renormalization should leave the sphere");
}

#[test]
fn inseparable_data_never_reaches_separability() {
    let data = generate(&SyntheticSpec::RingVsCenter { d: 2, n: 12, seed: 3 }, false).unwrap();
    let flow = FlowField::new(FlowKind::Unconstrained, data, ExponentMode::Shifted).unwrap();
    let init = flow.initial_state(&net(0, &[2, 3, 1], 0.5)).unwrap();
    let policy = StepPolicy { step: 0.05, max_steps: 4000, record_every: 100, ..StepPolicy::default() };
    let traj = integrate(&flow, init, &policy).unwrap();
    assert_eq!(traj.separability_time(), None);
    assert!(traj.events.iter().all(|e| e.kind != EventKind::SeparabilityOnset));
    assert!(traj.records.iter().all(|r| r.raw_margin <= 0.0));
}

#[test]
fn support_timeline_is_ordered_and_matches_events() {
    let flow = FlowField::new(FlowKind::Unconstrained, blobs(0), ExponentMode::Shifted).unwrap();
    let init = flow.initial_state(&net(0, &[3, 4, 1], 0.5)).unwrap();
    let policy = StepPolicy { step: 0.01, max_steps: 5000, record_every: 10, ..StepPolicy::default() };
    let traj = integrate(&flow, init, &policy).unwrap();
    let timeline = support_timeline(&traj);
    assert_eq!(timeline[0].1, traj.initial_support);
    assert_eq!(timeline.len(), traj.support_changes() + 1);
    assert!(timeline.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 != w[1].1));
    let onset = traj.separability_time().expect("blobs separate");
    assert!(traj.records.iter().filter(|r| r.time >= onset).all(|r| r.raw_margin > 0.0));
}

#[test]
fn physical_time_is_consistent_with_its_logarithm() {
    let flow = FlowField::new(FlowKind::Unconstrained, blobs(1), ExponentMode::Shifted).unwrap();
    let init = flow.initial_state(&net(2, &[3, 1], 1.0)).unwrap();
    let policy = StepPolicy { step: 0.05, max_steps: 3000, record_every: 30, ..StepPolicy::default() };
    let traj = integrate(&flow, init, &policy).unwrap();
    for w in traj.records.windows(2) {
        assert!(w[1].log_time >= w[0].log_time);
        if w[1].time.is_finite() && w[1].time > 0.0 {
            assert!((w[1].time.ln() - w[1].log_time).abs() < 1e-9 * w[1].log_time.abs().max(1.0));
        }
    }
}

#[test]
fn invalid_policies_and_states_are_rejected() {
    let flow = FlowField::new(FlowKind::Unconstrained, blobs(0), ExponentMode::Shifted).unwrap();
    let weights = flow.initial_state(&net(0, &[3, 1], 1.0)).unwrap();
    let bad = StepPolicy { step: -1.0, ..StepPolicy::default() };
    assert!(matches!(integrate(&flow, weights.clone(), &bad), Err(Error::Config(_))));
    let bad = StepPolicy { record_every: 0, ..StepPolicy::default() };
    assert!(matches!(integrate(&flow, weights.clone(), &bad), Err(Error::Config(_))));
    let dirs = FlowState::directions(weights.layers().to_vec());
    assert!(matches!(integrate(&flow, dirs, &StepPolicy::default()), Err(Error::Config(_))));
}

#[test]
fn exponential_integral_matches_quadrature() {
    for x in [1.5f64, 3.0, 10.0, 100.0] {
        let quad = adaptive_simpson(|t| 1.0 / t.ln(), 2.0, x, 1e-12);
        let li2 = 1.045_163_780_117_493;
        assert!((li(x).unwrap() - (li2 + quad)).abs() < 1e-9 * (1.0 + quad.abs()), "x = {x}");
        let back = li_inverse(li(x).unwrap()).unwrap();
        assert!((back - x).abs() < 1e-9 * x);
    }
    assert!((ei(1.0).unwrap() - 1.895_117_816_355_936_8).abs() < 1e-13);
    assert!((li(10.0).unwrap() - 6.165_599_504_787_298).abs() < 1e-12);
}
