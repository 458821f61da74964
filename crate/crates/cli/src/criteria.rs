//! The verification batteries behind `verify`: fourteen numbered criteria,
//! each a list of measured quantities compared against a bound.

use std::collections::BTreeMap;
use std::fmt;
use std::time::{Duration, Instant};

use marginflow::analysis::relative_spread;
use marginflow::datasets::{generate, SyntheticSpec};
use marginflow::dynamics::batchnorm::field_batch_norm_core;
use marginflow::dynamics::{
    field_constrained_fixed_rho, field_full_lagrange, field_reparameterized, field_weight_norm,
    ExponentMode, Flow, FlowField, FlowKind, NormOrder, Projector,
};
use marginflow::integrator::{integrate, InitScheme, RunSeed, Scheme, StepPolicy};
use marginflow::oracles::{closed_form_1d, fd_gradient, hard_margin_direction};
use marginflow::{Dataset, Label, Matrix, NetworkParams, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bundled::{bundled, names};
use crate::error::Result;
use crate::run::{execute, AnalysisDetail, RunOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Op {
    fn holds(self, v: f64, bound: f64) -> bool {
        match self {
            Op::Lt => v < bound,
            Op::Le => v <= bound,
            Op::Gt => v > bound,
            Op::Ge => v >= bound,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
        }
    }
}

/// One measured quantity and the bound it must satisfy.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub op: Op,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, op: Op, bound: f64) -> Check {
        Check {
            name: name.into(),
            value,
            op,
            bound,
            pass: op.holds(value, bound),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} = {:.6e} {} {:.1e} [{}]",
            self.name,
            self.value,
            self.op.symbol(),
            self.bound,
            if self.pass { "ok" } else { "FAIL" }
        )
    }
}

#[derive(Debug, Clone)]
pub struct CriterionReport {
    pub id: usize,
    pub title: &'static str,
    pub checks: Vec<Check>,
    pub error: Option<String>,
    pub runtime: Duration,
}

impl CriterionReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && !self.checks.is_empty() && self.checks.iter().all(|c| c.pass)
    }

    /// One line: id, verdict, title and every check.
    pub fn line(&self) -> String {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let detail = match &self.error {
            Some(e) => format!("error: {e}"),
            None => self
                .checks
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join("; "),
        };
        format!(
            "C{:<2} {verdict} {} ({:.2} s): {detail}",
            self.id,
            self.title,
            self.runtime.as_secs_f64()
        )
    }
}

pub const TITLES: [&str; 14] = [
    "structural identity",
    "gradient oracle",
    "norm balance",
    "margin monotonicity",
    "dynamics equivalences",
    "1D equilibrium",
    "linear critical point and Hessian",
    "convergence-rate separation",
    "max-margin limit",
    "rho growth",
    "Lagrange alpha/lambda",
    "tangent-gradient norm preservation",
    "batch-norm core identity",
    "determinism",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Structural,
    Projector,
    Equivalence,
    Rates,
    All,
}

impl Suite {
    pub fn criteria(self) -> Vec<usize> {
        match self {
            Suite::Structural => vec![1, 2, 3],
            Suite::Projector => vec![12, 13],
            Suite::Equivalence => vec![5],
            Suite::Rates => vec![8],
            Suite::All => (1..=14).collect(),
        }
    }
}

/// Executes criteria, running each bundled config at most once.
#[derive(Debug, Default)]
pub struct Verifier {
    runs: BTreeMap<String, RunOutput>,
}

impl Verifier {
    pub fn new() -> Verifier {
        Verifier::default()
    }

    fn bundled_run(&mut self, name: &str) -> Result<&RunOutput> {
        if !self.runs.contains_key(name) {
            let out = execute(&bundled(name)?)?;
            self.runs.insert(name.to_string(), out);
        }
        Ok(&self.runs[name])
    }

    pub fn run(&mut self, id: usize) -> CriterionReport {
        let start = Instant::now();
        let result = match id {
            1 => c1(),
            2 => c2(),
            3 => c3(),
            4 => self.c4(),
            5 => c5(),
            6 => self.c6(),
            7 => c7(),
            8 => self.c8(),
            9 => c9(),
            10 => self.c10(),
            11 => c11(),
            12 => c12(),
            13 => c13(),
            14 => self.c14(),
            _ => Err(crate::error::CliError::Unknown {
                what: "criterion",
                name: id.to_string(),
            }),
        };
        let runtime = start.elapsed();
        let (mut checks, error) = match result {
            Ok(c) => (c, None),
            Err(e) => (Vec::new(), Some(e.to_string())),
        };
        if let Some(limit) = runtime_limit(id) {
            checks.push(Check::new("runtime_s", runtime.as_secs_f64(), Op::Lt, limit));
        }
        CriterionReport {
            id,
            title: TITLES.get(id.wrapping_sub(1)).copied().unwrap_or("unknown"),
            checks,
            error,
            runtime,
        }
    }

    fn c4(&mut self) -> Result<Vec<Check>> {
        let out = self.bundled_run("fig_margin_growth")?;
        let entry = out
            .summary
            .analyses
            .iter()
            .find(|a| a.kind == "margin-monotone");
        let Some(AnalysisDetail::MarginMonotone {
            applicable,
            monotone,
            worst_step,
            support_changes_before_dominance,
            ..
        }) = entry.and_then(|e| e.detail.clone())
        else {
            return Err(missing("fig_margin_growth", "margin-monotone"));
        };
        Ok(vec![
            Check::new("samples", out.data.len() as f64, Op::Ge, 20.0),
            Check::new("dominance_reached", flag(applicable), Op::Ge, 1.0),
            Check::new("non_decreasing", flag(monotone), Op::Ge, 1.0),
            Check::new("worst_step", worst_step, Op::Gt, -1e-8),
            Check::new(
                "support_changes_before_dominance",
                support_changes_before_dominance as f64,
                Op::Ge,
                1.0,
            ),
        ])
    }

    fn c6(&mut self) -> Result<Vec<Check>> {
        let expected = closed_form_1d(1.0, 2.0)?;
        let out = self.bundled_run("appendixA_1d")?;
        let w = out.summary.w_final[0][0][0];
        let field = out.summary.analyses.iter().find_map(|a| match &a.detail {
            Some(AnalysisDetail::Hessian {
                field_max_eigenvalue,
                ..
            }) => Some(*field_max_eigenvalue),
            _ => None,
        });
        let field = field.ok_or_else(|| missing("appendixA_1d", "hessian"))?;
        Ok(vec![
            Check::new("|w - w*|", (w - expected).abs(), Op::Lt, 1e-6),
            Check::new("field_derivative", field, Op::Lt, 0.0),
        ])
    }

    fn c8(&mut self) -> Result<Vec<Check>> {
        let mut checks = Vec::new();
        for (name, label) in [("convergencerates_gd_n1", "gd"), ("convergencerates_wn_n1", "wn")] {
            let out = self.bundled_run(name)?;
            checks.push(Check::new(
                format!("{label}_horizon"),
                out.trajectory.final_record().time,
                Op::Ge,
                1e5,
            ));
            checks.push(Check::new(
                format!("{label}_shifted"),
                flag(out.flow.mode() == ExponentMode::Shifted),
                Op::Ge,
                1.0,
            ));
            let fit = out.summary.analyses.iter().find_map(|a| match &a.detail {
                Some(AnalysisDetail::RateFit {
                    fit, competitor, ..
                }) => Some((fit.clone(), competitor.clone())),
                _ => None,
            });
            let (fit, competitor) = fit.ok_or_else(|| missing(name, "rate-fit"))?;
            if label == "gd" {
                checks.push(Check::new("gd_inv_log_r2", fit.r_squared, Op::Ge, 0.95));
            } else {
                checks.push(Check::new("wn_log_quadratic_r2", fit.r_squared, Op::Ge, 0.90));
                let other = competitor.ok_or_else(|| missing(name, "competitor fit"))?;
                checks.push(Check::new(
                    "wn_r2_margin_over_inv_log",
                    fit.r_squared - other.r_squared,
                    Op::Gt,
                    0.0,
                ));
            }
        }
        Ok(checks)
    }

    fn c10(&mut self) -> Result<Vec<Check>> {
        let k1 = self.bundled_run("rho_asymptotics_k1")?;
        let t_end = k1.trajectory.final_record().time;
        let ratios: Vec<f64> = k1
            .trajectory
            .records
            .iter()
            .filter(|r| r.time >= t_end / 10.0)
            .map(|r| r.rho / r.time.ln())
            .collect();
        let (lo, hi) = ratios
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        let variation = (hi - lo) / hi;
        let k1_series: Vec<(f64, f64)> = k1
            .trajectory
            .records
            .iter()
            .filter(|r| r.log_time.is_finite())
            .map(|r| (r.log_time, r.rho))
            .collect();
        let k2 = self.bundled_run("rho_asymptotics_k2")?;
        let (max_rel, window) = k2
            .summary
            .analyses
            .iter()
            .find_map(|a| match &a.detail {
                Some(AnalysisDetail::RhoReference {
                    max_relative_error,
                    anchor_t,
                    ..
                }) => Some((*max_relative_error, *anchor_t)),
                _ => None,
            })
            .ok_or_else(|| missing("rho_asymptotics_k2", "rho-reference"))?;
        let mut product_excess = f64::INFINITY;
        let mut layer_excess = f64::NEG_INFINITY;
        for r in k2.trajectory.records.iter().filter(|r| r.time >= window) {
            let Some(k1_rho) = interpolate(&k1_series, r.log_time) else {
                continue;
            };
            product_excess = product_excess.min(r.rho - k1_rho);
            for rk in &r.rhos {
                layer_excess = layer_excess.max(rk - k1_rho);
            }
        }
        Ok(vec![
            Check::new("k1_rho_over_log_t_variation", variation, Op::Lt, 0.05),
            Check::new("k2_product_minus_k1", product_excess, Op::Gt, 0.0),
            Check::new("k2_layer_minus_k1", layer_excess, Op::Lt, 0.0),
            Check::new("k2_li_inverse_relative_error", max_rel, Op::Lt, 0.05),
        ])
    }

    fn c14(&mut self) -> Result<Vec<Check>> {
        let mut mismatched = 0usize;
        let mut compared = 0usize;
        for name in names() {
            let again = execute(&bundled(name)?)?;
            let first = self.bundled_run(name)?;
            if first.artifacts.files != again.artifacts.files {
                mismatched += 1;
            }
            compared += 1;
        }
        Ok(vec![
            Check::new("configs_compared", compared as f64, Op::Ge, 1.0),
            Check::new("configs_with_differing_bytes", mismatched as f64, Op::Le, 0.0),
        ])
    }
}

fn runtime_limit(id: usize) -> Option<f64> {
    match id {
        1 => Some(1.0),
        2 => Some(5.0),
        4 => Some(60.0),
        8 => Some(300.0),
        _ => None,
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn missing(config: &str, what: &str) -> crate::error::CliError {
    crate::error::CliError::Unknown {
        what: "analysis result",
        name: format!("{config}: {what}"),
    }
}

fn interpolate(s: &[(f64, f64)], x: f64) -> Option<f64> {
    let j = s.partition_point(|(t, _)| *t < x);
    if j == 0 || j == s.len() {
        return (j < s.len() && s[j].0 == x).then(|| s[j].1);
    }
    let ((t0, v0), (t1, v1)) = (s[j - 1], s[j]);
    Some(v0 + (x - t0) / (t1 - t0) * (v1 - v0))
}

fn random_dims(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let depth = rng.random_range(1..=4usize);
    let mut dims: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=8usize)).collect();
    dims.push(1);
    dims
}

fn random_net(rng: &mut ChaCha8Rng, dims: &[usize]) -> Result<NetworkParams> {
    let seed = RunSeed {
        seed: rng.random(),
        init_scale: 1.0,
        init_scheme: InitScheme::Gaussian,
    };
    Ok(seed.init_network(dims)?)
}

fn random_vector(rng: &mut ChaCha8Rng, d: usize) -> Vector {
    Vector::from_fn(d, |_, _| rng.random_range(-2.0..2.0))
}

fn blobs(seed: u64) -> Result<Dataset> {
    Ok(generate(
        &SyntheticSpec::GaussianBlobs {
            d: 2,
            n: 20,
            gap: 0.5,
            seed,
        },
        true,
    )?)
}

fn seeded(seed: u64, scale: f64, dims: &[usize]) -> Result<NetworkParams> {
    Ok(RunSeed {
        seed,
        init_scale: scale,
        init_scheme: InitScheme::Gaussian,
    }
    .init_network(dims)?)
}

fn c1() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut layers = 0usize;
    for _ in 0..100 {
        let dims = random_dims(&mut rng);
        let net = random_net(&mut rng, &dims)?;
        let x = random_vector(&mut rng, dims[0]);
        let (f, grads) = net.forward_and_grad(&x)?;
        for (w, g) in net.layers().iter().zip(&grads) {
            let scale = f.abs().max(w.norm() * g.norm());
            let r = (w.dot(g) - f).abs();
            worst = worst.max(if scale > 0.0 { r / scale } else { r });
            layers += 1;
        }
    }
    Ok(vec![
        Check::new("layers_checked", layers as f64, Op::Ge, 100.0),
        Check::new("max_relative_residual", worst, Op::Lt, 1e-10),
    ])
}

fn c2() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut nets = 0usize;
    while nets < 50 {
        let dims = random_dims(&mut rng);
        let net = random_net(&mut rng, &dims)?;
        let x = random_vector(&mut rng, dims[0]);
        let Ok(fd) = fd_gradient(net.layers(), &x, 1e-5) else {
            continue;
        };
        for (g, e) in net.grad_weights(&x)?.iter().zip(&fd) {
            let scale = g.norm();
            let r = (g - e).norm();
            worst = worst.max(if scale > 0.0 { r / scale } else { r });
        }
        nets += 1;
    }
    Ok(vec![
        Check::new("nets", nets as f64, Op::Ge, 50.0),
        Check::new("max_relative_error", worst, Op::Lt, 1e-6),
    ])
}

fn c3() -> Result<Vec<Check>> {
    let mut worst = 0.0f64;
    let mut records = 0usize;
    let mut separated = 0usize;
    for seed in 0..3u64 {
        let data = blobs(seed)?;
        let net = seeded(seed, 0.5, &[3, 4, 4, 1])?;
        let flow = FlowField::new(FlowKind::Unconstrained, data, ExponentMode::Shifted)?;
        let policy = StepPolicy {
            step: 1e-2,
            max_steps: 20_000,
            record_every: 20,
            ..Default::default()
        };
        let tr = integrate(&flow, flow.initial_state(&net)?, &policy)?;
        for r in &tr.records {
            worst = worst.max(relative_spread(&r.drho2dt));
            records += 1;
        }
        if tr.separability_time().is_some() {
            separated += 1;
        }
    }
    Ok(vec![
        Check::new("separated_runs", separated as f64, Op::Ge, 3.0),
        Check::new("records", records as f64, Op::Ge, 100.0),
        Check::new("max_relative_spread", worst, Op::Lt, 1e-10),
    ])
}

/// Largest `|a − b| / (1 + max|b|)` over matching matrices.
fn matrix_gap(a: &[Matrix], b: &[Matrix]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs().max() / (1.0 + y.abs().max()))
        .fold(0.0, f64::max)
}

fn c5() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut wn_gap = 0.0f64;
    let mut rho2_gap = 0.0f64;
    for trial in 0..50u64 {
        let data = blobs(trial)?;
        let mut dims = random_dims(&mut rng);
        dims[0] = 3;
        let net = random_net(&mut rng, &dims)?;
        let norm = net.decompose()?;
        let wn = field_weight_norm(norm.rhos(), norm.dirs(), &data, ExponentMode::Raw)?;
        let fl = field_full_lagrange(&norm, &data, ExponentMode::Raw)?;
        wn_gap = wn_gap.max(matrix_gap(&wn.value.dir_dot, &fl.value.dir_dot));
        for (a, b) in wn.value.rho_dot.iter().zip(&fl.value.rho_dot) {
            wn_gap = wn_gap.max((a - b).abs() / (1.0 + b.abs()));
        }
        let rep = field_reparameterized(&net, &data, ExponentMode::Raw)?;
        let con =
            field_constrained_fixed_rho(norm.dirs(), norm.rho_product(), &data, ExponentMode::Raw)?;
        let scaled: Vec<Matrix> = rep
            .value
            .dir_dot
            .iter()
            .zip(norm.rhos())
            .map(|(m, r)| m * (r * r))
            .collect();
        rho2_gap = rho2_gap.max(matrix_gap(&scaled, &con.value));
    }
    let data = blobs(0)?;
    let net = seeded(5, 0.7, &[3, 4, 1])?;
    // At h = 1e-3 the run crosses a ReLU kink and the two discretizations
    // switch activation pattern one step apart.
    let policy = StepPolicy {
        step: 2.5e-4,
        max_steps: 100_000,
        t_end: Some(10.0),
        record_every: 400,
        renormalize: true,
        ..Default::default()
    };
    let run = |kind| -> Result<Vec<Vec<Matrix>>> {
        let flow = FlowField::new(kind, data.clone(), ExponentMode::Raw)?;
        let tr = integrate(&flow, flow.initial_state(&net)?, &policy)?;
        Ok(tr
            .states
            .iter()
            .map(|s| s.layers().iter().map(|m| m / m.norm()).collect())
            .collect())
    };
    let wn = run(FlowKind::WeightNorm)?;
    let fl = run(FlowKind::FullLagrange)?;
    let linf = wn
        .iter()
        .zip(&fl)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs().max()))
        .fold(0.0f64, f64::max);
    Ok(vec![
        Check::new("weight_norm_vs_full_lagrange_field", wn_gap, Op::Lt, 1e-12),
        Check::new("constrained_vs_rho_k2_reparameterized", rho2_gap, Op::Lt, 1e-12),
        Check::new("states_compared", wn.len().min(fl.len()) as f64, Op::Ge, 100.0),
        Check::new("trajectory_linf_over_10", linf, Op::Lt, 1e-6),
    ])
}

fn c7() -> Result<Vec<Check>> {
    let x = [1.0, -2.0, 0.5];
    let data = Dataset::from_rows("single", &[(x.to_vec(), Label::Positive)], false)?;
    let xv = Vector::from_column_slice(&x);
    let target = &xv / xv.norm();
    let flow = FlowField::new(FlowKind::ConstrainedFixedRho { rho: 1.0 }, data.clone(), ExponentMode::Raw)?;
    let policy = StepPolicy {
        step: 1e-2,
        max_steps: 100_000,
        t_end: Some(300.0),
        record_every: 100_000,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for seed in 0..20u64 {
        let net = seeded(seed, 1.0, &[3, 1])?;
        let tr = integrate(&flow, flow.initial_state(&net)?, &policy)?;
        let w = flow.effective_network(tr.final_state())?;
        let v = Vector::from_column_slice(w.layers()[0].as_slice());
        let v = &v / v.norm();
        worst = worst.max((&v - &target).norm());
        let h = marginflow::analysis::linear_hessian(&v, 1.0, &data)?;
        min_eig = min_eig.min(h.min_eigenvalue);
    }
    Ok(vec![
        Check::new("max_distance_to_x_over_norm", worst, Op::Lt, 1e-4),
        Check::new("hessian_min_eigenvalue", min_eig, Op::Gt, 0.0),
    ])
}

fn c9() -> Result<Vec<Check>> {
    let mut worst_angle = 0.0f64;
    let mut worst_log_loss = f64::NEG_INFINITY;
    for seed in 0..5u64 {
        let data = blobs(seed)?;
        let oracle = hard_margin_direction(&data, 1e-9)?;
        let net = seeded(seed, 0.1, &[3, 1])?;
        let flow = FlowField::new(FlowKind::Unconstrained, data, ExponentMode::Shifted)?;
        let policy = StepPolicy {
            step: 0.2,
            max_steps: 100_000,
            stop_rho: Some(3e3),
            record_every: 100_000,
            ..Default::default()
        };
        let tr = integrate(&flow, flow.initial_state(&net)?, &policy)?;
        let w = Vector::from_column_slice(tr.final_state().layers()[0].as_slice());
        let angle = (w.dot(&oracle.direction) / w.norm()).clamp(-1.0, 1.0).acos();
        worst_angle = worst_angle.max(angle);
        worst_log_loss = worst_log_loss.max(tr.final_record().log_loss);
    }
    Ok(vec![
        Check::new("max_log_loss", worst_log_loss, Op::Lt, 1e-8f64.ln()),
        Check::new("max_angle_rad", worst_angle, Op::Lt, 1e-2),
    ])
}

fn c11() -> Result<Vec<Check>> {
    let data = generate(
        &SyntheticSpec::GaussianBlobs {
            d: 2,
            n: 10,
            gap: 0.5,
            seed: 4,
        },
        true,
    )?;
    let net = seeded(4, 1.0, &[3, 1])?;
    let flow = FlowField::new(FlowKind::FullLagrange, data, ExponentMode::Raw)?;
    let policy = StepPolicy {
        scheme: Scheme::LagrangeEuler,
        step: 1e-2,
        max_steps: 200_000,
        record_every: 5000,
        renormalize: false,
        ..Default::default()
    };
    let tr = integrate(&flow, flow.initial_state(&net)?, &policy)?;
    let t0 = tr
        .separability_time()
        .ok_or_else(|| missing("lagrange run", "separability onset"))?;
    let after: Vec<_> = tr.lagrange.iter().filter(|l| l.time >= t0).collect();
    let max_increase = after
        .windows(2)
        .flat_map(|w| {
            w[0].lambda
                .iter()
                .zip(&w[1].lambda)
                .map(|(a, b)| b.abs() - a.abs())
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let last = after.last().ok_or_else(|| missing("lagrange run", "records"))?;
    let alpha = last.alpha.iter().map(|a| (a - 1.0).abs()).fold(0.0, f64::max);
    Ok(vec![
        Check::new("records_after_T0", after.len() as f64, Op::Ge, 10.0),
        Check::new("max_increase_of_|lambda|", max_increase, Op::Le, 0.0),
        Check::new("terminal_|alpha-1|", alpha, Op::Lt, 1e-3),
        Check::new("max_|‖alpha V + g‖-1|", tr.lagrange_norm_error, Op::Lt, 1e-10),
    ])
}

fn c12() -> Result<Vec<Check>> {
    let data = blobs(0)?;
    let net = seeded(12, 1.0, &[3, 1])?;
    let mut checks = Vec::new();
    for (p, renormalize, step, bound, label) in [
        (2.0, true, 1e-3, 1e-12, "p2"),
        (1.0, false, 1e-4, 1e-4, "p1"),
        (f64::INFINITY, false, 1e-4, 1e-4, "pinf"),
    ] {
        let order = NormOrder::new(p)?;
        let flow = FlowField::new(FlowKind::TangentLp { p: order, rho: 5.0 }, data.clone(), ExponentMode::Shifted)?;
        let policy = StepPolicy {
            step,
            max_steps: 20_000,
            renormalize,
            record_every: 1,
            ..Default::default()
        };
        let tr = integrate(&flow, flow.initial_state(&net)?, &policy)?;
        let drift = tr
            .states
            .iter()
            .flat_map(|s| s.layers().iter().map(|u| (order.norm(u.as_slice()) - 1.0).abs()))
            .fold(0.0f64, f64::max);
        checks.push(Check::new(format!("{label}_steps"), tr.steps as f64, Op::Ge, 100.0));
        checks.push(Check::new(format!("{label}_max_norm_drift"), drift, Op::Lt, bound));
    }
    Ok(checks)
}

fn c13() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut proj_gap = 0.0f64;
    let mut orth = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=12usize);
        let x = Matrix::from_fn(n, 1, |_, _| rng.random_range(-2.0..2.0));
        let sigma = (x.norm_squared() / n as f64).sqrt();
        let u = Vector::from_column_slice(x.as_slice()) / x.norm();
        let s = Projector::sphere(u.as_slice())?.to_dense();
        let mut jac = Matrix::zeros(n, n);
        for i in 0..n {
            let mut e = Matrix::zeros(n, 1);
            e[(i, 0)] = 1.0;
            let col = field_batch_norm_core(&x, &e, 0.0)? * sigma;
            jac.set_column(i, &col.column(0));
        }
        proj_gap = proj_gap.max((&jac - &s).abs().max());
        let g = Matrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
        let out = field_batch_norm_core(&x, &g, 0.0)?;
        let xhat = &x / sigma;
        let denom = xhat.norm() * out.norm();
        if denom > 0.0 {
            orth = orth.max(xhat.dot(&out).abs() / denom);
        }
    }
    Ok(vec![
        Check::new("max_|J·sigma - S|", proj_gap, Op::Lt, 1e-12),
        Check::new("max_cos(xhat, projected)", orth, Op::Lt, 1e-10),
    ])
}
