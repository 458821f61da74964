//! Executes one experiment config: integration, analyses and artifacts.

use std::path::PathBuf;

use marginflow::analysis::{
    check_margin_monotone, fit::fit_rate, hessian_report, linear_hessian, relative_spread,
    Definiteness, MarginMonotone, RateModel, RhoReference,
};
use marginflow::dynamics::linear::field_linear_jacobian;
use marginflow::dynamics::{ExponentMode, Flow, FlowField};
use marginflow::integrator::{integrate, EventKind, StopReason, Trajectory};
use marginflow::oracles::{hard_margin_direction, pseudoinverse_fixed_point};
use marginflow::{Dataset, Matrix, NetworkParams, Vector};
use serde::Serialize;

use crate::config::{
    AnalysisSpec, ExperimentConfig, FamilySpec, FlowSpec, Format, RateTarget, ReferenceSpec,
};
use crate::data_io::build_dataset;
use crate::error::{CliError, Result};
use crate::output::{fmt_num, output_root, to_json_bytes, Artifacts, Table};

/// Resolution handed to the max-margin oracle when it is used as a reference.
const ORACLE_RESOLUTION: f64 = 1e-9;

/// Everything a run produced, before anything is written to disk.
#[derive(Debug)]
pub struct RunOutput {
    pub data: Dataset,
    pub flow: FlowField,
    pub trajectory: Trajectory,
    pub summary: Summary,
    pub artifacts: Artifacts,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.summary.passed
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalState {
    pub t: f64,
    pub log_t: f64,
    pub loss: f64,
    pub margin: f64,
    pub rho: f64,
    pub rhos: Vec<f64>,
    pub support: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EventSummary {
    pub kind: &'static str,
    pub step: usize,
    pub t: f64,
    pub log_t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LagrangeSummary {
    pub steps_recorded: usize,
    pub max_norm_error: f64,
    pub final_alpha: Vec<f64>,
    pub final_lambda: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub family: &'static str,
    pub scale: f64,
    pub exponent: f64,
    pub offset: f64,
    pub r_squared: f64,
    pub window: [f64; 2],
    pub points: usize,
}

impl FitSummary {
    fn new(family: FamilySpec, m: &RateModel) -> FitSummary {
        FitSummary {
            family: family.name(),
            scale: m.scale,
            exponent: m.exponent,
            offset: m.offset,
            r_squared: m.r_squared,
            window: [m.window.0, m.window.1],
            points: m.points,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochSummary {
    pub log_t_start: f64,
    pub log_t_end: f64,
    pub rate: f64,
}

/// Quantities specific to each analysis kind.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum AnalysisDetail {
    NormBalance {
        max_relative_spread: f64,
        tol: f64,
        records: usize,
    },
    MarginMonotone {
        applicable: bool,
        monotone: bool,
        epochs: usize,
        dominance_step: Option<usize>,
        dominance_log_t: Option<f64>,
        worst_step: f64,
        support_changes_before_dominance: usize,
        min_support_changes: usize,
        epoch_rates: Vec<EpochSummary>,
    },
    RateFit {
        target: &'static str,
        reference: &'static str,
        fit: FitSummary,
        min_r_squared: Option<f64>,
        competitor: Option<FitSummary>,
    },
    Hessian {
        loss_min_eigenvalue: f64,
        loss_max_eigenvalue: f64,
        loss_definiteness: &'static str,
        field_max_eigenvalue: f64,
        w: Vec<f64>,
    },
    RhoReference {
        depth: usize,
        margin: f64,
        anchor_t: f64,
        anchor_rho: f64,
        max_relative_error: f64,
        tol: f64,
        points: usize,
    },
    Stationarity {
        from_step: usize,
        final_residual: f64,
        max_increase: f64,
        jitter: f64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisEntry {
    pub kind: &'static str,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<AnalysisDetail>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub name: String,
    pub flow: &'static str,
    pub exponent: &'static str,
    pub dataset: String,
    pub samples: usize,
    pub dims: Vec<usize>,
    pub seed: u64,
    pub steps: usize,
    pub stop: &'static str,
    #[serde(rename = "T0")]
    pub t0: Option<f64>,
    #[serde(rename = "final")]
    pub final_state: FinalState,
    pub w_final: Vec<Vec<Vec<f64>>>,
    pub support_changes: usize,
    pub events: Vec<EventSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lagrange: Option<LagrangeSummary>,
    pub analyses: Vec<AnalysisEntry>,
    pub margin_monotone: Option<bool>,
    pub passed: bool,
}

fn stop_name(s: StopReason) -> &'static str {
    match s {
        StopReason::MaxSteps => "max-steps",
        StopReason::TimeReached => "time-reached",
        StopReason::LossBelow => "loss-below",
        StopReason::RhoAbove => "rho-above",
        StopReason::Kink => "kink",
    }
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// The starting weights: explicit `net.weights` or a seeded draw.
pub fn initial_network(config: &ExperimentConfig, data: &Dataset) -> Result<NetworkParams> {
    let mut dims = vec![data.dim()];
    dims.extend(&config.net.hidden);
    dims.push(1);
    match &config.net.weights {
        Some(layers) => {
            let mut out = Vec::with_capacity(layers.len());
            for (k, rows) in layers.iter().enumerate() {
                let (r, c) = (dims[k + 1], dims[k]);
                if rows.len() != r || rows.iter().any(|row| row.len() != c) {
                    return Err(CliError::Config {
                        file: config.name.clone(),
                        field: format!("net.weights[{k}]"),
                        message: format!("expected a {r}x{c} matrix"),
                    });
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                out.push(Matrix::from_row_slice(r, c, &flat));
            }
            Ok(NetworkParams::new(out)?)
        }
        None => Ok(config.net.init.run_seed().init_network(&dims)?),
    }
}

pub fn build_flow(config: &ExperimentConfig, data: Dataset) -> Result<FlowField> {
    Ok(FlowField::new(config.flow.kind()?, data, config.exponent.into())?)
}

/// Unit direction of a network: `w/‖w‖` for one layer, otherwise the
/// per-layer unit directions stacked and scaled by `1/√K`.
pub fn direction(net: &NetworkParams) -> Result<Vec<f64>> {
    let n = net.decompose()?;
    let scale = 1.0 / (n.depth() as f64).sqrt();
    Ok(n.dirs()
        .iter()
        .flat_map(|m| m.iter().map(move |v| v * scale))
        .collect())
}

/// Integrates `config` and evaluates its analyses without touching the disk.
pub fn execute(config: &ExperimentConfig) -> Result<RunOutput> {
    let data = build_dataset(&config.data)?;
    let net = initial_network(config, &data)?;
    let flow = build_flow(config, data.clone())?;
    let state = flow.initial_state(&net)?;
    let trajectory = integrate(&flow, state, &config.policy.step_policy())?;
    let nets = trajectory
        .states
        .iter()
        .map(|s| flow.effective_network(s))
        .collect::<marginflow::Result<Vec<_>>>()?;
    let mut artifacts = Artifacts::default();
    let mut analyses = Vec::new();
    let mut margin_monotone = None;
    for spec in &config.analyses {
        let entry = analyse(spec, config, &flow, &trajectory, &nets, &mut artifacts);
        if matches!(spec, AnalysisSpec::MarginMonotone { .. }) {
            margin_monotone = Some(margin_monotone.unwrap_or(true) && entry.pass);
        }
        analyses.push(entry);
    }
    let summary = summarize(config, &flow, &trajectory, &nets, analyses, margin_monotone);
    let mut files = Artifacts::default();
    if config.output.formats.contains(&Format::Csv) {
        files.add("trajectory.csv", trajectory_table(&trajectory).to_bytes()?);
        files.add("events.csv", events_table(&summary.events).to_bytes()?);
        if !trajectory.lagrange.is_empty() {
            files.add("lagrange.csv", lagrange_table(&trajectory).to_bytes()?);
        }
        files.files.append(&mut artifacts.files);
    }
    if config.output.formats.contains(&Format::Json) {
        files.add("summary.json", to_json_bytes(&summary)?);
    }
    Ok(RunOutput {
        data,
        flow,
        trajectory,
        summary,
        artifacts: files,
    })
}

/// The directory a run's artifacts go to.
pub fn run_dir(config: &ExperimentConfig) -> PathBuf {
    output_root().join(config.output.dir.as_deref().unwrap_or(&config.name))
}

/// Executes `config` and writes its artifacts. Errors leave no outputs.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    let out = execute(config)?;
    out.artifacts.commit(&run_dir(config))?;
    Ok(out)
}

fn summarize(
    config: &ExperimentConfig,
    flow: &FlowField,
    tr: &Trajectory,
    nets: &[NetworkParams],
    analyses: Vec<AnalysisEntry>,
    margin_monotone: Option<bool>,
) -> Summary {
    let r = tr.final_record();
    let w = nets.last().expect("at least one state");
    let events = tr
        .events
        .iter()
        .map(|e| {
            let (kind, support, margin) = match &e.kind {
                EventKind::SeparabilityOnset => ("separability-onset", None, None),
                EventKind::SupportSetChange(s) => ("support-set-change", Some(s.clone()), None),
                EventKind::MarginRecord(m) => ("margin-record", None, Some(*m)),
                EventKind::NormKink => ("norm-kink", None, None),
            };
            EventSummary {
                kind,
                step: e.step,
                t: e.time,
                log_t: e.log_time,
                support,
                margin,
            }
        })
        .collect();
    let lagrange = tr.lagrange.last().map(|l| LagrangeSummary {
        steps_recorded: tr.lagrange.len(),
        max_norm_error: tr.lagrange_norm_error,
        final_alpha: l.alpha.clone(),
        final_lambda: l.lambda.clone(),
    });
    let passed = analyses.iter().all(|a| a.pass);
    Summary {
        name: config.name.clone(),
        flow: config.flow.name(),
        exponent: match flow.mode() {
            ExponentMode::Shifted => "shifted",
            ExponentMode::Raw => "raw",
        },
        dataset: flow.dataset().name().to_string(),
        samples: flow.dataset().len(),
        dims: w.dims(),
        seed: config.net.init.seed,
        steps: tr.steps,
        stop: stop_name(tr.stop),
        t0: tr.separability_time(),
        final_state: FinalState {
            t: r.time,
            log_t: r.log_time,
            loss: r.loss,
            margin: r.margin,
            rho: r.rho,
            rhos: r.rhos.clone(),
            support: r.support.clone(),
        },
        w_final: w.layers().iter().map(rows_of).collect(),
        support_changes: tr.support_changes(),
        events,
        lagrange,
        analyses,
        margin_monotone,
        passed,
    }
}

fn trajectory_table(tr: &Trajectory) -> Table {
    let k = tr.final_record().rhos.len();
    let mut header: Vec<String> = ["step", "t", "log_t", "loss", "margin"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=k).map(|i| format!("rho_{i}")));
    header.extend((1..=k).map(|i| format!("drho2dt_{i}")));
    header.extend(["stationarity".to_string(), "support_set".to_string()]);
    let mut t = Table::new(header);
    for r in &tr.records {
        let mut row = vec![
            r.step.to_string(),
            fmt_num(r.time),
            fmt_num(r.log_time),
            fmt_num(r.loss),
            fmt_num(r.margin),
        ];
        row.extend(r.rhos.iter().map(|v| fmt_num(*v)));
        let scale = r.field_log_scale.exp();
        row.extend(r.drho2dt.iter().map(|v| fmt_num(v * scale)));
        row.push(fmt_num(r.stationarity));
        row.push(
            r.support
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        );
        t.push(row);
    }
    t
}

fn events_table(events: &[EventSummary]) -> Table {
    let mut t = Table::new(["step", "t", "log_t", "kind", "support_set", "margin"]);
    for e in events {
        t.push(vec![
            e.step.to_string(),
            fmt_num(e.t),
            fmt_num(e.log_t),
            e.kind.to_string(),
            e.support.as_ref().map_or_else(String::new, |s| {
                s.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
            }),
            e.margin.map_or_else(String::new, fmt_num),
        ]);
    }
    t
}

fn lagrange_table(tr: &Trajectory) -> Table {
    let k = tr.lagrange[0].alpha.len();
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend((1..=k).map(|i| format!("alpha_{i}")));
    header.extend((1..=k).map(|i| format!("lambda_{i}")));
    let mut t = Table::new(header);
    for l in &tr.lagrange {
        let mut row = vec![l.step.to_string(), fmt_num(l.time)];
        row.extend(l.alpha.iter().map(|v| fmt_num(*v)));
        row.extend(l.lambda.iter().map(|v| fmt_num(*v)));
        t.push(row);
    }
    t
}

fn kind_name(spec: &AnalysisSpec) -> &'static str {
    match spec {
        AnalysisSpec::NormBalance { .. } => "norm-balance",
        AnalysisSpec::MarginMonotone { .. } => "margin-monotone",
        AnalysisSpec::RateFit { .. } => "rate-fit",
        AnalysisSpec::Hessian => "hessian",
        AnalysisSpec::RhoReference { .. } => "rho-reference",
        AnalysisSpec::Stationarity { .. } => "stationarity",
    }
}

fn analyse(
    spec: &AnalysisSpec,
    config: &ExperimentConfig,
    flow: &FlowField,
    tr: &Trajectory,
    nets: &[NetworkParams],
    artifacts: &mut Artifacts,
) -> AnalysisEntry {
    let kind = kind_name(spec);
    match evaluate(spec, config, flow, tr, nets, artifacts) {
        Ok((pass, detail)) => AnalysisEntry {
            kind,
            pass,
            error: None,
            detail: Some(detail),
        },
        Err(e) => AnalysisEntry {
            kind,
            pass: false,
            error: Some(e.to_string()),
            detail: None,
        },
    }
}

fn evaluate(
    spec: &AnalysisSpec,
    config: &ExperimentConfig,
    flow: &FlowField,
    tr: &Trajectory,
    nets: &[NetworkParams],
    artifacts: &mut Artifacts,
) -> Result<(bool, AnalysisDetail)> {
    let data = flow.dataset();
    Ok(match *spec {
        AnalysisSpec::NormBalance { tol } => {
            let worst = tr
                .records
                .iter()
                .map(|r| relative_spread(&r.drho2dt))
                .fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v) });
            (
                worst < tol,
                AnalysisDetail::NormBalance {
                    max_relative_spread: worst,
                    tol,
                    records: tr.records.len(),
                },
            )
        }
        AnalysisSpec::MarginMonotone {
            log_ratio,
            tol,
            min_support_changes,
        } => match check_margin_monotone(&tr.records, log_ratio, tol) {
            MarginMonotone::NotApplicable => (
                false,
                AnalysisDetail::MarginMonotone {
                    applicable: false,
                    monotone: false,
                    epochs: 0,
                    dominance_step: None,
                    dominance_log_t: None,
                    worst_step: 0.0,
                    support_changes_before_dominance: 0,
                    min_support_changes,
                    epoch_rates: Vec::new(),
                },
            ),
            MarginMonotone::Verdict {
                monotone,
                epochs,
                dominance_step,
                worst_step,
                epoch_rates,
                ..
            } => {
                let before = tr
                    .events
                    .iter()
                    .filter(|e| {
                        matches!(e.kind, EventKind::SupportSetChange(_)) && e.step < dominance_step
                    })
                    .count();
                let dominance_log_t = tr
                    .records
                    .iter()
                    .find(|r| r.step == dominance_step)
                    .map(|r| r.log_time);
                (
                    monotone && before >= min_support_changes,
                    AnalysisDetail::MarginMonotone {
                        applicable: true,
                        monotone,
                        epochs,
                        dominance_step: Some(dominance_step),
                        dominance_log_t,
                        worst_step,
                        support_changes_before_dominance: before,
                        min_support_changes,
                        epoch_rates: epoch_rates
                            .iter()
                            .map(|e| EpochSummary {
                                log_t_start: e.log_t_start,
                                log_t_end: e.log_t_end,
                                rate: e.rate,
                            })
                            .collect(),
                    },
                )
            }
        },
        AnalysisSpec::RateFit {
            target,
            family,
            window,
            reference,
            min_r_squared,
            better_than,
        } => {
            let (series, reference_name) = rate_series(target, reference, data, tr, nets)?;
            let window = (window[0], window[1]);
            let model = fit_rate(&series, family.family(), window)?;
            let competitor = match better_than {
                Some(other) => Some((other, fit_rate(&series, other.family(), window)?)),
                None => None,
            };
            let mut pass = min_r_squared.is_none_or(|m| model.r_squared >= m);
            if let Some((_, c)) = &competitor {
                pass &= model.r_squared > c.r_squared;
            }
            artifacts.add(
                format!("fit_{}_{}.csv", target.name(), family.name()),
                fit_table(&series, window, &model, competitor.as_ref().map(|c| &c.1))
                    .to_bytes()?,
            );
            (
                pass,
                AnalysisDetail::RateFit {
                    target: target.name(),
                    reference: reference_name,
                    fit: FitSummary::new(family, &model),
                    min_r_squared,
                    competitor: competitor.map(|(f, m)| FitSummary::new(f, &m)),
                },
            )
        }
        AnalysisSpec::Hessian => {
            let w = nets.last().expect("at least one state");
            let wv = Vector::from_column_slice(w.layers()[0].as_slice());
            let rho = wv.norm();
            let v = &wv / rho;
            let loss = linear_hessian(&v, rho, data)?;
            let field = hessian_report(&field_linear_jacobian(&wv, data)?)?;
            let pass = match config.flow {
                FlowSpec::ConstrainedFixedRho { .. } => {
                    loss.verdict == Definiteness::PositiveDefinite
                }
                _ => field.max_eigenvalue < 0.0,
            };
            (
                pass,
                AnalysisDetail::Hessian {
                    loss_min_eigenvalue: loss.min_eigenvalue,
                    loss_max_eigenvalue: loss.max_eigenvalue,
                    loss_definiteness: match loss.verdict {
                        Definiteness::PositiveDefinite => "positive-definite",
                        Definiteness::PositiveSemidefinite => "positive-semidefinite",
                        Definiteness::Indefinite => "indefinite",
                    },
                    field_max_eigenvalue: field.max_eigenvalue,
                    w: wv.iter().copied().collect(),
                },
            )
        }
        AnalysisSpec::RhoReference { window, tol } => {
            let inside: Vec<_> = tr
                .records
                .iter()
                .filter(|r| r.time.is_finite() && r.time >= window[0] && r.time <= window[1])
                .collect();
            let anchor = inside.first().ok_or_else(|| {
                marginflow::Error::Domain(format!("no records inside {window:?}"))
            })?;
            let margin = tr.final_record().margin;
            let depth = anchor.rhos.len();
            let reference = RhoReference::new(depth, margin, anchor.time, anchor.rho)?;
            let mut table = Table::new(["t", "rho", "rho_reference", "relative_error"]);
            let mut worst = 0.0f64;
            for r in &inside {
                let expected = reference.rho_at(r.time)?;
                let err = (r.rho - expected).abs() / expected;
                worst = worst.max(err);
                table.push(vec![
                    fmt_num(r.time),
                    fmt_num(r.rho),
                    fmt_num(expected),
                    fmt_num(err),
                ]);
            }
            artifacts.add("rho_reference.csv", table.to_bytes()?);
            (
                worst < tol,
                AnalysisDetail::RhoReference {
                    depth,
                    margin,
                    anchor_t: anchor.time,
                    anchor_rho: anchor.rho,
                    max_relative_error: worst,
                    tol,
                    points: inside.len(),
                },
            )
        }
        AnalysisSpec::Stationarity { jitter } => {
            let from_step = tr
                .events
                .iter()
                .filter(|e| matches!(e.kind, EventKind::SupportSetChange(_)))
                .map(|e| e.step)
                .max()
                .unwrap_or(0);
            let tail: Vec<f64> = tr
                .records
                .iter()
                .filter(|r| r.step >= from_step && r.stationarity.is_finite())
                .map(|r| r.stationarity)
                .collect();
            let max_increase = tail
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(0.0f64, f64::max);
            let final_residual = tail.last().copied().unwrap_or(f64::NAN);
            (
                !tail.is_empty() && max_increase <= jitter,
                AnalysisDetail::Stationarity {
                    from_step,
                    final_residual,
                    max_increase,
                    jitter,
                },
            )
        }
    })
}

/// The time series a rate fit runs on, and the name of the reference used.
fn rate_series(
    target: RateTarget,
    reference: ReferenceSpec,
    data: &Dataset,
    tr: &Trajectory,
    nets: &[NetworkParams],
) -> Result<(Vec<(f64, f64)>, &'static str)> {
    if target == RateTarget::Rho {
        let s = tr.records.iter().map(|r| (r.time, r.rho)).collect();
        return Ok((s, "none"));
    }
    let linear = nets[0].depth() == 1;
    let reference = match reference {
        ReferenceSpec::Auto if linear && data.len() == 1 => ReferenceSpec::Pseudoinverse,
        ReferenceSpec::Auto if linear => ReferenceSpec::MaxMargin,
        ReferenceSpec::Auto => ReferenceSpec::Terminal,
        r => r,
    };
    let (target_dir, name) = match reference {
        ReferenceSpec::Pseudoinverse => {
            let s = &data.samples()[0];
            let yx = &s.x * s.y.sign();
            (pseudoinverse_fixed_point(&yx)?.iter().copied().collect(), "pseudoinverse")
        }
        ReferenceSpec::MaxMargin => (
            hard_margin_direction(data, ORACLE_RESOLUTION)?
                .direction
                .iter()
                .copied()
                .collect(),
            "max-margin",
        ),
        _ => (direction(nets.last().expect("at least one state"))?, "terminal"),
    };
    let mut series = Vec::with_capacity(nets.len());
    for (r, net) in tr.records.iter().zip(nets) {
        let d = direction(net)?;
        let err = d
            .iter()
            .zip(&target_dir)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if err > 0.0 {
            series.push((r.time, err));
        }
    }
    Ok((series, name))
}

fn fit_table(
    series: &[(f64, f64)],
    window: (f64, f64),
    model: &RateModel,
    competitor: Option<&RateModel>,
) -> Table {
    let mut t = Table::new(["t", "value", "fit", "competitor"]);
    for &(time, v) in series {
        if !(time >= window.0 && time <= window.1) {
            continue;
        }
        t.push(vec![
            fmt_num(time),
            fmt_num(v),
            fmt_num(model.predict(time)),
            fmt_num(competitor.map_or(f64::NAN, |c| c.predict(time))),
        ]);
    }
    t
}
