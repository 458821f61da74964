//! Experiment configuration files.

use std::path::{Path, PathBuf};

use marginflow::analysis::{RateFamily, DOMINANCE_LOG_RATIO, MONOTONE_TOL};
use marginflow::dynamics::{AlphaSchedule, ExponentMode, FlowKind, NormOrder};
use marginflow::integrator::{InitScheme, RunSeed, Scheme, StepPolicy};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataSpec,
    pub net: NetSpec,
    pub flow: FlowSpec,
    #[serde(default)]
    pub exponent: ExponentSpec,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default)]
    pub analyses: Vec<AnalysisSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point {
    pub x: Vec<f64>,
    /// `+1` or `−1`.
    pub y: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSpec {
    GaussianBlobs {
        d: usize,
        n: usize,
        gap: f64,
        seed: u64,
        #[serde(default)]
        bias: bool,
    },
    #[serde(rename = "two-point-1d")]
    TwoPoint1d {
        x1: f64,
        x2: f64,
    },
    RingVsCenter {
        d: usize,
        n: usize,
        seed: u64,
        #[serde(default)]
        bias: bool,
    },
    Points {
        points: Vec<Point>,
        #[serde(default)]
        bias: bool,
    },
    Csv {
        /// Relative paths resolve against the config file's directory.
        path: PathBuf,
        /// Zero-based; defaults to the last column.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label_column: Option<usize>,
        /// One-vs-rest reduction; without it labels must be ±1.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        positive_class: Option<String>,
        /// Zero-based data-row indices to keep.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rows: Option<Vec<usize>>,
        #[serde(default)]
        bias: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    #[default]
    Gaussian,
    UnitSphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSpec {
    pub seed: u64,
    pub scale: f64,
    pub scheme: InitKind,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            seed: 0,
            scale: 1.0,
            scheme: InitKind::Gaussian,
        }
    }
}

impl InitSpec {
    pub fn run_seed(&self) -> RunSeed {
        RunSeed {
            seed: self.seed,
            init_scale: self.scale,
            init_scheme: match self.scheme {
                InitKind::Gaussian => InitScheme::Gaussian,
                InitKind::UnitSphere => InitScheme::UnitSphere,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    /// Hidden widths; empty for a linear model.
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub init: InitSpec,
    /// Explicit initial weights, one row-major matrix per layer. Overrides `init`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Infinity {
    #[serde(rename = "inf")]
    Inf,
}

/// A p-norm order: a number `p ≥ 1` or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PSpec {
    Finite(f64),
    Infinite(Infinity),
}

impl PSpec {
    pub fn value(self) -> f64 {
        match self {
            PSpec::Finite(p) => p,
            PSpec::Infinite(_) => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleSpec {
    Unit,
    InvLog,
    Log,
    LogLog,
    Exp,
    Linear,
}

impl From<ScheduleSpec> for AlphaSchedule {
    fn from(s: ScheduleSpec) -> AlphaSchedule {
        match s {
            ScheduleSpec::Unit => AlphaSchedule::Unit,
            ScheduleSpec::InvLog => AlphaSchedule::InvLog,
            ScheduleSpec::Log => AlphaSchedule::Log,
            ScheduleSpec::LogLog => AlphaSchedule::LogLog,
            ScheduleSpec::Exp => AlphaSchedule::Exp,
            ScheduleSpec::Linear => AlphaSchedule::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FlowSpec {
    Unconstrained,
    ConstrainedFixedRho { rho: f64 },
    FullLagrange,
    Reparameterized,
    WeightNorm,
    BatchNormCore {
        #[serde(default)]
        eps: f64,
    },
    TangentLp { p: PSpec, rho: f64 },
    RescaledAlpha { schedule: ScheduleSpec },
}

impl FlowSpec {
    pub fn kind(&self) -> Result<FlowKind> {
        Ok(match *self {
            FlowSpec::Unconstrained => FlowKind::Unconstrained,
            FlowSpec::ConstrainedFixedRho { rho } => FlowKind::ConstrainedFixedRho { rho },
            FlowSpec::FullLagrange => FlowKind::FullLagrange,
            FlowSpec::Reparameterized => FlowKind::Reparameterized,
            FlowSpec::WeightNorm => FlowKind::WeightNorm,
            FlowSpec::BatchNormCore { eps } => FlowKind::BatchNormCore { eps },
            FlowSpec::TangentLp { p, rho } => FlowKind::TangentLp {
                p: NormOrder::new(p.value())?,
                rho,
            },
            FlowSpec::RescaledAlpha { schedule } => FlowKind::RescaledAlpha {
                schedule: schedule.into(),
            },
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            FlowSpec::Unconstrained => "unconstrained",
            FlowSpec::ConstrainedFixedRho { .. } => "constrained-fixed-rho",
            FlowSpec::FullLagrange => "full-lagrange",
            FlowSpec::Reparameterized => "reparameterized",
            FlowSpec::WeightNorm => "weight-norm",
            FlowSpec::BatchNormCore { .. } => "batch-norm-core",
            FlowSpec::TangentLp { .. } => "tangent-lp",
            FlowSpec::RescaledAlpha { .. } => "rescaled-alpha",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExponentSpec {
    #[default]
    Shifted,
    Raw,
}

impl From<ExponentSpec> for ExponentMode {
    fn from(e: ExponentSpec) -> ExponentMode {
        match e {
            ExponentSpec::Shifted => ExponentMode::Shifted,
            ExponentSpec::Raw => ExponentMode::Raw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeSpec {
    Euler,
    #[default]
    Rk4,
    LagrangeEuler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySpec {
    pub scheme: SchemeSpec,
    pub step: f64,
    pub max_steps: usize,
    pub t_start: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_rho: Option<f64>,
    pub renormalize: bool,
    pub record_every: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_ratio: Option<f64>,
    pub tol_sv: f64,
    pub margin_record_gain: f64,
}

impl Default for PolicySpec {
    fn default() -> Self {
        let p = StepPolicy::default();
        PolicySpec {
            scheme: SchemeSpec::Rk4,
            step: p.step,
            max_steps: p.max_steps,
            t_start: p.t_start,
            t_end: p.t_end,
            stop_loss: p.stop_loss,
            stop_rho: p.stop_rho,
            renormalize: p.renormalize,
            record_every: p.record_every,
            record_ratio: p.record_ratio,
            tol_sv: p.tol_sv,
            margin_record_gain: p.margin_record_gain,
        }
    }
}

impl PolicySpec {
    pub fn step_policy(&self) -> StepPolicy {
        StepPolicy {
            scheme: match self.scheme {
                SchemeSpec::Euler => Scheme::Euler,
                SchemeSpec::Rk4 => Scheme::RK4,
                SchemeSpec::LagrangeEuler => Scheme::LagrangeEuler,
            },
            step: self.step,
            max_steps: self.max_steps,
            t_start: self.t_start,
            t_end: self.t_end,
            stop_loss: self.stop_loss,
            stop_rho: self.stop_rho,
            renormalize: self.renormalize,
            record_every: self.record_every,
            record_ratio: self.record_ratio,
            tol_sv: self.tol_sv,
            margin_record_gain: self.margin_record_gain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilySpec {
    LogGrowth,
    InvLog,
    LogQuadratic,
    Power,
}

impl FamilySpec {
    pub fn family(self) -> RateFamily {
        match self {
            FamilySpec::LogGrowth => RateFamily::LogGrowth,
            FamilySpec::InvLog => RateFamily::InvLog,
            FamilySpec::LogQuadratic => RateFamily::LogQuadratic,
            FamilySpec::Power => RateFamily::Power,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FamilySpec::LogGrowth => "log-growth",
            FamilySpec::InvLog => "inv-log",
            FamilySpec::LogQuadratic => "log-quadratic",
            FamilySpec::Power => "power",
        }
    }
}

/// Series a rate law is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateTarget {
    /// `‖W/‖W‖ − v_∞‖` against the reference direction.
    DirectionError,
    /// Product norm `ρ`.
    Rho,
}

impl RateTarget {
    pub fn name(self) -> &'static str {
        match self {
            RateTarget::DirectionError => "direction-error",
            RateTarget::Rho => "rho",
        }
    }
}

/// Limit direction used by direction-error fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceSpec {
    /// `pseudoinverse` for a single sample, `max-margin` otherwise (both `K = 1`),
    /// `terminal` for deeper nets.
    #[default]
    Auto,
    Pseudoinverse,
    MaxMargin,
    /// The run's own final direction.
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AnalysisSpec {
    NormBalance {
        #[serde(default = "default_balance_tol")]
        tol: f64,
    },
    MarginMonotone {
        #[serde(default = "default_log_ratio")]
        log_ratio: f64,
        #[serde(default = "default_monotone_tol")]
        tol: f64,
        /// Support-set changes required before dominance.
        #[serde(default)]
        min_support_changes: usize,
    },
    RateFit {
        target: RateTarget,
        family: FamilySpec,
        window: [f64; 2],
        #[serde(default)]
        reference: ReferenceSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min_r_squared: Option<f64>,
        /// Require a strictly better fit than this family on the same series.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        better_than: Option<FamilySpec>,
    },
    Hessian,
    RhoReference {
        window: [f64; 2],
        #[serde(default = "default_rho_tol")]
        tol: f64,
    },
    Stationarity {
        #[serde(default = "default_jitter")]
        jitter: f64,
    },
}

fn default_balance_tol() -> f64 {
    1e-10
}

fn default_log_ratio() -> f64 {
    DOMINANCE_LOG_RATIO
}

fn default_monotone_tol() -> f64 {
    MONOTONE_TOL
}

fn default_rho_tol() -> f64 {
    0.05
}

fn default_jitter() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Directory under the output root; defaults to the config name.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    pub formats: Vec<Format>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: None,
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

fn invalid(file: &str, field: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Config {
        file: file.to_string(),
        field: field.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parses `text`; `file` labels errors.
    pub fn from_json(text: &str, file: &str) -> Result<ExperimentConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(file, path, e.into_inner().to_string())
        })?;
        config.validate(file)?;
        Ok(config)
    }

    /// Reads and validates a config file, resolving a relative CSV path
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config = ExperimentConfig::from_json(&text, &path.display().to_string())?;
        if let DataSpec::Csv { path: csv, .. } = &mut config.data {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn depth(&self) -> usize {
        self.net.hidden.len() + 1
    }

    /// Checks cross-field invariants not expressible in the schema.
    pub fn validate(&self, file: &str) -> Result<()> {
        let err = |field: &str, msg: String| Err(invalid(file, field, msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return err("name", format!("'{}' is not a usable directory name", self.name));
        }
        if self.net.hidden.contains(&0) {
            return err("net.hidden", "hidden widths must be positive".into());
        }
        if let Some(w) = &self.net.weights {
            if w.len() != self.depth() {
                return err(
                    "net.weights",
                    format!("{} layers given, hidden widths imply {}", w.len(), self.depth()),
                );
            }
        }
        self.flow.kind().map_err(|e| invalid(file, "flow", e.to_string()))?;
        self.flow
            .kind()?
            .validate()
            .map_err(|e| invalid(file, "flow", e.to_string()))?;
        self.policy
            .step_policy()
            .validate()
            .map_err(|e| invalid(file, "policy", e.to_string()))?;
        if self.policy.scheme == SchemeSpec::LagrangeEuler
            && !matches!(self.flow, FlowSpec::FullLagrange | FlowSpec::ConstrainedFixedRho { .. })
        {
            return err(
                "policy.scheme",
                "lagrange-euler needs a full-lagrange or constrained-fixed-rho flow".into(),
            );
        }
        if let FlowSpec::RescaledAlpha { schedule } = self.flow {
            let min = AlphaSchedule::from(schedule).min_time();
            if !(self.policy.t_start > min) && min.is_finite() {
                return err(
                    "policy.t_start",
                    format!("the schedule needs t_start > {min}"),
                );
            }
        }
        let linear = self.depth() == 1;
        for (i, a) in self.analyses.iter().enumerate() {
            let field = format!("analyses[{i}]");
            match a {
                AnalysisSpec::Hessian if !linear => {
                    return err(&field, "hessian requires a linear network (K = 1)".into());
                }
                AnalysisSpec::NormBalance { .. }
                    if matches!(
                        self.flow,
                        FlowSpec::ConstrainedFixedRho { .. }
                            | FlowSpec::TangentLp { .. }
                            | FlowSpec::BatchNormCore { .. }
                    ) =>
                {
                    return err(
                        &field,
                        format!("norm-balance does not apply to the {} flow", self.flow.name()),
                    );
                }
                AnalysisSpec::RateFit {
                    target,
                    window,
                    reference,
                    min_r_squared,
                    ..
                } => {
                    if !(window[0] > 1.0 && window[1] > window[0]) {
                        return err(&format!("{field}.window"), "need 1 < lo < hi".into());
                    }
                    if *target == RateTarget::DirectionError
                        && !linear
                        && matches!(reference, ReferenceSpec::Pseudoinverse | ReferenceSpec::MaxMargin)
                    {
                        return err(
                            &format!("{field}.reference"),
                            "oracle references need a linear network".into(),
                        );
                    }
                    if min_r_squared.is_some_and(|r| !(0.0..=1.0).contains(&r)) {
                        return err(&format!("{field}.min_r_squared"), "must lie in [0, 1]".into());
                    }
                }
                AnalysisSpec::RhoReference { window, tol } => {
                    if !(window[0] > 0.0 && window[1] > window[0]) {
                        return err(&format!("{field}.window"), "need 0 < lo < hi".into());
                    }
                    if !(*tol > 0.0) {
                        return err(&format!("{field}.tol"), "must be positive".into());
                    }
                    if matches!(
                        self.flow,
                        FlowSpec::ConstrainedFixedRho { .. } | FlowSpec::TangentLp { .. }
                    ) {
                        return err(&field, "the norm is fixed along this flow".into());
                    }
                }
                _ => {}
            }
        }
        if self.output.formats.is_empty() {
            return err("output.formats", "at least one format is required".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "t",
        "data": {"source": "two-point-1d", "x1": 1.0, "x2": 2.0},
        "net": {"weights": [[[0.5]]]},
        "flow": {"kind": "unconstrained"}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL, "t.json").unwrap();
        assert_eq!(c.exponent, ExponentSpec::Shifted);
        assert_eq!(c.policy, PolicySpec::default());
        assert_eq!(c.output.formats, vec![Format::Csv, Format::Json]);
    }

    #[test]
    fn unknown_field_reports_its_path() {
        let text = MINIMAL.replace(r#""x2": 2.0"#, r#""x2": 2.0, "x3": 1.0"#);
        let e = ExperimentConfig::from_json(&text, "t.json").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("data") && msg.contains("x3"), "{msg}");
    }

    #[test]
    fn wrong_type_reports_its_path() {
        let text = MINIMAL.replace(r#""flow": {"kind": "unconstrained"}"#, r#""flow": {"kind": "unconstrained"}, "policy": {"step": "big"}"#);
        let msg = ExperimentConfig::from_json(&text, "t.json").unwrap_err().to_string();
        assert!(msg.contains("policy.step"), "{msg}");
    }

    #[test]
    fn p_norm_accepts_inf() {
        let text = MINIMAL.replace(
            r#"{"kind": "unconstrained"}"#,
            r#"{"kind": "tangent-lp", "p": "inf", "rho": 2.0}"#,
        );
        let c = ExperimentConfig::from_json(&text, "t.json").unwrap();
        assert_eq!(c.flow, FlowSpec::TangentLp { p: PSpec::Infinite(Infinity::Inf), rho: 2.0 });
        let back = ExperimentConfig::from_json(&c.to_json().unwrap(), "t.json").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn hessian_needs_linear_net() {
        let text = MINIMAL
            .replace(r#""net": {"weights": [[[0.5]]]}"#, r#""net": {"hidden": [2]}"#)
            .replace(r#""flow": {"kind": "unconstrained"}"#, r#""flow": {"kind": "unconstrained"}, "analyses": [{"kind": "hessian"}]"#);
        let msg = ExperimentConfig::from_json(&text, "t.json").unwrap_err().to_string();
        assert!(msg.contains("analyses[0]"), "{msg}");
    }
}
