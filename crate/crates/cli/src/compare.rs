//! Side-by-side comparison of two runs on a shared dataset and architecture.

use marginflow::NetworkParams;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::{fmt_num, output_root, to_json_bytes, Artifacts, Table};
use crate::run::{direction, execute, AnalysisEntry, RunOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Margin,
    Loss,
    Rho,
    /// Unit direction of the network.
    Direction,
    /// All weights of the effective network.
    Weights,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Margin => "margin",
            Metric::Loss => "loss",
            Metric::Rho => "rho",
            Metric::Direction => "direction",
            Metric::Weights => "weights",
        }
    }
}

/// One aligned sample: both runs' metric values at the same `log t`.
#[derive(Debug, Clone, Serialize)]
pub struct AlignedPoint {
    pub log_t: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub divergence: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub metric: Metric,
    pub points: usize,
    pub initial_divergence: f64,
    pub final_divergence: f64,
    pub max_divergence: f64,
    /// Whether the divergence at the end exceeds its value at the start.
    pub diverges: bool,
    pub fits_a: Vec<AnalysisEntry>,
    pub fits_b: Vec<AnalysisEntry>,
    #[serde(skip)]
    pub series: Vec<AlignedPoint>,
}

fn metric_value(metric: Metric, out: &RunOutput, i: usize, net: &NetworkParams) -> Result<Vec<f64>> {
    let r = &out.trajectory.records[i];
    Ok(match metric {
        Metric::Margin => vec![r.margin],
        Metric::Loss => vec![r.loss],
        Metric::Rho => vec![r.rho],
        Metric::Direction => direction(net)?,
        Metric::Weights => net.layers().iter().flat_map(|m| m.iter().copied()).collect(),
    })
}

/// `(log t, value)` pairs at every record with finite `log t`.
fn series(metric: Metric, out: &RunOutput) -> Result<Vec<(f64, Vec<f64>)>> {
    let mut s = Vec::new();
    for (i, (r, state)) in out
        .trajectory
        .records
        .iter()
        .zip(&out.trajectory.states)
        .enumerate()
    {
        if !r.log_time.is_finite() {
            continue;
        }
        let net = marginflow::dynamics::Flow::effective_network(&out.flow, state)?;
        s.push((r.log_time, metric_value(metric, out, i, &net)?));
    }
    Ok(s)
}

/// Linear interpolation of `s` at `x`; `None` outside its range.
fn interpolate(s: &[(f64, Vec<f64>)], x: f64) -> Option<Vec<f64>> {
    let j = s.partition_point(|(t, _)| *t < x);
    if j == s.len() {
        return None;
    }
    let (t1, v1) = &s[j];
    if *t1 == x {
        return Some(v1.clone());
    }
    if j == 0 {
        return None;
    }
    let (t0, v0) = &s[j - 1];
    let w = (x - t0) / (t1 - t0);
    Some(v0.iter().zip(v1).map(|(a, b)| a + w * (b - a)).collect())
}

fn fits(out: &RunOutput) -> Vec<AnalysisEntry> {
    out.summary
        .analyses
        .iter()
        .filter(|a| a.kind == "rate-fit")
        .cloned()
        .collect()
}

/// Runs both configs and aligns `metric` on the times of `a`.
pub fn compare(a: &ExperimentConfig, b: &ExperimentConfig, metric: Metric) -> Result<Comparison> {
    let ra = execute(a)?;
    let rb = execute(b)?;
    if ra.data != rb.data {
        return Err(CliError::Comparability(format!(
            "'{}' and '{}' use different datasets",
            a.name, b.name
        )));
    }
    if ra.summary.dims != rb.summary.dims {
        return Err(CliError::Comparability(format!(
            "layer sizes differ: {:?} vs {:?}",
            ra.summary.dims, rb.summary.dims
        )));
    }
    let sa = series(metric, &ra)?;
    let sb = series(metric, &rb)?;
    let mut points = Vec::new();
    for (x, va) in &sa {
        let Some(vb) = interpolate(&sb, *x) else { continue };
        let divergence = va
            .iter()
            .zip(&vb)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        points.push(AlignedPoint {
            log_t: *x,
            a: va.clone(),
            b: vb,
            divergence,
        });
    }
    let initial = points.first().map_or(f64::NAN, |p| p.divergence);
    let last = points.last().map_or(f64::NAN, |p| p.divergence);
    let max = points.iter().map(|p| p.divergence).fold(0.0f64, f64::max);
    Ok(Comparison {
        a: a.name.clone(),
        b: b.name.clone(),
        metric,
        points: points.len(),
        initial_divergence: initial,
        final_divergence: last,
        max_divergence: max,
        diverges: last > initial,
        fits_a: fits(&ra),
        fits_b: fits(&rb),
        series: points,
    })
}

impl Comparison {
    pub fn table(&self) -> Table {
        let width = self.series.first().map_or(0, |p| p.a.len());
        let mut header = vec!["log_t".to_string()];
        if width == 1 {
            header.extend(["a".to_string(), "b".to_string()]);
        } else {
            header.extend((1..=width).map(|i| format!("a_{i}")));
            header.extend((1..=width).map(|i| format!("b_{i}")));
        }
        header.push("divergence".into());
        let mut t = Table::new(header);
        for p in &self.series {
            let mut row = vec![fmt_num(p.log_t)];
            row.extend(p.a.iter().chain(&p.b).map(|v| fmt_num(*v)));
            row.push(fmt_num(p.divergence));
            t.push(row);
        }
        t
    }

    /// Writes `compare/<a>__<b>__<metric>/` under the output root.
    pub fn write(&self) -> Result<std::path::PathBuf> {
        let dir = output_root()
            .join("compare")
            .join(format!("{}__{}__{}", self.a, self.b, self.metric.name()));
        let mut files = Artifacts::default();
        files.add("aligned.csv", self.table().to_bytes()?);
        files.add("report.json", to_json_bytes(self)?);
        files.commit(&dir)?;
        Ok(dir)
    }
}
