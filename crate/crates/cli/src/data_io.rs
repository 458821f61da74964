//! Dataset construction from config specs and CSV files.

use std::path::Path;

use marginflow::datasets::{generate, SyntheticSpec};
use marginflow::{Dataset, Label};

use crate::config::DataSpec;
use crate::error::{CliError, Result};
use crate::output::fmt_num;

fn data_err(file: &Path, line: u64, message: impl Into<String>) -> CliError {
    CliError::Data {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a comma-separated file with one row per sample. A first row whose
/// feature cells are not all numeric is taken as a header. Labels are
/// `positive_class` versus the rest when given, otherwise they must be ±1.
pub fn load_csv(
    path: &Path,
    label_column: Option<usize>,
    positive_class: Option<&str>,
    rows: Option<&[usize]>,
    bias: bool,
) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            other => data_err(path, 0, format!("{other:?}")),
        })?;
    let mut parsed: Vec<(Vec<f64>, Label)> = Vec::new();
    let mut width = None;
    let mut first = true;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let cols = record.len();
        let label_at = label_column.unwrap_or(cols.saturating_sub(1));
        if label_at >= cols || cols < 2 {
            return Err(data_err(path, line, format!("{cols} columns, label column is {label_at}")));
        }
        let features: Vec<std::result::Result<f64, _>> = record
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != label_at)
            .map(|(_, c)| c.parse::<f64>())
            .collect();
        if first {
            first = false;
            if features.iter().any(|f| f.is_err()) {
                continue;
            }
        }
        match width {
            None => width = Some(cols),
            Some(w) if w != cols => {
                return Err(data_err(path, line, format!("expected {w} columns, found {cols}")));
            }
            _ => {}
        }
        let mut x = Vec::with_capacity(cols - 1);
        for (i, f) in features.into_iter().enumerate() {
            match f {
                Ok(v) if v.is_finite() => x.push(v),
                _ => {
                    return Err(data_err(path, line, format!("feature {i} is not a finite number")));
                }
            }
        }
        let raw = &record[label_at];
        let y = match positive_class {
            Some(c) => {
                if raw == c {
                    Label::Positive
                } else {
                    Label::Negative
                }
            }
            None => raw
                .parse::<f64>()
                .ok()
                .and_then(Label::from_sign)
                .ok_or_else(|| {
                    data_err(path, line, format!("label '{raw}' is not ±1 and no positive_class is set"))
                })?,
        };
        parsed.push((x, y));
    }
    if parsed.is_empty() {
        return Err(data_err(path, 0, "no data rows"));
    }
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    let all = Dataset::from_rows(name, &parsed, bias)?;
    match rows {
        Some(r) => Ok(all.subset(r)?),
        None => Ok(all),
    }
}

/// Builds the dataset a config describes.
pub fn build_dataset(spec: &DataSpec) -> Result<Dataset> {
    Ok(match spec {
        DataSpec::GaussianBlobs { d, n, gap, seed, bias } => generate(
            &SyntheticSpec::GaussianBlobs {
                d: *d,
                n: *n,
                gap: *gap,
                seed: *seed,
            },
            *bias,
        )?,
        DataSpec::TwoPoint1d { x1, x2 } => {
            generate(&SyntheticSpec::TwoPoint1d { x1: *x1, x2: *x2 }, false)?
        }
        DataSpec::RingVsCenter { d, n, seed, bias } => generate(
            &SyntheticSpec::RingVsCenter {
                d: *d,
                n: *n,
                seed: *seed,
            },
            *bias,
        )?,
        DataSpec::Points { points, bias } => {
            let rows = points
                .iter()
                .map(|p| {
                    Label::from_sign(f64::from(p.y))
                        .map(|y| (p.x.clone(), y))
                        .ok_or_else(|| CliError::Config {
                            file: "data".into(),
                            field: "points.y".into(),
                            message: format!("label {} is not ±1", p.y),
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            Dataset::from_rows("points", &rows, *bias)?
        }
        DataSpec::Csv {
            path,
            label_column,
            positive_class,
            rows,
            bias,
        } => load_csv(path, *label_column, positive_class.as_deref(), rows.as_deref(), *bias)?,
    })
}

/// Writes `data` as `x1,…,xd,y`, leaving out the bias coordinate.
pub fn write_csv<W: std::io::Write>(data: &Dataset, out: W) -> Result<()> {
    let d = if data.has_bias() { data.dim() - 1 } else { data.dim() };
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for s in data.samples() {
        let mut row: Vec<String> = s.x.iter().take(d).map(|v| fmt_num(*v)).collect();
        row.push(if s.y == Label::Positive { "1" } else { "-1" }.into());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io("<csv output>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn header_is_detected_and_classes_reduced() {
        let f = file("sl,sw,class\n5.1,3.5,setosa\n7.0,3.2,versicolor\n");
        let d = load_csv(f.path(), None, Some("setosa"), None, true).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 3);
        assert_eq!(d.samples()[0].y, Label::Positive);
        assert_eq!(d.samples()[1].y, Label::Negative);
        assert_eq!(d.samples()[1].x[2], 1.0);
    }

    #[test]
    fn headerless_signed_labels() {
        let f = file("1,2,1\n-1,0.5,-1\n");
        let d = load_csv(f.path(), None, None, Some(&[1]), false).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.samples()[0].y, Label::Negative);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let f = file("a,b,y\n1,2,1\n1,x,1\n");
        let msg = load_csv(f.path(), None, None, None, false).unwrap_err().to_string();
        assert!(msg.contains(":3:"), "{msg}");
        let f = file("1,2,1\n1,2\n");
        let msg = load_csv(f.path(), Some(2), None, None, false).unwrap_err().to_string();
        assert!(msg.contains(":2:"), "{msg}");
        let f = file("1,2,3\n");
        let msg = load_csv(f.path(), None, None, None, false).unwrap_err().to_string();
        assert!(msg.contains("±1"), "{msg}");
    }

    #[test]
    fn write_then_load_round_trips() {
        let spec = DataSpec::GaussianBlobs { d: 3, n: 7, gap: 0.5, seed: 9, bias: true };
        let data = build_dataset(&spec).unwrap();
        let mut buf = Vec::new();
        write_csv(&data, &mut buf).unwrap();
        let f = file(std::str::from_utf8(&buf).unwrap());
        let back = load_csv(f.path(), None, None, None, true).unwrap();
        for (a, b) in data.samples().iter().zip(back.samples()) {
            assert_eq!(a.y, b.y);
            assert_eq!(a.x, b.x);
        }
    }
}
