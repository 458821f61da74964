use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use marginflow_cli::bundled::{bundled, names};
use marginflow_cli::config::ExperimentConfig;
use marginflow_cli::output::{fmt_num, OUTPUT_ROOT_VAR};
use marginflow_cli::run::execute;
use proptest::prelude::*;

fn marginflow(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_marginflow"))
        .args(args)
        .env(OUTPUT_ROOT_VAR, root)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

const SMALL: &str = r#"{
  "name": "small",
  "data": { "source": "gaussian-blobs", "d": 2, "n": 8, "gap": 1.0, "seed": 3, "bias": true },
  "net": { "hidden": [3], "init": { "seed": 0, "scale": 0.5 } },
  "flow": { "kind": "unconstrained" },
  "policy": { "step": 0.01, "max_steps": 400, "record_every": 10 },
  "analyses": [{ "kind": "norm-balance" }]
}"#;

#[test]
fn malformed_configs_exit_1_with_field_path_and_no_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("out");
    let unknown = SMALL.replace("\"policy\"", "\"polcy\"");
    let wrong_type = SMALL.replace("\"step\": 0.01", "\"step\": \"fast\"");
    let bad_value = SMALL.replace("\"step\": 0.01", "\"step\": -1.0");
    for (text, needle) in [
        (unknown, "polcy"),
        (wrong_type, "policy.step"),
        (bad_value, "policy"),
        ("{ \"name\": ".to_string(), "EOF"),
    ] {
        let cfg = write(tmp.path(), "bad.json", &text);
        let out = marginflow(&root, &["run", cfg.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(1));
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{err}");
        assert!(!root.exists(), "outputs written for a malformed config");
    }
}

#[test]
fn run_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = marginflow(tmp.path(), &["run", "appendixA_1d"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("appendixA_1d");
    for f in ["summary.json", "trajectory.csv", "events.csv"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let s = read_json(&dir.join("summary.json"));
    let w = s["w_final"][0][0][0].as_f64().unwrap();
    let expected = marginflow::oracles::closed_form_1d(1.0, 2.0).unwrap();
    assert!((w - expected).abs() < 1e-6);
    assert_eq!(s["passed"], true);
    let entries: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().collect();
    assert_eq!(entries.len(), 1, "staging directory left behind");
}

#[test]
fn failed_analysis_exits_2_and_keeps_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "ring.json",
        r#"{
  "name": "ring",
  "data": { "source": "ring-vs-center", "d": 2, "n": 12, "seed": 1 },
  "net": { "hidden": [] },
  "flow": { "kind": "unconstrained" },
  "policy": { "step": 0.01, "max_steps": 300, "record_every": 10 },
  "analyses": [{ "kind": "margin-monotone" }]
}"#,
    );
    let out = marginflow(&tmp.path().join("o"), &["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let s = read_json(&tmp.path().join("o/ring/summary.json"));
    assert_eq!(s["T0"], serde_json::Value::Null);
    assert_eq!(s["margin_monotone"], false);
}

#[test]
fn seed_override_changes_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.json", SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(marginflow(&a, &["run", cfg.to_str().unwrap()]).status.code(), Some(0));
    let out = marginflow(&b, &["run", cfg.to_str().unwrap(), "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0));
    let sa = read_json(&a.join("small/summary.json"));
    let sb = read_json(&b.join("small/summary.json"));
    assert_eq!(sb["seed"], 7);
    assert_ne!(sa["w_final"], sb["w_final"]);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.json", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    marginflow(&a, &["run", cfg.to_str().unwrap()]);
    marginflow(&b, &["run", cfg.to_str().unwrap()]);
    let files: Vec<_> = std::fs::read_dir(a.join("small")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(files.len() >= 3);
    for f in files {
        let x = std::fs::read(a.join("small").join(&f)).unwrap();
        let y = std::fs::read(b.join("small").join(&f)).unwrap();
        assert_eq!(x, y, "{f:?}");
    }
}

fn schema() -> jsonschema::Validator {
    let text = include_str!("../schema/summary.schema.json");
    jsonschema::validator_for(&serde_json::from_str(text).unwrap()).unwrap()
}

fn assert_valid(v: &jsonschema::Validator, name: &str, bytes: &[u8]) {
    let instance: serde_json::Value = serde_json::from_slice(bytes).unwrap();
    let errors: Vec<String> = v.iter_errors(&instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

fn summary_bytes(c: &ExperimentConfig) -> Vec<u8> {
    let out = execute(c).unwrap();
    out.artifacts
        .files
        .iter()
        .find(|(n, _)| n == "summary.json")
        .unwrap()
        .1
        .clone()
}

#[test]
fn summaries_validate_against_schema() {
    let v = schema();
    for name in ["appendixA_1d", "fig_margin_growth", "gradientdynamics_wn", "rho_asymptotics_k2", "convergencerates_wn_n1"] {
        assert_valid(&v, name, &summary_bytes(&bundled(name).unwrap()));
    }
    let lagrange = SMALL
        .replace("\"hidden\": [3]", "\"hidden\": []")
        .replace("{ \"kind\": \"unconstrained\" }", "{ \"kind\": \"full-lagrange\" }")
        .replace("\"step\": 0.01,", "\"step\": 0.01, \"scheme\": \"lagrange-euler\", \"renormalize\": false,")
        .replace(
            "[{ \"kind\": \"norm-balance\" }]",
            "[{ \"kind\": \"stationarity\" }, { \"kind\": \"rate-fit\", \"target\": \"rho\", \"family\": \"power\", \"window\": [1e6, 1e7] }]",
        );
    let c = ExperimentConfig::from_json(&lagrange, "lagrange").unwrap();
    let bytes = summary_bytes(&c);
    assert_valid(&v, "lagrange", &bytes);
    let s: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    assert!(s["lagrange"]["max_norm_error"].as_f64().unwrap() < 1e-10);
    assert!(s["analyses"][1]["error"].is_string(), "empty fit window must be reported");
}

#[test]
fn schema_rejects_incomplete_summary() {
    let v = schema();
    let mut s: serde_json::Value = serde_json::from_slice(&summary_bytes(&bundled("appendixA_1d").unwrap())).unwrap();
    s.as_object_mut().unwrap().remove("w_final");
    assert!(!v.is_valid(&s));
}

#[test]
fn compare_identical_configs_has_zero_divergence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.json", SMALL);
    let p = cfg.to_str().unwrap();
    for metric in ["margin", "weights", "direction"] {
        let out = marginflow(tmp.path(), &["compare", p, p, "--metric", metric]);
        assert_eq!(out.status.code(), Some(0));
        let r = read_json(&tmp.path().join(format!("compare/small__small__{metric}/report.json")));
        assert_eq!(r["max_divergence"].as_f64(), Some(0.0));
        assert!(r["points"].as_u64().unwrap() > 10);
    }
}

#[test]
fn weight_norm_and_reparameterized_trajectories_diverge() {
    let tmp = tempfile::tempdir().unwrap();
    let out = marginflow(
        tmp.path(),
        &["compare", "gradientdynamics_gd", "gradientdynamics_wn", "--metric", "weights"],
    );
    assert_eq!(out.status.code(), Some(0));
    let r = read_json(&tmp.path().join("compare/gradientdynamics_gd__gradientdynamics_wn__weights/report.json"));
    let start = r["initial_divergence"].as_f64().unwrap();
    let end = r["final_divergence"].as_f64().unwrap();
    assert!(end > 100.0 * start, "{start} -> {end}");
}

#[test]
fn rescalings_report_different_rates() {
    let tmp = tempfile::tempdir().unwrap();
    let out = marginflow(
        tmp.path(),
        &[
            "compare",
            "convergenceratesrhoasfunctions_inv_log",
            "convergenceratesrhoasfunctions_log",
            "--metric",
            "direction",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let r = read_json(&tmp.path().join(
        "compare/convergenceratesrhoasfunctions_inv_log__convergenceratesrhoasfunctions_log__direction/report.json",
    ));
    let fa = &r["fits_a"][0]["detail"]["fit"];
    let fb = &r["fits_b"][0]["detail"]["fit"];
    assert_ne!(fa["scale"], fb["scale"]);
}

#[test]
fn compare_rejects_mismatched_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.json", SMALL);
    let wide = write(tmp.path(), "wide.json", &SMALL.replace("\"hidden\": [3]", "\"hidden\": [5]").replace("\"small\"", "\"wide\""));
    let out = marginflow(tmp.path(), &["compare", cfg.to_str().unwrap(), wide.to_str().unwrap(), "--metric", "rho"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not comparable"));
}

#[test]
fn gen_data_writes_loadable_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write(tmp.path(), "spec.json", r#"{ "source": "gaussian-blobs", "d": 3, "n": 9, "gap": 0.4, "seed": 5 }"#);
    let csv = tmp.path().join("d.csv");
    let out = marginflow(tmp.path(), &["gen-data", spec.to_str().unwrap(), "-o", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let d = marginflow_cli::data_io::load_csv(&csv, None, None, None, false).unwrap();
    assert_eq!((d.len(), d.dim()), (9, 3));
}

#[test]
fn verify_reports_per_criterion_and_rejects_unknown_suites() {
    let tmp = tempfile::tempdir().unwrap();
    let out = marginflow(tmp.path(), &["verify", "projector"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().filter(|l| l.contains("PASS")).count() == 2, "{text}");
    let out = marginflow(tmp.path(), &["verify", "everything"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn every_bundled_config_has_a_config_file() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in names() {
        let c = ExperimentConfig::load(&dir.join(format!("{name}.json"))).unwrap();
        assert_eq!(c, bundled(name).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn numbers_round_trip_through_text(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(fmt_num(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn configs_round_trip_through_json(
        step in 1e-6f64..1.0,
        seed in any::<u64>(),
        hidden in prop::collection::vec(1usize..9, 0..3),
        scale in 1e-3f64..10.0,
    ) {
        let mut c = ExperimentConfig::from_json(SMALL, "small").unwrap();
        c.policy.step = step;
        c.net.init.seed = seed;
        c.net.init.scale = scale;
        c.net.hidden = hidden;
        let back = ExperimentConfig::from_json(&c.to_json().unwrap(), "back").unwrap();
        prop_assert_eq!(back, c);
    }
}
