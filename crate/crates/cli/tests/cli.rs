use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use survcusum::charts::ChartSpec;
use survcusum::io::{read_risk_model, read_series_csv, write_risk_model};
use survcusum::model::{BaselineHazard, RiskModel};
use tempfile::TempDir;

fn survcusum(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_survcusum"))
        .args(args)
        .env_remove("SURVCUSUM_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&o.stderr)))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn unit_rate_model(dir: &Path) -> PathBuf {
    let model = RiskModel::baseline_only(BaselineHazard::exponential(1.0).unwrap()).unwrap();
    write(dir, "model.toml", &write_risk_model(&model).unwrap())
}

/// Two hospitals, one binary covariate, a few tied times.
const PATIENTS: &str = "\
hospital_id,patient_id,entry_day,followup_days,event,smoker
A,a1,0,30,1,1
A,a2,5,80,0,0
A,a3,12,45,1,0
A,a4,20,15,1,1
A,a5,31,60,0,1
A,a6,40,45,1,0
B,b1,0,90,0,0
B,b2,3,45,1,1
B,b3,9,70,0,0
B,b4,15,20,1,0
B,b5,22,64,0,1
";

#[test]
fn arl_reproduces_theory_values() {
    let o = survcusum(&["arl", "--chart", "cgi", "--theta-ratio", "1.4", "--h", "7.73", "--psi", "2.28", "--lambda", "0.002"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let value: f64 = out.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((value - 243.0).abs() <= 1.0, "{out}");

    let o = survcusum(&[
        "arl", "--chart", "bk", "--theta1-ratio", "1.8", "--theta-ratio", "1.2", "--h", "8.35", "--psi", "2.28", "--lambda", "0.002",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().nth(1).unwrap().ends_with(",inf"));
}

#[test]
fn arl_without_approximation_is_numeric_failure() {
    let o = survcusum(&["arl", "--chart", "cgi", "--theta-ratio", "1", "--h", "7.73", "--psi", "2.28", "--lambda", "0.002"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_json(&o)["error"], "numeric");
}

#[test]
fn fit_writes_model_and_summary() {
    let dir = TempDir::new().unwrap();
    let csv = write(dir.path(), "patients.csv", PATIENTS);
    let out = dir.path().join("out");
    let o = survcusum(&["fit", csv.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let model = read_risk_model(&std::fs::read_to_string(out.join("model.toml")).unwrap()).unwrap();
    assert_eq!(model.beta.len(), 1);
    let summary = std::fs::read_to_string(out.join("fit_summary.csv")).unwrap();
    assert!(summary.starts_with("term,beta,se\nsmoker,"));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["inputs"]["patients.csv"].as_str().unwrap().len(), 64);
}

#[test]
fn fit_without_covariates_gives_nelson_aalen() {
    let dir = TempDir::new().unwrap();
    let csv = write(dir.path(), "patients.csv", PATIENTS);
    let o = survcusum(&["fit", csv.to_str().unwrap(), "--no-covariates", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let model = read_risk_model(&std::fs::read_to_string(dir.path().join("model.toml")).unwrap()).unwrap();
    assert!(model.beta.is_empty());
    // follow-up times with events: 15, 20, 30, 45 (three), at risk 11, 10, 9, 8
    let expected = [1.0 / 11.0, 1.0 / 10.0, 1.0 / 9.0, 3.0 / 8.0];
    let mut cum = 0.0;
    for (t, inc) in [15.0, 20.0, 30.0, 45.0].iter().zip(expected) {
        cum += inc;
        assert!((model.baseline.eval(*t) - cum).abs() < 1e-12, "H({t})");
    }
}

#[test]
fn missing_event_column_is_schema_error() {
    let dir = TempDir::new().unwrap();
    let csv = write(dir.path(), "bad.csv", "hospital_id,patient_id,entry_day,followup_days\nA,1,0,5\n");
    let o = survcusum(&["fit", csv.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "schema");
}

#[test]
fn toy_cgi_series() {
    let dir = TempDir::new().unwrap();
    let csv = write(dir.path(), "toy.csv", "hospital_id,patient_id,entry_day,followup_days,event\nA,1,0,0.5,1\n");
    let model = unit_rate_model(dir.path());
    let o = survcusum(&[
        "chart", csv.to_str().unwrap(), "--model", model.to_str().unwrap(), "--chart", "cgi",
        "--horizon", "1", "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let series = read_series_csv(std::fs::File::open(dir.path().join("series_A.csv")).unwrap(), ChartSpec::cgi()).unwrap();
    let expected = 2f64.ln() - 0.5;
    assert!(series.points.iter().any(|p| p.time == 0.5 && (p.value - expected).abs() < 1e-12));
    assert!((series.value_at(1.0) - expected).abs() < 1e-12);
}

#[test]
fn capped_cgr_estimates_respect_cap() {
    let dir = TempDir::new().unwrap();
    let csv = write(dir.path(), "patients.csv", PATIENTS);
    let model = RiskModel::new(vec![0.3], BaselineHazard::exponential(0.001).unwrap()).unwrap();
    let model = write(dir.path(), "model.toml", &write_risk_model(&model).unwrap());
    let o = survcusum(&[
        "chart", csv.to_str().unwrap(), "--model", model.to_str().unwrap(), "--chart", "cgr", "--cap-hr", "6",
        "--format", "json", "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for id in ["A", "B"] {
        let points: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join(format!("series_{id}.json"))).unwrap()).unwrap();
        let points = points.as_array().unwrap();
        assert!(!points.is_empty());
        for p in points {
            assert!(p["theta_hat"].as_f64().unwrap() <= 6f64.ln() + 1e-12);
        }
    }
}

#[test]
fn chart_rejects_bad_requests() {
    let dir = TempDir::new().unwrap();
    let csv = write(dir.path(), "patients.csv", PATIENTS);
    let model = RiskModel::new(vec![0.3], BaselineHazard::exponential(0.001).unwrap()).unwrap();
    let model = write(dir.path(), "model.toml", &write_risk_model(&model).unwrap());
    let (csv, model, out) = (csv.to_str().unwrap(), model.to_str().unwrap(), dir.path().to_str().unwrap());
    let cases: [&[&str]; 4] = [
        &["--chart", "cgr", "--h", "0"],
        &["--chart", "cgr", "--hospital", "Z"],
        &["--chart", "bk", "--theta1-ratio", "2", "--cap-hr", "6"],
        &["--chart", "funnel", "--period", "30", "--h", "3"],
    ];
    for extra in cases {
        let mut args = vec!["chart", csv, "--model", model, "--out-dir", out];
        args.extend_from_slice(extra);
        let o = survcusum(&args);
        assert_eq!(o.status.code(), Some(2), "{extra:?}");
        assert_eq!(error_json(&o)["exit_code"], 2);
    }
}

#[test]
fn detections_round_to_months_and_plot() {
    let dir = TempDir::new().unwrap();
    let csv = write(dir.path(), "patients.csv", PATIENTS);
    let model = RiskModel::new(vec![0.3], BaselineHazard::exponential(0.001).unwrap()).unwrap();
    let model = write(dir.path(), "model.toml", &write_risk_model(&model).unwrap());
    let o = survcusum(&[
        "chart", csv.to_str().unwrap(), "--model", model.to_str().unwrap(), "--chart", "bk", "--theta1-ratio", "2",
        "--h", "1", "--monthly", "--svg", "--hospital", "A", "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("hospital,patients,failures,max_value,detection_time"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "A");
    let t: f64 = row[4].parse().unwrap();
    assert_eq!(t % 30.0, 0.0);
    assert!(lines.next().is_none(), "hospital filter ignored");
    assert!(std::fs::read_to_string(dir.path().join("chart_A.svg")).unwrap().contains("<polyline"));
    assert!(!dir.path().join("series_B.csv").exists());
}

#[test]
fn funnel_table() {
    let dir = TempDir::new().unwrap();
    let csv = write(dir.path(), "patients.csv", PATIENTS);
    let model = RiskModel::new(vec![0.3], BaselineHazard::exponential(0.01).unwrap()).unwrap();
    let model = write(dir.path(), "model.toml", &write_risk_model(&model).unwrap());
    let o = survcusum(&[
        "chart", csv.to_str().unwrap(), "--model", model.to_str().unwrap(), "--chart", "funnel", "--period", "30",
        "--window", "10", "--funnel-limits", "exact", "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("funnel.csv")).unwrap();
    assert!(table.starts_with("hospital,period_end,n,observed,observed_proportion,expected,lower,upper,out_of_control"));
    assert!(table.lines().count() > 2);
}

const EXPERIMENT: &str = r#"
seed = 11

[simulation]
psi = [0.5, 1.0]
horizon = 365
n_hospitals = 60
theta_ratios = [1.0, 2.0]
power_step = 73

[model]
baseline = { kind = "exponential", params = { rate = 0.002 } }

[[charts]]
chart = "bk"
theta1_ratio = 2.0

[[charts]]
chart = "cgr"
cap_hr = 6

[[charts]]
chart = "bernoulli"
theta1_ratio = 2.0
window = 90

[target]
kind = "type_i_error"
alpha = 0.1
horizon = 365
"#;

fn run_simulate(config: &Path, out: &Path, threads: &str) -> Output {
    survcusum(&["simulate", "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--threads", threads])
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "experiment.toml", EXPERIMENT);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let oa = run_simulate(&config, &a, "1");
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    assert!(run_simulate(&config, &b, "3").status.success());
    for f in ["run_lengths.csv", "power.csv", "control_limits.csv", "manifest.json", "config.toml"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    let runs = std::fs::read_to_string(a.join("run_lengths.csv")).unwrap();
    assert!(runs.starts_with("psi,theta_ratio,chart,h,n,detected,censored,arl,sd,mrl,theory\n"));
    assert_eq!(runs.lines().count(), 1 + 2 * 2 * 3);

    // rerunning from the copied config and recorded seed reproduces the tables
    let c = dir.path().join("c");
    let o = survcusum(&[
        "simulate", "--config", a.join("config.toml").to_str().unwrap(), "--seed", "11", "--out-dir", c.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(a.join("run_lengths.csv")).unwrap(), std::fs::read(c.join("run_lengths.csv")).unwrap());

    let other = dir.path().join("d");
    assert!(survcusum(&["simulate", "--config", config.to_str().unwrap(), "--seed", "12", "--out-dir", other.to_str().unwrap()])
        .status
        .success());
    assert_ne!(std::fs::read(a.join("run_lengths.csv")).unwrap(), std::fs::read(other.join("run_lengths.csv")).unwrap());
}

#[test]
fn calibrate_writes_limits_per_psi() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "experiment.toml", EXPERIMENT);
    let o = survcusum(&["calibrate", "--config", config.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("control_limits.csv")).unwrap();
    let rows: Vec<(f64, String, f64, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    for (_, _, h, achieved) in &rows {
        assert!(*h > 0.0 && *achieved <= 0.1 + 1e-12);
    }
}

#[test]
fn config_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let bad = write(dir.path(), "bad.toml", &EXPERIMENT.replace("n_hospitals = 60", "n_hospitals = 60\nreplicates = 2"));
    let o = survcusum(&["calibrate", "--config", bad.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "config");

    let few = write(dir.path(), "few.toml", &EXPERIMENT.replace("n_hospitals = 60", "n_hospitals = 20"));
    let o = survcusum(&["calibrate", "--config", few.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
