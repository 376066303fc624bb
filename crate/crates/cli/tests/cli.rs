use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_decoherence"));
    c.env_remove("DECOHERENCE_WORKERS");
    c
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

fn config_in(dir: &Path, extra: &str) -> PathBuf {
    let out = dir.join("out");
    write_config(
        dir,
        &format!(r#"{{"output": {{"directory": {:?}}}, {extra}}}"#, out.to_str().unwrap()),
    )
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn data_lines(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().map(str::to_string);
    assert_eq!(lines.next().as_deref(), Some("# schema_version=1"));
    lines.collect()
}

fn error_line(out: &Output) -> String {
    assert!(!out.status.success());
    // log lines may precede it; the error itself is the one `error[` line, last
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    let errors: Vec<&str> = err.lines().filter(|l| l.starts_with("error[")).collect();
    assert_eq!(errors.len(), 1, "{err}");
    assert_eq!(err.lines().last(), Some(errors[0]), "{err}");
    errors[0].to_string()
}

#[test]
fn fit_recovers_exact_power_law() {
    let dir = tempfile::tempdir().unwrap();
    for (metric, l) in [("epsilon", 3), ("delta", 2)] {
        run(bin().args(["fit", "--metric", metric, "--l", &l.to_string(), "--out"]).arg(dir.path()).arg("--results").arg(fixture("power_law_results.csv")));
        let lines = data_lines(&dir.path().join("fit.csv"));
        assert_eq!(lines[0], "l,metric,alpha,intercept,r_squared,n_points");
        let f: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(f[0], l.to_string());
        assert_eq!(f[1], metric);
        let alpha: f64 = f[2].parse().unwrap();
        assert!((alpha - 0.5).abs() <= 1e-12, "{alpha}");
        assert_eq!(f[5], "4");
        let points = data_lines(&dir.path().join("fit_points.csv"));
        assert_eq!(points[0], "d,mean,n_realizations");
        assert_eq!(points[1], "5,0.4472135954999579,2");
        assert_eq!(points.len(), 5);
    }
}

#[test]
fn fit_errors() {
    let out = bin()
        .args(["fit", "--metric", "epsilon", "--l", "4", "--results"])
        .arg(fixture("power_law_results.csv"))
        .output()
        .unwrap();
    assert!(error_line(&out).starts_with("error[invalid_argument]:"));
    let out = bin()
        .args(["fit", "--metric", "epsilon", "--l", "2", "--results", "/nonexistent/results.csv"])
        .output()
        .unwrap();
    assert!(error_line(&out).starts_with("error[io]:"));
    let out = bin()
        .args(["fit", "--metric", "gamma", "--l", "2", "--results"])
        .arg(fixture("power_law_results.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn sweep_rows_resume_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), r#""model": {"v_minus": 1}, "sweep": {"num_hamiltonian_seeds": 1, "num_state_seeds": 1}"#);
    run(bin().args(["sweep", "--config"]).arg(&cfg));
    let results = dir.path().join("out/results.csv");
    let lines = data_lines(&results);
    assert_eq!(lines[0].split(',').count(), 16);
    assert_eq!(lines.len(), 1 + 4);
    let ls: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(ls, ["2", "3", "4", "5"]);
    assert!(!dir.path().join("out/failures.csv").exists());

    // rerun over the same directory recomputes nothing
    let before = fs::read(&results).unwrap();
    let records = fs::read(dir.path().join("out/records.jsonl")).unwrap();
    run(bin().args(["sweep", "--config"]).arg(&cfg));
    assert_eq!(fs::read(&results).unwrap(), before);
    assert_eq!(fs::read(dir.path().join("out/records.jsonl")).unwrap(), records);
}

fn without_wall_time(path: &Path) -> Vec<String> {
    data_lines(path)
        .into_iter()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn sweep_is_schedule_independent() {
    let body = r#""model": {"d_grid": [5, 10, 15]}, "grid": {"num_steps": 2}, "sweep": {"num_hamiltonian_seeds": 2, "num_state_seeds": 2, "base_seed": 5}"#;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(bin().args(["sweep", "--workers", "1", "--config"]).arg(config_in(a.path(), body)));
    run(bin().env("DECOHERENCE_WORKERS", "3").args(["sweep", "--config"]).arg(config_in(b.path(), body)));
    let ra = without_wall_time(&a.path().join("out/results.csv"));
    assert_eq!(ra.len(), 1 + 3 * 4 * 2);
    assert_eq!(ra, without_wall_time(&b.path().join("out/results.csv")));
}

#[test]
fn histogram_has_all_histories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), r#""model": {"v_minus": 4}, "grid": {"num_steps": 2}"#);
    run(bin().args(["histogram", "--config"]).arg(&cfg));
    let lines = data_lines(&dir.path().join("out/histogram.csv"));
    assert_eq!(lines[0], "history,probability");
    assert_eq!(lines.len(), 1 + 27);
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(dir.path().join("out/histogram.csv"))
        .unwrap();
    let mut total = 0.0;
    let mut labels = Vec::new();
    for rec in reader.records() {
        let rec = rec.unwrap();
        labels.push(rec[0].to_string());
        total += rec[1].parse::<f64>().unwrap();
    }
    assert!((total - 1.0).abs() <= 1e-10, "{total}");
    assert_eq!(labels[0], "-,-,-");
    assert_eq!(labels[1], "0,-,-");
    assert_eq!(labels[26], "+,+,+");
    assert!(!dir.path().join("out/df.json").exists());
}

#[test]
fn dynamics_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(
        dir.path(),
        r#""model": {"v_minus": 2}, "init": {"weights": [[1, 0, 0], [0.2, 0.6, 0.2]]}, "dynamics": {"t_max_in_tau": 2, "dt_in_tau": 0.5}"#,
    );
    run(bin().args(["dynamics", "--config"]).arg(&cfg));
    for name in ["dynamics.csv", "dynamics_1.csv"] {
        let lines = data_lines(&dir.path().join("out").join(name));
        assert_eq!(lines[0], "t,p_minus,p_zero,p_plus");
        assert_eq!(lines.len(), 1 + 5);
        assert!(lines[1].starts_with("0,"));
    }
}

#[test]
fn distance_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(
        dir.path(),
        r#""model": {"d_grid": [5, 10]}, "sweep": {"num_hamiltonian_seeds": 1, "num_state_seeds": 2}"#,
    );
    run(bin().args(["distance", "--config"]).arg(&cfg));
    let lines = data_lines(&dir.path().join("out/distance.csv"));
    assert_eq!(lines[0], "d,hamming,eps_mean,pair_count");
    assert_eq!(lines.len(), 1 + 2 * 4);
    assert!(lines[1].starts_with("5,1,"));
    assert!(lines[8].starts_with("10,4,"));
}

#[test]
fn dump_df_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), r#""model": {"v_minus": 1}, "grid": {"num_steps": 1}"#);
    run(bin().args(["dump-df", "--config"]).arg(&cfg));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/df.json")).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["grid"].as_array().unwrap().len(), 2);
    assert_eq!(v["histories"].as_array().unwrap().len(), 9);
    let entries = v["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 81);
    let trace: f64 = (0..9).map(|k| entries[k * 9 + k][0].as_f64().unwrap()).sum();
    assert!((trace - 1.0).abs() < 1e-10);
}

#[test]
fn failures_are_single_line_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"model": {"v_minus": 1, "temperature": 3}}"#);
    let line = error_line(&bin().args(["histogram", "--config"]).arg(&cfg).output().unwrap());
    assert!(line.starts_with("error[invalid_config]: invalid configuration: model.temperature:"), "{line}");

    let cfg = config_in(dir.path(), r#""model": {"d_grid": [5, 10]}"#);
    let line = error_line(&bin().args(["dump-df", "--config"]).arg(&cfg).output().unwrap());
    assert!(line.starts_with("error[invalid_config]:"), "{line}");

    let cfg = config_in(dir.path(), r#""model": {"v_minus": 2}, "grid": {"amplitude_budget": 100}"#);
    let line = error_line(&bin().args(["dump-df", "--config"]).arg(&cfg).output().unwrap());
    assert!(line.starts_with("error[budget_exceeded]:"), "{line}");

    let line = error_line(&bin().args(["sweep", "--config", "/nonexistent.json"]).output().unwrap());
    assert!(line.starts_with("error[io]:"), "{line}");
}
