use std::path::Path;
use std::process::{Command, Output};

fn vmstat(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vmstat"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

const SMALL: &str = "[run]\nn = 200\nreps = 500\nn_cells = 16\neigen_cells = 64\nk_terms = 20\n";

#[test]
fn simulate_writes_identical_csv_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let first = vmstat(&["simulate", "--config", &cfg, "--threads", "2"], dir.path());
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let a = std::fs::read(dir.path().join("out/simulate.csv")).unwrap();
    let second = vmstat(&["simulate", "--config", &cfg, "--threads", "1"], dir.path());
    assert!(second.status.success());
    let b = std::fs::read(dir.path().join("out/simulate.csv")).unwrap();
    assert_eq!(a, b);
    assert!(String::from_utf8_lossy(&a).starts_with("rep,value\n"));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("elsewhere");
    let o = vmstat(
        &["limit", "--config", &cfg, "--reps", "50", "--seed", "7", "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("limit_msi.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    assert!(out.join("eigenvalues.csv").exists());
}

#[test]
fn input_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[run]\nreps = 0\n");
    let o = vmstat(&["simulate", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let cfg = write_config(dir.path(), "[run]\nn = \"x\"\n");
    let o = vmstat(&["simulate", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn verify_failure_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[generator]\ntransition = [[1.0, 0.0], [0.0, 1.0]]\n[thresholds]\nverify_reps = 2000\n",
    );
    let o = vmstat(&["verify", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stdout).contains("generator_valid"));
}

#[test]
fn compare_and_norms_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}norm_cells = 8\n"));
    let o = vmstat(&["compare", "--config", &cfg], dir.path());
    assert!(matches!(o.status.code(), Some(0 | 4)), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/compare.json")).unwrap()).unwrap();
    assert!(report["ks"].as_f64().unwrap() >= 0.0);
    let o = vmstat(&["norms", "--config", &cfg], dir.path());
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("wiener"));
}
