use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tilecast::cli::ResultDocument;
use tilecast::config;
use tilecast::oracle::{verify_solution, VerifyTolerances};
use tilecast::problems::CaseKind;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tilecast"));
    c.env_remove("TILECAST_WORKERS");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn read_config(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(configs().join(name)).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn objective(out: &Output) -> f64 {
    let doc: ResultDocument = serde_json::from_slice(&out.stdout).unwrap();
    doc.objective
}

fn solve(case: &str, config: &Path) -> Output {
    run(bin().args(["solve", "--case", case, "--config"]).arg(config))
}

#[test]
fn example_one_absolute_case_keeps_every_requirement() {
    let out = solve("wo-a", &configs().join("example1.json"));
    assert!(out.status.success());
    let doc: ResultDocument = serde_json::from_slice(&out.stdout).unwrap();
    let groups: BTreeSet<Vec<u32>> = doc.levels.iter().map(|e| e.group.clone()).collect();
    let expected: BTreeSet<Vec<u32>> = [vec![1], vec![2], vec![3], vec![4], vec![1, 2], vec![2, 3], vec![3, 4]].into();
    assert_eq!(groups, expected);
    // levels from the figure: r = (3, 1, 2, 2)
    let r = |u: u32| [3, 1, 2, 2][u as usize - 1];
    assert_eq!(doc.levels.len(), 10);
    for e in &doc.levels {
        assert_eq!(e.level, Some(r(e.user)), "{e:?}");
    }
    assert!(doc.objective > 0.0 && doc.gap <= 1e-4);
}

#[test]
fn missing_encoding_rates_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = read_config("tiny.json");
    v["geometry"].as_object_mut().unwrap().remove("encoding_rates");
    let p = write_config(dir.path(), "bad.json", &v);
    let out = solve("wo-a", &p);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("encoding_rates"), "{err}");
}

#[test]
fn malformed_field_reports_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = read_config("tiny.json");
    v["users"][1]["r"] = json!("three");
    let p = write_config(dir.path(), "bad.json", &v);
    let out = solve("w-a", &p);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("users[1].r"));
}

#[test]
fn relative_transcoding_with_equal_requirements_matches_absolute() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = read_config("tiny.json");
    for u in v["users"].as_array_mut().unwrap() {
        u["r"] = json!(2);
    }
    let p = write_config(dir.path(), "equal.json", &v);
    let a = objective(&solve("wo-a", &p));
    let b = objective(&solve("w-r", &p));
    assert!((a - b).abs() <= 1e-6 * a, "{a} vs {b}");
}

#[test]
fn oracle_on_absolute_case_equals_solve() {
    let p = configs().join("tiny.json");
    let s = objective(&solve("wo-a", &p));
    let out = run(bin().args(["oracle", "--case", "wo-a", "--config"]).arg(&p));
    assert!(out.status.success());
    let doc: ResultDocument = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc.enumerations, Some(1));
    assert!((doc.objective - s).abs() <= 1e-6 * s, "{} vs {s}", doc.objective);
}

#[test]
fn oracle_budget_exceeded_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = read_config("tiny.json");
    v["solver"]["oracle_max_enumerations"] = json!(1);
    let p = write_config(dir.path(), "budget.json", &v);
    let out = run(bin().args(["oracle", "--case", "w-a", "--config"]).arg(&p));
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));
}

#[test]
fn ordering_check_passes_on_tiny_instance() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("ordering.json");
    let out = run(bin()
        .args(["check-ordering", "--config"])
        .arg(configs().join("tiny.json"))
        .arg("--out")
        .arg(&report));
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{text}");
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(doc["report"]["checks"].as_array().unwrap().len(), 4);
}

#[test]
fn result_document_round_trips_through_verification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = configs().join("example1.json");
    let file = config::load(&cfg_path).unwrap();
    let scenario = file.scenario().unwrap();
    for kind in [CaseKind::WoA, CaseKind::WR] {
        let out_path = dir.path().join(format!("{kind}.json"));
        let diag = dir.path().join(format!("{kind}-diag.json"));
        let out = run(bin()
            .args(["solve", "--case", &kind.to_string(), "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out_path)
            .arg("--diagnostics")
            .arg(&diag));
        assert!(out.status.success());
        assert!(out.stdout.is_empty());
        let doc: ResultDocument = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
        let report = verify_solution(&file.case(kind), &scenario, &doc.result).unwrap();
        assert!(report.passes(&VerifyTolerances::default()), "{kind}: {report:?}");
        assert!(report.objective_delta <= 1e-9);
        let d: Value = serde_json::from_str(&std::fs::read_to_string(&diag).unwrap()).unwrap();
        assert!(!d["trace"].as_array().unwrap().is_empty());
    }
}

#[test]
fn sweep_writes_one_row_per_value_and_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = read_config("sweep.json");
    v["experiment"] = json!({"K": 2, "realizations": 1, "schemes": ["wo-a", "unicast"]});
    let p = write_config(dir.path(), "sweep.json", &v);
    let out_path = dir.path().join("gamma.csv");
    let out = run(bin()
        .args(["--workers", "1", "sweep", "--param", "gamma", "--values", "0,0.5,1,1.5,2", "--config"])
        .arg(&p)
        .arg("--out")
        .arg(&out_path));
    assert!(out.status.success());
    let text = std::fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "param,scheme,mean_energy_J,std_energy_J,n_ok,n_failed");
    assert_eq!(lines.len(), 1 + 5 * 2);
    assert!(lines[1..].iter().all(|l| l.ends_with(",1,0")), "{text}");
}

#[test]
fn failed_sweep_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), "sweep.json", &read_config("sweep.json"));
    let out_path = dir.path().join("k.csv");
    let out = run(bin()
        .args(["sweep", "--param", "K", "--values", "2,0", "--config"])
        .arg(&p)
        .arg("--out")
        .arg(&out_path));
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_path.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn worker_count_comes_from_the_environment() {
    let p = configs().join("tiny.json");
    let ok = run(bin().env("TILECAST_WORKERS", "1").args(["solve", "--case", "wo-a", "--config"]).arg(&p));
    assert!(ok.status.success());
    let bad = run(bin().env("TILECAST_WORKERS", "0").args(["solve", "--case", "wo-a", "--config"]).arg(&p));
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn solve_is_deterministic() {
    let p = configs().join("tiny.json");
    let a = solve("w-r", &p);
    let b = solve("w-r", &p);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn heuristic_ordering_check_passes() {
    let out = run(bin()
        .args(["check-ordering", "--method", "heuristic", "--config"])
        .arg(configs().join("tiny.json")));
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().filter(|l| l.starts_with("PASS")).count(), 4);
}

#[test]
fn transcoding_weight_below_one_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = read_config("tiny.json");
    v["transcoding"]["beta"] = json!(0.5);
    let p = write_config(dir.path(), "beta.json", &v);
    let out = solve("w-a", &p);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("transcoding.beta"));
}
