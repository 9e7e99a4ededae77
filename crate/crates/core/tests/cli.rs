//! Command-line behaviour: the happy path, reproducibility and exit codes.

use std::path::Path;
use std::process::{Command, Output};

use catrl::data::{Dataset, Trajectory};
use catrl::simgen::{generate, CensoringKind, ScenarioConfig};

fn catrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catrl"))
        .args(args)
        .env_remove("CATRL_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const SMALL_FIT: &str = r#"{"nuisance": {"forest": {"n_trees": 25}}}"#;

fn generate_into(dir: &Path, n: &str) {
    let out = catrl(&[
        "generate", "--n-subjects", n, "--arity", "2", "--censoring", "exponential", "--seed", "5",
        "--out-dir", s(dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_fit_evaluate_gridsearch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate_into(d, "600");
    let data = d.join("dataset.csv");
    let before = std::fs::read(&data).unwrap();
    assert!(before.starts_with(b"# catrl"));

    write(&d.join("fit.json"), SMALL_FIT);
    let policy = d.join("policy.json");
    let out = catrl(&[
        "fit", "--data", s(&data), "--config", s(&d.join("fit.json")), "--out", s(&policy),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("policy.fitlog.json").exists());
    assert_eq!(std::fs::read(&data).unwrap(), before);

    let report = d.join("eval.json");
    let out = catrl(&[
        "evaluate", "--policy", s(&policy), "--oracle", s(&d.join("oracle.json")), "--data", s(&data),
        "--n-eval", "2000", "--with-baselines", "--out", s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!(doc["header"]["config_sha256"].as_str().unwrap().len() == 64);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("CA-TRL") && stdout.contains("Random"));

    write(
        &d.join("grid.json"),
        &format!(r#"{{"configs": [{SMALL_FIT}, {{"tree": {{"max_depth": 1}}, "nuisance": {{"forest": {{"n_trees": 25}}}}}}]}}"#),
    );
    let out = catrl(&[
        "gridsearch", "--data", s(&data), "--config", s(&d.join("grid.json")), "--out",
        s(&d.join("grid-report.json")), "--policy-out", s(&d.join("best.json")),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("best.json").exists());
}

#[test]
fn outputs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_into(a.path(), "300");
    generate_into(b.path(), "300");
    for f in ["dataset.csv", "oracle.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    for (dir, threads) in [(a.path(), "1"), (b.path(), "3")] {
        write(&dir.join("fit.json"), SMALL_FIT);
        let out = catrl(&[
            "--threads", threads, "fit", "--data", s(&dir.join("dataset.csv")), "--config",
            s(&dir.join("fit.json")), "--out", s(&dir.join("policy.json")),
        ]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(
        std::fs::read(a.path().join("policy.json")).unwrap(),
        std::fs::read(b.path().join("policy.json")).unwrap()
    );
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&catrl(&["frobnicate"])), 2);
    assert_eq!(code(&catrl(&["generate", "--bogus"])), 2);
    assert_eq!(code(&catrl(&["--threads", "0", "generate", "--out-dir", s(d)])), 2);
    assert_eq!(code(&catrl(&["generate", "--arity", "4", "--out-dir", s(d)])), 2);
    write(&d.join("bad.json"), "{ not json");
    assert_eq!(code(&catrl(&["benchmark", "--config", s(&d.join("bad.json")), "--out-dir", s(d)])), 2);
    write(&d.join("unknown.json"), r#"{"n_subjects": 10, "wibble": 1}"#);
    assert_eq!(code(&catrl(&["benchmark", "--config", s(&d.join("unknown.json")), "--out-dir", s(d)])), 2);

    generate_into(d, "200");
    write(&d.join("fit.json"), SMALL_FIT);
    let policy = d.join("policy.json");
    let out = catrl(&[
        "fit", "--data", s(&d.join("dataset.csv")), "--config", s(&d.join("fit.json")), "--out", s(&policy),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(code(&catrl(&["evaluate", "--policy", s(&policy)])), 2);
    let out = catrl(&[
        "evaluate", "--policy", s(&policy), "--data", s(&d.join("dataset.csv")), "--tau", "-1",
    ]);
    assert_eq!(code(&out), 2);
    write(&d.join("empty-grid.json"), r#"{"configs": []}"#);
    let out = catrl(&["gridsearch", "--data", s(&d.join("dataset.csv")), "--config", s(&d.join("empty-grid.json"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn calibration_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = catrl(&[
        "generate", "--censoring", "none", "--target-rate", "0.5", "--out-dir", s(dir.path()),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn fit_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = generate(&ScenarioConfig::new(100, 2, CensoringKind::Exponential, 1)).unwrap();
    // Nobody reaches the second stage.
    let trajs: Vec<Trajectory> = data
        .trajectories()
        .iter()
        .map(|t| {
            let mut first = t.stages[0].clone();
            first.event = false;
            Trajectory {
                total_time: first.duration,
                stages: vec![first],
            }
        })
        .collect();
    let stunted = Dataset::new(data.schema().clone(), trajs).unwrap();
    let path = dir.path().join("stunted.csv");
    stunted.write_csv(std::fs::File::create(&path).unwrap(), &[]).unwrap();
    let out = catrl(&["fit", "--data", s(&path), "--arities", "2,2", "--out", s(&dir.path().join("p.json"))]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}
