use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_varqt"))
}

fn spec(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("specs").join(name)
}

fn run(args: &[&str]) -> i32 {
    bin().args(args).output().expect("binary runs").status.code().expect("exit code")
}

#[test]
fn every_shipped_spec_runs() {
    let dir = tempfile::tempdir().unwrap();
    let specs = std::fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("specs")).unwrap();
    for entry in specs {
        let path = entry.unwrap().path();
        let out = dir.path().join(path.file_stem().unwrap());
        let code = run(&["--spec", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0, "{}", path.display());
        let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        assert!(summary["metrics"].is_object());
        assert!(std::fs::read_to_string(out.join("trace.csv")).unwrap().lines().count() > 1);
    }
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["maxcut_ring.json", "qmetts_heisenberg.json", "tfim_qnspsa.json"] {
        let mut outputs = Vec::new();
        for k in 0..2 {
            let out = dir.path().join(format!("{name}-{k}"));
            let threads = if k == 0 { "1" } else { "4" };
            assert_eq!(run(&["--spec", spec(name).to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "5", "--threads", threads]), 0);
            outputs.push((std::fs::read(out.join("trace.csv")).unwrap(), std::fs::read(out.join("summary.json")).unwrap()));
        }
        assert_eq!(outputs[0], outputs[1], "{name}");
    }
}

#[test]
fn config_echo_reruns_the_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    assert_eq!(run(&["--spec", spec("maxcut_ring.json").to_str().unwrap(), "--out", first.to_str().unwrap(), "--seed", "8"]), 0);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(first.join("summary.json")).unwrap()).unwrap();
    let echo = dir.path().join("echo.json");
    std::fs::write(&echo, summary["config"].to_string()).unwrap();
    let second = dir.path().join("second");
    assert_eq!(run(&["--spec", echo.to_str().unwrap(), "--out", second.to_str().unwrap()]), 0);
    assert_eq!(std::fs::read(first.join("trace.csv")).unwrap(), std::fs::read(second.join("trace.csv")).unwrap());
}

#[test]
fn malformed_spec_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"command\": ").unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["--spec", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]), 2);
    assert!(!out.exists());
    assert_eq!(run(&["--spec", dir.path().join("missing.json").to_str().unwrap(), "--out", out.to_str().unwrap()]), 2);
    assert_eq!(run(&["--bogus"]), 2);
}

#[test]
fn invalid_spec_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let code = run(&["--spec", spec("tfim_varqite.json").to_str().unwrap(), "--out", out.to_str().unwrap(), "--set", "evolution.dt=0"]);
    assert_eq!(code, 3);
    assert!(!out.exists());
    let code = run(&["--spec", spec("tfim_varqite.json").to_str().unwrap(), "--out", out.to_str().unwrap(), "--set", "ansatz.n=3"]);
    assert_eq!(code, 3);
}

#[test]
fn numerical_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    // An absurd learning rate sends the parameters to infinity.
    let code = run(&[
        "--spec",
        spec("tfim_qnspsa.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "optimizer.method=gd",
        "--set",
        "optimizer.config.a=1e308",
        "--set",
        "shots=null",
    ]);
    assert_eq!(code, 4);
    assert!(!out.exists());
}

#[test]
fn grad_bench_reports_linear_and_quadratic_fits() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    assert_eq!(run(&["--spec", spec("grad_bench.json").to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let rev = s["metrics"]["reverse_exponent"].as_f64().unwrap();
    let psr = s["metrics"]["psr_exponent"].as_f64().unwrap();
    assert!((rev - 1.0).abs() < 0.1 && (psr - 2.0).abs() < 0.1, "{rev} {psr}");
    assert!(std::fs::read_to_string(out.join("trace.csv")).unwrap().starts_with("d,reverse_ops,psr_ops\n"));
}
