use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tilq_cli::sha256_hex;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tilq"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn solve(cfg: &str, out: &Path, extra: &[&str]) -> Output {
    let c = config(cfg);
    let mut a = vec!["solve", s(&c), "--out", s(out)];
    a.extend_from_slice(extra);
    run(&a)
}

#[test]
fn solve_regulator_marching_writes_layout_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = solve("regulator.toml", &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("plots/diagonal.csv")).unwrap();
    // header plus N + 1 nodes
    assert_eq!(csv.lines().count(), 202);
    assert!(csv.starts_with("s,M_0,Upsilon_0,Psi_0,psi_0\n"));
    assert!(!csv.contains('\r'));

    let m = json(&out.join("manifest.json"));
    assert_eq!(m["command"], "solve");
    let outputs = m["outputs"].as_array().unwrap();
    assert!(outputs.len() >= 5);
    for e in outputs {
        let bytes = std::fs::read(out.join(e["path"].as_str().unwrap())).unwrap();
        assert_eq!(e["sha256"].as_str().unwrap(), sha256_hex(&bytes));
    }
    assert!(!out.join("reports/picard_trace.csv").exists());
}

#[test]
fn solve_regulator_picard_writes_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = solve(
        "regulator.toml",
        &out,
        &["--solver", "picard", "--beta", "10"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = std::fs::read_to_string(out.join("reports/picard_trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,norm\n"));
    assert!(trace.lines().count() > 3);
    let rep = json(&out.join("reports/solve.json"));
    assert_eq!(rep["picard"]["monotone_after_2"], true);
}

#[test]
fn singular_theta_exits_2_with_node_0_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = solve("singular_theta.toml", &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("node 0"), "{}", stderr(&o));
    let d = json(&out.join("reports/diagnostics.json"));
    assert_eq!(d["node"], 0);
    assert!(d["error"].as_str().unwrap().contains("theta gate"));
    assert_eq!(json(&out.join("manifest.json"))["exit_code"], 2);

    let o = solve(
        "singular_theta.toml",
        &tmp.path().join("p"),
        &["--solver", "picard"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_exits_1_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("regulator.toml")).unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(
        &bad,
        text.replace("intensities = [1.0]", "intensities = [-1.0]"),
    )
    .unwrap();
    let o = run(&["solve", s(&bad), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("jumps.intensities[0]"),
        "{}",
        stderr(&o)
    );

    let o = run(&["solve", s(&tmp.path().join("missing.toml"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_equilibrium_passes_and_injected_offset_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert_eq!(solve("regulator.toml", &out, &[]).status.code(), Some(0));
    let cfg = config("regulator.toml");
    let o = run(&[
        "verify",
        s(&cfg),
        s(&out),
        "--paths",
        "10000",
        "--seed",
        "7",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = json(&out.join("verify/reports/verify.json"));
    assert_eq!(rep["pass"], true);
    assert_eq!(rep["node_verdicts"].as_array().unwrap().len(), 5);
    assert!(out.join("verify/manifest.json").is_file());

    // shift ψ at node 64 by 0.5
    let law_path = out.join("solution/law.json");
    let mut law = json(&law_path);
    let psi = law["nodes"][64]["psi"][0].as_f64().unwrap();
    law["nodes"][64]["psi"][0] = Value::from(psi + 0.5);
    std::fs::write(&law_path, serde_json::to_string(&law).unwrap()).unwrap();
    let o = run(&[
        "verify",
        s(&cfg),
        s(&out),
        "--paths",
        "4000",
        "--nodes",
        "64,100",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("failing nodes [64]"), "{}", stderr(&o));
    let rep = json(&out.join("verify/reports/verify.json"));
    assert_eq!(rep["failing_nodes"], serde_json::json!([64]));
}

#[test]
fn verify_rejects_bad_ladder_and_foreign_solution() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert_eq!(solve("regulator.toml", &out, &[]).status.code(), Some(0));
    let cfg = config("regulator.toml");
    let o = run(&["verify", s(&cfg), s(&out), "--eps-ladder", "0.005,0.0075"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("0.0075"), "{}", stderr(&o));

    let other = config("mean_variance.toml");
    let o = run(&["verify", s(&other), s(&out.join("solution"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("hashes"), "{}", stderr(&o));
}

#[test]
fn reproduce_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ce");
    let o = run(&["reproduce", "counterexample", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = json(&out.join("reports/report.json"));
    assert_eq!(rep["demo"]["contradiction"], true);
    assert!(rep["demo"]["margin_in_stderr"].as_f64().unwrap() > 5.0);
    assert_eq!(rep["demo"]["resolved_max_abs"], 0.0);
    assert!(out.join("plots/gains.csv").is_file());

    let out = tmp.path().join("mv");
    let o = run(&[
        "reproduce",
        "mean-variance",
        "--steps",
        "400",
        "--paths",
        "1000",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("max deviation"));
    let cross = &json(&out.join("reports/report.json"))["cross_check"];
    assert!(cross["max_deviation"].as_f64().unwrap() <= cross["threshold"].as_f64().unwrap());
    assert!(out.join("plots/mean_wealth.csv").is_file());

    let out = tmp.path().join("reg");
    let o = run(&[
        "reproduce",
        "regulator",
        "--h",
        "hyperbolic",
        "--kappa",
        "1",
        "--paths",
        "1000",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("reports/picard_trace.csv").is_file());
    assert_eq!(
        std::fs::read_to_string(out.join("plots/diagonal.csv"))
            .unwrap()
            .lines()
            .count(),
        202
    );

    let o = run(&["reproduce", "portfolio", "--out", s(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
}

fn file_hashes(root: &Path) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, sha256_hex(&std::fs::read(&p).unwrap())));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("mean_variance.toml");
    let mut runs = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("r{k}"));
        assert_eq!(
            solve("mean_variance.toml", &out, &["--solver", "picard"])
                .status
                .code(),
            Some(0)
        );
        let o = run(&[
            "verify",
            s(&cfg),
            s(&out),
            "--paths",
            "500",
            "--nodes",
            "20,100",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        runs.push(file_hashes(&out));
    }
    assert_eq!(runs[0], runs[1]);
    assert!(runs[0].iter().any(|(p, _)| p.ends_with("spike.csv")));
}

#[test]
fn version_help_and_usage_errors() {
    let o = run(&["--version"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains(env!("CARGO_PKG_VERSION")));
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["solve", "verify", "reproduce"] {
        assert!(text.contains(cmd));
    }
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        run(&["solve", "x.toml", "--solver", "newton"])
            .status
            .code(),
        Some(1)
    );
}
