use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn reflsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reflsde"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn greeks_is_deterministic_across_runs_and_threads() {
    let args = ["greeks", "--method", "bel", "--payoff", "linear-cap:10", "--x0", "1", "--t", "1", "--seed", "42", "--n-paths", "500"];
    let a = reflsde(&args);
    let b = reflsde(&args);
    let mut threaded = args.to_vec();
    threaded.extend(["--threads", "3"]);
    let c = reflsde(&threaded);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    let v = json(&a);
    assert_eq!(v["report"]["method"], "bel");
    assert_eq!(v["report"]["n_paths"], 500);
    assert_eq!(v["report"]["provenance"]["master_seed"], 42);
    assert_eq!(v["config"]["payoff"], "linear-cap:10");
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn greeks_all_reports_every_method() {
    let o = reflsde(&["greeks", "--method", "all", "--n-paths", "300", "--t", "0.5"]);
    assert!(o.status.success());
    let v = json(&o);
    let methods: Vec<&str> = v["reports"].as_array().unwrap().iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["bel", "bel_cv", "pathwise", "fd_payoff"]);
    assert_eq!(v["variance"][0]["relative_efficiency"], 1.0);
}

#[test]
fn pde_reports_derivative_and_grid() {
    let o = reflsde(&["pde", "--drift", "step:1,1", "--x", "1", "--t", "1"]);
    assert!(o.status.success());
    let v = json(&o);
    let d = v["queries"][0]["derivative"].as_f64().unwrap();
    assert!((d - 0.1038169).abs() < 5e-3, "{d}");
    assert_eq!(v["grid"]["dx"], 0.01);
    assert_eq!(v["grid"]["x_max"], 9.0);
    assert_eq!(v["grid"]["peclet_warning"], false);
}

#[test]
fn pde_writes_profile_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pde");
    let o = reflsde(&["pde", "--dx", "0.1", "--x", "0,1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = fs::read_to_string(out.join("pde.csv")).unwrap();
    assert!(csv.starts_with("x,u\n0,"));
    assert!(out.join("pde.json").exists());
    assert!(fs::read_to_string(out.join("config.toml")).unwrap().contains("dx = 0.1"));
}

#[test]
fn usage_errors_exit_2_and_name_the_key() {
    let o = reflsde(&["greeks", "--bogus", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "n_path = 3\n").unwrap();
    let o = reflsde(&["greeks", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n-path"));
    let o = reflsde(&["experiment", "run", "bel-triangulation", "--set", "typo-key=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("typo-key"));
    assert_eq!(reflsde(&["experiment", "run", "nope"]).status.code(), Some(2));
    assert_eq!(reflsde(&["greeks", "--method", "magic"]).status.code(), Some(2));
    assert_eq!(reflsde(&["pde", "--seed", "1"]).status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "n_paths = 200\nx0 = 0.5\nseed = 9\n").unwrap();
    let o = reflsde(&["greeks", "--config", cfg.to_str().unwrap(), "--x0", "2", "--t", "0.2"]);
    assert!(o.status.success());
    let v = json(&o);
    assert_eq!(v["config"]["n-paths"], 200);
    assert_eq!(v["config"]["x0"], 2.0);
    assert_eq!(v["config"]["seed"], 9);
}

#[test]
fn table_commands_emit_csv_headers() {
    let o = reflsde(&["skorohod", "--dt", "1e-3"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.starts_with("epsilon,sup_gap,sup_negative_part,complementarity_residual\n"));
    assert_eq!(s.lines().count(), 5);

    let o = reflsde(&["simulate", "--n-paths", "100", "--scheme", "exact"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("t,mean_x,stderr_x,mean_L,stderr_L\n"));

    let o = reflsde(&["sensitivity-sweep", "--n-paths", "50", "--levels", "4,16", "--t", "0.1"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.starts_with("j,lipschitz_estimate,second_moment,stderr\n4,"));
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn experiment_outputs_are_byte_identical_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str, threads: &str| {
        let out = dir.path().join(sub);
        let o = reflsde(&[
            "experiment", "run", "uniform-bound", "--threads", threads, "--out", out.to_str().unwrap(),
            "--set", "n-paths=200", "--set", "tangent-paths=200", "--set", "levels=[4, 16]",
        ]);
        assert!(matches!(o.status.code(), Some(0) | Some(1)));
        read_dir_bytes(&out)
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "4");
    assert_eq!(a, b);
    assert_eq!(a, c);
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["config.toml", "summary.json", "sweep.csv"]);
}

#[test]
fn experiment_defaults_round_trip() {
    let o = reflsde(&["experiment", "defaults", "penalization"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("name = \"penalization\"\n"));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.toml");
    fs::write(&cfg, text.replace("moment-paths = 100000", "moment-paths = 100").replace("skorohod-trials = 1000", "skorohod-trials = 10").replace("lipschitz-pairs = 1000", "lipschitz-pairs = 10")).unwrap();
    let o = reflsde(&["experiment", "run", "penalization", "--config", cfg.to_str().unwrap()]);
    let v = json(&o);
    assert_eq!(v["name"], "penalization");
    assert_eq!(v["config"]["moment-paths"], 100);
    assert!(v["criteria"].as_array().unwrap().len() >= 5);
}

#[test]
fn bel_triangulation_passes_on_default_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tri");
    let o = reflsde(&["experiment", "run", "bel-triangulation", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["name"], "bel-triangulation");
}
