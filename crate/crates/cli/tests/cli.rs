use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dpknock"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("DPKNOCK_JOBS").output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// Deterministic bounded design with signal on the first three columns.
fn write_data(path: &Path, n: usize, p: usize) {
    let mut s = String::from("y");
    for j in 1..=p {
        s.push_str(&format!(",x{j}"));
    }
    s.push('\n');
    let mut state: u64 = 0x2545_f491_4f6c_dd1d;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    for _ in 0..n {
        let x: Vec<f64> = (0..p).map(|_| next()).collect();
        let y = 2.0 * (x[0] + x[1] + x[2]) + 0.5 * next();
        s.push_str(&format!("{y}"));
        for v in &x {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}

fn select_args<'a>(input: &'a str, algo: &'a str) -> Vec<&'a str> {
    vec![
        "select", "--input", input, "--mu", "2", "--q", "0.2", "--algo", algo, "--family", "marginal",
        "--sigma", "ar:0.33:0.0", "--cx", "1", "--cy", "7", "--seed-split", "11", "--seed-knockoff",
        "12", "--seed-noise", "13",
    ]
}

#[test]
fn non_positive_mu_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_data(&data, 40, 5);
    let out = run(&[
        "select", "--input", data.to_str().unwrap(), "--mu", "0", "--algo", "mirror", "--family", "marginal",
        "--sigma", "ar:0.5:0.3", "--cx", "1", "--cy", "7",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_sigma_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_data(&data, 40, 5);
    let out = run(&["select", "--input", data.to_str().unwrap(), "--mu", "1", "--cx", "1", "--cy", "7"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--sigma"));
}

#[test]
fn malformed_csv_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    fs::write(&data, "y,x1\n1.0,0.5\n0.2,abc\n0.1,0.3\n").unwrap();
    let out = run(&select_args(data.to_str().unwrap(), "single"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
}

#[test]
fn full_seed_flags_give_identical_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_data(&data, 200, 12);
    for algo in ["mirror", "single", "multi"] {
        let a = run(&select_args(data.to_str().unwrap(), algo));
        let b = run(&select_args(data.to_str().unwrap(), algo));
        assert_eq!(a.status.code(), Some(0), "{algo}: {}", String::from_utf8_lossy(&a.stderr));
        assert_eq!(a.stdout, b.stdout);
        let v = json(&a);
        assert!((v["mu_spent"].as_f64().unwrap() - 2.0).abs() < 1e-12);
        assert!(v.get("selected").is_some() && v.get("b_n").is_some());
    }
}

#[test]
fn single_split_selects_inside_the_screened_set() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_data(&data, 300, 100);
    let mut args = select_args(data.to_str().unwrap(), "single");
    args.extend(["--kn", "20"]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let peeled: Vec<u64> = v["peeled"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    assert_eq!(peeled.len(), 20);
    for id in v["selected"].as_array().unwrap() {
        assert!(peeled.contains(&id.as_u64().unwrap()));
    }
    assert_eq!(v["released"].as_object().unwrap().len(), 20);
}

#[test]
fn omitted_noise_seed_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_data(&data, 100, 6);
    let args: Vec<&str> = select_args(data.to_str().unwrap(), "mirror")
        .into_iter()
        .take_while(|a| *a != "--seed-noise")
        .collect();
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--seed-noise"), "{err}");
    let v = json(&out);
    let seed = v["seeds"]["noise"].as_u64().unwrap();
    assert!(err.contains(&seed.to_string()));
}

#[test]
fn config_file_merges_with_flags_winning() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_data(&data, 120, 8);
    let cfg = dir.path().join("c.json");
    let text = format!(
        r#"{{"input": "{}", "mu": 5.0, "algo": "mirror", "sigma": "ar:0.33:0.0", "cx": 1.0, "cy": 7.0,
            "seed-split": 1, "seed-knockoff": 2, "seed-noise": 3, "m": 4}}"#,
        data.display()
    );
    fs::write(&cfg, text).unwrap();
    let out = run(&["select", "--config", cfg.to_str().unwrap(), "--mu", "1.5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!((v["mu_spent"].as_f64().unwrap() - 1.5).abs() < 1e-12);
    assert_eq!(v["peeled"].as_array().unwrap().len(), 4);

    fs::write(&cfg, r#"{"not-a-flag": 1}"#).unwrap();
    let out = run(&["select", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_writes_one_row_per_rep_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "simulate".to_string(),
            "--n-grid".into(),
            "400".into(),
            "--p-grid".into(),
            "200".into(),
            "--reps".into(),
            "5".into(),
            "--procedures".into(),
            "single".into(),
            "--out-dir".into(),
            out.to_string(),
        ]
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = bin().args(args(a.to_str().unwrap())).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = bin().args(args(b.to_str().unwrap())).env("DPKNOCK_JOBS", "2").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let ra = fs::read_to_string(a.join("records.csv")).unwrap();
    assert_eq!(ra.lines().count(), 1 + 5);
    assert_eq!(ra, fs::read_to_string(b.join("records.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("aggregate.csv")).unwrap(),
        fs::read(b.join("aggregate.csv")).unwrap()
    );
}

#[test]
fn simulate_into_unwritable_directory_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out_dir = blocker.join("sub");
    let out = run(&[
        "simulate", "--n-grid", "50", "--p-grid", "5", "--reps", "1", "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_checks_pass() {
    let out = run(&["verify", "--check", "threshold-oracle", "--trials", "1000"]);
    assert_eq!(out.status.code(), Some(0));

    let out = run(&["verify", "--check", "sensitivity", "--family", "marginal", "--trials", "1000"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!(v["reports"][0]["max_ratio"].as_f64().unwrap() <= 1.0);

    let out = run(&["verify", "--check", "exchangeability"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(json(&out)["report"]["max_deviation"].as_f64().unwrap() < 0.05);
}

#[test]
fn failed_verification_exits_three() {
    let out = run(&["verify", "--check", "exchangeability", "--n", "200", "--tolerance", "1e-9"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(json(&out)["report"]["max_deviation"].as_f64().is_some());
}
