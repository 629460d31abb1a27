use std::process::{Command, Output};

fn streambp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_streambp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn tracker_csv_contract() {
    let o = streambp(&[
        "tracker",
        "--algo",
        "sbp",
        "--particles",
        "10",
        "--sims",
        "2",
        "--seed",
        "1",
        "--steps",
        "100",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "sim,seed,algo,particles,divergence_step,wallclock_ms"
    );
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,") && lines[2].starts_with("1,"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("median"));
}

#[test]
fn identical_invocations_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, format: &str| {
        let path = dir.path().join(name);
        let o = streambp(&[
            "tracker",
            "--algo",
            "smc",
            "--particles",
            "20",
            "--sims",
            "3",
            "--seed",
            "7",
            "--steps",
            "150",
            "--no-timing",
            "--format",
            format,
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        std::fs::read(path).unwrap()
    };
    assert_eq!(run("a.csv", "csv"), run("b.csv", "csv"));
    assert_eq!(run("a.json", "json"), run("b.json", "json"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(&config, "[bridge]\nn_steps = 10\nhorizon = 2.0\n").unwrap();
    let o = streambp(&[
        "bridge",
        "--config",
        config.to_str().unwrap(),
        "--steps",
        "4",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    // 4 x 4 entries plus header; horizon 2 from the file.
    assert_eq!(text.lines().count(), 17);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[2].parse::<f64>().unwrap(), 0.5);
}

#[test]
fn bridge_json_matches_formula() {
    let o = streambp(&["bridge", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let mid = v["cov"][24][24].as_f64().unwrap();
    assert!((mid - 0.25).abs() < 1e-8);
    assert!(v["max_abs_error"].as_f64().unwrap() < 1e-8);
}

#[test]
fn kalman_report() {
    let o = streambp(&[
        "kalman", "--dim", "3", "--steps", "200", "--seed", "4", "--format", "json",
    ]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["max_mean_diff"].as_f64().unwrap() < 1e-8);
    assert!(v["max_cov_diff"].as_f64().unwrap() < 1e-8);
}

#[test]
fn bench_json_has_horizon_throughput_pairs() {
    let o = streambp(&["bench", "--steps", "100", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let points = v["points"].as_array().unwrap();
    assert_eq!(points.len(), 8);
    for p in points {
        assert!(p["horizon"].is_u64());
        assert!(p["steps_per_sec"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn config_errors_exit_with_two() {
    assert_eq!(streambp(&["kalman", "--dim", "0"]).status.code(), Some(2));
    assert_eq!(streambp(&["tracker", "--sims", "0"]).status.code(), Some(2));
    assert_eq!(
        streambp(&["tracker", "--particles", "0"]).status.code(),
        Some(2)
    );
    assert_eq!(streambp(&["bridge", "--steps", "1"]).status.code(), Some(2));
    assert_eq!(
        streambp(&["kalman", "--config", "/definitely/missing.toml"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        streambp(&["tracker", "--algo", "pf"]).status.code(),
        Some(2)
    );

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[tracker]\nsigma_q = 1.0\n").unwrap();
    assert_eq!(
        streambp(&["tracker", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn shipped_config_parses() {
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml");
    let o = streambp(&["bridge", "--config", config, "--steps", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
