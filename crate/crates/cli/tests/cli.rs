use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tunerlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tunerlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_scenario(dir: &Path, body: &str) -> String {
    let path = dir.join("scenario.json");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{"link":{"rate_mbps":12,"rtt_ms":80,"queue_bytes":120000,"loss_prob":0.01,"seed":1},
"duration_s":4,"flows":[{"start_s":0,"alpha_q512":512,"beta_q1024":717,"fast_convergence":true,
"tcp_friendliness":true,"rto_min_ms":200,"initcwnd":10,"bytes_goal":null},
{"start_s":1,"alpha_q512":512,"beta_q1024":1024}]}"#;

#[test]
fn run_writes_telemetry_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SMALL);
    let out = dir.path().join("out");
    let res = tunerlab(&[
        "run",
        "--scenario",
        &scenario,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let csv = fs::read_to_string(out.join("telemetry.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("t_ms,flow_id,cwnd_segments,goodput_bps,srtt_ms,retx_total,queue_bytes")
    );
    // 21 ticks over 4 s, two flows each.
    assert_eq!(lines.count(), 42);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["flows"].as_array().unwrap().len(), 2);
    assert_eq!(summary["seed"], 1);
}

#[test]
fn preset_names_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("takeover");
    let res = tunerlab(&[
        "run",
        "--scenario",
        "takeover",
        "--out",
        out.to_str().unwrap(),
        "--duration",
        "21",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert!(out.join("telemetry.csv").exists());
    assert!(out.join("summary.json").exists());
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SMALL);
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let res = tunerlab(&[
            "run",
            "--scenario",
            &scenario,
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "7",
        ]);
        assert!(res.status.success(), "{}", stderr(&res));
        outputs.push((
            fs::read(out.join("telemetry.csv")).unwrap(),
            fs::read(out.join("summary.json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    let summary: serde_json::Value = serde_json::from_slice(&outputs[0].1).unwrap();
    assert_eq!(summary["seed"], 7);
}

#[test]
fn sweep_writes_rows_per_value_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let res = tunerlab(&[
        "sweep",
        "--scenario",
        "transfer",
        "--param",
        "beta",
        "--values",
        "512,1024",
        "--seeds",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "beta_q1024,seed,transfer_s");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("512,1,"));
    assert!(lines[6].starts_with("1024,3,"));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert_eq!(stdout.lines().count(), 2);
}

#[test]
fn predict_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SMALL);
    let out = dir.path().join("pred");
    let res = tunerlab(&[
        "predict",
        "--scenario",
        &scenario,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let csv = fs::read_to_string(out.join("prediction.csv")).unwrap();
    assert_eq!(csv.lines().count(), 22);
    assert!(csv
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("0,predicted,10.0000,"));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("prediction.json")).unwrap()).unwrap();
    assert_eq!(meta["regime"], "sawtooth");
}

#[test]
fn missing_flag_is_a_usage_error() {
    let res = tunerlab(&["run", "--scenario", "takeover"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("--out"), "{}", stderr(&res));

    let res = tunerlab(&[
        "sweep",
        "--scenario",
        "transfer",
        "--param",
        "alpha",
        "--values",
        "1",
        "--out",
        "x",
    ]);
    assert_eq!(res.status.code(), Some(2));

    let res = tunerlab(&["serve", "--scenario", "takeover", "--pace", "slow"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn invalid_scenario_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL.replace(
        "\"alpha_q512\":512,\"beta_q1024\":717",
        "\"alpha_q512\":2048,\"beta_q1024\":0",
    );
    let scenario = write_scenario(dir.path(), &bad);
    let out = dir.path().join("out");
    let res = tunerlab(&[
        "run",
        "--scenario",
        &scenario,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1));
    let err = stderr(&res);
    assert!(err.contains("alpha") && err.contains("beta"), "{err}");
    assert!(!out.exists());
}

#[test]
fn unknown_scenario_is_reported() {
    let res = tunerlab(&["run", "--scenario", "nosuch", "--out", "unused"]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("not a preset"), "{}", stderr(&res));
}

#[test]
fn sweep_without_byte_goal_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = tunerlab(&[
        "sweep",
        "--scenario",
        "takeover",
        "--param",
        "beta",
        "--values",
        "512",
        "--seeds",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("bytes_goal"), "{}", stderr(&res));
}

#[test]
fn serve_reports_bind_failure() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let res = tunerlab(&[
        "serve",
        "--scenario",
        "takeover",
        "--listen",
        &addr,
        "--pace",
        "fast",
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("cannot listen"), "{}", stderr(&res));
}
