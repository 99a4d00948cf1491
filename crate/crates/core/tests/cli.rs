use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{"calibration":{"n_cal_trials":200,"n_cal_steps":600}}"#;

fn nanosim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nanosim"))
        .current_dir(dir)
        .env_remove("NANOSIM_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.json"), SMALL).unwrap();
    dir
}

fn read(dir: &Path, rel: &str) -> String {
    fs::read_to_string(dir.join(rel)).unwrap()
}

#[test]
fn anomaly_sweep_has_fifteen_rows() {
    let dir = setup();
    let out = nanosim(
        dir.path(),
        &["sweep", "--axis", "anomaly", "--config", "small.json", "--seed", "42", "--trials", "10", "--out", "results/"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "results/metrics.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 16);
    assert_eq!(
        lines[0],
        "strategy,sweep_param,sweep_value,n_trials,p_d,p_fa,c_h0,c_h1,delay_mean_s,delay_detected_frac,on_fraction,rising_per_node,on_duration_mean_s,theta_gateway,seed"
    );
    for (i, line) in lines[1..].iter().enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0], ["RR", "TR", "EIR"][i % 3]);
        assert_eq!(f[1], "a_1");
        assert_eq!(f[3], "10");
        assert!(!f[4].is_empty() && !f[5].is_empty());
        assert_eq!(f[14], "42");
    }
    assert!(dir.path().join("results/calibration.json").exists());
}

#[test]
fn h0_only_run_leaves_detection_empty() {
    let dir = setup();
    let out = nanosim(
        dir.path(),
        &["run", "--config", "small.json", "--strategy", "eir", "--hypothesis", "h0", "--trials", "100"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "results/metrics.csv");
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "EIR");
    assert_eq!(row[1], "baseline");
    assert_eq!(row[2], "");
    assert_eq!(row[4], "", "p_d");
    let p_fa: f64 = row[5].parse().unwrap();
    assert!((0.0..=1.0).contains(&p_fa));
    assert!(!row[6].is_empty(), "c_h0");
    assert_eq!(row[7], "", "c_h1");
    assert_eq!(row[8], "", "delay");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = setup();
    let args = |out: &'static str, threads: &'static str| {
        vec!["sweep", "--axis", "network", "--config", "small.json", "--trials", "12", "--out", out, "--threads", threads]
    };
    for (out, threads) in [("a", "1"), ("b", "1"), ("c", "8")] {
        assert!(nanosim(dir.path(), &args(out, threads)).status.success());
    }
    let a = read(dir.path(), "a/metrics.csv");
    assert_eq!(a, read(dir.path(), "b/metrics.csv"));
    assert_eq!(a, read(dir.path(), "c/metrics.csv"));
    assert_eq!(read(dir.path(), "a/calibration.json"), read(dir.path(), "c/calibration.json"));
}

#[test]
fn seed_from_environment() {
    let dir = setup();
    let run = |extra: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_nanosim"));
        cmd.current_dir(dir.path()).env_remove("NANOSIM_SEED");
        if let Some(s) = env {
            cmd.env("NANOSIM_SEED", s);
        }
        let mut args = vec!["run", "--config", "small.json", "--strategy", "tr", "--trials", "5", "--out", "o"];
        args.extend_from_slice(extra);
        assert!(cmd.args(&args).status().unwrap().success());
        let csv = read(dir.path(), "o/metrics.csv");
        csv.lines().nth(1).unwrap().rsplit(',').next().unwrap().to_string()
    };
    assert_eq!(run(&[], None), "42");
    assert_eq!(run(&[], Some("7")), "7");
    assert_eq!(run(&["--seed", "9"], Some("7")), "9");
}

#[test]
fn exit_codes() {
    let dir = setup();
    assert_eq!(nanosim(dir.path(), &["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(nanosim(dir.path(), &[]).status.code(), Some(2));
    assert_eq!(nanosim(dir.path(), &["--help"]).status.code(), Some(0));

    fs::write(dir.path().join("bad.json"), r#"{"scenario":{"n_nodes":0}}"#).unwrap();
    let out = nanosim(dir.path(), &["run", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_nodes"));

    fs::write(dir.path().join("broken.json"), "{\n\"scenario\": {,}\n}").unwrap();
    let out = nanosim(dir.path(), &["run", "--config", "broken.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    assert_eq!(nanosim(dir.path(), &["sweep", "--config", "small.json"]).status.code(), Some(2));

    fs::write(dir.path().join("blocker"), "").unwrap();
    let out = nanosim(
        dir.path(),
        &["run", "--config", "small.json", "--strategy", "tr", "--trials", "2", "--out", "blocker/x"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn calibration_sidecar_is_reused() {
    let dir = setup();
    let out = nanosim(
        dir.path(),
        &["calibrate", "--config", "small.json", "--strategy", "tr", "--calibration", "cal.json"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = read(dir.path(), "cal.json");
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    let entries = doc["entries"].as_array_mut().unwrap();
    assert_eq!(entries.len(), 1);
    // an unreachable gateway threshold can only come from the sidecar
    entries[0]["theta_gateway"] = serde_json::json!(1e300);
    fs::write(dir.path().join("cal.json"), serde_json::to_string(&doc).unwrap()).unwrap();

    let out = nanosim(
        dir.path(),
        &["run", "--config", "small.json", "--strategy", "tr", "--hypothesis", "both", "--trials", "20", "--calibration", "cal.json"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "results/metrics.csv");
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[4], "0");
    assert_eq!(row[5], "0");
    assert_eq!(row[13], "1e+300");
}

#[test]
fn dumped_traces_feed_stats() {
    let dir = setup();
    let out = nanosim(
        dir.path(),
        &["run", "--config", "small.json", "--strategy", "eir", "--hypothesis", "h1", "--trials", "6", "--dump-traces"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_dir(dir.path().join("results/traces")).unwrap().count(), 6);

    let out = nanosim(dir.path(), &["stats", "results/traces", "--out", "stats"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout, read(dir.path(), "stats/local_stats.csv"));
    let stats: Vec<&str> = stdout.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(stats[0], "eir_h1_baseline");
    assert_eq!(stats[1], "6");

    // the metrics row and the trace statistics describe the same trials
    let metrics = read(dir.path(), "results/metrics.csv");
    let row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[10..13], &stats[2..5]);
}

#[test]
fn stats_rejects_malformed_trace() {
    let dir = setup();
    let traces = dir.path().join("t");
    fs::create_dir(&traces).unwrap();
    fs::write(traces.join("x_trial00000.csv"), "t_s,evidence,detected,node0_state\n0,0,0,7\n1,0,0,0\n").unwrap();
    let out = nanosim(dir.path(), &["stats", "t"]);
    assert_eq!(out.status.code(), Some(1));
}
