//! Drives the compiled binary through the full pipeline on a small
//! synthetic bundle and checks each stage's outputs and exit codes.

use std::process::Command;

fn bustop() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bustop"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn bustop");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let bundle = w.join("bundle");

    run_ok(bustop().args([
        "synth",
        "--out",
        bundle.to_str().unwrap(),
        "--stays-per-type",
        "10",
        "--trips",
        "4",
    ]));
    assert!(bundle.join("manifest.json").is_file());
    assert!(bundle.join("tiles/legend.json").is_file());

    let trip0 = bundle.join("trips/trip_000");
    let stdout = run_ok(bustop().args(["ingest-check", "--trip", trip0.to_str().unwrap()]));
    assert!(stdout.contains("ok"), "ingest-check output: {stdout}");

    let stays0 = w.join("stays0.json");
    run_ok(bustop().args([
        "cluster",
        "--trip",
        trip0.to_str().unwrap(),
        "--out",
        stays0.to_str().unwrap(),
    ]));
    let stays_json = std::fs::read_to_string(&stays0).unwrap();
    let stays: serde_json::Value = serde_json::from_str(&stays_json).unwrap();
    assert!(!stays.as_array().unwrap().is_empty());

    let features = w.join("features.csv");
    let stays_all = w.join("stays.json");
    let mut cmd = bustop();
    cmd.arg("featurize");
    for i in 0..4 {
        cmd.arg("--trip").arg(bundle.join(format!("trips/trip_{i:03}")));
    }
    cmd.args([
        "--tiles",
        bundle.join("tiles").to_str().unwrap(),
        "--out",
        features.to_str().unwrap(),
        "--stays-out",
        stays_all.to_str().unwrap(),
    ]);
    run_ok(&mut cmd);
    let header = std::fs::read_to_string(&features).unwrap();
    assert!(header.starts_with("stay_id,f1,"), "feature csv header: {header:.60}");

    run_ok(bustop().args([
        "tiles-check",
        "--tiles",
        bundle.join("tiles").to_str().unwrap(),
        "--stays",
        stays0.to_str().unwrap(),
    ]));

    let model = w.join("model.json");
    let profile = w.join("profile.json");
    run_ok(bustop().args([
        "train",
        "--features",
        features.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--stays",
        stays_all.to_str().unwrap(),
        "--profile-out",
        profile.to_str().unwrap(),
    ]));
    assert!(model.is_file() && profile.is_file());

    let pred = w.join("pred.csv");
    run_ok(bustop().args([
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--features",
        features.to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
    ]));
    let pred_body = std::fs::read_to_string(&pred).unwrap();
    // On cleanly separated synthetic data the in-sample predictions
    // should all agree with the truth column.
    for line in pred_body.lines().skip(1) {
        let mut cols = line.split(',');
        let id = cols.next().unwrap();
        let predicted = cols.next().unwrap();
        let truth = cols.next().unwrap();
        assert_eq!(predicted, truth, "mismatch at {id}");
    }

    let eta = w.join("eta.csv");
    run_ok(bustop().args([
        "eta",
        "--model",
        model.to_str().unwrap(),
        "--profile",
        profile.to_str().unwrap(),
        "--trip",
        trip0.to_str().unwrap(),
        "--tiles",
        bundle.join("tiles").to_str().unwrap(),
        "--out",
        eta.to_str().unwrap(),
    ]));
    assert!(std::fs::read_to_string(&eta)
        .unwrap()
        .starts_with("stay_id,predicted_arrival_ms"));

    let table = w.join("table.csv");
    run_ok(bustop().args([
        "eta-table",
        "--trip",
        trip0.to_str().unwrap(),
        "--trip",
        bundle.join("trips/trip_001").to_str().unwrap(),
        "--profile",
        profile.to_str().unwrap(),
        "--out",
        table.to_str().unwrap(),
    ]));
    assert!(std::fs::read_to_string(&table).unwrap().contains("BS_0"));

    let report = w.join("report.csv");
    run_ok(bustop().args([
        "report",
        "--trip",
        trip0.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]));
    assert!(std::fs::read_to_string(&report)
        .unwrap()
        .starts_with("statistic,stay_type,"));
}

#[test]
fn data_errors_exit_one_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = bustop()
        .args(["ingest-check", "--trip", dir.path().join("nope").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error: "), "stderr: {stderr}");
}

#[test]
fn usage_errors_exit_two() {
    let out = bustop().arg("no-such-subcommand").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_precedence_flag_beats_env() {
    let out = bustop()
        .env("BUSTOP_SEED", "99")
        .args(["--print-config", "--seed", "11", "eval", "--features", "/nonexistent"])
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\"seed\": 11"), "stdout: {stdout}");
}
