//! CLI acceptance: every command is deterministic for a fixed seed, and
//! exit codes follow the contract (0 ok, 2 input error, 3 no path, 4
//! calibration failure).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phevroute"))
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn phevroute");
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Criterion 9: identical seeds and inputs produce bit-identical outputs.
#[test]
fn criterion_9_commands_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = fixtures();
    let vehicles = path_str(&fixtures.join("vehicles.json"));
    let network = path_str(&fixtures.join("network.json"));
    let prices = path_str(&fixtures.join("prices.json"));
    let traffic = path_str(&fixtures.join("traffic.jsonl"));

    let mut artifacts: Vec<(String, String)> = Vec::new();
    for round in ["a", "b"] {
        let base = dir.path().join(round);
        fs::create_dir_all(&base).unwrap();
        let traj = path_str(&base.join("traj.csv"));
        run_ok(&[
            "synth", "--seed", "42", "--duration", "420", "--profile", "urban", "--out", &traj,
        ]);

        let readings = path_str(&base.join("readings.csv"));
        run_ok(&[
            "simulate",
            "--trajectory",
            &traj,
            "--vehicles",
            &vehicles,
            "--vehicle-id",
            "1",
            "--soc0",
            "0.8",
            "--ts",
            "2",
            "--poi",
            "1",
            "--out",
            &readings,
        ]);

        let corpus = path_str(&base.join("corpus"));
        run_ok(&["synth-corpus", "--seed", "42", "--count", "9", "--out-dir", &corpus]);

        let coeffs = path_str(&base.join("coeffs.json"));
        run_ok(&[
            "calibrate",
            "--corpus-dir",
            &corpus,
            "--vehicles",
            &vehicles,
            "--vehicle-id",
            "1",
            "--train-fraction",
            "0.4",
            "--seed",
            "42",
            "--out",
            &coeffs,
        ]);

        let rec = path_str(&base.join("rec.json"));
        run_ok(&[
            "recommend",
            "--network",
            &network,
            "--vehicles",
            &vehicles,
            "--vehicle-id",
            "1",
            "--coeffs",
            &coeffs,
            "--prices",
            &prices,
            "--traffic-log",
            &traffic,
            "--from",
            "1",
            "--to",
            "4",
            "--time",
            "2016-03-01T08:30:00",
            "--soc0",
            "0.8",
            "--actual-cost",
            "0.2",
            "--out",
            &rec,
        ]);

        let report = base.join("report");
        run_ok(&[
            "evaluate",
            "--vehicles",
            &vehicles,
            "--vehicle-ids",
            "1",
            "--seed",
            "42",
            "--n-paths",
            "8",
            "--out-dir",
            &path_str(&report),
        ]);

        for file in [
            traj,
            readings,
            coeffs,
            rec,
            path_str(&report.join("error_by_length.csv")),
            path_str(&report.join("crowdsensed_vs_actual.csv")),
            path_str(&report.join("soc_sweep.csv")),
            path_str(&report.join("cases.csv")),
            path_str(&report.join("summary.json")),
        ] {
            let content = fs::read_to_string(&file).unwrap();
            artifacts.push((format!("{round}:{file}"), content));
        }
    }

    let half = artifacts.len() / 2;
    for i in 0..half {
        let (name_a, content_a) = &artifacts[i];
        let (name_b, content_b) = &artifacts[half + i];
        assert_eq!(
            content_a, content_b,
            "outputs differ between runs: {name_a} vs {name_b}"
        );
    }
    println!("criterion 9 PASS: {half} artifacts bit-identical across two seeded runs");
}

#[test]
fn missing_input_exits_2() {
    let out = bin()
        .args([
            "simulate",
            "--trajectory",
            "/nonexistent/nothing.csv",
            "--vehicles",
            &path_str(&fixtures().join("vehicles.json")),
            "--vehicle-id",
            "1",
            "--soc0",
            "0.8",
            "--out",
            "/tmp/phevroute-test-unused.csv",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn unreachable_destination_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let coeffs = dir.path().join("coeffs.json");
    // Minimal coefficients file.
    fs::write(
        &coeffs,
        r#"{"k1":0.16,"k2":0.0004,"k3":0.5,"k4":0.5,"k5":0.5,"k6":0.5,"residual_rms_kw":0.0,"n_training_samples":10}"#,
    )
    .unwrap();
    let out = bin()
        .args([
            "recommend",
            "--network",
            &path_str(&fixtures().join("network.json")),
            "--vehicles",
            &path_str(&fixtures().join("vehicles.json")),
            "--vehicle-id",
            "1",
            "--coeffs",
            &path_str(&coeffs),
            "--from",
            "1",
            "--to",
            "99",
            "--soc0",
            "0.8",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn degenerate_corpus_exits_4() {
    // All trajectories share (zero) features, so the feature columns are
    // collinear and the fit is rank deficient.
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    fs::create_dir_all(&corpus).unwrap();
    for i in 0..3 {
        let traj = path_str(&corpus.join(format!("t{i}.csv")));
        run_ok(&[
            "synth",
            "--seed",
            &format!("{i}"),
            "--duration",
            "120",
            "--profile",
            "urban",
            "--out",
            &traj,
        ]);
    }
    let out = bin()
        .args([
            "calibrate",
            "--corpus-dir",
            &path_str(&corpus),
            "--vehicles",
            &path_str(&fixtures().join("vehicles.json")),
            "--vehicle-id",
            "1",
            "--train-fraction",
            "1.0",
            "--seed",
            "7",
            "--out",
            &path_str(&dir.path().join("coeffs.json")),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("rank deficient"), "stderr: {stderr}");
}

#[test]
fn empty_corpus_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "calibrate",
            "--corpus-dir",
            &path_str(dir.path()),
            "--vehicles",
            &path_str(&fixtures().join("vehicles.json")),
            "--vehicle-id",
            "1",
            "--out",
            &path_str(&dir.path().join("coeffs.json")),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_speed_trajectory_simulates_to_zero_totals() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("zero.csv");
    let mut csv = String::from("t,lat,lon,v_kmh\n");
    for t in 0..=60 {
        csv.push_str(&format!("{t},39.9,116.4,0\n"));
    }
    fs::write(&traj, csv).unwrap();
    let readings = dir.path().join("readings.csv");
    let out = run_ok(&[
        "simulate",
        "--trajectory",
        &path_str(&traj),
        "--vehicles",
        &path_str(&fixtures().join("vehicles.json")),
        "--vehicle-id",
        "1",
        "--soc0",
        "0.5",
        "--out",
        &path_str(&readings),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("gasoline 0.00 g"), "stdout: {stdout}");
    let content = fs::read_to_string(&readings).unwrap();
    for line in content.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[1], "0");
        assert_eq!(fields[2], "0");
        assert_eq!(fields[3], "0");
        assert_eq!(fields[4], "0.5");
    }
}

#[test]
fn calibration_recovers_the_dynamics_coefficients() {
    // The corpus demand comes from the force model, so the fitted
    // coefficients must land on the analytically derived ones.
    let dir = tempfile::tempdir().unwrap();
    let corpus = path_str(&dir.path().join("corpus"));
    run_ok(&["synth-corpus", "--seed", "11", "--count", "12", "--out-dir", &corpus]);
    let coeffs_path = dir.path().join("coeffs.json");
    run_ok(&[
        "calibrate",
        "--corpus-dir",
        &corpus,
        "--vehicles",
        &path_str(&fixtures().join("vehicles.json")),
        "--vehicle-id",
        "1",
        "--train-fraction",
        "0.5",
        "--seed",
        "11",
        "--out",
        &path_str(&coeffs_path),
    ]);
    let coeffs: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&coeffs_path).unwrap()).unwrap();
    // Sonata: friction 0.01 * 1650 * 9.81 / 1000 and so on.
    let expected = [
        ("k1", 0.161865),
        ("k2", 0.000396),
        ("k3", 0.495),
        ("k4", 0.495),
        ("k5", 0.495),
        ("k6", 0.495),
    ];
    for (key, want) in expected {
        let got = coeffs[key].as_f64().unwrap();
        assert!(
            ((got - want) / want).abs() < 0.02,
            "{key}: got {got}, expected about {want}"
        );
    }
}

#[test]
fn full_train_fraction_warns_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = path_str(&dir.path().join("corpus"));
    run_ok(&["synth-corpus", "--seed", "3", "--count", "6", "--out-dir", &corpus]);
    let out = run_ok(&[
        "calibrate",
        "--corpus-dir",
        &corpus,
        "--vehicles",
        &path_str(&fixtures().join("vehicles.json")),
        "--vehicle-id",
        "2",
        "--train-fraction",
        "1.0",
        "--seed",
        "5",
        "--out",
        &path_str(&dir.path().join("coeffs.json")),
    ]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no held-out"), "stderr: {stderr}");
}
