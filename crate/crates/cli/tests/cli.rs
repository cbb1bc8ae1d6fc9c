//! End-to-end CLI behavior: exit codes, re-analysis subcommands, manifest
//! checksums, and the sweep/simulate equivalence on files.

use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn photonbuf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_photonbuf"))
        .args(args)
        .output()
        .expect("spawn photonbuf")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL_RUN: &str = "n_pulses = 50000\nmaster_seed = 5\n\n[control]\nhold_round_trips = 2\n";

#[test]
fn validate_reports_clean_and_violations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RUN);
    let out = photonbuf(&["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));

    // gate window wider than the round trip: physics violation, exit 3
    let bad = write_config(
        dir.path(),
        "n_pulses = 10\nmaster_seed = 1\n\n[control]\ngate_window_ps = 120.0\n",
    );
    let out = photonbuf(&["validate", "--config", &bad]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("window exceeds round trip"));
}

#[test]
fn budget_violation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "n_pulses = 10\nmaster_seed = 1\n\n[buffer]\ninput_coupling_loss_db = 3.5\noutput_coupling_loss_db = 3.5\n",
    );
    let out = photonbuf(&["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("budget"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // unknown key
    let cfg = write_config(dir.path(), "n_pulses = 10\nmaster_seed = 1\nbogus = 1\n");
    let out = photonbuf(&["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    // out-of-range field
    let cfg = write_config(
        dir.path(),
        "n_pulses = 10\nmaster_seed = 1\n\n[detection]\nefficiency = 2.0\n",
    );
    let out = photonbuf(&["simulate", "--config", &cfg, "--out", "/tmp/never"]);
    assert_eq!(out.status.code(), Some(2));
    // vacuous k list
    let cfg = write_config(dir.path(), SMALL_RUN);
    let out = photonbuf(&["sweep-storage", "--config", &cfg, "--k-list", "7..3", "--out", "/tmp/never"]);
    assert_eq!(out.status.code(), Some(2));
    // k beyond capacity fails before simulating (all-or-nothing)
    let out = photonbuf(&["sweep-storage", "--config", &cfg, "--k-list", "1,99", "--out", "/tmp/never"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn manifest_checksums_match_emitted_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RUN);
    let run = dir.path().join("run");
    let out = photonbuf(&["simulate", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(!outputs.is_empty());
    for entry in outputs {
        let path = run.join(entry["path"].as_str().unwrap());
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(entry["bytes"].as_u64().unwrap(), bytes.len() as u64);
        let digest = hex::encode(Sha256::digest(&bytes));
        assert_eq!(entry["sha256"].as_str().unwrap(), digest, "{}", path.display());
    }
    // resolved config echoes every default
    let resolved = std::fs::read_to_string(run.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("round_trip_loss_db = 0.74"));
    assert!(resolved.contains("capture_time_ps = 500.0"));
}

#[test]
fn sweep_with_single_k_matches_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RUN);
    let sim = dir.path().join("sim");
    let sweep = dir.path().join("sweep");
    assert!(photonbuf(&["simulate", "--config", &cfg, "--out", sim.to_str().unwrap()])
        .status
        .success());
    assert!(photonbuf(&[
        "sweep-storage",
        "--config",
        &cfg,
        "--k-list",
        "2",
        "--out",
        sweep.to_str().unwrap()
    ])
    .status
    .success());
    let a = std::fs::read(sim.join("histogram.csv")).unwrap();
    let b = std::fs::read(sweep.join("fig2a_hist_k2.csv")).unwrap();
    assert_eq!(a, b, "sweep histogram differs from simulate histogram");
}

#[test]
fn degenerate_sweep_records_fit_error_but_emits_g2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RUN);
    let run = dir.path().join("k0");
    let out = photonbuf(&[
        "sweep-storage",
        "--config",
        &cfg,
        "--k-list",
        "0",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["sweep"]["loss_fit"].is_null());
    assert!(manifest["sweep"]["loss_fit_error"]
        .as_str()
        .unwrap()
        .contains("at least 2"));
    assert!(!run.join("fig2b_lossfit.json").exists());
    let g2 = std::fs::read_to_string(run.join("fig2c_g2.csv")).unwrap();
    assert!(g2.lines().count() >= 2, "g2 table missing rows:\n{g2}");
}

#[test]
fn g2_and_fit_loss_reanalyze_sweep_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "n_pulses = 400000\nmaster_seed = 21\n\n[source]\nmean_photon_number = 0.3\n\n[detection]\ndead_time_ps = 0.0\n",
    );
    let run = dir.path().join("sweep");
    assert!(photonbuf(&[
        "sweep-storage",
        "--config",
        &cfg,
        "--k-list",
        "1..3",
        "--out",
        run.to_str().unwrap()
    ])
    .status
    .success());

    // fit-loss on the emitted peak series reproduces the manifest fit
    let peaks = run.join("fig2b_peaks.csv");
    let out = photonbuf(&["fit-loss", "--peaks", peaks.to_str().unwrap(), "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let fit: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    let slope = fit["slope_db_per_trip"].as_f64().unwrap();
    let manifest_slope = manifest["sweep"]["loss_fit"]["slope_db_per_trip"].as_f64().unwrap();
    assert!((slope - manifest_slope).abs() < 1e-9);

    // g2 on a simulate event dump reproduces the sweep's k=2 estimate
    let sim = dir.path().join("sim");
    let cfg2 = write_config(
        dir.path(),
        "n_pulses = 400000\nmaster_seed = 21\n\n[source]\nmean_photon_number = 0.3\n\n[detection]\ndead_time_ps = 0.0\n\n[control]\nhold_round_trips = 2\n",
    );
    assert!(photonbuf(&["simulate", "--config", &cfg2, "--out", sim.to_str().unwrap()])
        .status
        .success());
    let out = photonbuf(&[
        "g2",
        "--events",
        sim.join("events.csv").to_str().unwrap(),
        "--period-ps",
        "10000",
        "--gate-center-ps",
        "700",
        "--gate-half-width-ps",
        "40",
        "--triggers",
        "400000",
        "--format",
        "json",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let g2: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let sweep_g2 = manifest["sweep"]["g2"][1].clone(); // k = 2 row
    assert_eq!(g2["n_a"], sweep_g2["n_a"]);
    assert_eq!(g2["n_b"], sweep_g2["n_b"]);
    assert_eq!(g2["n_coincidences"], sweep_g2["n_coincidences"]);
    assert!((g2["g2"].as_f64().unwrap() - sweep_g2["g2"].as_f64().unwrap()).abs() < 1e-12);

    // analysis failures exit 4: empty channel B
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "channel,time_ps\nA,500\n").unwrap();
    let out = photonbuf(&[
        "g2",
        "--events",
        empty.to_str().unwrap(),
        "--period-ps",
        "10000",
        "--gate-center-ps",
        "500",
        "--triggers",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn seed_override_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RUN);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(photonbuf(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()])
        .status
        .success());
    assert!(photonbuf(&[
        "simulate", "--config", &cfg, "--seed", "6", "--out", b.to_str().unwrap()
    ])
    .status
    .success());
    let ha = std::fs::read(a.join("histogram.csv")).unwrap();
    let hb = std::fs::read(b.join("histogram.csv")).unwrap();
    assert_ne!(ha, hb, "seed override had no effect");
}

#[test]
fn s21_curve_sets_filter_bandwidth() {
    let dir = tempfile::tempdir().unwrap();
    let mut s21 = String::from("freq_ghz,s21_db\n");
    let mut f = 0.5;
    while f < 60.0 {
        s21.push_str(&format!("{f},{}\n", -10.0 * (1.0 + (f / 25.0f64).powi(2)).log10()));
        f += 0.5;
    }
    std::fs::write(dir.path().join("s21.csv"), s21).unwrap();
    let cfg = write_config(
        dir.path(),
        "n_pulses = 1000\nmaster_seed = 3\n\n[control]\ns21_csv_path = \"s21.csv\"\n",
    );
    let run = dir.path().join("run");
    let out = photonbuf(&["simulate", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let resolved = std::fs::read_to_string(run.join("config.resolved.toml")).unwrap();
    let f3db_line = resolved
        .lines()
        .find(|l| l.starts_with("f3db_ghz"))
        .expect("resolved f3db");
    let value: f64 = f3db_line.split('=').nth(1).unwrap().trim().parse().unwrap();
    assert!((value - 25.0).abs() < 0.5, "resolved f3db {value} GHz");
}
