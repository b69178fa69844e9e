//! End-to-end checks of the `invopt` binary: reproducible generation,
//! learning runs, reports, surfaces, and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn invopt(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invopt"))
        .args(args)
        .current_dir(dir)
        .env("INVOPT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn gen_is_bit_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for sub in [&a, &b] {
        let out = invopt(
            &[
                "gen",
                "learn-c",
                "--d",
                "2",
                "--m",
                "4",
                "--count",
                "3",
                "--seed",
                "7",
                "--out-dir",
                sub.to_str().unwrap(),
            ],
            dir.path(),
        );
        assert_ok(&out);
    }
    for i in 0..3 {
        let name = format!("learn-c-d2-m4-s7-{i:03}.json");
        let fa = fs::read(a.join(&name)).unwrap();
        let fb = fs::read(b.join(&name)).unwrap();
        assert_eq!(fa, fb, "{name} differs between identical runs");
    }
}

#[test]
fn gen_learn_cab_stores_both_targets() {
    let dir = tempfile::tempdir().unwrap();
    let out = invopt(
        &[
            "gen", "learn-cab", "--d", "2", "--m", "8", "--count", "2", "--seed", "3",
            "--out-dir", ".",
        ],
        dir.path(),
    );
    assert_ok(&out);
    for i in 0..2 {
        let text =
            fs::read_to_string(dir.path().join(format!("learn-cab-d2-m8-s3-{i:03}.json"))).unwrap();
        let json: serde_json::Value = serde_json::from_str(&text).unwrap();
        let targets = json["targets"].as_array().unwrap();
        assert_eq!(targets.len(), 2, "expected [feasible, infeasible]");

        // Re-check feasibility of each target against the stored facets.
        let a: Vec<Vec<f64>> = serde_json::from_value(json["A"].clone()).unwrap();
        let b: Vec<f64> = serde_json::from_value(json["b"].clone()).unwrap();
        let violation = |x: &[f64]| -> f64 {
            a.iter()
                .zip(&b)
                .map(|(row, bi)| row.iter().zip(x).map(|(aij, xj)| aij * xj).sum::<f64>() - bi)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let x0: Vec<f64> = serde_json::from_value(targets[0]["x"].clone()).unwrap();
        let x1: Vec<f64> = serde_json::from_value(targets[1]["x"].clone()).unwrap();
        assert!(violation(&x0) < 0.0, "first target must be strictly feasible");
        assert!(violation(&x1) > 0.0, "second target must be infeasible");
    }
}

#[test]
fn gen_parametric_has_train_and_test_features() {
    let dir = tempfile::tempdir().unwrap();
    let out = invopt(
        &[
            "gen",
            "parametric",
            "--d",
            "2",
            "--m",
            "8",
            "--count",
            "1",
            "--seed",
            "11",
            "--out-dir",
            ".",
        ],
        dir.path(),
    );
    assert_ok(&out);
    let text =
        fs::read_to_string(dir.path().join("parametric-d2-m8-s11-000.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["model"]["u_train"].as_array().unwrap().len(), 20);
    assert_eq!(json["model"]["u_test"].as_array().unwrap().len(), 20);
    assert_eq!(json["targets"].as_array().unwrap().len(), 20);
}

#[test]
fn learn_trig_demo_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&invopt(&["gen", "trig-demo", "--out-dir", "."], dir.path()));
    let out = invopt(&["learn", "trig-demo.json", "--results", "r.csv"], dir.path());
    assert_ok(&out);

    let learned: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("trig-demo.learned.json")).unwrap(),
    )
    .unwrap();
    let final_loss = learned["final_train_loss"].as_f64().unwrap();
    let w: Vec<f64> = serde_json::from_value(learned["w_lrn"].clone()).unwrap();
    assert!(final_loss < 1e-3, "final mse {final_loss}");
    assert!((w[0] - 1.0).abs() < 0.05 && (w[1] - 1.0).abs() < 0.05, "w_lrn {w:?}");

    // Results row landed in the CSV.
    let csv = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
    assert!(csv.lines().next().unwrap().starts_with("schema_version,instance_id,task"));
}

#[test]
fn missing_instance_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = invopt(&["learn", "nope.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_instance_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), "{\"schema_version\": 1}").unwrap();
    let out = invopt(&["learn", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn loss_surface_requires_2d() {
    let dir = tempfile::tempdir().unwrap();
    // d=10 instances are valid for learning but not for surfaces.
    assert_ok(&invopt(
        &[
            "gen", "learn-c", "--d", "3", "--m", "6", "--count", "1", "--seed", "5",
            "--out-dir", ".",
        ],
        dir.path(),
    ));
    let out = invopt(&["loss-surface", "learn-c-d3-m6-s5-000.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn loss_surface_grid_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&invopt(
        &[
            "gen", "learn-c", "--d", "2", "--m", "4", "--count", "1", "--seed", "9",
            "--out-dir", ".",
        ],
        dir.path(),
    ));
    let out = invopt(
        &[
            "loss-surface",
            "learn-c-d2-m4-s9-000.json",
            "--loss",
            "adg",
            "--eps",
            "0.1,1e-5",
            "--resolution",
            "16",
            "--out",
            "grid.csv",
        ],
        dir.path(),
    );
    assert_ok(&out);
    let grid = fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 32, "header plus 16 x 2 points");
}

#[test]
fn report_summarizes_medians() {
    let dir = tempfile::tempdir().unwrap();
    let csv = "\
schema_version,instance_id,task,d,m,loss_kind,t0,mu,alpha_c,alpha_ab,eps_schedule,truncate,target,seed,initial_loss,final_train_loss,final_test_loss,steps_used,termination,wall_ms
1,a,learn-c,2,4,se,1.0,10.0,10.0,,constant(1e-5),,,0,1.0,1.0,,5,max-steps,10
1,b,learn-c,2,4,se,1.0,10.0,10.0,,constant(1e-5),,,0,1.0,2.0,,5,max-steps,10
1,c,learn-c,2,4,se,1.0,10.0,10.0,,constant(1e-5),,,0,1.0,3.0,,5,max-steps,10
";
    fs::write(dir.path().join("r.csv"), csv).unwrap();
    let out = invopt(&["report", "r.csv", "--out", "summary.csv"], dir.path());
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("2.0000e0"), "median of 1,2,3 is 2: {stdout}");
    assert!(dir.path().join("summary.csv").exists());
}

#[test]
fn learn_cab_target_flag_selects_observation() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&invopt(
        &[
            "gen", "learn-cab", "--d", "2", "--m", "4", "--count", "1", "--seed", "13",
            "--out-dir", ".",
        ],
        dir.path(),
    ));
    for target in ["feasible", "infeasible"] {
        let out = invopt(
            &[
                "learn",
                "learn-cab-d2-m4-s13-000.json",
                "--loss",
                "se",
                "--target",
                target,
                "--max-steps",
                "30",
                "--results",
                "r.csv",
            ],
            dir.path(),
        );
        assert_ok(&out);
    }
    let rows = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(rows.contains(",feasible,"));
    assert!(rows.contains(",infeasible,"));
}
