use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sde-moments"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn csv_column(text: &str, name: &str) -> Vec<f64> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn estimate_on_empty_csv_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.csv"), "").unwrap();
    let out = run(&["estimate", "--observations", "empty.csv", "--out", "e.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse error"));
}

#[test]
fn oracle_bridge_mean_column() {
    let out = run(&["oracle", "--model", "brownian_bridge"], Path::new("."));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let t = csv_column(&text, "t");
    let m = csv_column(&text, "m");
    assert_eq!(t.len(), 26);
    for (t, m) in t.iter().zip(&m) {
        assert!((m - 2.0 * (1.0 - t)).abs() < 1e-8, "t={t} m={m}");
    }
}

#[test]
fn unknown_model_exits_one() {
    let out = run(&["oracle", "--model", "no_such_model"], Path::new("."));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_sample_estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let steps: [&[&str]; 3] = [
        &["--seed", "9", "simulate", "--model", "sin_ou", "--n", "80", "--out", "paths.csv"],
        &["--seed", "9", "sample", "--paths", "paths.csv", "--r", "4", "--noise-sd", "0.05", "--out", "obs.csv"],
        &[
            "estimate",
            "--observations",
            "obs.csv",
            "--model",
            "sin_ou",
            "--grid-points",
            "11",
            "--no-clip",
            "--out",
            "est.csv",
            "--mean-out",
            "mean.csv",
        ],
    ];
    for args in steps {
        let out = run(args, d);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(d.join("obs.meta.json").exists());
    assert!(d.join("mean.surface.csv").exists());
    let est = std::fs::read_to_string(d.join("est.csv")).unwrap();
    assert!(est.starts_with("t,mu_hat,sigma2_D_raw,sigma2_D,sigma2_T_raw,sigma2_T\n"));
    assert_eq!(csv_column(&est, "mu_hat").len(), 11);
    // Without clipping the clipped and raw columns agree.
    assert_eq!(csv_column(&est, "sigma2_D"), csv_column(&est, "sigma2_D_raw"));
}

#[test]
fn bad_smoother_flag_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(&["simulate", "--model", "brownian_motion", "--n", "10", "--out", "p.csv"], d).status.success());
    assert!(run(&["sample", "--paths", "p.csv", "--r", "3", "--out", "o.csv"], d).status.success());
    let out = run(&["estimate", "--observations", "o.csv", "--degree", "3", "--out", "e.csv"], d);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn mc_writes_sixteen_cell_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = r#"{
        "model": "brownian_bridge",
        "n_values": [100, 200, 500, 1000],
        "r_values": [2, 3, 5, 10],
        "noise_sd_values": [0.05],
        "mc_runs": 2,
        "seed": 11
    }"#;
    std::fs::write(d.join("cfg.json"), cfg).unwrap();
    let out = run(&["mc", "--config", "cfg.json", "--output-dir", "report"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let heat = std::fs::read_to_string(d.join("report/heatmap.csv")).unwrap();
    assert_eq!(heat.lines().count(), 1 + 16 * 3);
    let rise = std::fs::read_to_string(d.join("report/rise_cells.csv")).unwrap();
    assert_eq!(rise.lines().next(), Some("n,r,noise_sd,estimator,run,rise"));
    assert!(d.join("report/report.json").exists());
    assert!(d.join("report/bands_mu_n100_r2_nu0.05.csv").exists());
}

#[test]
fn mc_without_output_dir_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"model":"brownian_motion","n_values":[10],"r_values":[2],"noise_sd_values":[0],"mc_runs":1,"seed":1}"#;
    std::fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    let out = run(&["mc", "--config", "cfg.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
