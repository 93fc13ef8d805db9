//! Seeded Monte-Carlo checks of the smoothers and the full pipeline.
//! Sup-error thresholds are 3x the median over 20 seeded runs, frozen.

use sde_moments::estimators::{estimate_coefficients, InversionOptions};
use sde_moments::harness::{run_experiment, write_report, Estimator, ExperimentConfig, ModelChoice, SmootherOverrides, TruthCurves};
use sde_moments::model::{make_builtin_model, Coefficient, Exponents, InitialLaw, ModelSpec};
use sde_moments::oracle::closed_form_moments;
use sde_moments::simulate::{sample_observations, simulate_paths, ObservationSet, RngSpec};
use sde_moments::smooth::{smooth_mean, smooth_second_moment, SmootherConfig};

const BRIDGE_MEAN_SUP: f64 = 0.07;
const BM_SURFACE_SUP: f64 = 1.35;

fn constant_model(name: &str, mu: f64, sigma: f64, x0: f64) -> ModelSpec {
    ModelSpec::new(
        name,
        Exponents::OU,
        Coefficient::Constant { value: mu },
        Coefficient::Constant { value: sigma },
        InitialLaw::Deterministic(x0),
    )
}

fn observe(spec: &ModelSpec, n: usize, r: usize, nu: f64, seed: u64) -> ObservationSet {
    let rng = RngSpec::new(seed);
    let paths = simulate_paths(spec, n, 1e-3, rng).unwrap();
    sample_observations(&paths, r, nu, rng).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    0.5 * (v[(k - 1) / 2] + v[k / 2])
}

fn config(model: &str, n: Vec<usize>, r: Vec<usize>, nu: Vec<f64>, runs: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelChoice::Builtin(model.into()),
        n_values: n,
        r_values: r,
        noise_sd_values: nu,
        mc_runs: runs,
        dt: 1e-3,
        smoother: SmootherOverrides::default(),
        seed,
        clip: true,
        shifted_alpha0: false,
        output_dir: None,
        write_estimates: false,
    }
}

#[test]
fn bridge_mean_sup_error() {
    let spec = make_builtin_model("brownian_bridge").unwrap();
    let sups: Vec<f64> = (0..5)
        .map(|k| {
            let obs = observe(&spec, 1000, 10, 0.05, 1000 + k);
            let cfg = SmootherConfig::for_design(1000, 10);
            let (m, _) = smooth_mean(&obs, &cfg).unwrap();
            m.iter()
                .enumerate()
                .map(|(i, v)| (v - 2.0 * (1.0 - cfg.grid.point(i))).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    assert!(median(sups.clone()) < BRIDGE_MEAN_SUP, "{sups:?}");
}

#[test]
fn brownian_motion_surface_sup_error() {
    let spec = constant_model("bm_from_one", 0.0, 1.0, 1.0);
    let oracle = closed_form_moments(&spec).unwrap();
    let sups: Vec<f64> = (0..5)
        .map(|k| {
            let obs = observe(&spec, 2000, 5, 0.05, 2000 + k);
            let cfg = SmootherConfig::for_design(2000, 5);
            let (g, _, _) = smooth_second_moment(&obs, &cfg).unwrap();
            g.iter()
                .map(|((a, b), v)| (v - (1.0 + cfg.grid.point(a).min(cfg.grid.point(b)))).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    assert!(median(sups.clone()) < BM_SURFACE_SUP, "{sups:?}");
    assert_eq!(oracle.g(0.3, 0.7), 1.3);
}

#[test]
fn constant_paths_give_zero_coefficients() {
    let spec = constant_model("still", 0.0, 0.0, 5.0);
    let obs = observe(&spec, 50, 4, 0.0, 1);
    let cfg = SmootherConfig::for_design(50, 4);
    let raw = InversionOptions {
        clip: false,
        shifted_alpha0: false,
    };
    let est = estimate_coefficients(&obs, &cfg, Exponents::OU, raw).unwrap();
    assert!(est.moments.m_hat.iter().all(|v| (v - 5.0).abs() < 1e-10));
    assert!(est.moments.dm_hat.iter().all(|v| v.abs() < 1e-10));
    for v in est.mu_hat.iter().chain(&est.sigma2_d_raw).chain(&est.sigma2_t_raw) {
        assert!(v.abs() < 1e-6, "{v}");
    }
}

#[test]
fn sparsest_design_completes() {
    let spec = make_builtin_model("brownian_bridge").unwrap();
    let obs = observe(&spec, 100, 2, 0.05, 3);
    let cfg = SmootherConfig::for_design(100, 2);
    let est = estimate_coefficients(&obs, &cfg, spec.exponents(), InversionOptions::default()).unwrap();
    assert!(est.sigma2_t.iter().all(|v| v.is_finite() && *v >= 0.0));
}

#[test]
fn rescaling_observations() {
    // X -> cX keeps mu and scales sigma^2 by c^2 in the beta = 0 family.
    let spec = make_builtin_model("sin_ou").unwrap();
    let obs = observe(&spec, 300, 5, 0.05, 4);
    let cfg = SmootherConfig::for_design(300, 5);
    let raw = InversionOptions {
        clip: false,
        shifted_alpha0: false,
    };
    let base = estimate_coefficients(&obs, &cfg, spec.exponents(), raw).unwrap();
    let c = 3.0;
    let scaled = estimate_coefficients(&obs.map_values(|y| c * y), &cfg, spec.exponents(), raw).unwrap();
    // Corner windows are poorly conditioned, so allow rounding amplification.
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * (1.0 + b.abs());
    for k in 0..cfg.grid.len() {
        assert!(close(scaled.mu_hat[k], base.mu_hat[k]));
        assert!(close(scaled.sigma2_d_raw[k], c * c * base.sigma2_d_raw[k]));
        assert!(close(scaled.sigma2_t_raw[k], c * c * base.sigma2_t_raw[k]), "{k} {} {}", scaled.sigma2_t_raw[k], c * c * base.sigma2_t_raw[k]);
    }
}

#[test]
fn bridge_rise_decreases_with_n() {
    let cfg = config("brownian_bridge", vec![100, 1000], vec![10], vec![0.05], 20, 31);
    let report = run_experiment(&cfg).unwrap();
    let small = report.cell(100, 10, 0.05).unwrap();
    let large = report.cell(1000, 10, 0.05).unwrap();
    for e in [Estimator::Mu, Estimator::Sigma2T] {
        assert!(large.rise_values(e).iter().all(|v| v.is_finite()));
        assert!(large.median_rise(e) < small.median_rise(e), "{e:?}");
    }
}

#[test]
fn sin_ou_drift_band_coverage() {
    let spec = make_builtin_model("sin_ou").unwrap();
    let coverage: Vec<f64> = (0..5)
        .map(|meta| {
            let cfg = config("sin_ou", vec![500], vec![5], vec![0.0], 100, 400 + meta);
            let report = run_experiment(&cfg).unwrap();
            let cell = &report.cells[0];
            let bands = cell.bands(Estimator::Mu).unwrap();
            let truth = TruthCurves::new(&spec, report.grid);
            let interior = 1..report.grid.len() - 1;
            let inside = interior
                .clone()
                .filter(|&k| bands.lower[k] <= truth.mu[k] && truth.mu[k] <= bands.upper[k])
                .count();
            inside as f64 / interior.len() as f64
        })
        .collect();
    assert!(median(coverage.clone()) >= 0.8, "{coverage:?}");
}

#[test]
fn report_files_are_reproducible() {
    let mut cfg = config("brownian_bridge", vec![60], vec![3], vec![0.0, 0.05], 3, 5);
    cfg.write_estimates = true;
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        let report = run_experiment(&cfg).unwrap();
        write_report(&report, d.path(), true).unwrap();
    }
    let mut names: Vec<_> = std::fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() > 10);
    for name in names {
        let a = std::fs::read(dirs[0].path().join(&name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(&name)).unwrap();
        assert_eq!(a, b, "{name:?}");
    }
}
