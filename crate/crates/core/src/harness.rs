//! Monte-Carlo experiment driver, error metrics and report files.
//!
//! An experiment sweeps every `(n, r, noise_sd)` cell for `mc_runs`
//! replicates. Replicate `k` of a cell owns the random stream derived from
//! `(seed, cell, k)`, so any replicate can be rerun alone and the report does
//! not depend on the size of the thread pool.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{estimate_coefficients, trapz, CoefficientEstimates, InversionOptions};
use crate::format;
use crate::model::{make_builtin_model, ModelSpec};
use crate::simulate::{sample_observations, simulate_paths, RngSpec};
use crate::smooth::{default_bandwidth, EvaluationGrid, Kernel, SmootherConfig, DEFAULT_RIDGE};
use crate::Error as CrateError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("grid mismatch: estimate has {estimate} points, truth has {truth}")]
    GridMismatch { estimate: usize, truth: usize },
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("need at least {needed} runs, got {got}")]
    TooFewRuns { needed: usize, got: usize },
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `samples` and
/// the Uniform[0, 1] CDF.
pub fn ks_uniform_statistic(samples: &[f64]) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = x.clamp(0.0, 1.0);
            (((i + 1) as f64 / n) - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Root integrated squared error `sqrt(int (estimate - truth)^2)` by the
/// trapezoidal rule on an equally spaced grid.
pub fn rise(estimate: &[f64], truth: &[f64], spacing: f64) -> Result<f64, HarnessError> {
    if estimate.len() != truth.len() || estimate.len() < 2 {
        return Err(HarnessError::GridMismatch {
            estimate: estimate.len(),
            truth: truth.len(),
        });
    }
    let sq: Vec<f64> = estimate.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).collect();
    Ok(trapz(&sq, spacing).max(0.0).sqrt())
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Pointwise 2.5% / 97.5% envelope of a set of curves.
#[derive(Debug, Clone, PartialEq)]
pub struct Bands {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn confidence_bands(runs: &[Vec<f64>]) -> Result<Bands, HarnessError> {
    if runs.len() < 2 {
        return Err(HarnessError::TooFewRuns {
            needed: 2,
            got: runs.len(),
        });
    }
    let len = runs[0].len();
    if let Some(bad) = runs.iter().find(|r| r.len() != len) {
        return Err(HarnessError::GridMismatch {
            estimate: bad.len(),
            truth: len,
        });
    }
    let (lower, upper) = (0..len)
        .map(|k| {
            let col = sorted(runs.iter().map(|r| r[k]));
            (quantile(&col, 0.025), quantile(&col, 0.975))
        })
        .unzip();
    Ok(Bands { lower, upper })
}

/// Model given either by builtin name or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    Builtin(String),
    Inline(ModelSpec),
}

impl ModelChoice {
    pub fn resolve(&self) -> Result<ModelSpec, CrateError> {
        match self {
            ModelChoice::Builtin(name) => Ok(make_builtin_model(name)?),
            ModelChoice::Inline(spec) => Ok(spec.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    Epanechnikov,
    TruncatedExponential,
}

/// Smoother settings applied to every cell; unset fields take the defaults
/// (local linear, Epanechnikov, `h = (n r)^(-1/5)`, 26 grid points).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmootherOverrides {
    pub degree: Option<usize>,
    /// Sets both `h_m` and `h_G`.
    pub bandwidth: Option<f64>,
    pub h_m: Option<f64>,
    pub h_g: Option<f64>,
    pub kernel: Option<KernelChoice>,
    pub a_n: Option<f64>,
    pub grid_points: Option<usize>,
    pub ridge: Option<f64>,
    pub exclude_diagonal: Option<bool>,
}

impl SmootherOverrides {
    pub fn build(&self, n: usize, r: usize) -> Result<SmootherConfig, CrateError> {
        let h = default_bandwidth(n, r).min(1.0);
        let degree = self.degree.unwrap_or(1);
        let h_g = self.h_g.or(self.bandwidth).unwrap_or(h);
        let kernel = match self.kernel.unwrap_or(KernelChoice::Epanechnikov) {
            KernelChoice::Epanechnikov => Kernel::Epanechnikov,
            KernelChoice::TruncatedExponential => match self.a_n {
                Some(a_n) => Kernel::TruncatedExponential { a_n },
                None => Kernel::truncated_exponential_default(h_g, degree),
            },
        };
        let cfg = SmootherConfig {
            degree,
            h_m: self.h_m.or(self.bandwidth).unwrap_or(h),
            h_g,
            kernel,
            grid: EvaluationGrid::new(self.grid_points.unwrap_or(crate::smooth::DEFAULT_GRID_POINTS))?,
            ridge: self.ridge.unwrap_or(DEFAULT_RIDGE),
            exclude_diagonal: self.exclude_diagonal.unwrap_or(true),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn default_dt() -> f64 {
    1e-3
}

fn default_true() -> bool {
    true
}

/// JSON experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelChoice,
    pub n_values: Vec<usize>,
    pub r_values: Vec<usize>,
    pub noise_sd_values: Vec<f64>,
    pub mc_runs: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub smoother: SmootherOverrides,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub clip: bool,
    #[serde(default)]
    pub shifted_alpha0: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub write_estimates: bool,
}

impl ExperimentConfig {
    pub fn from_json_file(path: &FsPath) -> Result<Self, CrateError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| HarnessError::InvalidConfig(e.to_string()).into())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(m.to_string()));
        if self.mc_runs < 1 {
            return bad("mc_runs must be >= 1");
        }
        if self.n_values.is_empty() || self.r_values.is_empty() || self.noise_sd_values.is_empty() {
            return bad("n_values, r_values and noise_sd_values must be nonempty");
        }
        if self.n_values.iter().any(|&n| n < 2) {
            return bad("every n must be >= 2");
        }
        if self.r_values.iter().any(|&r| r < 2) {
            return bad("every r must be >= 2");
        }
        if self.noise_sd_values.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return bad("every noise_sd must be finite and >= 0");
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &n in &self.n_values {
            for &r in &self.r_values {
                for &noise_sd in &self.noise_sd_values {
                    out.push(Cell { n, r, noise_sd });
                }
            }
        }
        out
    }

    pub fn inversion(&self) -> InversionOptions {
        InversionOptions {
            clip: self.clip,
            shifted_alpha0: self.shifted_alpha0,
        }
    }
}

/// One `(n, r, noise_sd)` design point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub n: usize,
    pub r: usize,
    pub noise_sd: f64,
}

impl Cell {
    pub fn label(&self) -> String {
        format!("n{}_r{}_nu{}", self.n, self.r, self.noise_sd)
    }

    fn key(&self) -> u64 {
        (self.n as u64).wrapping_mul(0x1000_0000_01B3)
            ^ (self.r as u64).rotate_left(32)
            ^ self.noise_sd.to_bits().rotate_left(7)
    }

    /// Random stream of replicate `run`.
    pub fn replicate_rng(&self, seed: u64, run: usize) -> RngSpec {
        RngSpec::new(seed).derive(self.key()).derive(run as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Estimator {
    #[serde(rename = "mu")]
    Mu,
    #[serde(rename = "sigma2_D")]
    Sigma2D,
    #[serde(rename = "sigma2_T")]
    Sigma2T,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Mu, Estimator::Sigma2D, Estimator::Sigma2T];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Mu => "mu",
            Estimator::Sigma2D => "sigma2_D",
            Estimator::Sigma2T => "sigma2_T",
        }
    }

    pub fn curve(self, est: &CoefficientEstimates) -> &[f64] {
        match self {
            Estimator::Mu => &est.mu_hat,
            Estimator::Sigma2D => &est.sigma2_d,
            Estimator::Sigma2T => &est.sigma2_t,
        }
    }
}

/// True coefficient curves on the grid. The drift curve stops before the
/// first grid point at which the drift is declared singular.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthCurves {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl TruthCurves {
    pub fn new(spec: &ModelSpec, grid: EvaluationGrid) -> Self {
        let curve = |f: &dyn Fn(f64) -> Result<f64, crate::model::ModelError>| -> Vec<f64> {
            grid.points().into_iter().map_while(|t| f(t).ok()).collect()
        };
        TruthCurves {
            mu: curve(&|t| spec.mu(t)),
            sigma2: curve(&|t| spec.sigma2(t)),
        }
    }

    pub fn for_estimator(&self, e: Estimator) -> &[f64] {
        match e {
            Estimator::Mu => &self.mu,
            Estimator::Sigma2D | Estimator::Sigma2T => &self.sigma2,
        }
    }

    /// RISE of `estimate` on the prefix where the truth is defined.
    pub fn rise(&self, e: Estimator, estimate: &[f64], grid: EvaluationGrid) -> Result<f64, HarnessError> {
        let truth = self.for_estimator(e);
        if estimate.len() < truth.len() {
            return Err(HarnessError::GridMismatch {
                estimate: estimate.len(),
                truth: truth.len(),
            });
        }
        rise(&estimate[..truth.len()], truth, grid.spacing())
    }
}

/// Successful replicate: RISE per estimator plus the estimated curves.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub rise: [f64; 3],
    pub estimates: CoefficientEstimates,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub run: usize,
    pub outcome: Result<ReplicateResult, String>,
}

/// Simulates, samples and estimates one replicate of `cell`.
pub fn run_replicate(
    spec: &ModelSpec,
    cfg: &ExperimentConfig,
    cell: Cell,
    run: usize,
) -> Result<ReplicateResult, CrateError> {
    let smoother = cfg.smoother.build(cell.n, cell.r)?;
    let rng = cell.replicate_rng(cfg.seed, run);
    let paths = simulate_paths(spec, cell.n, cfg.dt, rng)?;
    let obs = sample_observations(&paths, cell.r, cell.noise_sd, rng)?;
    let estimates = estimate_coefficients(&obs, &smoother, spec.exponents(), cfg.inversion())?;
    let truth = TruthCurves::new(spec, smoother.grid);
    let mut rise = [0.0; 3];
    for (slot, e) in rise.iter_mut().zip(Estimator::ALL) {
        *slot = truth.rise(e, e.curve(&estimates), smoother.grid)?;
    }
    Ok(ReplicateResult { rise, estimates })
}

/// Summary statistics of RISE values over successful replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiseSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
    pub min: f64,
    pub max: f64,
}

impl RiseSummary {
    fn from_values(values: &[f64]) -> Self {
        let s = sorted(values.iter().copied());
        let count = s.len();
        RiseSummary {
            count,
            mean: if count == 0 { f64::NAN } else { s.iter().sum::<f64>() / count as f64 },
            median: quantile(&s, 0.5),
            q025: quantile(&s, 0.025),
            q975: quantile(&s, 0.975),
            min: s.first().copied().unwrap_or(f64::NAN),
            max: s.last().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub cell: Cell,
    pub replicates: Vec<ReplicateRecord>,
}

impl CellReport {
    pub fn successes(&self) -> impl Iterator<Item = &ReplicateResult> {
        self.replicates.iter().filter_map(|r| r.outcome.as_ref().ok())
    }

    pub fn failures(&self) -> usize {
        self.replicates.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn rise_values(&self, e: Estimator) -> Vec<f64> {
        let i = Estimator::ALL.iter().position(|&x| x == e).unwrap();
        self.successes().map(|r| r.rise[i]).collect()
    }

    pub fn summary(&self, e: Estimator) -> RiseSummary {
        RiseSummary::from_values(&self.rise_values(e))
    }

    pub fn median_rise(&self, e: Estimator) -> f64 {
        self.summary(e).median
    }

    /// Pointwise bands of the estimated curves, when at least two
    /// replicates succeeded.
    pub fn bands(&self, e: Estimator) -> Option<Bands> {
        let curves: Vec<Vec<f64>> = self.successes().map(|r| e.curve(&r.estimates).to_vec()).collect();
        confidence_bands(&curves).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiseReport {
    pub model: String,
    pub seed: u64,
    pub mc_runs: usize,
    pub grid: EvaluationGrid,
    pub cells: Vec<CellReport>,
}

impl RiseReport {
    pub fn cell(&self, n: usize, r: usize, noise_sd: f64) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.cell.n == n && c.cell.r == r && c.cell.noise_sd == noise_sd)
    }
}

/// Runs every cell and replicate of the experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RiseReport, CrateError> {
    cfg.validate()?;
    let spec = cfg.model.resolve()?;
    let grid = cfg.smoother.build(cfg.n_values[0], cfg.r_values[0])?.grid;
    let cells = cfg.cells();
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.mc_runs).map(move |k| (c, k)))
        .collect();
    let records: Vec<ReplicateRecord> = tasks
        .par_iter()
        .map(|&(c, run)| ReplicateRecord {
            run,
            outcome: run_replicate(&spec, cfg, cells[c], run).map_err(|e| e.to_string()),
        })
        .collect();
    let mut chunks = records.chunks(cfg.mc_runs);
    let cells = cells
        .into_iter()
        .map(|cell| CellReport {
            cell,
            replicates: chunks.next().expect("one chunk per cell").to_vec(),
        })
        .collect();
    Ok(RiseReport {
        model: spec.name().to_string(),
        seed: cfg.seed,
        mc_runs: cfg.mc_runs,
        grid,
        cells,
    })
}

#[derive(Serialize)]
struct CellSummaryJson<'a> {
    n: usize,
    r: usize,
    noise_sd: f64,
    runs: usize,
    failures: usize,
    failure_messages: Vec<(usize, &'a str)>,
    mu: RiseSummary,
    #[serde(rename = "sigma2_D")]
    sigma2_d: RiseSummary,
    #[serde(rename = "sigma2_T")]
    sigma2_t: RiseSummary,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    model: &'a str,
    seed: u64,
    mc_runs: usize,
    grid_points: usize,
    cells: Vec<CellSummaryJson<'a>>,
}

/// Writes `report.json`, `rise_cells.csv`, `heatmap.csv`, one band file per
/// estimator and cell and, when requested, every replicate's estimates.
pub fn write_report(report: &RiseReport, dir: &FsPath, write_estimates: bool) -> Result<(), CrateError> {
    std::fs::create_dir_all(dir)?;

    let json = ReportJson {
        model: &report.model,
        seed: report.seed,
        mc_runs: report.mc_runs,
        grid_points: report.grid.len(),
        cells: report
            .cells
            .iter()
            .map(|c| CellSummaryJson {
                n: c.cell.n,
                r: c.cell.r,
                noise_sd: c.cell.noise_sd,
                runs: c.replicates.len(),
                failures: c.failures(),
                failure_messages: c
                    .replicates
                    .iter()
                    .filter_map(|r| r.outcome.as_ref().err().map(|m| (r.run, m.as_str())))
                    .collect(),
                mu: c.summary(Estimator::Mu),
                sigma2_d: c.summary(Estimator::Sigma2D),
                sigma2_t: c.summary(Estimator::Sigma2T),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&json).expect("report serializes");
    std::fs::write(dir.join("report.json"), text + "\n")?;

    let mut order: Vec<&CellReport> = report.cells.iter().collect();
    order.sort_by(|a, b| {
        (a.cell.n, a.cell.r)
            .cmp(&(b.cell.n, b.cell.r))
            .then(a.cell.noise_sd.total_cmp(&b.cell.noise_sd))
    });

    let mut w = BufWriter::new(File::create(dir.join("rise_cells.csv"))?);
    writeln!(w, "n,r,noise_sd,estimator,run,rise")?;
    for c in &order {
        for (i, e) in Estimator::ALL.iter().enumerate() {
            for rec in &c.replicates {
                if let Ok(res) = &rec.outcome {
                    writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        c.cell.n,
                        c.cell.r,
                        format::real(c.cell.noise_sd),
                        e.name(),
                        rec.run,
                        format::real(res.rise[i])
                    )?;
                }
            }
        }
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join("heatmap.csv"))?);
    writeln!(w, "n,r,noise_sd,estimator,mean_rise,median_rise,successes,failures")?;
    for c in &order {
        for e in Estimator::ALL {
            let s = c.summary(e);
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                c.cell.n,
                c.cell.r,
                format::real(c.cell.noise_sd),
                e.name(),
                format::real(s.mean),
                format::real(s.median),
                s.count,
                c.failures()
            )?;
        }
    }
    w.flush()?;

    for c in &order {
        for e in Estimator::ALL {
            let Some(b) = c.bands(e) else { continue };
            let mut w = BufWriter::new(File::create(dir.join(format!("bands_{}_{}.csv", e.name(), c.cell.label())))?);
            writeln!(w, "t,lower,upper")?;
            for k in 0..b.lower.len() {
                writeln!(
                    w,
                    "{},{},{}",
                    format::real(report.grid.point(k)),
                    format::real(b.lower[k]),
                    format::real(b.upper[k])
                )?;
            }
            w.flush()?;
        }
        if write_estimates {
            for rec in &c.replicates {
                if let Ok(res) = &rec.outcome {
                    res.estimates
                        .write_csv(&dir.join(format!("estimates_{}_{}.csv", c.cell.label(), rec.run)))?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(model: &str, n: Vec<usize>, r: Vec<usize>, nu: Vec<f64>, runs: usize) -> ExperimentConfig {
        ExperimentConfig {
            model: ModelChoice::Builtin(model.into()),
            n_values: n,
            r_values: r,
            noise_sd_values: nu,
            mc_runs: runs,
            dt: 1e-3,
            smoother: SmootherOverrides::default(),
            seed: 17,
            clip: true,
            shifted_alpha0: false,
            output_dir: None,
            write_estimates: false,
        }
    }

    #[test]
    fn rise_examples() {
        let g = EvaluationGrid::default();
        let h = g.spacing();
        let t = g.points();
        assert_eq!(rise(&t, &t, h).unwrap(), 0.0);
        assert!((rise(&[1.0; 26], &[0.0; 26], h).unwrap() - 1.0).abs() < 1e-15);
        assert!((rise(&t, &[0.0; 26], h).unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 5e-4);
        assert!(matches!(rise(&t[..5], &t, h), Err(HarnessError::GridMismatch { .. })));
    }

    #[test]
    fn rise_triangle_inequality() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let h = 0.04;
        for _ in 0..100 {
            let v: Vec<Vec<f64>> = (0..3).map(|_| (0..26).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let ac = rise(&v[0], &v[2], h).unwrap();
            let ab = rise(&v[0], &v[1], h).unwrap();
            let bc = rise(&v[1], &v[2], h).unwrap();
            assert!(ac >= 0.0 && ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn bands_examples() {
        let c = vec![0.5, 1.5, 2.5];
        let b = confidence_bands(&[c.clone(), c.clone(), c.clone()]).unwrap();
        assert_eq!(b.lower, c);
        assert_eq!(b.upper, c);
        let mut runs = vec![vec![0.0; 4]; 50];
        runs.extend(vec![vec![1.0; 4]; 50]);
        let b = confidence_bands(&runs).unwrap();
        assert!(b.lower.iter().all(|&v| v == 0.0));
        assert!(b.upper.iter().all(|&v| v == 1.0));
        assert!(matches!(confidence_bands(&runs[..1]), Err(HarnessError::TooFewRuns { .. })));
    }

    #[test]
    fn quantile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile(&s, 0.5), 1.5);
        assert_eq!(quantile(&s, 0.0), 0.0);
        assert_eq!(quantile(&s, 1.0), 3.0);
    }

    #[test]
    fn ks_statistic_of_perfect_grid() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_uniform_statistic(&xs) - 0.005).abs() < 1e-12);
    }

    #[test]
    fn bridge_truth_truncated() {
        let spec = make_builtin_model("brownian_bridge").unwrap();
        let t = TruthCurves::new(&spec, EvaluationGrid::default());
        assert_eq!(t.mu.len(), 25);
        assert_eq!(t.sigma2.len(), 26);
    }

    #[test]
    fn minimal_run_completes() {
        let c = cfg("brownian_motion", vec![2], vec![2], vec![0.0], 1);
        let rep = run_experiment(&c).unwrap();
        assert_eq!(rep.cells.len(), 1);
        assert_eq!(rep.cells[0].replicates.len(), 1);
        let res = rep.cells[0].replicates[0].outcome.as_ref().expect("minimal run succeeds");
        assert!(res.rise.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn replicate_isolation() {
        let c = cfg("sin_ou", vec![100], vec![3], vec![0.05], 3);
        let rep = run_experiment(&c).unwrap();
        let spec = c.model.resolve().unwrap();
        let cell = rep.cells[0].cell;
        let alone = run_replicate(&spec, &c, cell, 2).unwrap();
        assert_eq!(rep.cells[0].replicates[2].outcome.as_ref().unwrap().rise, alone.rise);
    }

    #[test]
    fn config_validation_and_json() {
        let mut c = cfg("brownian_bridge", vec![100], vec![1], vec![0.05], 1);
        assert!(c.validate().is_err());
        c.r_values = vec![2];
        c.mc_runs = 0;
        assert!(c.validate().is_err());
        let text = r#"{"model":"brownian_bridge","n_values":[100,1000],"r_values":[5],
            "noise_sd_values":[0.05],"mc_runs":20,"seed":1,"smoother":{"degree":1}}"#;
        let parsed: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(parsed.dt, 1e-3);
        assert!(parsed.clip);
        assert_eq!(parsed.cells().len(), 2);
        let bad = text.replace("\"degree\"", "\"degre\"");
        assert!(serde_json::from_str::<ExperimentConfig>(&bad).is_err());
    }
}
