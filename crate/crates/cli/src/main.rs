use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sde_moments::estimators::{estimate_coefficients, InversionOptions};
use sde_moments::format::real;
use sde_moments::harness::{run_experiment, write_report, ExperimentConfig, KernelChoice, ModelChoice, SmootherOverrides};
use sde_moments::model::{validate_model, Exponents, ModelSpec};
use sde_moments::oracle::closed_form_moments;
use sde_moments::simulate::{read_observations, read_paths, sample_observations, simulate_paths, write_observations, write_paths, RngSpec};
use sde_moments::smooth::EvaluationGrid;
use sde_moments::Error;

#[derive(Parser, Debug)]
#[command(name = "sde-moments", version, about = "Drift and diffusion estimation from sparse noisy SDE paths")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Root seed for all random streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of evaluation grid points on [0, 1].
    #[arg(long, global = true)]
    grid_points: Option<usize>,
    /// Local polynomial degree (1 or 2).
    #[arg(long, global = true)]
    degree: Option<usize>,
    /// Bandwidth for both the mean and surface smoothers.
    #[arg(long, global = true)]
    bandwidth: Option<f64>,
    #[arg(long, global = true, value_enum)]
    kernel: Option<KernelArg>,
    /// Keep negative diffusion estimates.
    #[arg(long, global = true)]
    no_clip: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KernelArg {
    Epanechnikov,
    TruncatedExponential,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate Euler-Maruyama paths to a CSV file.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample sparse noisy observations from a paths CSV.
    Sample {
        #[arg(long)]
        paths: PathBuf,
        #[arg(long)]
        r: usize,
        #[arg(long, default_value_t = 0.0)]
        noise_sd: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate drift and diffusion from an observations CSV.
    Estimate {
        #[arg(long)]
        observations: PathBuf,
        /// Builtin model or model JSON whose exponents define the family.
        #[arg(long, conflicts_with_all = ["alpha", "beta"])]
        model: Option<String>,
        #[arg(long, requires = "beta")]
        alpha: Option<f64>,
        #[arg(long, requires = "alpha")]
        beta: Option<f64>,
        /// Smooth the pair cloud with the diagonal squares included.
        #[arg(long)]
        include_diagonal: bool,
        #[arg(long)]
        out: PathBuf,
        /// Also write the smoothed mean curve.
        #[arg(long)]
        mean_out: Option<PathBuf>,
        /// Also write the smoothed surface, requires --mean-out.
        #[arg(long, requires = "mean_out")]
        surface_out: Option<PathBuf>,
    },
    /// Run a Monte-Carlo experiment described by a JSON config.
    Mc {
        #[arg(long)]
        config: PathBuf,
        /// Report directory; overrides `output_dir` in the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        write_estimates: bool,
    },
    /// Write the true coefficients and closed-form moments on the grid.
    Oracle {
        #[command(flatten)]
        model: ModelArgs,
        /// Output CSV (default: standard output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Builtin model name or path to a model JSON file.
    #[arg(long)]
    model: String,
}

fn load_model(arg: &str) -> Result<ModelSpec, Error> {
    let path = Path::new(arg);
    let spec = if path.extension().is_some_and(|e| e == "json") || path.exists() {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| sde_moments::harness::HarnessError::InvalidConfig(format!("{arg}: {e}")))?
    } else {
        ModelChoice::Builtin(arg.to_string()).resolve()?
    };
    let problems = validate_model(&spec);
    if !problems.is_empty() {
        return Err(sde_moments::model::ModelError::Invalid(problems.join("; ")).into());
    }
    Ok(spec)
}

impl Common {
    fn overrides(&self, base: SmootherOverrides) -> SmootherOverrides {
        SmootherOverrides {
            degree: self.degree.or(base.degree),
            bandwidth: self.bandwidth.or(base.bandwidth),
            h_m: if self.bandwidth.is_some() { None } else { base.h_m },
            h_g: if self.bandwidth.is_some() { None } else { base.h_g },
            kernel: self
                .kernel
                .map(|k| match k {
                    KernelArg::Epanechnikov => KernelChoice::Epanechnikov,
                    KernelArg::TruncatedExponential => KernelChoice::TruncatedExponential,
                })
                .or(base.kernel),
            grid_points: self.grid_points.or(base.grid_points),
            ..base
        }
    }

    fn rng(&self) -> RngSpec {
        RngSpec::new(self.seed.unwrap_or(0))
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let common = &cli.common;
    match cli.command {
        Command::Simulate { model, n, dt, out } => {
            let spec = load_model(&model.model)?;
            let paths = simulate_paths(&spec, n, dt, common.rng())?;
            write_paths(&paths, &out)?;
        }
        Command::Sample { paths, r, noise_sd, out } => {
            let paths = read_paths(&paths)?;
            let obs = sample_observations(&paths, r, noise_sd, common.rng())?.with_seed(common.seed);
            write_observations(&obs, &out)?;
        }
        Command::Estimate {
            observations,
            model,
            alpha,
            beta,
            include_diagonal,
            out,
            mean_out,
            surface_out,
        } => {
            let obs = read_observations(&observations)?;
            let family = match (model, alpha, beta) {
                (Some(m), _, _) => load_model(&m)?.exponents(),
                (None, Some(a), Some(b)) => Exponents::new(a, b)?,
                _ => Exponents::OU,
            };
            let overrides = SmootherOverrides {
                exclude_diagonal: Some(!include_diagonal),
                ..common.overrides(SmootherOverrides::default())
            };
            let cfg = overrides.build(obs.n(), obs.r())?;
            let opts = InversionOptions {
                clip: !common.no_clip,
                ..InversionOptions::default()
            };
            let est = estimate_coefficients(&obs, &cfg, family, opts)?;
            est.write_csv(&out)?;
            if let Some(mean) = mean_out {
                let surface = surface_out.unwrap_or_else(|| mean.with_extension("surface.csv"));
                est.moments.write_csv(&mean, &surface)?;
            }
        }
        Command::Mc {
            config,
            output_dir,
            threads,
            write_estimates,
        } => {
            let mut cfg = ExperimentConfig::from_json_file(&config)?;
            cfg.smoother = common.overrides(cfg.smoother);
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            if common.no_clip {
                cfg.clip = false;
            }
            cfg.write_estimates |= write_estimates;
            let dir = output_dir.or_else(|| cfg.output_dir.clone()).ok_or_else(|| {
                sde_moments::harness::HarnessError::InvalidConfig("no output directory given".into())
            })?;
            let report = match threads {
                Some(t) => rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .map_err(|e| io::Error::other(e.to_string()))?
                    .install(|| run_experiment(&cfg))?,
                None => run_experiment(&cfg)?,
            };
            write_report(&report, &dir, cfg.write_estimates)?;
            let failures: usize = report.cells.iter().map(|c| c.failures()).sum();
            if failures > 0 {
                eprintln!("{failures} replicate(s) failed; see report.json");
            }
        }
        Command::Oracle { model, out } => {
            let spec = load_model(&model.model)?;
            let oracle = closed_form_moments(&spec)?;
            let grid = EvaluationGrid::new(common.grid_points.unwrap_or(sde_moments::smooth::DEFAULT_GRID_POINTS))?;
            let sink: Box<dyn Write> = match out {
                Some(p) => Box::new(File::create(p)?),
                None => Box::new(io::stdout().lock()),
            };
            let mut w = BufWriter::new(sink);
            writeln!(w, "t,mu,sigma2,m,dm,D")?;
            for t in grid.points() {
                // Coefficients are undefined at a declared singular point.
                let mu = spec.mu(t).unwrap_or(f64::NAN);
                let sigma2 = spec.sigma2(t).unwrap_or(f64::NAN);
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    real(t),
                    real(mu),
                    real(sigma2),
                    real(oracle.m(t)),
                    real(oracle.dm(t)),
                    real(oracle.d(t))
                )?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
