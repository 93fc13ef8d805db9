//! Euler–Maruyama path simulation and the sparse, noisy measurement scheme.
//!
//! Every random draw goes through an [`RngSpec`]: a `(seed, stream)` pair
//! backed by ChaCha20, so outputs are reproducible bit-for-bit and do not
//! depend on how work is scheduled across threads.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format;
use crate::model::{Alpha, Beta, Coefficient, InitialLaw, ModelSpec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid step size dt={0}: need 0 < dt <= 0.01 with 1/dt integral")]
    InvalidStep(f64),
    #[error("non-finite state at step {step} (t={time}); dt too coarse for the coefficients")]
    NonFiniteState { step: usize, time: f64 },
    #[error("need at least 2 observations per path, got r={0}")]
    InsufficientObservations(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("invariant violated: {what}{}", path.map(|p| format!(" (path {p})")).unwrap_or_default())]
    InvariantViolation { what: String, path: Option<usize> },
}

impl DataError {
    fn invariant(what: &str, path: Option<usize>) -> Self {
        DataError::InvariantViolation {
            what: what.to_string(),
            path,
        }
    }
}

/// Seed plus substream index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngSpec {
    pub fn new(seed: u64) -> Self {
        RngSpec { seed, stream: 0 }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        RngSpec { stream, ..self }
    }

    /// A fresh, statistically unrelated spec keyed by `tag`.
    pub fn derive(self, tag: u64) -> Self {
        let mixed = splitmix64(self.seed ^ splitmix64(self.stream.rotate_left(17) ^ splitmix64(tag)));
        RngSpec {
            seed: mixed,
            stream: 0,
        }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

const SAMPLING_TAG: u64 = 0x5A4D_504C_4553; // "SAMPLES"

/// A simulated path on the uniform grid `0, dt, ..., 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    dt: f64,
    values: Vec<f64>,
}

impl Path {
    pub fn new(values: Vec<f64>) -> Result<Self, SimError> {
        if values.len() < 2 {
            return Err(SimError::InvalidArgument("path needs at least two grid points".into()));
        }
        if let Some(step) = values.iter().position(|v| !v.is_finite()) {
            return Err(SimError::NonFiniteState {
                step,
                time: step as f64 / (values.len() - 1) as f64,
            });
        }
        Ok(Path {
            dt: 1.0 / (values.len() - 1) as f64,
            values,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.steps() as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|k| self.time(k))
    }

    /// Value at the grid point nearest to `t`.
    pub fn value_at(&self, t: f64) -> f64 {
        let k = (t * self.steps() as f64).round().clamp(0.0, self.steps() as f64) as usize;
        self.values[k]
    }
}

fn step_count(dt: f64) -> Result<usize, SimError> {
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(SimError::InvalidStep(dt));
    }
    let inv = 1.0 / dt;
    let n = inv.round();
    if (inv - n).abs() > 1e-6 * n {
        return Err(SimError::InvalidStep(dt));
    }
    Ok(n as usize)
}

/// Evaluates `c` at `t`, shifting one step away from a declared singularity.
fn eval_off_singularity(c: &Coefficient, t: f64, dt: f64) -> f64 {
    if c.is_singular_at(t) {
        let shifted = if t >= dt { t - dt } else { t + dt };
        c.eval_unchecked(shifted)
    } else {
        c.eval_unchecked(t)
    }
}

fn draw_initial(initial: InitialLaw, rng: &mut ChaCha20Rng) -> f64 {
    match initial {
        InitialLaw::Deterministic(x0) => x0,
        InitialLaw::Normal { mean, sd } => {
            let z: f64 = rng.sample(StandardNormal);
            mean + sd * z
        }
    }
}

/// Simulates one path by Euler–Maruyama with step `dt`.
pub fn em_simulate(spec: &ModelSpec, dt: f64, rng: RngSpec) -> Result<Path, SimError> {
    let steps = step_count(dt)?;
    let dt = 1.0 / steps as f64;
    let sqrt_dt = dt.sqrt();
    let exps = spec.exponents();
    let mut rng = rng.rng();

    let mut values = Vec::with_capacity(steps + 1);
    let mut x = draw_initial(spec.initial(), &mut rng);
    values.push(x);
    for k in 0..steps {
        let t = k as f64 / steps as f64;
        let mu = eval_off_singularity(spec.drift(), t, dt);
        let sigma = eval_off_singularity(spec.diffusion(), t, dt);
        let drift_factor = match exps.alpha {
            Alpha::Zero => 1.0,
            Alpha::One => x,
        };
        let diffusion_factor = match exps.beta {
            Beta::Zero => 1.0,
            Beta::Half => x.max(0.0).sqrt(),
            Beta::One => x,
        };
        let z: f64 = rng.sample(StandardNormal);
        x += mu * drift_factor * dt + sigma * diffusion_factor * sqrt_dt * z;
        if !x.is_finite() {
            return Err(SimError::NonFiniteState {
                step: k + 1,
                time: (k + 1) as f64 / steps as f64,
            });
        }
        values.push(x);
    }
    Ok(Path { dt, values })
}

/// Simulates `n` paths; path `i` uses substream `i` of `rng`.
pub fn simulate_paths(
    spec: &ModelSpec,
    n: usize,
    dt: f64,
    rng: RngSpec,
) -> Result<Vec<Path>, SimError> {
    (0..n)
        .into_par_iter()
        .map(|i| em_simulate(spec, dt, rng.with_stream(i as u64)))
        .collect()
}

/// One measurement `Y_ij` of path `i` at time `T_ij`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub path: usize,
    pub time: f64,
    pub value: f64,
}

/// Pooled sparse observations: exactly `r` sorted records for each of `n` paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    records: Vec<Observation>,
    n: usize,
    r: usize,
    noise_sd: Option<f64>,
    seed: Option<u64>,
}

impl ObservationSet {
    /// Validates and wraps records ordered by `(path, j)`.
    pub fn new(records: Vec<Observation>, noise_sd: Option<f64>) -> Result<Self, DataError> {
        if records.is_empty() {
            return Err(DataError::invariant("no records", None));
        }
        let mut n = 0usize;
        let mut r: Option<usize> = None;
        let mut start = 0usize;
        while start < records.len() {
            let path = records[start].path;
            if path != n {
                let what = if path < n {
                    "records not grouped by path"
                } else {
                    "path indices not contiguous from 0"
                };
                return Err(DataError::invariant(what, Some(path)));
            }
            let end = records[start..]
                .iter()
                .position(|o| o.path != path)
                .map_or(records.len(), |p| start + p);
            let group = &records[start..end];
            match r {
                None => r = Some(group.len()),
                Some(r) if r != group.len() => {
                    return Err(DataError::invariant("unequal observation counts", Some(path)))
                }
                _ => {}
            }
            for o in group {
                if !(o.time.is_finite() && (0.0..=1.0).contains(&o.time)) {
                    return Err(DataError::invariant("time outside [0, 1]", Some(path)));
                }
                if !o.value.is_finite() {
                    return Err(DataError::invariant("value not finite", Some(path)));
                }
            }
            if group.windows(2).any(|w| w[0].time >= w[1].time) {
                return Err(DataError::invariant("times not sorted", Some(path)));
            }
            n += 1;
            start = end;
        }
        let r = r.unwrap_or(0);
        if r < 2 {
            return Err(DataError::invariant("fewer than 2 observations per path", None));
        }
        if let Some(nu) = noise_sd {
            if !(nu.is_finite() && nu >= 0.0) {
                return Err(DataError::invariant("noise_sd negative", None));
            }
        }
        Ok(ObservationSet {
            records,
            n,
            r,
            noise_sd,
            seed: None,
        })
    }

    pub fn records(&self) -> &[Observation] {
        &self.records
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn noise_sd(&self) -> Option<f64> {
        self.noise_sd
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    /// Records grouped per path, in path order.
    pub fn per_path(&self) -> impl Iterator<Item = &[Observation]> {
        self.records.chunks(self.r)
    }

    /// Same design with every value mapped through `f`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let records = self
            .records
            .iter()
            .map(|o| Observation {
                value: f(o.value),
                ..*o
            })
            .collect();
        ObservationSet {
            records,
            ..self.clone()
        }
    }
}

/// Draws `r` sorted uniform times per path, reads the nearest grid value and
/// adds Gaussian noise of SD `noise_sd`.
pub fn sample_observations(
    paths: &[Path],
    r: usize,
    noise_sd: f64,
    rng: RngSpec,
) -> Result<ObservationSet, SimError> {
    if r < 2 {
        return Err(SimError::InsufficientObservations(r));
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(SimError::InvalidArgument(format!("noise_sd={noise_sd}")));
    }
    if paths.is_empty() {
        return Err(SimError::InvalidArgument("no paths to sample".into()));
    }
    let base = rng.derive(SAMPLING_TAG);
    let records: Vec<Observation> = paths
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, path)| {
            let mut rng = base.with_stream(i as u64).rng();
            let mut times: Vec<f64> = Vec::with_capacity(r);
            loop {
                times.clear();
                times.extend((0..r).map(|_| rng.random::<f64>()));
                times.sort_by(f64::total_cmp);
                if times.windows(2).all(|w| w[0] < w[1]) {
                    break;
                }
            }
            times
                .into_iter()
                .map(|t| {
                    let z: f64 = rng.sample(StandardNormal);
                    Observation {
                        path: i,
                        time: t,
                        value: path.value_at(t) + noise_sd * z,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let obs = ObservationSet::new(records, Some(noise_sd)).map_err(|e| SimError::InvalidArgument(e.to_string()))?;
    Ok(obs.with_seed(Some(rng.seed)))
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationMeta {
    n: usize,
    r: usize,
    noise_sd: Option<f64>,
    seed: Option<u64>,
}

/// `obs.csv` -> `obs.meta.json`.
pub fn sidecar_path(csv: &FsPath) -> PathBuf {
    csv.with_extension("meta.json")
}

const OBS_HEADER: [&str; 3] = ["path_index", "time", "value"];

/// Writes the observations CSV and its metadata sidecar.
pub fn write_observations(obs: &ObservationSet, path: &FsPath) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", OBS_HEADER.join(","))?;
    for o in &obs.records {
        writeln!(w, "{},{},{}", o.path, format::real(o.time), format::real(o.value))?;
    }
    w.flush()?;
    let meta = ObservationMeta {
        n: obs.n,
        r: obs.r,
        noise_sd: obs.noise_sd,
        seed: obs.seed,
    };
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    std::fs::write(sidecar_path(path), json + "\n")?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, line: u64) -> Result<T, DataError> {
    let raw = rec.get(idx).ok_or_else(|| DataError::Parse {
        line,
        message: format!("missing field {}", OBS_HEADER[idx]),
    })?;
    raw.trim().parse().map_err(|_| DataError::Parse {
        line,
        message: format!("cannot parse {} value `{raw}`", OBS_HEADER[idx]),
    })
}

/// Reads rows of `path_index,time,value` with header validation.
fn read_triples(path: &FsPath) -> Result<Vec<(usize, f64, f64)>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(csv_to_data)?;
    let mut records = rdr.records();
    let header = match records.next() {
        None => {
            return Err(DataError::Parse {
                line: 1,
                message: "empty file, expected header `path_index,time,value`".into(),
            })
        }
        Some(h) => h.map_err(csv_to_data)?,
    };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != OBS_HEADER {
        return Err(DataError::Parse {
            line: 1,
            message: format!("expected header `path_index,time,value`, found `{}`", names.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_to_data)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 {
            return Err(DataError::Parse {
                line,
                message: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        out.push((
            parse_field(&rec, 0, line)?,
            parse_field(&rec, 1, line)?,
            parse_field(&rec, 2, line)?,
        ));
    }
    if out.is_empty() {
        return Err(DataError::Parse {
            line: 2,
            message: "no records after header".into(),
        });
    }
    Ok(out)
}

fn csv_to_data(e: csv::Error) -> DataError {
    let line = e.position().map_or(1, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DataError::Io(io),
        other => DataError::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Reads an observations CSV (and its sidecar, when present) and validates it.
pub fn read_observations(path: &FsPath) -> Result<ObservationSet, DataError> {
    let rows = read_triples(path)?;
    let records = rows
        .into_iter()
        .map(|(path, time, value)| Observation { path, time, value })
        .collect();
    let meta: Option<ObservationMeta> = match std::fs::read_to_string(sidecar_path(path)) {
        Ok(s) => Some(serde_json::from_str(&s).map_err(|e| DataError::Parse {
            line: e.line() as u64,
            message: format!("metadata sidecar: {e}"),
        })?),
        Err(_) => None,
    };
    let obs = ObservationSet::new(records, meta.as_ref().and_then(|m| m.noise_sd))?;
    if let Some(m) = &meta {
        if m.n != obs.n || m.r != obs.r {
            return Err(DataError::invariant("sidecar n/r disagree with records", None));
        }
    }
    Ok(obs.with_seed(meta.and_then(|m| m.seed)))
}

/// Writes dense paths in long format `path_index,time,value`.
pub fn write_paths(paths: &[Path], path: &FsPath) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", OBS_HEADER.join(","))?;
    for (i, p) in paths.iter().enumerate() {
        for (t, v) in p.times().zip(p.values()) {
            writeln!(w, "{},{},{}", i, format::real(t), format::real(*v))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads paths written by [`write_paths`].
pub fn read_paths(path: &FsPath) -> Result<Vec<Path>, DataError> {
    let rows = read_triples(path)?;
    let mut paths: Vec<Vec<(f64, f64)>> = Vec::new();
    for (i, t, v) in rows {
        if i == paths.len() {
            paths.push(Vec::new());
        } else if i + 1 != paths.len() {
            return Err(DataError::invariant("paths not grouped by index", Some(i)));
        }
        paths[i].push((t, v));
    }
    let len = paths[0].len();
    paths
        .into_iter()
        .enumerate()
        .map(|(i, pts)| {
            if pts.len() != len {
                return Err(DataError::invariant("paths have unequal lengths", Some(i)));
            }
            let steps = (len - 1).max(1) as f64;
            if pts
                .iter()
                .enumerate()
                .any(|(k, (t, _))| (t - k as f64 / steps).abs() > 1e-9)
            {
                return Err(DataError::invariant("path times not on a uniform grid over [0, 1]", Some(i)));
            }
            Path::new(pts.into_iter().map(|(_, v)| v).collect())
                .map_err(|e| DataError::invariant(&e.to_string(), Some(i)))
        })
        .collect()
}
