//! Pooled local-polynomial smoothing of the mean curve and of the
//! second-moment surface on the closed lower triangle `{s <= t}`.
//!
//! Both smoothers reduce to one weighted least-squares fit per evaluation
//! point, solved in closed form through the normal equations
//! ([`wls_poly_solve`]). Offsets are expressed in bandwidth units so the
//! normal matrix stays well scaled; derivative estimates are rescaled by
//! `1/h` on the way out.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path as FsPath;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format;
use crate::simulate::ObservationSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmoothError {
    #[error("singular design{}", at.map(|(s, t)| format!(" at ({s}, {t})")).unwrap_or_default())]
    SingularDesign { at: Option<(f64, f64)> },
    #[error("entry ({a}, {b}) is outside the lower triangle")]
    OutsideTriangle { a: usize, b: usize },
    #[error("invalid smoother configuration: {0}")]
    InvalidConfig(String),
}

/// Smoothing kernel `W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `0.75 (1 - u^2)` on `|u| <= 1`.
    Epanechnikov,
    /// `exp(-|u|)` inside `|u| < 1`, `exp(-|u| / a_n)` outside.
    TruncatedExponential { a_n: f64 },
}

impl Kernel {
    pub fn weight(&self, u: f64) -> f64 {
        let au = u.abs();
        match *self {
            Kernel::Epanechnikov => {
                if au <= 1.0 {
                    0.75 * (1.0 - au * au)
                } else {
                    0.0
                }
            }
            Kernel::TruncatedExponential { a_n } => {
                if au < 1.0 {
                    (-au).exp()
                } else {
                    (-au / a_n).exp()
                }
            }
        }
    }

    /// Half-width outside which the weight is exactly zero, if any.
    pub fn support(&self) -> Option<f64> {
        match self {
            Kernel::Epanechnikov => Some(1.0),
            Kernel::TruncatedExponential { .. } => None,
        }
    }

    /// Default tail scale `a_n = h^(d+3)` for the truncated exponential kernel.
    pub fn truncated_exponential_default(h: f64, degree: usize) -> Self {
        Kernel::TruncatedExponential {
            a_n: h.powi(degree as i32 + 3),
        }
    }
}

/// Equally spaced evaluation points `0, 1/(k-1), ..., 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct EvaluationGrid {
    count: usize,
}

pub const DEFAULT_GRID_POINTS: usize = 26;
pub const MIN_GRID_POINTS: usize = 11;

impl Default for EvaluationGrid {
    fn default() -> Self {
        EvaluationGrid {
            count: DEFAULT_GRID_POINTS,
        }
    }
}

impl TryFrom<usize> for EvaluationGrid {
    type Error = SmoothError;

    fn try_from(count: usize) -> Result<Self, Self::Error> {
        EvaluationGrid::new(count)
    }
}

impl From<EvaluationGrid> for usize {
    fn from(g: EvaluationGrid) -> usize {
        g.count
    }
}

impl EvaluationGrid {
    pub fn new(count: usize) -> Result<Self, SmoothError> {
        if count < MIN_GRID_POINTS {
            return Err(SmoothError::InvalidConfig(format!(
                "grid needs at least {MIN_GRID_POINTS} points, got {count}"
            )));
        }
        Ok(EvaluationGrid { count })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.count - 1) as f64
    }

    pub fn point(&self, k: usize) -> f64 {
        k as f64 / (self.count - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.point(k)).collect()
    }

    /// Number of entries on the lower triangle, diagonal included.
    pub fn triangle_len(&self) -> usize {
        self.count * (self.count + 1) / 2
    }
}

/// Smoother settings shared by the mean and surface fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmootherConfig {
    pub degree: usize,
    pub h_m: f64,
    pub h_g: f64,
    pub kernel: Kernel,
    pub grid: EvaluationGrid,
    /// Relative ridge; the absolute penalty is `ridge * mean(response^2)`.
    pub ridge: f64,
    pub exclude_diagonal: bool,
}

pub const DEFAULT_RIDGE: f64 = 1e-10;

/// `(n r)^(-1/5)`.
pub fn default_bandwidth(n: usize, r: usize) -> f64 {
    ((n * r) as f64).powf(-0.2)
}

impl SmootherConfig {
    /// Local-linear, Epanechnikov, 26-point grid, `h = (n r)^(-1/5)`.
    pub fn for_design(n: usize, r: usize) -> Self {
        let h = default_bandwidth(n, r).min(1.0);
        SmootherConfig {
            degree: 1,
            h_m: h,
            h_g: h,
            kernel: Kernel::Epanechnikov,
            grid: EvaluationGrid::default(),
            ridge: DEFAULT_RIDGE,
            exclude_diagonal: true,
        }
    }

    pub fn validate(&self) -> Result<(), SmoothError> {
        let bad = |m: String| Err(SmoothError::InvalidConfig(m));
        if !(1..=2).contains(&self.degree) {
            return bad(format!("degree must be 1 or 2, got {}", self.degree));
        }
        for (name, h) in [("h_m", self.h_m), ("h_G", self.h_g)] {
            if !(h > 0.0 && h <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {h}"));
            }
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad(format!("ridge must be nonnegative, got {}", self.ridge));
        }
        if let Kernel::TruncatedExponential { a_n } = self.kernel {
            if a_n.is_nan() || a_n <= 0.0 {
                return bad(format!("a_n must be positive, got {a_n}"));
            }
        }
        Ok(())
    }
}

/// One row of a local fit: offsets from the evaluation point, response, weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignRow<const D: usize> {
    pub offsets: [f64; D],
    pub response: f64,
    pub weight: f64,
}

/// Exponent tuples of all monomials of total degree `<= degree`, ordered by
/// total degree and, within a degree, by decreasing power of the first
/// offset: `1, u, v, u^2, uv, v^2` in two dimensions.
pub fn monomial_exponents<const D: usize>(degree: usize) -> Vec<[usize; D]> {
    let mut out = Vec::new();
    for total in 0..=degree {
        push_with_total::<D>(total, 0, [0; D], &mut out);
    }
    out
}

fn push_with_total<const D: usize>(remaining: usize, dim: usize, cur: [usize; D], out: &mut Vec<[usize; D]>) {
    if dim == D - 1 {
        let mut c = cur;
        c[dim] = remaining;
        out.push(c);
        return;
    }
    for p in (0..=remaining).rev() {
        let mut c = cur;
        c[dim] = p;
        push_with_total::<D>(remaining - p, dim + 1, c, out);
    }
}

fn basis<const D: usize>(offsets: &[f64; D], exps: &[[usize; D]], out: &mut [f64]) {
    for (slot, e) in out.iter_mut().zip(exps) {
        *slot = offsets
            .iter()
            .zip(e)
            .map(|(x, &p)| x.powi(p as i32))
            .product();
    }
}

/// Relative pivot size below which the normal matrix counts as singular.
const PIVOT_TOL: f64 = 1e-12;

/// Weighted polynomial least squares by the normal equations.
///
/// Minimizes `sum w (y - poly(offsets))^2 + ridge * |coeffs[1..]|^2` over all
/// monomials of total degree `<= degree` (order of [`monomial_exponents`]).
pub fn wls_poly_solve<const D: usize>(
    rows: &[DesignRow<D>],
    degree: usize,
    ridge: f64,
) -> Result<Vec<f64>, SmoothError> {
    let exps = monomial_exponents::<D>(degree);
    let p = exps.len();
    let mut normal = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let mut phi = vec![0.0; p];
    let mut any_weight = false;
    for row in rows {
        if row.weight <= 0.0 {
            continue;
        }
        any_weight = true;
        basis(&row.offsets, &exps, &mut phi);
        for i in 0..p {
            let wi = row.weight * phi[i];
            rhs[i] += wi * row.response;
            for j in 0..=i {
                normal[i * p + j] += wi * phi[j];
            }
        }
    }
    if !any_weight {
        return Err(SmoothError::SingularDesign { at: None });
    }
    for i in 1..p {
        normal[i * p + i] += ridge;
    }
    cholesky_solve(&mut normal, &mut rhs, p)?;
    Ok(rhs)
}

/// In-place Cholesky solve of the symmetric system stored in the lower
/// triangle of `a`. The solution overwrites `b`.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], p: usize) -> Result<(), SmoothError> {
    let scale = (0..p).map(|i| a[i * p + i]).fold(0.0_f64, f64::max);
    if !scale.is_finite() || scale <= 0.0 {
        return Err(SmoothError::SingularDesign { at: None });
    }
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if d.is_nan() || d <= PIVOT_TOL * scale {
            return Err(SmoothError::SingularDesign { at: None });
        }
        let d = d.sqrt();
        a[j * p + j] = d;
        for i in j + 1..p {
            let mut v = a[i * p + j];
            for k in 0..j {
                v -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = v / d;
        }
    }
    for i in 0..p {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * p + k] * b[k];
        }
        b[i] = v / a[i * p + i];
    }
    for i in (0..p).rev() {
        let mut v = b[i];
        for k in i + 1..p {
            v -= a[k * p + i] * b[k];
        }
        b[i] = v / a[i * p + i];
    }
    Ok(())
}

/// Values on the lower-triangular index set `{(a, b): a <= b}` of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularMatrix {
    size: usize,
    data: Vec<f64>,
}

impl TriangularMatrix {
    pub fn zeros(size: usize) -> Self {
        TriangularMatrix {
            size,
            data: vec![0.0; size * (size + 1) / 2],
        }
    }

    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(size * (size + 1) / 2);
        for a in 0..size {
            for b in a..size {
                data.push(f(a, b));
            }
        }
        TriangularMatrix { size, data }
    }

    fn index(&self, a: usize, b: usize) -> usize {
        a * self.size - (a * a - a) / 2 + b - a
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, a: usize, b: usize) -> Result<f64, SmoothError> {
        if a > b || b >= self.size {
            return Err(SmoothError::OutsideTriangle { a, b });
        }
        Ok(self.data[self.index(a, b)])
    }

    pub fn set(&mut self, a: usize, b: usize, v: f64) -> Result<(), SmoothError> {
        if a > b || b >= self.size {
            return Err(SmoothError::OutsideTriangle { a, b });
        }
        let i = self.index(a, b);
        self.data[i] = v;
        Ok(())
    }

    /// Entries in `(a, b)` order, `a <= b`.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        let n = self.size;
        (0..n)
            .flat_map(move |a| (a..n).map(move |b| (a, b)))
            .zip(self.data.iter().copied())
    }
}

/// Smoothed mean, second moment and their derivatives on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimates {
    pub grid: EvaluationGrid,
    pub m_hat: Vec<f64>,
    pub dm_hat: Vec<f64>,
    pub g_hat: TriangularMatrix,
    pub ds_g_hat: TriangularMatrix,
    pub dt_g_hat: TriangularMatrix,
    pub config: Option<SmootherConfig>,
}

/// Read access used by the plug-in estimators.
///
/// Surface accessors take grid indices `a <= b`; implementations panic on
/// an index outside the lower triangle.
pub trait MomentSurface {
    fn grid(&self) -> EvaluationGrid;
    fn m(&self, a: usize) -> f64;
    fn dm(&self, a: usize) -> f64;
    fn g(&self, a: usize, b: usize) -> f64;
    fn ds_g(&self, a: usize, b: usize) -> f64;
    fn dt_g(&self, a: usize, b: usize) -> f64;

    /// `D(t) = G(t, t)`.
    fn d(&self, a: usize) -> f64 {
        self.g(a, a)
    }

    /// Derivative of `D` along the diagonal: `dsG(t,t) + dtG(t,t)`.
    fn dd(&self, a: usize) -> f64 {
        self.ds_g(a, a) + self.dt_g(a, a)
    }
}

impl MomentSurface for MomentEstimates {
    fn grid(&self) -> EvaluationGrid {
        self.grid
    }

    fn m(&self, a: usize) -> f64 {
        self.m_hat[a]
    }

    fn dm(&self, a: usize) -> f64 {
        self.dm_hat[a]
    }

    fn g(&self, a: usize, b: usize) -> f64 {
        self.g_hat.get(a, b).expect("lower-triangle access")
    }

    fn ds_g(&self, a: usize, b: usize) -> f64 {
        self.ds_g_hat.get(a, b).expect("lower-triangle access")
    }

    fn dt_g(&self, a: usize, b: usize) -> f64 {
        self.dt_g_hat.get(a, b).expect("lower-triangle access")
    }
}

impl MomentEstimates {
    /// Writes `t,m_hat,dm_hat` to `mean_path` and
    /// `s,t,G_hat,dsG_hat,dtG_hat` to `surface_path`.
    pub fn write_csv(&self, mean_path: &FsPath, surface_path: &FsPath) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(mean_path)?);
        writeln!(w, "t,m_hat,dm_hat")?;
        for a in 0..self.grid.len() {
            writeln!(
                w,
                "{},{},{}",
                format::real(self.grid.point(a)),
                format::real(self.m_hat[a]),
                format::real(self.dm_hat[a])
            )?;
        }
        w.flush()?;
        let mut w = BufWriter::new(File::create(surface_path)?);
        writeln!(w, "s,t,G_hat,dsG_hat,dtG_hat")?;
        for ((a, b), g) in self.g_hat.iter() {
            writeln!(
                w,
                "{},{},{},{},{}",
                format::real(self.grid.point(a)),
                format::real(self.grid.point(b)),
                format::real(g),
                format::real(self.ds_g_hat.get(a, b).unwrap()),
                format::real(self.dt_g_hat.get(a, b).unwrap())
            )?;
        }
        w.flush()
    }
}

fn mean_square(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v * v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Index range of `sorted` (by key) inside `[center - half, center + half]`.
fn window<T>(sorted: &[T], key: impl Fn(&T) -> f64, center: f64, half: Option<f64>) -> std::ops::Range<usize> {
    match half {
        None => 0..sorted.len(),
        Some(h) => {
            let lo = sorted.partition_point(|x| key(x) < center - h);
            let hi = sorted.partition_point(|x| key(x) <= center + h);
            lo..hi.max(lo)
        }
    }
}

/// Local-polynomial estimates of `m` and `m'` on the grid.
pub fn smooth_mean(obs: &ObservationSet, cfg: &SmootherConfig) -> Result<(Vec<f64>, Vec<f64>), SmoothError> {
    cfg.validate()?;
    let mut points: Vec<(f64, f64)> = obs.records().iter().map(|o| (o.time, o.value)).collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ridge = cfg.ridge * mean_square(points.iter().map(|p| p.1));
    let h = cfg.h_m;
    let support = cfg.kernel.support().map(|s| s * h);

    let fits: Vec<(f64, f64)> = (0..cfg.grid.len())
        .into_par_iter()
        .map(|k| {
            let t = cfg.grid.point(k);
            let rows: Vec<DesignRow<1>> = points[window(&points, |p| p.0, t, support)]
                .iter()
                .map(|&(time, y)| {
                    let u = (time - t) / h;
                    DesignRow {
                        offsets: [u],
                        response: y,
                        weight: cfg.kernel.weight(u) / h,
                    }
                })
                .collect();
            let beta = wls_poly_solve(&rows, cfg.degree, ridge)
                .map_err(|_| SmoothError::SingularDesign { at: Some((t, t)) })?;
            Ok((beta[0], beta[1] / h))
        })
        .collect::<Result<_, SmoothError>>()?;
    Ok(fits.into_iter().unzip())
}

/// A pooled cross-product `Y_ij Y_ik` located at `(s, t)` with `s <= t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRecord {
    pub s: f64,
    pub t: f64,
    pub product: f64,
}

/// All within-path products `Y_ij Y_ik`, `k < j`, at canonical coordinates
/// `(min, max)`; squared observations are added when `exclude_diagonal` is
/// false.
pub fn build_pair_cloud(obs: &ObservationSet, exclude_diagonal: bool) -> Vec<PairRecord> {
    let r = obs.r();
    let per_path = r * (r - 1) / 2 + if exclude_diagonal { 0 } else { r };
    let mut out = Vec::with_capacity(obs.n() * per_path);
    for group in obs.per_path() {
        for j in 0..group.len() {
            for k in 0..j {
                let (a, b) = (group[j], group[k]);
                out.push(PairRecord {
                    s: a.time.min(b.time),
                    t: a.time.max(b.time),
                    product: a.value * b.value,
                });
            }
            if !exclude_diagonal {
                let o = group[j];
                out.push(PairRecord {
                    s: o.time,
                    t: o.time,
                    product: o.value * o.value,
                });
            }
        }
    }
    out
}

/// Local-surface fit of `G`, `dG/ds`, `dG/dt` at every triangular grid point.
pub fn smooth_second_moment(
    obs: &ObservationSet,
    cfg: &SmootherConfig,
) -> Result<(TriangularMatrix, TriangularMatrix, TriangularMatrix), SmoothError> {
    cfg.validate()?;
    let cloud = build_pair_cloud(obs, cfg.exclude_diagonal);
    smooth_pair_cloud(&cloud, cfg)
}

/// Surface fit on an explicit pair cloud.
pub fn smooth_pair_cloud(
    cloud: &[PairRecord],
    cfg: &SmootherConfig,
) -> Result<(TriangularMatrix, TriangularMatrix, TriangularMatrix), SmoothError> {
    cfg.validate()?;
    let mut sorted = cloud.to_vec();
    sorted.sort_by(|a, b| a.s.total_cmp(&b.s).then(a.t.total_cmp(&b.t)));
    let ridge = cfg.ridge * mean_square(sorted.iter().map(|p| p.product));
    let h = cfg.h_g;
    let support = cfg.kernel.support().map(|s| s * h);
    let grid = cfg.grid;
    let cells: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|a| (a..grid.len()).map(move |b| (a, b)))
        .collect();

    let fits: Vec<[f64; 3]> = cells
        .par_iter()
        .map(|&(a, b)| {
            let (s, t) = (grid.point(a), grid.point(b));
            let rows: Vec<DesignRow<2>> = sorted[window(&sorted, |p| p.s, s, support)]
                .iter()
                .filter_map(|p| {
                    let (u, v) = ((p.s - s) / h, (p.t - t) / h);
                    let w = cfg.kernel.weight(u) * cfg.kernel.weight(v) / (h * h);
                    (w > 0.0).then_some(DesignRow {
                        offsets: [u, v],
                        response: p.product,
                        weight: w,
                    })
                })
                .collect();
            let gamma = wls_poly_solve(&rows, cfg.degree, ridge)
                .map_err(|_| SmoothError::SingularDesign { at: Some((s, t)) })?;
            Ok([gamma[0], gamma[1] / h, gamma[2] / h])
        })
        .collect::<Result<_, SmoothError>>()?;

    let n = grid.len();
    let mut g = TriangularMatrix::zeros(n);
    let mut ds = TriangularMatrix::zeros(n);
    let mut dt = TriangularMatrix::zeros(n);
    for (&(a, b), f) in cells.iter().zip(&fits) {
        g.set(a, b, f[0])?;
        ds.set(a, b, f[1])?;
        dt.set(a, b, f[2])?;
    }
    Ok((g, ds, dt))
}

/// Runs both smoothers and bundles the result.
pub fn smooth_moments(obs: &ObservationSet, cfg: &SmootherConfig) -> Result<MomentEstimates, SmoothError> {
    let (m_hat, dm_hat) = smooth_mean(obs, cfg)?;
    let (g_hat, ds_g_hat, dt_g_hat) = smooth_second_moment(obs, cfg)?;
    let all_finite = m_hat.iter().chain(&dm_hat).all(|v| v.is_finite())
        && [&g_hat, &ds_g_hat, &dt_g_hat]
            .iter()
            .all(|m| m.iter().all(|(_, v)| v.is_finite()));
    if !all_finite {
        return Err(SmoothError::SingularDesign { at: None });
    }
    Ok(MomentEstimates {
        grid: cfg.grid,
        m_hat,
        dm_hat,
        g_hat,
        ds_g_hat,
        dt_g_hat,
        config: Some(*cfg),
    })
}
