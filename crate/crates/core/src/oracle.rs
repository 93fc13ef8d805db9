//! Ground truth used by tests and the experiment harness.
//!
//! * [`closed_form_moments`]: `m`, `D`, `G` and their derivatives for every
//!   member of the model family, from the closed-form solutions of the
//!   moment equations (quadrature where no antiderivative exists).
//! * [`brute_force_wls`]: an independent weighted least-squares solver
//!   (explicit design matrix, full-pivot elimination).
//! * [`empirical_moments`]: Monte-Carlo moments read from dense paths.

use thiserror::Error;

use crate::model::{Alpha, Beta, Coefficient, InitialLaw, ModelSpec};
use crate::simulate::Path;
use crate::smooth::{EvaluationGrid, MomentEstimates, TriangularMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("no closed-form moments wired in for {0}")]
    UnsupportedFamily(String),
    #[error("singular design")]
    SingularDesign,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Distance from a declared singular point at which the oracle evaluates;
/// values there stand in for the left-hand limit.
pub const SINGULAR_EPS: f64 = 1e-9;

const QUAD_REL_TOL: f64 = 1e-12;
const QUAD_MAX_DEPTH: u32 = 50;

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    // Coarse composite estimate to set a relative tolerance.
    let n = 16;
    let h = (b - a) / n as f64;
    let xs: Vec<f64> = (0..=n).map(|k| a + k as f64 * h).collect();
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let coarse: f64 = (0..n / 2)
        .map(|k| simpson(fs[2 * k], fs[2 * k + 1], fs[2 * k + 2], xs[2 * k], xs[2 * k + 2]))
        .sum();
    let scale = fs.iter().map(|v| v.abs()).fold(coarse.abs(), f64::max) * (b - a);
    let tol = QUAD_REL_TOL * scale.max(f64::MIN_POSITIVE);
    (0..n / 2)
        .map(|k| {
            let (l, r) = (xs[2 * k], xs[2 * k + 2]);
            let whole = simpson(fs[2 * k], fs[2 * k + 1], fs[2 * k + 2], l, r);
            adaptive_simpson_rec(f, l, r, fs[2 * k], fs[2 * k + 1], fs[2 * k + 2], whole, tol / 8.0, QUAD_MAX_DEPTH)
        })
        .sum()
}

/// `int_a^b f`, split geometrically towards each declared singular point so
/// integrands that blow up there are resolved.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, singular: &[f64]) -> f64 {
    if b <= a {
        return 0.0;
    }
    let mut cuts = vec![a, b];
    for &p in singular {
        if p >= b && p - b < 0.5 {
            let mut k = 1;
            loop {
                let c = p - 0.5f64.powi(k);
                if c > a && c < b {
                    cuts.push(c);
                }
                if p - c <= (p - b) || k > 60 {
                    break;
                }
                k += 1;
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2).map(|w| adaptive_simpson(f, w[0], w[1])).sum()
}

/// Closed-form first and second moments of a model.
#[derive(Debug, Clone)]
pub struct MomentOracle {
    spec: ModelSpec,
}

/// Builds the moment oracle for `spec`.
pub fn closed_form_moments(spec: &ModelSpec) -> Result<MomentOracle, OracleError> {
    let e = spec.exponents();
    if e.beta == Beta::Half && matches!(spec.initial(), InitialLaw::Normal { .. }) {
        return Err(OracleError::UnsupportedFamily(format!(
            "{e} with a normal initial law (state must stay nonnegative)"
        )));
    }
    Ok(MomentOracle { spec: spec.clone() })
}

impl MomentOracle {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn singular(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.spec.drift().singular_points().to_vec();
        s.extend_from_slice(self.spec.diffusion().singular_points());
        s
    }

    /// Moves `t` just inside `[0, 1]` when it sits on a declared singularity.
    fn regular(&self, t: f64) -> f64 {
        let d = self.spec.drift();
        let s = self.spec.diffusion();
        if d.is_singular_at(t) || s.is_singular_at(t) {
            if t >= 0.5 {
                t - SINGULAR_EPS
            } else {
                t + SINGULAR_EPS
            }
        } else {
            t
        }
    }

    fn mu(&self, t: f64) -> f64 {
        self.spec.drift().eval_unchecked(t)
    }

    fn sigma2(&self, t: f64) -> f64 {
        self.spec.diffusion().eval_unchecked(t).powi(2)
    }

    /// `int_0^t mu`.
    fn lambda(&self, t: f64) -> f64 {
        let drift = self.spec.drift();
        drift
            .integral_from_zero(t)
            .unwrap_or_else(|| integrate(&|u| drift.eval_unchecked(u), 0.0, t, drift.singular_points()))
    }

    /// `int_0^t sigma^2`.
    fn sigma2_integral(&self, t: f64) -> f64 {
        match self.spec.diffusion() {
            Coefficient::Constant { value } => value * value * t,
            d => integrate(&|u| d.eval_unchecked(u).powi(2), 0.0, t, d.singular_points()),
        }
    }

    fn m_reg(&self, t: f64) -> f64 {
        let m0 = self.spec.initial().mean();
        match self.spec.exponents().alpha {
            Alpha::One => m0 * self.lambda(t).exp(),
            Alpha::Zero => m0 + self.lambda(t),
        }
    }

    fn d_reg(&self, t: f64) -> f64 {
        let init = self.spec.initial();
        let (m0, d0) = (init.mean(), init.second_moment());
        let sing = self.singular();
        match (self.spec.exponents().alpha, self.spec.exponents().beta) {
            (Alpha::One, Beta::Zero) => {
                let lt = self.lambda(t);
                let f = |u: f64| (2.0 * (lt - self.lambda(u))).exp() * self.sigma2(u);
                (2.0 * lt).exp() * d0 + integrate(&f, 0.0, t, &sing)
            }
            (Alpha::One, Beta::Half) => {
                let lt = self.lambda(t);
                let f = |u: f64| (2.0 * lt - self.lambda(u)).exp() * m0 * self.sigma2(u);
                (2.0 * lt).exp() * d0 + integrate(&f, 0.0, t, &sing)
            }
            (Alpha::One, Beta::One) => d0 * (2.0 * self.lambda(t) + self.sigma2_integral(t)).exp(),
            (Alpha::Zero, Beta::Zero) => {
                let f = |u: f64| 2.0 * self.m_reg(u) * self.mu(u) + self.sigma2(u);
                d0 + integrate(&f, 0.0, t, &sing)
            }
            (Alpha::Zero, Beta::Half) => {
                let f = |u: f64| {
                    let m = self.m_reg(u);
                    2.0 * m * self.mu(u) + self.sigma2(u) * m
                };
                d0 + integrate(&f, 0.0, t, &sing)
            }
            (Alpha::Zero, Beta::One) => {
                let st = self.sigma2_integral(t);
                let f = |u: f64| (st - self.sigma2_integral(u)).exp() * 2.0 * self.m_reg(u) * self.mu(u);
                st.exp() * d0 + integrate(&f, 0.0, t, &sing)
            }
        }
    }

    fn x2beta(&self, m: f64, d: f64) -> f64 {
        match self.spec.exponents().beta {
            Beta::Zero => 1.0,
            Beta::Half => m,
            Beta::One => d,
        }
    }

    fn dd_from(&self, t: f64, m: f64, d: f64) -> f64 {
        let drift_part = match self.spec.exponents().alpha {
            Alpha::One => 2.0 * self.mu(t) * d,
            Alpha::Zero => 2.0 * m * self.mu(t),
        };
        drift_part + self.sigma2(t) * self.x2beta(m, d)
    }

    /// `m(t) = E X(t)`.
    pub fn m(&self, t: f64) -> f64 {
        self.m_reg(self.regular(t))
    }

    pub fn dm(&self, t: f64) -> f64 {
        let t = self.regular(t);
        match self.spec.exponents().alpha {
            Alpha::One => self.mu(t) * self.m_reg(t),
            Alpha::Zero => self.mu(t),
        }
    }

    /// `D(t) = E X(t)^2`.
    pub fn d(&self, t: f64) -> f64 {
        self.d_reg(self.regular(t))
    }

    pub fn dd(&self, t: f64) -> f64 {
        let t = self.regular(t);
        self.dd_from(t, self.m_reg(t), self.d_reg(t))
    }

    /// `E X(t)^(2 beta)`.
    pub fn x2beta_moment(&self, t: f64) -> f64 {
        let t = self.regular(t);
        self.x2beta(self.m_reg(t), self.d_reg(t))
    }

    /// Smooth extension `g(s, t)` of `G` off the triangle, for `s` near or
    /// beyond `t`; on `s <= t` it equals `G(s, t)`.
    pub fn g_extended(&self, s: f64, t: f64) -> f64 {
        let (s, t) = (self.regular(s), self.regular(t));
        let ds = self.d_reg(s);
        match self.spec.exponents().alpha {
            Alpha::One => ds * (self.lambda(t) - self.lambda(s)).exp(),
            Alpha::Zero => ds + self.m_reg(s) * (self.lambda(t) - self.lambda(s)),
        }
    }

    /// `G(s, t) = E X(s) X(t)`, any order of arguments.
    pub fn g(&self, s: f64, t: f64) -> f64 {
        self.g_extended(s.min(t), s.max(t))
    }

    /// `dG/ds` on the triangle `s <= t`.
    pub fn ds_g(&self, s: f64, t: f64) -> f64 {
        let (s, t) = (self.regular(s), self.regular(t));
        let (ms, dsv) = (self.m_reg(s), self.d_reg(s));
        let dd = self.dd_from(s, ms, dsv);
        let gap = self.lambda(t) - self.lambda(s);
        match self.spec.exponents().alpha {
            Alpha::One => (dd - self.mu(s) * dsv) * gap.exp(),
            Alpha::Zero => dd + self.mu(s) * gap - ms * self.mu(s),
        }
    }

    /// `dG/dt` on the triangle `s <= t`.
    pub fn dt_g(&self, s: f64, t: f64) -> f64 {
        let (sr, tr) = (self.regular(s), self.regular(t));
        match self.spec.exponents().alpha {
            Alpha::One => self.mu(tr) * self.g_extended(s, t),
            Alpha::Zero => self.m_reg(sr) * self.mu(tr),
        }
    }

    /// Exact moments sampled on a grid, in the smoother's output layout.
    pub fn on_grid(&self, grid: EvaluationGrid) -> MomentEstimates {
        let p = |k| grid.point(k);
        let n = grid.len();
        MomentEstimates {
            grid,
            m_hat: (0..n).map(|k| self.m(p(k))).collect(),
            dm_hat: (0..n).map(|k| self.dm(p(k))).collect(),
            g_hat: TriangularMatrix::from_fn(n, |a, b| self.g(p(a), p(b))),
            ds_g_hat: TriangularMatrix::from_fn(n, |a, b| self.ds_g(p(a), p(b))),
            dt_g_hat: TriangularMatrix::from_fn(n, |a, b| self.dt_g(p(a), p(b))),
            config: None,
        }
    }
}

/// Independent weighted polynomial least squares.
///
/// Rows are `(offsets, response, weight)`; all rows must share a dimension
/// of 1 or 2. The coefficient order is by total degree, then by decreasing
/// power of the first offset.
pub fn brute_force_wls(rows: &[(Vec<f64>, f64, f64)], degree: usize, ridge: f64) -> Result<Vec<f64>, OracleError> {
    let dim = rows.first().map_or(1, |r| r.0.len());
    if !(1..=2).contains(&dim) || rows.iter().any(|r| r.0.len() != dim) {
        return Err(OracleError::InvalidInput("offsets must all be 1- or 2-dimensional".into()));
    }
    let powers: Vec<(i32, i32)> = if dim == 1 {
        (0..=degree as i32).map(|p| (p, 0)).collect()
    } else {
        let mut v = Vec::new();
        for total in 0..=degree as i32 {
            for p in (0..=total).rev() {
                v.push((p, total - p));
            }
        }
        v
    };
    let cols = powers.len();
    // Explicit design matrix T (rows x cols) and weight vector.
    let design: Vec<Vec<f64>> = rows
        .iter()
        .map(|(x, _, _)| {
            powers
                .iter()
                .map(|&(p, q)| x[0].powi(p) * if dim == 2 { x[1].powi(q) } else { 1.0 })
                .collect()
        })
        .collect();
    let mut a = vec![vec![0.0; cols]; cols];
    let mut b = vec![0.0; cols];
    for i in 0..cols {
        for j in 0..cols {
            a[i][j] = rows
                .iter()
                .zip(&design)
                .map(|((_, _, w), row)| w * row[i] * row[j])
                .sum();
        }
        b[i] = rows.iter().zip(&design).map(|((_, y, w), row)| w * row[i] * y).sum();
        if i > 0 {
            a[i][i] += ridge;
        }
    }
    full_pivot_solve(a, b)
}

fn full_pivot_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, OracleError> {
    let n = b.len();
    let max_entry = a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max_entry <= 0.0 || !max_entry.is_finite() {
        return Err(OracleError::SingularDesign);
    }
    let mut col_perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (mut pr, mut pc, mut best) = (k, k, 0.0);
        for (i, row) in a.iter().enumerate().skip(k) {
            for (j, v) in row.iter().enumerate().skip(k) {
                if v.abs() > best {
                    best = v.abs();
                    pr = i;
                    pc = j;
                }
            }
        }
        if best <= 1e-12 * max_entry {
            return Err(OracleError::SingularDesign);
        }
        a.swap(k, pr);
        b.swap(k, pr);
        for row in a.iter_mut() {
            row.swap(k, pc);
        }
        col_perm.swap(k, pc);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            let pivot_row = a[k].clone();
            for (x, p) in a[i][k..].iter_mut().zip(&pivot_row[k..]) {
                *x -= f * p;
            }
            b[i] -= f * b[k];
        }
    }
    let mut y = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * y[j]).sum();
        y[k] = (b[k] - s) / a[k][k];
    }
    let mut x = vec![0.0; n];
    for (k, &c) in col_perm.iter().enumerate() {
        x[c] = y[k];
    }
    Ok(x)
}

/// Monte-Carlo moments on a grid, with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub grid: EvaluationGrid,
    pub paths: usize,
    pub m: Vec<f64>,
    pub m_se: Vec<f64>,
    pub g: TriangularMatrix,
    pub g_se: TriangularMatrix,
}

impl EmpiricalMoments {
    pub fn d(&self, a: usize) -> f64 {
        self.g.get(a, a).unwrap()
    }

    pub fn d_se(&self, a: usize) -> f64 {
        self.g_se.get(a, a).unwrap()
    }
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = values.clone().sum::<f64>() / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

/// Sample mean and second-moment surface of dense paths at grid times
/// (nearest path grid point). Meant for at least 1000 paths.
pub fn empirical_moments(paths: &[Path], grid: EvaluationGrid) -> Result<EmpiricalMoments, OracleError> {
    if paths.len() < 2 {
        return Err(OracleError::InvalidInput("need at least two paths".into()));
    }
    let n = paths.len();
    let at: Vec<Vec<f64>> = paths
        .iter()
        .map(|p| grid.points().iter().map(|&t| p.value_at(t)).collect())
        .collect();
    let len = grid.len();
    let (m, m_se): (Vec<f64>, Vec<f64>) = (0..len).map(|a| mean_and_se(at.iter().map(|v| v[a]), n)).unzip();
    let mut g = TriangularMatrix::zeros(len);
    let mut g_se = TriangularMatrix::zeros(len);
    for a in 0..len {
        for b in a..len {
            let (mean, se) = mean_and_se(at.iter().map(|v| v[a] * v[b]), n);
            g.set(a, b, mean).unwrap();
            g_se.set(a, b, se).unwrap();
        }
    }
    Ok(EmpiricalMoments {
        grid,
        paths: n,
        m,
        m_se,
        g,
        g_se,
    })
}
