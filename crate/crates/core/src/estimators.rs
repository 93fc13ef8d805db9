//! Plug-in inversion of the moment equations.
//!
//! Given (smoothed or exact) `m, m', G, dG/ds, dG/dt` on a grid, recovers the
//! drift `mu` and two diffusion estimates: `sigma2_D` from the ODE along the
//! diagonal `D(t) = G(t, t)`, and `sigma2_T` from the triangular relation
//! averaged over `t in [s, 1]`.
//!
//! For every family the diffusion enters through `sigma^2(t) E[X^(2 beta)(t)]`
//! with `E[X^(2 beta)] = 1, m, D` for `beta = 0, 1/2, 1`; that multiplier is
//! divided out with a zero guard.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path as FsPath;

use crate::format;
use crate::model::{Alpha, Beta, Exponents};
use crate::simulate::ObservationSet;
use crate::smooth::{smooth_moments, EvaluationGrid, MomentEstimates, MomentSurface, SmoothError, SmootherConfig};

/// Composite trapezoidal rule over equally spaced values.
pub fn trapz(values: &[f64], spacing: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    spacing * (inner + 0.5 * (values[0] + values[values.len() - 1]))
}

/// Running trapezoidal integrals; the first entry is 0.
pub fn cumtrapz(values: &[f64], spacing: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * spacing * (w[0] + w[1]);
        out.push(acc);
    }
    out.truncate(values.len());
    out
}

/// `num / den`, or exactly 0 when `den == 0`.
pub fn guarded_ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InversionOptions {
    /// Floor negative diffusion estimates at zero.
    pub clip: bool,
    /// Use the shifted `alpha = 0` diagonal relation
    /// `D' = 2 (m + m(0)) m' + sigma^2 E[X^(2 beta)]` instead of `D' = 2 m m' + ...`.
    pub shifted_alpha0: bool,
}

impl Default for InversionOptions {
    fn default() -> Self {
        InversionOptions {
            clip: true,
            shifted_alpha0: false,
        }
    }
}

/// Drift estimate: `m'/m` (guarded) for `alpha = 1`, `m'` for `alpha = 0`.
pub fn estimate_mu(m_hat: &[f64], dm_hat: &[f64], family: Exponents) -> Vec<f64> {
    m_hat
        .iter()
        .zip(dm_hat)
        .map(|(&m, &dm)| match family.alpha {
            Alpha::One => guarded_ratio(dm, m),
            Alpha::Zero => dm,
        })
        .collect()
}

/// `E[X^(2 beta)]` at grid index `a`.
fn diffusion_multiplier<M: MomentSurface + ?Sized>(moments: &M, a: usize, beta: Beta) -> f64 {
    match beta {
        Beta::Zero => 1.0,
        Beta::Half => moments.m(a),
        Beta::One => moments.d(a),
    }
}

/// Raw and (optionally) clipped diffusion estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Sigma2Estimate {
    pub raw: Vec<f64>,
    pub value: Vec<f64>,
}

impl Sigma2Estimate {
    fn from_raw(raw: Vec<f64>, clip: bool) -> Self {
        let value = if clip {
            raw.iter().map(|v| v.max(0.0)).collect()
        } else {
            raw.clone()
        };
        Sigma2Estimate { raw, value }
    }
}

/// Diffusion from the diagonal ODE, with `D' = dsG(t,t) + dtG(t,t)`.
pub fn estimate_sigma2_diagonal<M: MomentSurface + ?Sized>(
    moments: &M,
    mu_hat: &[f64],
    family: Exponents,
    opts: InversionOptions,
) -> Sigma2Estimate {
    let len = moments.grid().len();
    let m0 = moments.m(0);
    let raw = (0..len)
        .map(|a| {
            let residual = match family.alpha {
                Alpha::One => moments.dd(a) - 2.0 * mu_hat[a] * moments.d(a),
                Alpha::Zero => {
                    let level = if opts.shifted_alpha0 {
                        moments.m(a) + m0
                    } else {
                        moments.m(a)
                    };
                    moments.dd(a) - 2.0 * level * moments.dm(a)
                }
            };
            guarded_ratio(residual, diffusion_multiplier(moments, a, family.beta))
        })
        .collect();
    Sigma2Estimate::from_raw(raw, opts.clip)
}

/// Diffusion from the triangular relation, averaged uniformly over
/// `t in [s, 1]`. At `s = 1` the average is replaced by its limit `R(1, 1)`.
///
/// Only entries `(a, b)` with `a` the current row and `b >= a` are read.
pub fn estimate_sigma2_triangular<M: MomentSurface + ?Sized>(
    moments: &M,
    mu_hat: &[f64],
    family: Exponents,
    opts: InversionOptions,
) -> Sigma2Estimate {
    let grid = moments.grid();
    let len = grid.len();
    let h = grid.spacing();
    let mut raw = Vec::with_capacity(len);
    let mut integrand = Vec::with_capacity(len);
    let mut residual = Vec::with_capacity(len);
    for a in 0..len {
        integrand.clear();
        residual.clear();
        match family.alpha {
            Alpha::One => {
                integrand.extend((a..len).map(|c| mu_hat[c] * moments.ds_g(a, c)));
                let inner = cumtrapz(&integrand, h);
                let base = mu_hat[a] * moments.g(a, a);
                residual.extend((a..len).map(|b| moments.ds_g(a, b) - base - inner[b - a]));
            }
            Alpha::Zero => {
                let inner = cumtrapz(&mu_hat[a..], h);
                let base = moments.m(a) * mu_hat[a];
                let slope = moments.dm(a);
                residual.extend((a..len).map(|b| moments.ds_g(a, b) - base - slope * inner[b - a]));
            }
        }
        let average = if a + 1 == len {
            residual[0]
        } else {
            trapz(&residual, h) / (1.0 - grid.point(a))
        };
        raw.push(guarded_ratio(average, diffusion_multiplier(moments, a, family.beta)));
    }
    Sigma2Estimate::from_raw(raw, opts.clip)
}

/// Drift and both diffusion estimates on the evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientEstimates {
    pub grid: EvaluationGrid,
    pub family: Exponents,
    pub mu_hat: Vec<f64>,
    pub sigma2_d_raw: Vec<f64>,
    pub sigma2_d: Vec<f64>,
    pub sigma2_t_raw: Vec<f64>,
    pub sigma2_t: Vec<f64>,
    pub clip_negative: bool,
    pub moments: MomentEstimates,
}

impl CoefficientEstimates {
    /// Inverts already-computed moments.
    pub fn from_moments(moments: MomentEstimates, family: Exponents, opts: InversionOptions) -> Self {
        let mu_hat = estimate_mu(&moments.m_hat, &moments.dm_hat, family);
        let d = estimate_sigma2_diagonal(&moments, &mu_hat, family, opts);
        let t = estimate_sigma2_triangular(&moments, &mu_hat, family, opts);
        CoefficientEstimates {
            grid: moments.grid,
            family,
            mu_hat,
            sigma2_d_raw: d.raw,
            sigma2_d: d.value,
            sigma2_t_raw: t.raw,
            sigma2_t: t.value,
            clip_negative: opts.clip,
            moments,
        }
    }

    /// `t,mu_hat,sigma2_D_raw,sigma2_D,sigma2_T_raw,sigma2_T`
    pub fn write_csv(&self, path: &FsPath) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "t,mu_hat,sigma2_D_raw,sigma2_D,sigma2_T_raw,sigma2_T")?;
        for a in 0..self.grid.len() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                format::real(self.grid.point(a)),
                format::real(self.mu_hat[a]),
                format::real(self.sigma2_d_raw[a]),
                format::real(self.sigma2_d[a]),
                format::real(self.sigma2_t_raw[a]),
                format::real(self.sigma2_t[a]),
            )?;
        }
        w.flush()
    }
}

/// Full pipeline: smooth, then invert for the given family.
pub fn estimate_coefficients(
    obs: &ObservationSet,
    cfg: &SmootherConfig,
    family: Exponents,
    opts: InversionOptions,
) -> Result<CoefficientEstimates, SmoothError> {
    let moments = smooth_moments(obs, cfg)?;
    Ok(CoefficientEstimates::from_moments(moments, family, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smooth::TriangularMatrix;
    use std::cell::RefCell;

    fn grid() -> EvaluationGrid {
        EvaluationGrid::default()
    }

    fn exact(
        m: impl Fn(f64) -> f64,
        dm: impl Fn(f64) -> f64,
        g: impl Fn(f64, f64) -> f64,
        ds: impl Fn(f64, f64) -> f64,
        dt: impl Fn(f64, f64) -> f64,
    ) -> MomentEstimates {
        let gr = grid();
        let p = |k| gr.point(k);
        MomentEstimates {
            grid: gr,
            m_hat: (0..gr.len()).map(|k| m(p(k))).collect(),
            dm_hat: (0..gr.len()).map(|k| dm(p(k))).collect(),
            g_hat: TriangularMatrix::from_fn(gr.len(), |a, b| g(p(a), p(b))),
            ds_g_hat: TriangularMatrix::from_fn(gr.len(), |a, b| ds(p(a), p(b))),
            dt_g_hat: TriangularMatrix::from_fn(gr.len(), |a, b| dt(p(a), p(b))),
            config: None,
        }
    }

    const RAW: InversionOptions = InversionOptions {
        clip: false,
        shifted_alpha0: false,
    };

    #[test]
    fn quadrature_examples() {
        let h = 0.04;
        let ones = vec![1.0; 26];
        assert_eq!(trapz(&ones, h), 1.0);
        let lin: Vec<f64> = (0..26).map(|k| k as f64 * h).collect();
        assert!((trapz(&lin, h) - 0.5).abs() < 1e-15);
        let sq: Vec<f64> = lin.iter().map(|t| t * t).collect();
        assert!((trapz(&sq, h) - 1.0 / 3.0).abs() < 3e-4);
        let c = cumtrapz(&lin, h);
        assert_eq!(c.len(), 26);
        assert_eq!(c[0], 0.0);
        assert!((c[25] - 0.5).abs() < 1e-15);
        for (k, v) in c.iter().enumerate() {
            let t = k as f64 * h;
            assert!((v - t * t / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn mu_examples() {
        let g = grid();
        let m: Vec<f64> = g.points().iter().map(|t| (2.0 * t).exp()).collect();
        let dm: Vec<f64> = m.iter().map(|v| 2.0 * v).collect();
        let mu = estimate_mu(&m, &dm, Exponents::OU);
        assert!(mu.iter().all(|v| (v - 2.0).abs() < 1e-14));

        let mut m2 = m.clone();
        m2[7] = 0.0;
        let mu2 = estimate_mu(&m2, &dm, Exponents::OU);
        assert_eq!(mu2[7], 0.0);
        for k in (0..26).filter(|&k| k != 7) {
            assert_eq!(mu2[k], mu[k]);
        }

        let mb: Vec<f64> = g.points().iter().map(|t| 2.0 * (1.0 - t)).collect();
        let dmb = vec![-2.0; 26];
        let mub = estimate_mu(&mb, &dmb, Exponents::OU);
        for (k, t) in g.points().iter().enumerate().take(25) {
            assert!((mub[k] + 1.0 / (1.0 - t)).abs() < 1e-12 * (1.0 + mub[k].abs()));
        }
        assert_eq!(mub[25], 0.0);

        let alpha0 = Exponents::new(0.0, 0.0).unwrap();
        assert_eq!(estimate_mu(&m, &dm, alpha0), dm);
    }

    #[test]
    fn brownian_motion_exact_moments() {
        let mom = exact(|_| 1.0, |_| 0.0, |s, _| 1.0 + s, |_, _| 1.0, |_, _| 0.0);
        let mu = estimate_mu(&mom.m_hat, &mom.dm_hat, Exponents::OU);
        let d = estimate_sigma2_diagonal(&mom, &mu, Exponents::OU, RAW);
        let t = estimate_sigma2_triangular(&mom, &mu, Exponents::OU, RAW);
        assert!(d.raw.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(t.raw.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn gbm_exact_moments() {
        let mom = exact(|_| 1.0, |_| 0.0, |s, _| s.exp(), |s, _| s.exp(), |_, _| 0.0);
        let mu = estimate_mu(&mom.m_hat, &mom.dm_hat, Exponents::GBM);
        let d = estimate_sigma2_diagonal(&mom, &mu, Exponents::GBM, RAW);
        let t = estimate_sigma2_triangular(&mom, &mu, Exponents::GBM, RAW);
        assert!(d.raw.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(t.raw.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn drifted_bm_alpha_zero() {
        // X = 1 + t + B_t: m = 1 + t, D = (1+t)^2 + t, G(s,t) = D(s) + m(s)(t - s).
        let mom = exact(
            |t| 1.0 + t,
            |_| 1.0,
            |s, t| (1.0 + s).powi(2) + s + (1.0 + s) * (t - s),
            |_, t| 2.0 + t,
            |s, _| 1.0 + s,
        );
        let fam = Exponents::new(0.0, 0.0).unwrap();
        let mu = estimate_mu(&mom.m_hat, &mom.dm_hat, fam);
        let d = estimate_sigma2_diagonal(&mom, &mu, fam, RAW);
        let t = estimate_sigma2_triangular(&mom, &mu, fam, RAW);
        assert!(d.raw.iter().all(|v| (v - 1.0).abs() < 1e-12), "{:?}", d.raw);
        assert!(t.raw.iter().all(|v| (v - 1.0).abs() < 1e-12), "{:?}", t.raw);
        let shifted = estimate_sigma2_diagonal(&mom, &mu, fam, InversionOptions { shifted_alpha0: true, ..RAW });
        assert!(shifted.raw.iter().all(|v| (v + 1.0).abs() < 1e-12));
    }

    #[test]
    fn bridge_triangular_exact() {
        // t = 1 is taken as a left limit, as the oracle does.
        let l = |t: f64| t.min(1.0 - 1e-9);
        let mom = exact(
            |t| 2.0 * (1.0 - l(t)),
            |_| -2.0,
            |s, t| (1.0 - l(t)) * (4.0 - 3.0 * s),
            |_, t| -3.0 * (1.0 - l(t)),
            |s, _| -(4.0 - 3.0 * s),
        );
        let mu = estimate_mu(&mom.m_hat, &mom.dm_hat, Exponents::OU);
        let t = estimate_sigma2_triangular(&mom, &mu, Exponents::OU, RAW);
        for (k, v) in t.raw.iter().enumerate().take(25) {
            assert!((v - 1.0).abs() < 5e-3, "s={} {v}", grid().point(k));
        }
    }

    #[test]
    fn zero_surface_gives_zero() {
        let mom = exact(|_| 1.0, |_| 0.0, |_, _| 0.0, |_, _| 0.0, |_, _| 0.0);
        let mu = vec![0.0; 26];
        let t = estimate_sigma2_triangular(&mom, &mu, Exponents::OU, RAW);
        assert!(t.raw.iter().all(|&v| v == 0.0));
        let gbm = estimate_sigma2_triangular(&mom, &mu, Exponents::GBM, RAW);
        assert!(gbm.raw.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clipping_floors_negatives() {
        let mom = exact(|_| 1.0, |_| 0.0, |s, _| 1.0 - s, |_, _| -1.0, |_, _| 0.0);
        let mu = vec![0.0; 26];
        let d = estimate_sigma2_diagonal(&mom, &mu, Exponents::OU, InversionOptions::default());
        assert!(d.raw.iter().all(|&v| v < 0.0));
        assert!(d.value.iter().all(|&v| v == 0.0));
    }

    struct Recording<'a> {
        inner: &'a MomentEstimates,
        log: RefCell<Vec<(usize, usize)>>,
    }

    impl MomentSurface for Recording<'_> {
        fn grid(&self) -> EvaluationGrid {
            self.inner.grid
        }
        fn m(&self, a: usize) -> f64 {
            self.inner.m_hat[a]
        }
        fn dm(&self, a: usize) -> f64 {
            self.inner.dm_hat[a]
        }
        fn g(&self, a: usize, b: usize) -> f64 {
            self.log.borrow_mut().push((a, b));
            self.inner.g(a, b)
        }
        fn ds_g(&self, a: usize, b: usize) -> f64 {
            self.log.borrow_mut().push((a, b));
            self.inner.ds_g(a, b)
        }
        fn dt_g(&self, a: usize, b: usize) -> f64 {
            self.log.borrow_mut().push((a, b));
            self.inner.dt_g(a, b)
        }
    }

    #[test]
    fn triangular_estimator_stays_on_lower_triangle() {
        let mom = exact(|_| 1.0, |_| 0.0, |s, _| 1.0 + s, |_, _| 1.0, |_, _| 0.0);
        let mu = vec![0.3; 26];
        for fam in [Exponents::OU, Exponents::GBM, Exponents::new(0.0, 0.5).unwrap()] {
            let rec = Recording {
                inner: &mom,
                log: RefCell::new(Vec::new()),
            };
            let _ = estimate_sigma2_triangular(&rec, &mu, fam, RAW);
            let log = rec.log.into_inner();
            assert!(!log.is_empty());
            assert!(log.iter().all(|&(a, b)| a <= b));
        }
    }

    #[test]
    fn guarded_denominators_give_exact_zero() {
        // m vanishes at one point: CIR multiplier there is 0.
        let mom = exact(|t| t - 0.4, |_| 1.0, |s, _| 1.0 + s, |_, _| 1.0, |_, _| 0.0);
        let mu = estimate_mu(&mom.m_hat, &mom.dm_hat, Exponents::CIR);
        let k = (0..26).find(|&k| mom.m_hat[k] == 0.0).unwrap();
        assert_eq!(mu[k], 0.0);
        let d = estimate_sigma2_diagonal(&mom, &mu, Exponents::CIR, RAW);
        let t = estimate_sigma2_triangular(&mom, &mu, Exponents::CIR, RAW);
        assert_eq!(d.raw[k], 0.0);
        assert_eq!(t.raw[k], 0.0);
        assert!(d.raw.iter().chain(&t.raw).all(|v| v.is_finite()));
    }
}
