//! SDE model family `dX = mu(t) X^alpha dt + sigma(t) X^beta dB`.
//!
//! A [`ModelSpec`] bundles the exponents, the two time-varying coefficient
//! functions and the law of `X(0)`. Coefficients are small closed-form
//! families (see [`Coefficient`]) so that models round-trip through JSON.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used to decide that `t` sits on a declared singular point.
const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid exponents (alpha={alpha}, beta={beta}): alpha must be 0 or 1, beta one of 0, 1/2, 1")]
    InvalidExponents { alpha: f64, beta: f64 },
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("coefficient evaluated at declared singular point t={0}")]
    Singular(f64),
    #[error("time {0} outside [0, 1]")]
    OutOfDomain(f64),
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// Exponent of `X` in the drift term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Alpha {
    Zero,
    One,
}

/// Exponent of `X` in the diffusion term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Beta {
    Zero,
    Half,
    One,
}

impl Alpha {
    pub fn value(self) -> f64 {
        match self {
            Alpha::Zero => 0.0,
            Alpha::One => 1.0,
        }
    }
}

impl Beta {
    pub fn value(self) -> f64 {
        match self {
            Beta::Zero => 0.0,
            Beta::Half => 0.5,
            Beta::One => 1.0,
        }
    }
}

/// The `(alpha, beta)` pair selecting a member of the model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Exponents {
    pub alpha: Alpha,
    pub beta: Beta,
}

impl Exponents {
    pub const OU: Exponents = Exponents { alpha: Alpha::One, beta: Beta::Zero };
    pub const GBM: Exponents = Exponents { alpha: Alpha::One, beta: Beta::One };
    pub const CIR: Exponents = Exponents { alpha: Alpha::One, beta: Beta::Half };

    pub fn new(alpha: f64, beta: f64) -> Result<Self, ModelError> {
        let a = if alpha == 0.0 {
            Alpha::Zero
        } else if alpha == 1.0 {
            Alpha::One
        } else {
            return Err(ModelError::InvalidExponents { alpha, beta });
        };
        let b = if beta == 0.0 {
            Beta::Zero
        } else if beta == 0.5 {
            Beta::Half
        } else if beta == 1.0 {
            Beta::One
        } else {
            return Err(ModelError::InvalidExponents { alpha, beta });
        };
        Ok(Exponents { alpha: a, beta: b })
    }
}

impl fmt::Display for Exponents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "alpha={}, beta={}", self.alpha.value(), self.beta.value())
    }
}

/// A time-varying coefficient on `[0, 1]`.
///
/// Serialized as `{"kind": ..., "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum Coefficient {
    /// `value`
    #[serde(rename = "constant")]
    Constant { value: f64 },
    /// `-scale / (1 - t)`, singular at `t = 1`.
    #[serde(rename = "bridge")]
    Bridge { scale: f64 },
    /// `scale * (offset + sin(2 pi frequency t + phase))`
    #[serde(rename = "sinusoid")]
    Sinusoid {
        scale: f64,
        offset: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `scale * exp(rate * (t - center)^2)`
    #[serde(rename = "expsq")]
    ExpSq { scale: f64, center: f64, rate: f64 },
    /// `sum_k coefficients[k] * t^k`
    #[serde(rename = "custom-polynomial")]
    Polynomial { coefficients: Vec<f64> },
}

impl Coefficient {
    pub fn constant(value: f64) -> Self {
        Coefficient::Constant { value }
    }

    /// Declared singular points in `[0, 1]`.
    pub fn singular_points(&self) -> &'static [f64] {
        match self {
            Coefficient::Bridge { .. } => &[1.0],
            _ => &[],
        }
    }

    pub fn is_singular_at(&self, t: f64) -> bool {
        self.singular_points()
            .iter()
            .any(|&p| (t - p).abs() <= SINGULAR_TOL)
    }

    pub fn eval(&self, t: f64) -> Result<f64, ModelError> {
        if !(-SINGULAR_TOL..=1.0 + SINGULAR_TOL).contains(&t) {
            return Err(ModelError::OutOfDomain(t));
        }
        if self.is_singular_at(t) {
            return Err(ModelError::Singular(t));
        }
        Ok(self.eval_unchecked(t))
    }

    /// Raw formula, no domain or singularity check.
    pub fn eval_unchecked(&self, t: f64) -> f64 {
        match self {
            Coefficient::Constant { value } => *value,
            Coefficient::Bridge { scale } => -scale / (1.0 - t),
            Coefficient::Sinusoid {
                scale,
                offset,
                frequency,
                phase,
            } => scale * (offset + (2.0 * PI * frequency * t + phase).sin()),
            Coefficient::ExpSq {
                scale,
                center,
                rate,
            } => scale * (rate * (t - center).powi(2)).exp(),
            Coefficient::Polynomial { coefficients } => coefficients
                .iter()
                .rev()
                .fold(0.0, |acc, &c| acc * t + c),
        }
    }

    /// Closed-form `int_0^t f(u) du`, when the family has one.
    ///
    /// Returns `None` for families without an elementary antiderivative;
    /// callers fall back to quadrature.
    pub fn integral_from_zero(&self, t: f64) -> Option<f64> {
        match self {
            Coefficient::Constant { value } => Some(value * t),
            Coefficient::Bridge { scale } => Some(scale * (1.0 - t).ln()),
            Coefficient::Sinusoid {
                scale,
                offset,
                frequency,
                phase,
            } => {
                if *frequency == 0.0 {
                    Some(scale * (offset + phase.sin()) * t)
                } else {
                    let w = 2.0 * PI * frequency;
                    Some(scale * (offset * t - ((w * t + phase).cos() - phase.cos()) / w))
                }
            }
            Coefficient::ExpSq { .. } => None,
            Coefficient::Polynomial { coefficients } => Some(
                coefficients
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * t.powi(k as i32 + 1) / (k as f64 + 1.0))
                    .sum(),
            ),
        }
    }

    pub fn has_closed_form_integral(&self) -> bool {
        !matches!(self, Coefficient::ExpSq { .. })
    }
}

/// Law of `X(0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialLaw {
    Deterministic(f64),
    Normal { mean: f64, sd: f64 },
}

impl InitialLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            InitialLaw::Deterministic(x0) => x0,
            InitialLaw::Normal { mean, .. } => mean,
        }
    }

    pub fn second_moment(&self) -> f64 {
        match *self {
            InitialLaw::Deterministic(x0) => x0 * x0,
            InitialLaw::Normal { mean, sd } => mean * mean + sd * sd,
        }
    }

    pub fn sd(&self) -> f64 {
        match *self {
            InitialLaw::Deterministic(_) => 0.0,
            InitialLaw::Normal { sd, .. } => sd,
        }
    }
}

/// A fully specified member of the model family. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelJson", into = "ModelJson")]
pub struct ModelSpec {
    name: String,
    exponents: Exponents,
    drift: Coefficient,
    diffusion: Coefficient,
    initial: InitialLaw,
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        exponents: Exponents,
        drift: Coefficient,
        diffusion: Coefficient,
        initial: InitialLaw,
    ) -> Self {
        ModelSpec {
            name: name.into(),
            exponents,
            drift,
            diffusion,
            initial,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn exponents(&self) -> Exponents {
        self.exponents
    }

    pub fn drift(&self) -> &Coefficient {
        &self.drift
    }

    pub fn diffusion(&self) -> &Coefficient {
        &self.diffusion
    }

    pub fn initial(&self) -> InitialLaw {
        self.initial
    }

    pub fn mu(&self, t: f64) -> Result<f64, ModelError> {
        self.drift.eval(t)
    }

    pub fn sigma(&self, t: f64) -> Result<f64, ModelError> {
        self.diffusion.eval(t)
    }

    pub fn sigma2(&self, t: f64) -> Result<f64, ModelError> {
        self.diffusion.eval(t).map(|s| s * s)
    }
}

/// JSON shape of a model: `{name, alpha, beta, x0, drift, diffusion}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelJson {
    name: String,
    alpha: f64,
    beta: f64,
    x0: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    x0_sd: f64,
    drift: Coefficient,
    diffusion: Coefficient,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl TryFrom<ModelJson> for ModelSpec {
    type Error = ModelError;

    fn try_from(j: ModelJson) -> Result<Self, Self::Error> {
        let exponents = Exponents::new(j.alpha, j.beta)?;
        let initial = if j.x0_sd > 0.0 {
            InitialLaw::Normal {
                mean: j.x0,
                sd: j.x0_sd,
            }
        } else {
            InitialLaw::Deterministic(j.x0)
        };
        Ok(ModelSpec::new(j.name, exponents, j.drift, j.diffusion, initial))
    }
}

impl From<ModelSpec> for ModelJson {
    fn from(m: ModelSpec) -> Self {
        ModelJson {
            name: m.name,
            alpha: m.exponents.alpha.value(),
            beta: m.exponents.beta.value(),
            x0: m.initial.mean(),
            x0_sd: m.initial.sd(),
            drift: m.drift,
            diffusion: m.diffusion,
        }
    }
}

pub const BUILTIN_MODELS: [&str; 5] = [
    "brownian_bridge",
    "sin_ou",
    "brownian_motion",
    "gbm_example",
    "cir_example",
];

/// Looks up one of the built-in example models by name.
pub fn make_builtin_model(name: &str) -> Result<ModelSpec, ModelError> {
    let spec = match name {
        "brownian_bridge" => ModelSpec::new(
            name,
            Exponents::OU,
            Coefficient::Bridge { scale: 1.0 },
            Coefficient::constant(1.0),
            InitialLaw::Deterministic(2.0),
        ),
        "sin_ou" => ModelSpec::new(
            name,
            Exponents::OU,
            Coefficient::Sinusoid {
                scale: -0.2,
                offset: 1.0,
                frequency: 1.0,
                phase: 0.0,
            },
            // sqrt(exp((1 - t)^2)) = exp((t - 1)^2 / 2)
            Coefficient::ExpSq {
                scale: 1.0,
                center: 1.0,
                rate: 0.5,
            },
            InitialLaw::Deterministic(2.0),
        ),
        "brownian_motion" => ModelSpec::new(
            name,
            Exponents::OU,
            Coefficient::constant(0.0),
            Coefficient::constant(1.0),
            InitialLaw::Deterministic(0.0),
        ),
        "gbm_example" => ModelSpec::new(
            name,
            Exponents::GBM,
            Coefficient::constant(0.5),
            Coefficient::constant(0.4),
            InitialLaw::Deterministic(1.0),
        ),
        "cir_example" => ModelSpec::new(
            name,
            Exponents::CIR,
            Coefficient::constant(-0.5),
            Coefficient::constant(0.5),
            InitialLaw::Deterministic(1.0),
        ),
        other => return Err(ModelError::UnknownModel(other.to_string())),
    };
    Ok(spec)
}

/// Number of grid points used by [`validate_model`].
pub const VALIDATION_GRID: usize = 1001;

/// Checks a model for invariant violations. An empty report means valid.
pub fn validate_model(spec: &ModelSpec) -> Vec<String> {
    let mut report = Vec::new();
    for k in 0..VALIDATION_GRID {
        let t = k as f64 / (VALIDATION_GRID - 1) as f64;
        if spec.diffusion.is_singular_at(t) {
            continue;
        }
        let s = spec.diffusion.eval_unchecked(t);
        if !s.is_finite() {
            report.push(format!("diffusion not finite at t={t}"));
            break;
        }
        if s < 0.0 {
            report.push(format!("diffusion negative at t={t}"));
            break;
        }
    }
    for k in 0..VALIDATION_GRID {
        let t = k as f64 / (VALIDATION_GRID - 1) as f64;
        if spec.drift.is_singular_at(t) {
            continue;
        }
        if !spec.drift.eval_unchecked(t).is_finite() {
            report.push(format!("drift not finite at t={t}"));
            break;
        }
    }
    if spec.exponents.beta == Beta::Half {
        match spec.initial {
            InitialLaw::Deterministic(x0) if x0 < 0.0 => {
                report.push("CIR initial value negative".to_string())
            }
            InitialLaw::Normal { .. } => {
                report.push("CIR initial value must be nonnegative; normal law unsupported".to_string())
            }
            _ => {}
        }
    }
    if spec.initial.sd() < 0.0 || !spec.initial.mean().is_finite() {
        report.push("initial law invalid".to_string());
    }
    report
}
