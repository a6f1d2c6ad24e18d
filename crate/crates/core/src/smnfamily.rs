//! Scale-mixture-of-normals mixing families.
//!
//! Given a latent scale `U ~ H`, an observation block of total size `d`
//! is `N(mean, Σ / U)`. With Mahalanobis distance `δ = rᵀ Σ⁻¹ r` the
//! posterior of `U` is proportional to `h(u) u^(d/2) exp(-u δ / 2)`:
//!
//! * Student t, `H = Gamma(γ/2, γ/2)`: posterior `Gamma((γ+d)/2, (γ+δ)/2)`.
//! * slash, `H = Beta(γ, 1)`: posterior `∝ u^(a-1) exp(-u δ/2)` on `(0, 1)`
//!   with `a = γ + d/2`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RrmeError};
use crate::quad;
use crate::special::{ln_gamma, ln_unit_lower_gamma, psi};

const LN_TWO_PI: f64 = 1.837_877_066_409_345_5;

/// Which mixing distribution to use, without its degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Normal,
    #[serde(rename = "t")]
    StudentT,
    Slash,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Normal => "normal",
            FamilyKind::StudentT => "t",
            FamilyKind::Slash => "slash",
        }
    }

    /// Starting degrees of freedom for EM.
    pub fn default_gamma(self) -> Option<f64> {
        match self {
            FamilyKind::Normal => None,
            FamilyKind::StudentT => Some(10.0),
            FamilyKind::Slash => Some(2.0),
        }
    }

    pub fn with_gamma(self, gamma: f64) -> MixingFamily {
        match self {
            FamilyKind::Normal => MixingFamily::Normal,
            FamilyKind::StudentT => MixingFamily::StudentT { gamma },
            FamilyKind::Slash => MixingFamily::Slash { gamma },
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = RrmeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "gaussian" => Ok(FamilyKind::Normal),
            "t" | "student_t" | "student-t" => Ok(FamilyKind::StudentT),
            "slash" => Ok(FamilyKind::Slash),
            other => Err(RrmeError::InvalidArgument(format!("unknown family '{other}'"))),
        }
    }
}

/// Mixing distribution of the latent scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixingFamily {
    /// Point mass at 1.
    Normal,
    /// `Gamma(γ/2, γ/2)` mixing.
    #[serde(rename = "t")]
    StudentT { gamma: f64 },
    /// `Beta(γ, 1)` mixing.
    Slash { gamma: f64 },
}

impl MixingFamily {
    pub fn kind(&self) -> FamilyKind {
        match self {
            MixingFamily::Normal => FamilyKind::Normal,
            MixingFamily::StudentT { .. } => FamilyKind::StudentT,
            MixingFamily::Slash { .. } => FamilyKind::Slash,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            MixingFamily::Normal => None,
            MixingFamily::StudentT { gamma } | MixingFamily::Slash { gamma } => Some(gamma),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.gamma() {
            Some(g) if !(g > 0.0 && g.is_finite()) => Err(RrmeError::InvalidArgument(format!(
                "degrees of freedom must be positive, got {g}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Posterior moments of the latent scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UPosteriorMoments {
    /// `E[U | data]`
    pub u_hat: f64,
    /// `E[log U | data]`
    pub log_u_hat: f64,
}

/// Log density of the mixing distribution at `u`.
///
/// Values outside the support give `-inf`. The normal family is a point
/// mass and has no density.
pub fn mixing_log_density(family: &MixingFamily, u: f64) -> Result<f64> {
    family.validate()?;
    match *family {
        MixingFamily::Normal => Err(RrmeError::NotApplicable("normal")),
        MixingFamily::StudentT { gamma } => {
            if !(u > 0.0) {
                return Ok(f64::NEG_INFINITY);
            }
            let h = 0.5 * gamma;
            Ok(h * h.ln() - ln_gamma(h) + (h - 1.0) * u.ln() - h * u)
        }
        MixingFamily::Slash { gamma } => {
            if !(u > 0.0 && u <= 1.0) {
                return Ok(f64::NEG_INFINITY);
            }
            Ok(gamma.ln() + (gamma - 1.0) * u.ln())
        }
    }
}

/// `E[U | data]` and `E[log U | data]` for Mahalanobis distance `delta`
/// over `d` stacked observations.
pub fn conditional_u_moments(family: &MixingFamily, delta: f64, d: usize) -> Result<UPosteriorMoments> {
    family.validate()?;
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(RrmeError::InvalidArgument(format!(
            "Mahalanobis distance must be finite and non-negative, got {delta}"
        )));
    }
    if d == 0 {
        return Err(RrmeError::InvalidArgument("observation count must be at least 1".into()));
    }
    let d = d as f64;
    match *family {
        MixingFamily::Normal => Ok(UPosteriorMoments {
            u_hat: 1.0,
            log_u_hat: 0.0,
        }),
        MixingFamily::StudentT { gamma } => {
            let shape = 0.5 * (gamma + d);
            let rate = 0.5 * (gamma + delta);
            Ok(UPosteriorMoments {
                u_hat: shape / rate,
                log_u_hat: psi(shape) - rate.ln(),
            })
        }
        MixingFamily::Slash { gamma } => {
            let a = gamma + 0.5 * d;
            let x = 0.5 * delta;
            let u_hat = (ln_unit_lower_gamma(a + 1.0, x) - ln_unit_lower_gamma(a, x)).exp();
            let log_u_hat = slash_log_moment(a, x)?;
            Ok(UPosteriorMoments { u_hat, log_u_hat })
        }
    }
}

/// `E[log U]` for the density `∝ u^(a-1) e^(-u x)` on `(0, 1)`.
///
/// With `u = e^-s` this is `-E[S]` for `S` on `(0, ∞)` with log density
/// `-a s - x e^-s`, which is smooth and unimodal; the integrals are taken
/// over the window where that log density is within 60 of its peak.
fn slash_log_moment(a: f64, x: f64) -> Result<f64> {
    if x == 0.0 {
        return Ok(-1.0 / a);
    }
    let log_w = |s: f64| -a * s - x * (-s).exp();
    let peak = if x > a { (x / a).ln() } else { 0.0 };
    let top = log_w(peak);
    const DROP: f64 = 60.0;
    let mut step = (1.0 / a).max(1.0 / a.sqrt()).max(1e-3);
    let mut hi = peak + step;
    while top - log_w(hi) < DROP {
        step *= 2.0;
        hi = peak + step;
    }
    let mut lo = 0.0;
    if peak > 0.0 {
        let mut step = (1.0 / a.sqrt()).max(1e-3);
        while peak - step > 0.0 && top - log_w(peak - step) < DROP {
            step *= 2.0;
        }
        lo = (peak - step).max(0.0);
    }
    let w = |s: f64| (log_w(s) - top).exp();
    let den = quad::integrate(w, lo, hi, 0.0, 1e-13, 4000)
        .map_err(|e| numerical_context(e, a, x))?;
    let num = quad::integrate(|s| s * w(s), lo, hi, 0.0, 1e-13, 4000)
        .map_err(|e| numerical_context(e, a, x))?;
    Ok(-num.value / den.value)
}

fn numerical_context(err: RrmeError, a: f64, x: f64) -> RrmeError {
    RrmeError::Numerical(format!("slash log-moment (shape {a}, rate {x}): {err}"))
}

/// Bounds for the degrees-of-freedom search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for GammaBounds {
    fn default() -> Self {
        Self {
            min: 0.1,
            max: 1000.0,
        }
    }
}

/// `-2 Σ E[log h(u_i)]` as a function of the degrees of freedom.
pub fn gamma_objective(kind: FamilyKind, gamma: f64, u_hats: &[f64], log_u_hats: &[f64]) -> Result<f64> {
    let n = u_hats.len() as f64;
    let sum_u: f64 = u_hats.iter().sum();
    let sum_log: f64 = log_u_hats.iter().sum();
    match kind {
        FamilyKind::Normal => Err(RrmeError::NotApplicable("normal")),
        FamilyKind::StudentT => Ok(t_objective(gamma, n, sum_u, sum_log)),
        FamilyKind::Slash => Ok(-2.0 * n * gamma.ln() - 2.0 * (gamma - 1.0) * sum_log),
    }
}

fn t_objective(gamma: f64, n: f64, sum_u: f64, sum_log: f64) -> f64 {
    let h = 0.5 * gamma;
    n * (-gamma * h.ln() + 2.0 * ln_gamma(h)) - (gamma - 2.0) * sum_log + gamma * sum_u
}

/// M-step for the degrees of freedom.
pub fn gamma_update(kind: FamilyKind, u_hats: &[f64], log_u_hats: &[f64], bounds: GammaBounds) -> Result<f64> {
    if u_hats.is_empty() || u_hats.len() != log_u_hats.len() {
        return Err(RrmeError::InvalidArgument(
            "posterior moment lists must be non-empty and of equal length".into(),
        ));
    }
    if !(bounds.min > 0.0 && bounds.min < bounds.max) {
        return Err(RrmeError::InvalidArgument(format!(
            "invalid degrees-of-freedom bounds [{}, {}]",
            bounds.min, bounds.max
        )));
    }
    let n = u_hats.len() as f64;
    let sum_log: f64 = log_u_hats.iter().sum();
    match kind {
        FamilyKind::Normal => Err(RrmeError::NotApplicable("normal")),
        FamilyKind::Slash => {
            if !(sum_log < 0.0) {
                return Err(RrmeError::DegenerateUpdate(format!(
                    "sum of E[log u] is {sum_log}, slash degrees of freedom unbounded"
                )));
            }
            Ok((-n / sum_log).clamp(bounds.min, bounds.max))
        }
        FamilyKind::StudentT => {
            let sum_u: f64 = u_hats.iter().sum();
            let f = |g: f64| t_objective(g, n, sum_u, sum_log);
            let g = golden_section(f, bounds.min, bounds.max, 1e-6);
            // The objective is convex; the bracket ends catch boundary optima.
            let best = [g, bounds.min, bounds.max]
                .into_iter()
                .min_by(|a, b| f(*a).total_cmp(&f(*b)))
                .unwrap();
            Ok(best)
        }
    }
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Log of the marginal density of a `d`-vector with scale matrix `Σ`
/// (log-determinant `log_det`) at Mahalanobis distance `delta`.
pub fn log_marginal_density(family: &MixingFamily, delta: f64, d: usize, log_det: f64) -> f64 {
    let df = d as f64;
    let base = -0.5 * log_det;
    match *family {
        MixingFamily::Normal => base - 0.5 * (df * LN_TWO_PI + delta),
        MixingFamily::StudentT { gamma } => {
            base + ln_gamma(0.5 * (gamma + df))
                - ln_gamma(0.5 * gamma)
                - 0.5 * df * (gamma * std::f64::consts::PI).ln()
                - 0.5 * (gamma + df) * (delta / gamma).ln_1p()
        }
        MixingFamily::Slash { gamma } => {
            base + gamma.ln() + ln_unit_lower_gamma(gamma + 0.5 * df, 0.5 * delta)
                - 0.5 * df * LN_TWO_PI
        }
    }
}
