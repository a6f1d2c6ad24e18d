//! The paired-curve reduced-rank mixed-effects model.
//!
//! Each subject contributes two sparsely observed curves
//!
//! ```text
//! Y(t) = μ(t) + f(t)ᵀα + ε,   Z(s) = ν(s) + g(s)ᵀβ + ξ
//! ```
//!
//! with `(α, β) | u ~ N(0, Σ_αβ / u)`, `ε | u ~ N(0, σ²_ε / u)`,
//! `ξ | u ~ N(0, σ²_ξ / u)` and one latent scale `u` per subject drawn from
//! a [`MixingFamily`]. Mean and PC functions are expanded in an orthonormal
//! spline basis.

mod design;
mod estep;
mod fit;
mod init;
mod mstep;
mod predict;

pub use estep::{e_step, marginal_covariance, penalized_objective, subject_posterior};
pub use fit::{fit, FitOptions, FitResult, InitMode, PcPenaltyScale, StopReason};
pub use init::initial_parameters;
pub use mstep::{
    identifiability_rotation, m_step_means, m_step_pcs_and_cov, m_step_pcs_and_cov_with, m_step_variances, q_function,
    Rotated,
};
pub use predict::{predict_curve, predict_scores};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RrmeError};
use crate::smnfamily::MixingFamily;

/// Which of the two curves an observation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    Y,
    Z,
}

impl Channel {
    pub fn letter(self) -> char {
        match self {
            Channel::Y => 'Y',
            Channel::Z => 'Z',
        }
    }
}

/// Observations of one subject.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SubjectData {
    pub id: String,
    pub times_y: Vec<f64>,
    pub values_y: Vec<f64>,
    pub times_z: Vec<f64>,
    pub values_z: Vec<f64>,
}

impl SubjectData {
    pub fn n_y(&self) -> usize {
        self.times_y.len()
    }

    pub fn n_z(&self) -> usize {
        self.times_z.len()
    }

    pub fn len(&self) -> usize {
        self.n_y() + self.n_z()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn times(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::Y => &self.times_y,
            Channel::Z => &self.times_z,
        }
    }

    pub fn values(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::Y => &self.values_y,
            Channel::Z => &self.values_z,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.times_y.len() != self.values_y.len() || self.times_z.len() != self.values_z.len() {
            return Err(RrmeError::Data(format!(
                "subject {}: times and values differ in length",
                self.id
            )));
        }
        if self.is_empty() {
            return Err(RrmeError::EmptySubject(self.id.clone()));
        }
        if self
            .values_y
            .iter()
            .chain(&self.values_z)
            .chain(&self.times_y)
            .chain(&self.times_z)
            .any(|v| !v.is_finite())
        {
            return Err(RrmeError::Data(format!("subject {}: non-finite entry", self.id)));
        }
        Ok(())
    }
}

/// A collection of subjects observed on a common domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDataset {
    pub subjects: Vec<SubjectData>,
    pub domain: (f64, f64),
}

impl PairedDataset {
    pub fn new(subjects: Vec<SubjectData>, domain: (f64, f64)) -> Result<Self> {
        let ds = Self { subjects, domain };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects.is_empty() {
            return Err(RrmeError::Data("dataset has no subjects".into()));
        }
        let (lo, hi) = self.domain;
        for s in &self.subjects {
            s.validate()?;
            for (index, &time) in s.times_y.iter().chain(&s.times_z).enumerate() {
                if time < lo || time > hi {
                    return Err(RrmeError::OutOfDomain { index, time, lo, hi });
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn total_y(&self) -> usize {
        self.subjects.iter().map(SubjectData::n_y).sum()
    }

    pub fn total_z(&self) -> usize {
        self.subjects.iter().map(SubjectData::n_z).sum()
    }
}

/// Roughness penalty weights for the mean and PC functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub mu: f64,
    pub nu: f64,
    pub f: f64,
    pub g: f64,
}

impl Lambdas {
    pub fn uniform(v: f64) -> Self {
        Self { mu: v, nu: v, f: v, g: v }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.mu, self.nu, self.f, self.g]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            mu: a[0],
            nu: a[1],
            f: a[2],
            g: a[3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().all(|l| *l >= 0.0 && l.is_finite()) {
            Ok(())
        } else {
            Err(RrmeError::InvalidArgument(format!("penalties must be finite and >= 0, got {self:?}")))
        }
    }
}

impl Default for Lambdas {
    fn default() -> Self {
        Self::uniform(1e-2)
    }
}

/// Full parameter collection of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub theta_mu: DVector<f64>,
    pub theta_nu: DVector<f64>,
    /// `q × k_α`, orthonormal columns.
    pub theta_f: DMatrix<f64>,
    /// `q × k_β`, orthonormal columns.
    pub theta_g: DMatrix<f64>,
    /// Diagonal of `D_α`, non-increasing.
    pub d_alpha: DVector<f64>,
    /// Diagonal of `D_β`, non-increasing.
    pub d_beta: DVector<f64>,
    /// `k_α × k_β` cross-covariance of the scores.
    pub c: DMatrix<f64>,
    pub sigma2_eps: f64,
    pub sigma2_xi: f64,
    pub family: MixingFamily,
}

impl ParameterSet {
    pub fn q(&self) -> usize {
        self.theta_mu.len()
    }

    pub fn k_alpha(&self) -> usize {
        self.theta_f.ncols()
    }

    pub fn k_beta(&self) -> usize {
        self.theta_g.ncols()
    }

    /// Assembled `Σ_αβ = [[D_α, C], [Cᵀ, D_β]]`.
    pub fn score_cov(&self) -> DMatrix<f64> {
        let (ka, kb) = (self.k_alpha(), self.k_beta());
        let mut m = DMatrix::zeros(ka + kb, ka + kb);
        for j in 0..ka {
            m[(j, j)] = self.d_alpha[j];
        }
        for j in 0..kb {
            m[(ka + j, ka + j)] = self.d_beta[j];
        }
        m.view_mut((0, ka), (ka, kb)).copy_from(&self.c);
        m.view_mut((ka, 0), (kb, ka)).copy_from(&self.c.transpose());
        m
    }

    /// Dimension and finiteness checks.
    pub fn validate(&self) -> Result<()> {
        let q = self.q();
        let bad = |msg: String| Err(RrmeError::InvalidArgument(msg));
        if self.theta_nu.len() != q || self.theta_f.nrows() != q || self.theta_g.nrows() != q {
            return bad(format!("coefficient dimensions disagree with q = {q}"));
        }
        if self.d_alpha.len() != self.k_alpha() || self.d_beta.len() != self.k_beta() {
            return bad("score variance lengths disagree with PC counts".into());
        }
        if self.c.shape() != (self.k_alpha(), self.k_beta()) {
            return bad(format!("C has shape {:?}", self.c.shape()));
        }
        if !(self.sigma2_eps > 0.0 && self.sigma2_xi > 0.0) {
            return bad("error variances must be positive".into());
        }
        let finite = self
            .theta_mu
            .iter()
            .chain(self.theta_nu.iter())
            .chain(self.theta_f.iter())
            .chain(self.theta_g.iter())
            .chain(self.d_alpha.iter())
            .chain(self.d_beta.iter())
            .chain(self.c.iter())
            .all(|v| v.is_finite());
        if !finite {
            return bad("non-finite parameter entry".into());
        }
        self.family.validate()
    }
}

/// Per-subject E-step output.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    /// `E[u | data]`
    pub u_hat: f64,
    /// `E[log u | data]`
    pub log_u_hat: f64,
    /// Posterior mean of the stacked scores `(α, β)`.
    pub score_mean: DVector<f64>,
    /// `Σ̄`: the score covariance given the data, at unit scale.
    pub score_cov_bar: DMatrix<f64>,
    /// `E[u (α, β) | data]`
    pub w_first: DVector<f64>,
    /// `E[u (α, β)(α, β)ᵀ | data]`
    pub w_second: DMatrix<f64>,
    /// Mahalanobis distance of the stacked residual.
    pub delta: f64,
    /// Log marginal density of the subject's data.
    pub log_density: f64,
}
