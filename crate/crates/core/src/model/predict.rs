use nalgebra::{DMatrix, DVector};

use super::design::SubjectDesign;
use super::estep::design_posterior;
use super::{Channel, ParameterSet, SubjectData};
use crate::error::{Result, RrmeError};
use crate::splinebasis::OrthonormalBasis;

/// Posterior mean of the stacked scores `(α, β)` and their unit-scale
/// posterior covariance `Σ̄` for a (possibly new) subject.
pub fn predict_scores(
    params: &ParameterSet,
    basis: &OrthonormalBasis,
    subject: &SubjectData,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if subject.is_empty() {
        return Err(RrmeError::EmptySubject(subject.id.clone()));
    }
    params.validate()?;
    let design = SubjectDesign::new(basis, subject)?;
    let post = design_posterior(params, &params.score_cov(), &design)?;
    Ok((post.score_mean, post.score_cov_bar))
}

/// `b(t)ᵀ(θ_μ + Θ_f α)` for Y, or `b(t)ᵀ(θ_ν + Θ_g β)` for Z. `scores`
/// is the stacked `(α, β)` vector.
pub fn predict_curve(
    params: &ParameterSet,
    basis: &OrthonormalBasis,
    scores: &DVector<f64>,
    times: &[f64],
    channel: Channel,
) -> Result<Vec<f64>> {
    let (ka, kb) = (params.k_alpha(), params.k_beta());
    if scores.len() != ka + kb {
        return Err(RrmeError::InvalidArgument(format!(
            "expected {} scores, got {}",
            ka + kb,
            scores.len()
        )));
    }
    let coef = match channel {
        Channel::Y => &params.theta_mu + &params.theta_f * scores.rows(0, ka),
        Channel::Z => &params.theta_nu + &params.theta_g * scores.rows(ka, kb),
    };
    Ok((basis.design_matrix(times)? * coef).as_slice().to_vec())
}
