use nalgebra::{DMatrix, DVector};

use super::design::{Designs, SubjectDesign};
use super::{Lambdas, PairedDataset, ParameterSet, PosteriorSummary, SubjectData};
use crate::error::{Result, RrmeError};
use crate::linalg::{cholesky, symmetrize};
use crate::par;
use crate::smnfamily::{conditional_u_moments, log_marginal_density, MixingFamily};
use crate::splinebasis::OrthonormalBasis;

/// Marginal covariance `Σ_i` of a subject's stacked observations at unit
/// scale, and the score/data cross-covariance `Σ_αβ Aᵀ` (`k × d`).
pub fn marginal_covariance(
    params: &ParameterSet,
    basis: &OrthonormalBasis,
    subject: &SubjectData,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    params.validate()?;
    let design = SubjectDesign::new(basis, subject)?;
    let a = design.loadings(params);
    let k = params.score_cov();
    let cross = &k * a.transpose();
    let mut sigma = &a * &cross;
    add_noise(&mut sigma, design.n_y(), params.sigma2_eps, params.sigma2_xi);
    symmetrize(&mut sigma);
    Ok((sigma, cross))
}

fn add_noise(sigma: &mut DMatrix<f64>, n_y: usize, s2e: f64, s2x: f64) {
    for i in 0..sigma.nrows() {
        sigma[(i, i)] += if i < n_y { s2e } else { s2x };
    }
}

/// Posterior of the latent scale and scores for one subject.
///
/// `resid` stacks the `n_y` Y-residuals over the Z-residuals and row `i`
/// of `loadings` holds the PC function values at observation `i` (zero
/// outside the matching channel block).
pub fn subject_posterior(
    resid: &DVector<f64>,
    loadings: &DMatrix<f64>,
    n_y: usize,
    score_cov: &DMatrix<f64>,
    sigma2_eps: f64,
    sigma2_xi: f64,
    family: &MixingFamily,
) -> Result<PosteriorSummary> {
    let d = resid.len();
    if d == 0 {
        return Err(RrmeError::EmptySubject(String::new()));
    }
    if loadings.nrows() != d || loadings.ncols() != score_cov.nrows() || n_y > d {
        return Err(RrmeError::InvalidArgument(format!(
            "loadings {:?} do not match residual length {d} and score dimension {}",
            loadings.shape(),
            score_cov.nrows()
        )));
    }
    let ak = loadings * score_cov;
    let mut sigma = &ak * loadings.transpose();
    add_noise(&mut sigma, n_y, sigma2_eps, sigma2_xi);
    symmetrize(&mut sigma);
    let chol = cholesky(sigma, || "marginal covariance".into())?;
    let l = chol.l_dirty();
    let v = l
        .solve_lower_triangular(resid)
        .ok_or_else(|| RrmeError::Numerical("triangular solve failed".into()))?;
    let w = l
        .solve_lower_triangular(&ak)
        .ok_or_else(|| RrmeError::Numerical("triangular solve failed".into()))?;
    let delta = v.norm_squared();
    let log_det = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
    let score_mean = w.tr_mul(&v);
    let mut score_cov_bar = score_cov - w.tr_mul(&w);
    symmetrize(&mut score_cov_bar);

    let m = conditional_u_moments(family, delta, d)?;
    let w_first = &score_mean * m.u_hat;
    let w_second = &score_mean * score_mean.transpose() * m.u_hat + &score_cov_bar;
    Ok(PosteriorSummary {
        u_hat: m.u_hat,
        log_u_hat: m.log_u_hat,
        score_mean,
        score_cov_bar,
        w_first,
        w_second,
        delta,
        log_density: log_marginal_density(family, delta, d, log_det),
    })
}

pub(crate) fn design_posterior(
    params: &ParameterSet,
    score_cov: &DMatrix<f64>,
    design: &SubjectDesign,
) -> Result<PosteriorSummary> {
    subject_posterior(
        &design.residual(params),
        &design.loadings(params),
        design.n_y(),
        score_cov,
        params.sigma2_eps,
        params.sigma2_xi,
        &params.family,
    )
}

pub(crate) fn e_step_designs(params: &ParameterSet, designs: &Designs) -> Result<Vec<PosteriorSummary>> {
    let k = params.score_cov();
    let out = par::map(&designs.subjects, |d| design_posterior(params, &k, d));
    out.into_iter()
        .zip(&designs.ids)
        .map(|(r, id)| {
            r.map_err(|e| match e {
                RrmeError::Numerical(msg) => RrmeError::Numerical(format!("subject {id}: {msg}")),
                other => other,
            })
        })
        .collect()
}

/// Posterior summaries for every subject under `params`.
pub fn e_step(params: &ParameterSet, basis: &OrthonormalBasis, dataset: &PairedDataset) -> Result<Vec<PosteriorSummary>> {
    params.validate()?;
    let designs = Designs::new(basis, dataset)?;
    e_step_designs(params, &designs)
}

pub(crate) fn objective_from(posteriors: &[PosteriorSummary], pen: f64) -> f64 {
    let n = posteriors.len() as f64;
    -2.0 / n * posteriors.iter().map(|p| p.log_density).sum::<f64>() + pen
}

/// `-(2/n) Σ log L_i + PEN` with the exact marginal densities.
pub fn penalized_objective(
    params: &ParameterSet,
    basis: &OrthonormalBasis,
    dataset: &PairedDataset,
    lambdas: &Lambdas,
) -> Result<f64> {
    lambdas.validate()?;
    params.validate()?;
    let designs = Designs::new(basis, dataset)?;
    let posts = e_step_designs(params, &designs)?;
    Ok(objective_from(&posts, designs.penalty_value(params, lambdas)?))
}
