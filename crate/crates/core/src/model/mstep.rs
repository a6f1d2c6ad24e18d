//! M-step block updates and the expected complete-data criterion they
//! minimize.

use nalgebra::{DMatrix, DVector};

use super::design::{penalty_value, Designs};
use super::fit::PcPenaltyScale;
use super::{Lambdas, PairedDataset, ParameterSet, PosteriorSummary};
use crate::error::{Result, RrmeError};
use crate::linalg::{normalize_column_signs, solve_spd, sym_eigen_desc, symmetrize};
use crate::smnfamily::MixingFamily;
use crate::special::ln_gamma;
use crate::splinebasis::OrthonormalBasis;

const SIGMA2_FLOOR: f64 = 1e-12;

fn check_lengths(designs: &Designs, posts: &[PosteriorSummary]) -> Result<()> {
    if designs.n() != posts.len() {
        return Err(RrmeError::InvalidArgument(format!(
            "{} posterior summaries for {} subjects",
            posts.len(),
            designs.n()
        )));
    }
    Ok(())
}

/// Closed-form error-variance updates.
pub fn m_step_variances(
    params: &ParameterSet,
    basis: &OrthonormalBasis,
    dataset: &PairedDataset,
    posteriors: &[PosteriorSummary],
) -> Result<(f64, f64)> {
    variances(params, &Designs::new(basis, dataset)?, posteriors)
}

pub(crate) fn variances(p: &ParameterSet, designs: &Designs, posts: &[PosteriorSummary]) -> Result<(f64, f64)> {
    check_lengths(designs, posts)?;
    let (ny, nz) = (designs.total_y(), designs.total_z());
    if ny == 0 {
        return Err(RrmeError::ChannelEmpty('Y'));
    }
    if nz == 0 {
        return Err(RrmeError::ChannelEmpty('Z'));
    }
    let (ka, kb) = (p.k_alpha(), p.k_beta());
    let (mut sy, mut sz) = (0.0, 0.0);
    for (d, post) in designs.subjects.iter().zip(posts) {
        let ma = post.score_mean.rows(0, ka);
        let mb = post.score_mean.rows(ka, kb);
        if d.n_y() > 0 {
            let r = &d.y - &d.by * (&p.theta_mu + &p.theta_f * ma);
            let g = p.theta_f.tr_mul(&(&d.btb_y * &p.theta_f));
            let tr = g.component_mul(&post.score_cov_bar.view((0, 0), (ka, ka))).sum();
            sy += post.u_hat * r.norm_squared() + tr;
        }
        if d.n_z() > 0 {
            let r = &d.z - &d.bz * (&p.theta_nu + &p.theta_g * mb);
            let g = p.theta_g.tr_mul(&(&d.btb_z * &p.theta_g));
            let tr = g.component_mul(&post.score_cov_bar.view((ka, ka), (kb, kb))).sum();
            sz += post.u_hat * r.norm_squared() + tr;
        }
    }
    Ok(((sy / ny as f64).max(SIGMA2_FLOOR), (sz / nz as f64).max(SIGMA2_FLOOR)))
}

/// Penalized weighted least-squares updates of the mean coefficients.
pub fn m_step_means(
    params: &ParameterSet,
    basis: &OrthonormalBasis,
    dataset: &PairedDataset,
    posteriors: &[PosteriorSummary],
    lambdas: &Lambdas,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let designs = Designs::new(basis, dataset)?;
    let omega = designs.omega_for(lambdas)?;
    means(params, &designs, posteriors, lambdas, &omega)
}

pub(crate) fn means(
    p: &ParameterSet,
    designs: &Designs,
    posts: &[PosteriorSummary],
    l: &Lambdas,
    omega: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_lengths(designs, posts)?;
    let q = designs.q;
    let n = designs.n() as f64;
    let (ka, kb) = (p.k_alpha(), p.k_beta());
    let mut my = omega * (n * p.sigma2_eps * l.mu);
    let mut mz = omega * (n * p.sigma2_xi * l.nu);
    let mut ry = DVector::zeros(q);
    let mut rz = DVector::zeros(q);
    for (d, post) in designs.subjects.iter().zip(posts) {
        my += &d.btb_y * post.u_hat;
        mz += &d.btb_z * post.u_hat;
        ry += d.by.tr_mul(&d.y) * post.u_hat - &d.btb_y * (&p.theta_f * post.w_first.rows(0, ka));
        rz += d.bz.tr_mul(&d.z) * post.u_hat - &d.btb_z * (&p.theta_g * post.w_first.rows(ka, kb));
    }
    let mu = solve_spd(my, &ry, || "mean update for Y".into())?;
    let nu = solve_spd(mz, &rz, || "mean update for Z".into())?;
    Ok((mu, nu))
}

/// Score-covariance update followed by sequential PC-column updates.
///
/// Returns `(Θ*_f, Θ*_g, Σ*_αβ)`; the PC matrices are not yet orthonormal.
pub fn m_step_pcs_and_cov(
    params: &ParameterSet,
    basis: &OrthonormalBasis,
    dataset: &PairedDataset,
    posteriors: &[PosteriorSummary],
    lambdas: &Lambdas,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    m_step_pcs_and_cov_with(params, basis, dataset, posteriors, lambdas, PcPenaltyScale::Unit)
}

/// [`m_step_pcs_and_cov`] with an explicit weighting of the column penalties.
pub fn m_step_pcs_and_cov_with(
    params: &ParameterSet,
    basis: &OrthonormalBasis,
    dataset: &PairedDataset,
    posteriors: &[PosteriorSummary],
    lambdas: &Lambdas,
    scale: PcPenaltyScale,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let designs = Designs::new(basis, dataset)?;
    let omega = designs.omega_for(lambdas)?;
    let sigma = score_cov_update(&designs, posteriors)?;
    let (f, g) = pcs(params, &designs, posteriors, lambdas, &omega, scale)?;
    Ok((f, g, sigma))
}

pub(crate) fn score_cov_update(designs: &Designs, posts: &[PosteriorSummary]) -> Result<DMatrix<f64>> {
    check_lengths(designs, posts)?;
    let k = posts[0].w_second.nrows();
    let mut s = DMatrix::zeros(k, k);
    for post in posts {
        s += &post.w_second;
    }
    s /= posts.len() as f64;
    symmetrize(&mut s);
    Ok(s)
}

pub(crate) fn pcs(
    p: &ParameterSet,
    designs: &Designs,
    posts: &[PosteriorSummary],
    l: &Lambdas,
    omega: &DMatrix<f64>,
    scale: PcPenaltyScale,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_lengths(designs, posts)?;
    let ka = p.k_alpha();
    let n = designs.n() as f64;
    // Bᵀ r per subject with the current mean estimates.
    let bt_ry: Vec<DVector<f64>> =
        designs.subjects.iter().map(|d| d.by.tr_mul(&(&d.y - &d.by * &p.theta_mu))).collect();
    let bt_rz: Vec<DVector<f64>> =
        designs.subjects.iter().map(|d| d.bz.tr_mul(&(&d.z - &d.bz * &p.theta_nu))).collect();
    let btb_y: Vec<&DMatrix<f64>> = designs.subjects.iter().map(|d| &d.btb_y).collect();
    let btb_z: Vec<&DMatrix<f64>> = designs.subjects.iter().map(|d| &d.btb_z).collect();

    let weight = |d: &DVector<f64>, j: usize| match scale {
        PcPenaltyScale::Unit => 1.0,
        PcPenaltyScale::ScoreVariance => d[j],
    };
    let f_pen = omega * (n * p.sigma2_eps * l.f);
    let g_pen = omega * (n * p.sigma2_xi * l.g);
    let f = update_columns(&p.theta_f, 0, &btb_y, &bt_ry, posts, &f_pen, |j| weight(&p.d_alpha, j), 'f')?;
    let g = update_columns(&p.theta_g, ka, &btb_z, &bt_rz, posts, &g_pen, |j| weight(&p.d_beta, j), 'g')?;
    Ok((f, g))
}

#[allow(clippy::too_many_arguments)]
fn update_columns<W: Fn(usize) -> f64>(
    current: &DMatrix<f64>,
    offset: usize,
    btb: &[&DMatrix<f64>],
    bt_r: &[DVector<f64>],
    posts: &[PosteriorSummary],
    pen: &DMatrix<f64>,
    pen_weight: W,
    name: char,
) -> Result<DMatrix<f64>> {
    let k = current.ncols();
    let mut theta = current.clone();
    for j in 0..k {
        let mut m = pen * pen_weight(j);
        let mut rhs = DVector::zeros(theta.nrows());
        for ((g, br), post) in btb.iter().zip(bt_r).zip(posts) {
            let w2 = &post.w_second;
            let jj = offset + j;
            m += *g * w2[(jj, jj)];
            // Σ_{l≠j} θ_l W2[l, j]
            let mut others = DVector::zeros(theta.nrows());
            for l in (0..k).filter(|&l| l != j) {
                others.axpy(w2[(offset + l, jj)], &theta.column(l), 1.0);
            }
            rhs += br * post.w_first[jj] - *g * others;
        }
        let col = solve_spd(m, &rhs, || format!("PC column {} of {name}", j + 1))?;
        theta.set_column(j, &col);
    }
    Ok(theta)
}

/// Output of [`identifiability_rotation`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rotated {
    pub theta_f: DMatrix<f64>,
    pub theta_g: DMatrix<f64>,
    pub d_alpha: DVector<f64>,
    pub d_beta: DVector<f64>,
    pub c: DMatrix<f64>,
    /// Set when a retained score variance is (numerically) zero.
    pub rank_deficient: bool,
}

/// Re-express `(Θ*, Σ*)` with orthonormal PC matrices and diagonal,
/// non-increasing score variances.
pub fn identifiability_rotation(
    theta_f_star: &DMatrix<f64>,
    theta_g_star: &DMatrix<f64>,
    sigma_star: &DMatrix<f64>,
) -> Result<Rotated> {
    let (ka, kb) = (theta_f_star.ncols(), theta_g_star.ncols());
    if sigma_star.shape() != (ka + kb, ka + kb) {
        return Err(RrmeError::InvalidArgument(format!(
            "score covariance shape {:?} does not match PC counts ({ka}, {kb})",
            sigma_star.shape()
        )));
    }
    if theta_f_star.iter().chain(theta_g_star.iter()).chain(sigma_star.iter()).any(|v| !v.is_finite()) {
        return Err(RrmeError::Numerical("non-finite input to the identifiability rotation".into()));
    }
    let vaa = sigma_star.view((0, 0), (ka, ka)).into_owned();
    let vbb = sigma_star.view((ka, ka), (kb, kb)).into_owned();
    let vab = sigma_star.view((0, ka), (ka, kb)).into_owned();
    let (theta_f, d_alpha, def_a) = rotate_block(theta_f_star, &vaa);
    let (theta_g, d_beta, def_b) = rotate_block(theta_g_star, &vbb);
    let c = theta_f.tr_mul(theta_f_star) * vab * theta_g_star.transpose() * &theta_g;
    Ok(Rotated {
        theta_f,
        theta_g,
        d_alpha,
        d_beta,
        c,
        rank_deficient: def_a || def_b,
    })
}

fn rotate_block(theta_star: &DMatrix<f64>, v: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, bool) {
    let qr = theta_star.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let mut m = &r * v * r.transpose();
    symmetrize(&mut m);
    let (vals, vecs) = sym_eigen_desc(&m);
    let mut theta = q * vecs;
    normalize_column_signs(&mut theta);
    let top = vals.iter().cloned().fold(0.0f64, f64::max);
    let deficient = vals.iter().any(|&x| x <= 1e-14 * top.max(f64::MIN_POSITIVE));
    (theta, vals.map(|x| x.max(0.0)), deficient)
}

/// Penalized expected complete-data criterion: the mean over subjects of
/// `E[-2 log L_i(complete)]` under the supplied posterior moments, plus the
/// roughness penalty. Returns `+inf` if the score covariance is singular.
pub fn q_function(
    params: &ParameterSet,
    posteriors: &[PosteriorSummary],
    lambdas: &Lambdas,
    basis: &OrthonormalBasis,
    dataset: &PairedDataset,
) -> Result<f64> {
    let designs = Designs::new(basis, dataset)?;
    let omega = designs.omega_for(lambdas)?;
    q_value(params, &designs, posteriors, lambdas, &omega)
}

pub(crate) fn q_value(
    p: &ParameterSet,
    designs: &Designs,
    posts: &[PosteriorSummary],
    l: &Lambdas,
    omega: &DMatrix<f64>,
) -> Result<f64> {
    check_lengths(designs, posts)?;
    let (ka, kb) = (p.k_alpha(), p.k_beta());
    let k = p.score_cov();
    let Some(k_chol) = k.clone().cholesky() else {
        return Ok(f64::INFINITY);
    };
    let log_det_k = 2.0 * k_chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let k_inv = k_chol.inverse();
    let (ln_s2e, ln_s2x) = (p.sigma2_eps.ln(), p.sigma2_xi.ln());
    let mut total = 0.0;
    for (d, post) in designs.subjects.iter().zip(posts) {
        let mut s = 0.0;
        if d.n_y() > 0 {
            let r = &d.y - &d.by * &p.theta_mu;
            let a = &d.by * &p.theta_f;
            let quad = post.u_hat * r.norm_squared() - 2.0 * r.dot(&(&a * post.w_first.rows(0, ka)))
                + a.tr_mul(&a).component_mul(&post.w_second.view((0, 0), (ka, ka))).sum();
            s += quad / p.sigma2_eps + d.n_y() as f64 * ln_s2e;
        }
        if d.n_z() > 0 {
            let r = &d.z - &d.bz * &p.theta_nu;
            let a = &d.bz * &p.theta_g;
            let quad = post.u_hat * r.norm_squared() - 2.0 * r.dot(&(&a * post.w_first.rows(ka, kb)))
                + a.tr_mul(&a).component_mul(&post.w_second.view((ka, ka), (kb, kb))).sum();
            s += quad / p.sigma2_xi + d.n_z() as f64 * ln_s2x;
        }
        s -= (d.n_y() + d.n_z() + ka + kb) as f64 * post.log_u_hat;
        s += log_det_k + k_inv.component_mul(&post.w_second).sum();
        s += neg2_expected_log_mixing(&p.family, post.u_hat, post.log_u_hat);
        total += s;
    }
    Ok(total / designs.n() as f64 + penalty_value(omega, p, l))
}

/// `-2 E[log h(u)]` given the posterior moments of `u`.
pub(crate) fn neg2_expected_log_mixing(family: &MixingFamily, u_hat: f64, log_u_hat: f64) -> f64 {
    match *family {
        MixingFamily::Normal => 0.0,
        MixingFamily::StudentT { gamma } => {
            let h = 0.5 * gamma;
            -gamma * h.ln() + 2.0 * ln_gamma(h) - (gamma - 2.0) * log_u_hat + gamma * u_hat
        }
        MixingFamily::Slash { gamma } => -2.0 * gamma.ln() - 2.0 * (gamma - 1.0) * log_u_hat,
    }
}
