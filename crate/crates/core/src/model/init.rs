use nalgebra::{DMatrix, DVector};

use super::design::Designs;
use super::{Lambdas, PairedDataset, ParameterSet};
use crate::error::{Result, RrmeError};
use crate::linalg::{normalize_column_signs, solve_spd, sym_eigen_desc};
use crate::smnfamily::MixingFamily;
use crate::splinebasis::OrthonormalBasis;

/// Deterministic starting values: penalized pooled least squares for the
/// means, PC directions from the covariance of per-subject ridge fits,
/// `C = 0`, and error variances from rank-`k` reconstruction residuals.
pub fn initial_parameters(
    basis: &OrthonormalBasis,
    dataset: &PairedDataset,
    k_alpha: usize,
    k_beta: usize,
    family: MixingFamily,
    lambdas: &Lambdas,
) -> Result<ParameterSet> {
    let designs = Designs::new(basis, dataset)?;
    let omega = designs.omega_for(lambdas)?;
    initial_from_designs(&designs, k_alpha, k_beta, family, lambdas, &omega)
}

pub(crate) fn initial_from_designs(
    designs: &Designs,
    k_alpha: usize,
    k_beta: usize,
    family: MixingFamily,
    lambdas: &Lambdas,
    omega: &DMatrix<f64>,
) -> Result<ParameterSet> {
    let q = designs.q;
    if k_alpha == 0 || k_beta == 0 || k_alpha >= q || k_beta >= q {
        return Err(RrmeError::InvalidArgument(format!(
            "PC counts ({k_alpha}, {k_beta}) must be at least 1 and below the basis dimension {q}"
        )));
    }
    family.validate()?;
    let ys: Vec<_> = designs.subjects.iter().map(|d| (&d.by, &d.y, &d.btb_y)).collect();
    let zs: Vec<_> = designs.subjects.iter().map(|d| (&d.bz, &d.z, &d.btb_z)).collect();
    let y = init_channel(&ys, q, k_alpha, lambdas.mu, omega, 'Y')?;
    let z = init_channel(&zs, q, k_beta, lambdas.nu, omega, 'Z')?;
    Ok(ParameterSet {
        theta_mu: y.mean,
        theta_nu: z.mean,
        theta_f: y.pcs,
        theta_g: z.pcs,
        d_alpha: y.variances,
        d_beta: z.variances,
        c: DMatrix::zeros(k_alpha, k_beta),
        sigma2_eps: y.sigma2,
        sigma2_xi: z.sigma2,
        family,
    })
}

struct ChannelStart {
    mean: DVector<f64>,
    pcs: DMatrix<f64>,
    variances: DVector<f64>,
    sigma2: f64,
}

type ChannelView<'a> = (&'a DMatrix<f64>, &'a DVector<f64>, &'a DMatrix<f64>);

fn init_channel(
    subjects: &[ChannelView<'_>],
    q: usize,
    k: usize,
    lambda: f64,
    omega: &DMatrix<f64>,
    channel: char,
) -> Result<ChannelStart> {
    let total: usize = subjects.iter().map(|s| s.1.len()).sum();
    if total == 0 {
        return Err(RrmeError::ChannelEmpty(channel));
    }
    let values = subjects.iter().flat_map(|s| s.1.iter().copied());
    let mean_value = values.clone().sum::<f64>() / total as f64;
    let var = values.map(|v| (v - mean_value).powi(2)).sum::<f64>() / total as f64;
    let scale = var.max(1e-12);

    let mut gram = omega * (subjects.len() as f64 * scale * lambda);
    let mut rhs = DVector::zeros(q);
    for (b, y, btb) in subjects {
        gram += *btb;
        rhs += b.tr_mul(y);
    }
    let ridge = 1e-10 * (gram.trace() / q as f64).max(1.0);
    for i in 0..q {
        gram[(i, i)] += ridge;
    }
    let mean = solve_spd(gram, &rhs, || format!("initial mean fit for {channel}"))?;

    // Ridge coefficients of each subject's deviation from the mean.
    let mut cov = DMatrix::zeros(q, q);
    let mut used = 0usize;
    let residuals: Vec<DVector<f64>> = subjects.iter().map(|(b, y, _)| *y - *b * &mean).collect();
    for ((b, _, btb), r) in subjects.iter().zip(&residuals) {
        if r.is_empty() {
            continue;
        }
        let mut m = (*btb).clone();
        let rho = 0.05 * (m.trace() / q as f64) + 1e-8;
        for i in 0..q {
            m[(i, i)] += rho;
        }
        let c = solve_spd(m, &b.tr_mul(r), || format!("initial ridge fit for {channel}"))?;
        cov += &c * c.transpose();
        used += 1;
    }
    cov /= used.max(1) as f64;
    let (vals, vecs) = sym_eigen_desc(&cov);
    let mut pcs = vecs.columns(0, k).into_owned();
    normalize_column_signs(&mut pcs);
    let top = vals[0].max(1e-12);
    let variances = DVector::from_iterator(k, (0..k).map(|j| vals[j].max(1e-6 * top)));

    // Residual variance after projecting each subject on the leading PCs.
    let mut ss = 0.0;
    for ((b, _, _), r) in subjects.iter().zip(&residuals) {
        if r.is_empty() {
            continue;
        }
        let a = *b * &pcs;
        let mut ata = a.tr_mul(&a);
        for i in 0..k {
            ata[(i, i)] += 1e-8;
        }
        let coef = solve_spd(ata, &a.tr_mul(r), || format!("initial projection for {channel}"))?;
        ss += (r - a * coef).norm_squared();
    }
    let sigma2 = (ss / total as f64).max(1e-8 * scale).max(1e-12);
    Ok(ChannelStart {
        mean,
        pcs,
        variances,
        sigma2,
    })
}
