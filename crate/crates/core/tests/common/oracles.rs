//! Test-side re-derivations of the model quantities: a Monte-Carlo
//! posterior, quadrature marginal likelihoods and the expected complete-data
//! criterion with finite-difference gradients.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rrme::model::{
    e_step, m_step_means, m_step_pcs_and_cov, m_step_variances, Lambdas, PairedDataset, ParameterSet,
    PosteriorSummary, SubjectData,
};
use rrme::smnfamily::{gamma_objective, gamma_update, GammaBounds};
use rrme::{MixingFamily, OrthonormalBasis};

use super::{sinh_sinh, subject_model, tanh_sinh};

/// `ln Γ(x)` by shifting to `x ≥ 15` and Stirling's series.
pub fn ln_gamma(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 15.0 {
        shift -= x.ln();
        x += 1.0;
    }
    let x2 = x * x;
    let series = 1.0 / (12.0 * x) - 1.0 / (360.0 * x * x2) + 1.0 / (1260.0 * x * x2 * x2) - 1.0 / (1680.0 * x * x2 * x2 * x2);
    shift + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

fn log_det_and_quad(sigma: &DMatrix<f64>, r: &DVector<f64>) -> (f64, f64) {
    let ch = sigma.clone().cholesky().expect("positive definite");
    let log_det = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let delta = r.dot(&ch.solve(r));
    (log_det, delta)
}

/// `ln ∫ N(r; 0, Σ/u) h(u) du` by quadrature over the mixing variable.
pub fn log_marginal(p: &ParameterSet, basis: &OrthonormalBasis, s: &SubjectData) -> f64 {
    let m = subject_model(p, basis, s);
    let (log_det, delta) = log_det_and_quad(&m.sigma, &m.resid);
    let d = m.resid.len() as f64;
    let base = -0.5 * d * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det;
    match p.family {
        MixingFamily::Normal => base - 0.5 * delta,
        MixingFamily::StudentT { gamma } => {
            let h = 0.5 * gamma;
            let log_h0 = h * h.ln() - ln_gamma(h);
            // In s = ln u: exponent a s - b e^s.
            let a = h + 0.5 * d;
            let b = 0.5 * (gamma + delta);
            let mode = (a / b).ln();
            let peak = a * mode - b * mode.exp();
            let v = sinh_sinh(|s| (a * s - b * s.exp() - peak).exp(), mode, 1.0 / a.sqrt(), 1e-14);
            base + log_h0 + peak + v.ln()
        }
        MixingFamily::Slash { gamma } => {
            let a = gamma + 0.5 * d;
            let log_k = |u: f64| (a - 1.0) * u.ln() - 0.5 * delta * u;
            let top = if delta > 0.0 && a > 1.0 { (2.0 * (a - 1.0) / delta).min(1.0) } else { 1.0 };
            let peak = log_k(top);
            let v = tanh_sinh(|u| (log_k(u) - peak).exp(), 0.0, 1.0, 1e-14);
            base + gamma.ln() + peak + v.ln()
        }
    }
}

/// Monte-Carlo estimates and standard errors of `E[u s]` and `E[u s sᵀ]`
/// for a Student-t subject: `u` from its gamma posterior, then the scores
/// from their conditional normal.
pub struct McMoments {
    pub w_first: DVector<f64>,
    pub se_first: DVector<f64>,
    pub w_second: DMatrix<f64>,
    pub se_second: DMatrix<f64>,
}

pub fn mc_t_moments(p: &ParameterSet, basis: &OrthonormalBasis, s: &SubjectData, draws: usize, seed: u64) -> McMoments {
    let MixingFamily::StudentT { gamma } = p.family else {
        panic!("Student t family expected")
    };
    let m = subject_model(p, basis, s);
    let (_, delta) = log_det_and_quad(&m.sigma, &m.resid);
    let d = m.resid.len() as f64;
    let sig_inv = m.sigma.clone().try_inverse().unwrap();
    let ka = &m.k * m.loadings.transpose();
    let mean = &ka * &sig_inv * &m.resid;
    let cov = &m.k - &ka * &sig_inv * ka.transpose();
    let l = cov.clone().cholesky().unwrap().l();
    let k = mean.len();

    let u_dist = Gamma::new(0.5 * (gamma + d), 2.0 / (gamma + delta)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s1, mut q1) = (DVector::zeros(k), DVector::zeros(k));
    let (mut s2, mut q2) = (DMatrix::zeros(k, k), DMatrix::zeros(k, k));
    for _ in 0..draws {
        let u: f64 = u_dist.sample(&mut rng);
        let z = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
        let a = &mean + &l * z / u.sqrt();
        let x1 = u * &a;
        let x2 = u * &a * a.transpose();
        q1 += x1.component_mul(&x1);
        q2 += x2.component_mul(&x2);
        s1 += x1;
        s2 += x2;
    }
    let n = draws as f64;
    let m1 = s1 / n;
    let m2 = s2 / n;
    let se1 = (q1 / n - m1.component_mul(&m1)).map(|v| (v / n).sqrt());
    let se2 = (q2 / n - m2.component_mul(&m2)).map(|v| (v / n).sqrt());
    McMoments {
        w_first: m1,
        se_first: se1,
        w_second: m2,
        se_second: se2,
    }
}

/// Expected penalized complete-data criterion with parameter-free terms
/// dropped, for a general score covariance `k`.
pub fn q_oracle(
    p: &ParameterSet,
    k: &DMatrix<f64>,
    posts: &[PosteriorSummary],
    lambdas: &Lambdas,
    basis: &OrthonormalBasis,
    ds: &PairedDataset,
) -> f64 {
    let (ka, kb) = (p.k_alpha(), p.k_beta());
    let k_inv = k.clone().try_inverse().unwrap();
    let log_det_k = k.determinant().ln();
    let mut total = 0.0;
    for (s, post) in ds.subjects.iter().zip(posts) {
        let by = basis.design_matrix(&s.times_y).unwrap();
        let bz = basis.design_matrix(&s.times_z).unwrap();
        let channel = |b: &DMatrix<f64>, vals: &[f64], mean: &DVector<f64>, theta: &DMatrix<f64>, off: usize, kk: usize, s2: f64| {
            if vals.is_empty() {
                return 0.0;
            }
            let r = DVector::from_column_slice(vals) - b * mean;
            let a = b * theta;
            let w1 = post.w_first.rows(off, kk);
            let w2 = post.w_second.view((off, off), (kk, kk));
            let ss = post.u_hat * r.dot(&r) - 2.0 * r.dot(&(&a * w1)) + (a.transpose() * &a * w2).trace();
            vals.len() as f64 * s2.ln() + ss / s2
        };
        total += channel(&by, &s.values_y, &p.theta_mu, &p.theta_f, 0, ka, p.sigma2_eps);
        total += channel(&bz, &s.values_z, &p.theta_nu, &p.theta_g, ka, kb, p.sigma2_xi);
        total += log_det_k + (&k_inv * &post.w_second).trace();
    }
    let omega = basis.penalty().unwrap();
    let quad = |v: DVector<f64>| (v.transpose() * omega * &v)[(0, 0)];
    let cols = |m: &DMatrix<f64>| m.column_iter().map(|c| quad(c.into_owned())).sum::<f64>();
    total / ds.n() as f64
        + lambdas.mu * quad(p.theta_mu.clone())
        + lambdas.nu * quad(p.theta_nu.clone())
        + lambdas.f * cols(&p.theta_f)
        + lambdas.g * cols(&p.theta_g)
}

/// Central difference derivative of `f` at `x0`.
fn fd_gradient<F: Fn(f64) -> f64>(f: F, x0: f64) -> f64 {
    let h = 1e-6 * x0.abs().max(1e-2);
    (f(x0 + h) - f(x0 - h)) / (2.0 * h)
}

/// Largest finite-difference gradient of the criterion with respect to each
/// block, evaluated right after that block's M-step update.
pub fn stationarity_report(
    p: &ParameterSet,
    basis: &OrthonormalBasis,
    ds: &PairedDataset,
    lambdas: &Lambdas,
) -> Vec<(String, f64)> {
    let posts = e_step(p, basis, ds).unwrap();
    let k0 = p.score_cov();
    let q = |par: &ParameterSet, k: &DMatrix<f64>| q_oracle(par, k, &posts, lambdas, basis, ds);
    let mut out = Vec::new();

    let (s2e, s2x) = m_step_variances(p, basis, ds, &posts).unwrap();
    let mut p1 = p.clone();
    p1.sigma2_eps = s2e;
    p1.sigma2_xi = s2x;
    let g_eps = fd_gradient(|v| q(&ParameterSet { sigma2_eps: v, ..p1.clone() }, &k0), s2e);
    let g_xi = fd_gradient(|v| q(&ParameterSet { sigma2_xi: v, ..p1.clone() }, &k0), s2x);
    out.push(("error variances".to_string(), g_eps.abs().max(g_xi.abs())));

    let (mu, nu) = m_step_means(&p1, basis, ds, &posts, lambdas).unwrap();
    let mut p2 = p1.clone();
    p2.theta_mu = mu;
    p2.theta_nu = nu;
    let mut worst: f64 = 0.0;
    for i in 0..p2.q() {
        let g = fd_gradient(
            |v| {
                let mut t = p2.clone();
                t.theta_mu[i] = v;
                q(&t, &k0)
            },
            p2.theta_mu[i],
        );
        let h = fd_gradient(
            |v| {
                let mut t = p2.clone();
                t.theta_nu[i] = v;
                q(&t, &k0)
            },
            p2.theta_nu[i],
        );
        worst = worst.max(g.abs()).max(h.abs());
    }
    out.push(("mean coefficients".to_string(), worst));

    let (f_star, g_star, sigma_star) = m_step_pcs_and_cov(&p2, basis, ds, &posts, lambdas).unwrap();
    let mut worst: f64 = 0.0;
    for (is_f, star) in [(true, &f_star), (false, &g_star)] {
        for j in 0..star.ncols() {
            // Columns after j still hold the previous iterate during its update.
            let mut cfg = p2.clone();
            let m = if is_f { &mut cfg.theta_f } else { &mut cfg.theta_g };
            for l in 0..=j {
                m.set_column(l, &star.column(l));
            }
            for i in 0..cfg.q() {
                let g = fd_gradient(
                    |v| {
                        let mut t = cfg.clone();
                        if is_f {
                            t.theta_f[(i, j)] = v;
                        } else {
                            t.theta_g[(i, j)] = v;
                        }
                        q(&t, &k0)
                    },
                    if is_f { cfg.theta_f[(i, j)] } else { cfg.theta_g[(i, j)] },
                );
                worst = worst.max(g.abs());
            }
        }
    }
    out.push(("principal component columns".to_string(), worst));

    let mut worst: f64 = 0.0;
    let dim = sigma_star.nrows();
    for a in 0..dim {
        for b in a..dim {
            let g = fd_gradient(
                |v| {
                    let mut k = sigma_star.clone();
                    k[(a, b)] = v;
                    k[(b, a)] = v;
                    q(&p2, &k)
                },
                sigma_star[(a, b)],
            );
            worst = worst.max(g.abs());
        }
    }
    out.push(("score covariance".to_string(), worst));

    if p.family.gamma().is_some() {
        let kind = p.family.kind();
        let u: Vec<f64> = posts.iter().map(|s| s.u_hat).collect();
        let lu: Vec<f64> = posts.iter().map(|s| s.log_u_hat).collect();
        let bounds = GammaBounds::default();
        let gamma = gamma_update(kind, &u, &lu, bounds).unwrap();
        let n = posts.len() as f64;
        let g = if gamma > bounds.min && gamma < bounds.max {
            fd_gradient(|v| gamma_objective(kind, v, &u, &lu).unwrap() / n, gamma)
        } else {
            0.0
        };
        out.push(("degrees of freedom".to_string(), g.abs()));
    }
    out
}

/// Posterior moments of the latent scale by quadrature of
/// `h(u) u^{d/2} exp(-u δ / 2)`, never touching the closed forms.
pub fn posterior_u_moments(family: &MixingFamily, delta: f64, d: usize) -> (f64, f64) {
    let half_d = 0.5 * d as f64;
    match *family {
        MixingFamily::StudentT { gamma } => {
            // Integrate over s = ln u; the log-kernel is a s - b e^s.
            let a = 0.5 * gamma + half_d;
            let b = 0.5 * (gamma + delta);
            let mode = (a / b).ln();
            let peak = a * mode - a;
            let kernel = |s: f64| (a * s - b * s.exp() - peak).exp();
            let scale = 1.0 / a.sqrt();
            let z = sinh_sinh(kernel, mode, scale, 1e-13);
            let m1 = sinh_sinh(|s| s.exp() * kernel(s), mode, scale, 1e-13);
            let ml = sinh_sinh(|s| s * kernel(s), mode, scale, 1e-13);
            (m1 / z, ml / z)
        }
        MixingFamily::Slash { gamma } => {
            let a = gamma + half_d;
            let log_kernel = |u: f64| (a - 1.0) * u.ln() - 0.5 * delta * u;
            // Peak of the log-kernel on (0, 1].
            let top = if delta > 0.0 && a > 1.0 { (2.0 * (a - 1.0) / delta).min(1.0) } else { 1.0 };
            let peak = log_kernel(top);
            let kernel = |u: f64| (log_kernel(u) - peak).exp();
            let z = tanh_sinh(kernel, 0.0, 1.0, 1e-13);
            let m1 = tanh_sinh(|u| u * kernel(u), 0.0, 1.0, 1e-13);
            let ml = tanh_sinh(|u| u.ln() * kernel(u), 0.0, 1.0, 1e-13);
            (m1 / z, ml / z)
        }
        MixingFamily::Normal => (1.0, 0.0),
    }
}
