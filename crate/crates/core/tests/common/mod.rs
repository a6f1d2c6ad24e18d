//! Shared helpers for the integration tests: an independent
//! double-exponential integrator and small fixtures.
#![allow(dead_code)]

pub mod oracles;

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rrme::model::{fit, FitOptions, Lambdas, PairedDataset, ParameterSet, SubjectData};
use rrme::simulation::{simulate, Scenario};
use rrme::splinebasis::Derivative;
use rrme::{make_basis, FamilyKind, MixingFamily, OrthonormalBasis};

const MAX_LEVEL: u32 = 14;
const T_MAX: f64 = 4.5;

/// Tanh-sinh quadrature of `f` over `(a, b)`. Endpoints are never evaluated.
pub fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let half = 0.5 * (b - a);
    let sum_at = |h: f64| {
        let n = (T_MAX / h).ceil() as i64;
        let (mut s, mut mass) = (0.0, 0.0);
        for j in -n..=n {
            let t = j as f64 * h;
            let u = FRAC_PI_2 * t.sinh();
            let c = u.cosh();
            let w = FRAC_PI_2 * t.cosh() / (c * c);
            if !(w > 0.0) || !w.is_finite() {
                continue;
            }
            // Distance to the nearer endpoint without cancellation.
            let x = if u < 0.0 {
                a + half * 2.0 / (1.0 + (-2.0 * u).exp())
            } else {
                b - half * 2.0 / (1.0 + (2.0 * u).exp())
            };
            if x <= a || x >= b {
                continue;
            }
            let v = f(x);
            if v.is_finite() {
                s += w * v;
                mass += (w * v).abs();
            }
        }
        (s * h * half, mass * h * half)
    };
    refine(sum_at, rel_tol)
}

/// Sinh-sinh quadrature of `f` over the real line, with the nodes centred
/// at `center` and spread by `scale`.
pub fn sinh_sinh<F: Fn(f64) -> f64>(f: F, center: f64, scale: f64, rel_tol: f64) -> f64 {
    let sum_at = |h: f64| {
        let n = (T_MAX / h).ceil() as i64;
        let (mut s, mut mass) = (0.0, 0.0);
        for j in -n..=n {
            let t = j as f64 * h;
            let u = FRAC_PI_2 * t.sinh();
            let x = center + scale * u.sinh();
            let w = scale * u.cosh() * FRAC_PI_2 * t.cosh();
            let v = f(x) * w;
            if v.is_finite() {
                s += v;
                mass += v.abs();
            }
        }
        (s * h, mass * h)
    };
    refine(sum_at, rel_tol)
}

/// Fixed tanh-sinh nodes and weights on `(a, b)` with step `h`, for
/// integrating many functions at once.
pub fn tanh_sinh_rule(a: f64, b: f64, h: f64) -> Vec<(f64, f64)> {
    let half = 0.5 * (b - a);
    let n = (T_MAX / h).ceil() as i64;
    let mut out = Vec::new();
    for j in -n..=n {
        let t = j as f64 * h;
        let u = FRAC_PI_2 * t.sinh();
        let c = u.cosh();
        let w = FRAC_PI_2 * t.cosh() / (c * c) * h * half;
        let x = a + half * (1.0 + u.tanh());
        if w > 0.0 && x > a && x < b {
            out.push((x, w));
        }
    }
    out
}

/// Halve the step until successive sums agree to `rel_tol` of `∫ |f|`.
fn refine<S: Fn(f64) -> (f64, f64)>(sum_at: S, rel_tol: f64) -> f64 {
    let mut prev = sum_at(0.5).0;
    for level in 2..=MAX_LEVEL {
        let (cur, mass) = sum_at(0.5f64.powi(level as i32));
        if (cur - prev).abs() <= rel_tol * mass {
            return cur;
        }
        prev = cur;
    }
    panic!("tanh-sinh did not reach relative tolerance {rel_tol}: last {prev}");
}

/// Cubic basis on `[0, 1]` with `interior` equally spaced knots.
pub fn unit_basis(interior: usize) -> OrthonormalBasis {
    let knots = (1..=interior).map(|i| i as f64 / (interior + 1) as f64).collect();
    make_basis((0.0, 1.0), knots, 3).unwrap()
}

/// Orthonormal `q × k` matrix from the QR of a random Gaussian matrix.
pub fn random_orthonormal(q: usize, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(q, k, |_, _| rng.random::<f64>() - 0.5);
    m.qr().q().columns(0, k).into_owned()
}

/// A random valid parameter set with a positive definite score covariance.
pub fn random_params(q: usize, ka: usize, kb: usize, family: MixingFamily, seed: u64) -> ParameterSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d_alpha: Vec<f64> = (0..ka).map(|_| 0.2 + rng.random::<f64>()).collect();
    let mut d_beta: Vec<f64> = (0..kb).map(|_| 0.2 + rng.random::<f64>()).collect();
    d_alpha.sort_by(|a, b| b.total_cmp(a));
    d_beta.sort_by(|a, b| b.total_cmp(a));
    // Small enough cross-covariance to keep the whole matrix definite.
    let bound = 0.3 * d_alpha[ka - 1].min(d_beta[kb - 1]) / (ka.max(kb) as f64);
    let c = DMatrix::from_fn(ka, kb, |_, _| bound * (2.0 * rng.random::<f64>() - 1.0));
    ParameterSet {
        theta_mu: DVector::from_fn(q, |_, _| 2.0 * rng.random::<f64>() - 1.0),
        theta_nu: DVector::from_fn(q, |_, _| 2.0 * rng.random::<f64>() - 1.0),
        theta_f: random_orthonormal(q, ka, &mut rng),
        theta_g: random_orthonormal(q, kb, &mut rng),
        d_alpha: DVector::from_vec(d_alpha),
        d_beta: DVector::from_vec(d_beta),
        c,
        sigma2_eps: 0.05 + 0.1 * rng.random::<f64>(),
        sigma2_xi: 0.05 + 0.1 * rng.random::<f64>(),
        family,
    }
}

/// Subjects with `n_y` and `n_z` random times in `[0, 1]` and values drawn
/// around zero.
pub fn random_dataset(sizes: &[(usize, usize)], seed: u64) -> PairedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = sizes
        .iter()
        .enumerate()
        .map(|(i, &(ny, nz))| {
            let mut ty: Vec<f64> = (0..ny).map(|_| rng.random()).collect();
            let mut tz: Vec<f64> = (0..nz).map(|_| rng.random()).collect();
            ty.sort_by(f64::total_cmp);
            tz.sort_by(f64::total_cmp);
            SubjectData {
                id: format!("s{i}"),
                values_y: ty.iter().map(|t| (3.0 * t).sin() + rng.random::<f64>() - 0.5).collect(),
                values_z: tz.iter().map(|t| (2.0 * t).cos() + rng.random::<f64>() - 0.5).collect(),
                times_y: ty,
                times_z: tz,
            }
        })
        .collect();
    PairedDataset::new(subjects, (0.0, 1.0)).unwrap()
}

/// Stacked residual, loadings and marginal scale matrix of one subject,
/// built directly from the basis design matrices.
pub struct SubjectModel {
    pub resid: DVector<f64>,
    pub loadings: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

pub fn subject_model(p: &ParameterSet, basis: &OrthonormalBasis, s: &SubjectData) -> SubjectModel {
    let (ka, kb) = (p.k_alpha(), p.k_beta());
    let (ny, nz) = (s.times_y.len(), s.times_z.len());
    let by = basis.design_matrix(&s.times_y).unwrap();
    let bz = basis.design_matrix(&s.times_z).unwrap();
    let mut resid = DVector::zeros(ny + nz);
    resid.rows_mut(0, ny).copy_from(&(DVector::from_vec(s.values_y.clone()) - &by * &p.theta_mu));
    resid.rows_mut(ny, nz).copy_from(&(DVector::from_vec(s.values_z.clone()) - &bz * &p.theta_nu));
    let mut a = DMatrix::zeros(ny + nz, ka + kb);
    a.view_mut((0, 0), (ny, ka)).copy_from(&(&by * &p.theta_f));
    a.view_mut((ny, ka), (nz, kb)).copy_from(&(&bz * &p.theta_g));
    let k = p.score_cov();
    let mut sigma = &a * &k * a.transpose();
    for i in 0..ny {
        sigma[(i, i)] += p.sigma2_eps;
    }
    for i in ny..ny + nz {
        sigma[(i, i)] += p.sigma2_xi;
    }
    SubjectModel {
        resid,
        loadings: a,
        k,
        sigma,
    }
}

/// Breakpoints of the basis: domain ends and distinct interior knots.
fn pieces(basis: &OrthonormalBasis) -> Vec<(f64, f64)> {
    let kv = basis.knots();
    let mut pts = vec![kv.lo];
    pts.extend(kv.interior.iter().copied().filter(|k| *k > kv.lo && *k < kv.hi));
    pts.push(kv.hi);
    pts.dedup();
    pts.windows(2).map(|w| (w[0], w[1])).collect()
}

/// `∫ v(t) v(t)ᵀ dt` for a vector-valued `v`, piece by piece.
pub fn outer_integral<F: Fn(f64) -> DVector<f64>>(basis: &OrthonormalBasis, v: F) -> DMatrix<f64> {
    let q = basis.dim();
    let mut m = DMatrix::zeros(q, q);
    for (a, b) in pieces(basis) {
        for (x, w) in tanh_sinh_rule(a, b, 1.0 / 64.0) {
            let bx = v(x);
            m += w * &bx * bx.transpose();
        }
    }
    m
}

/// Max-entry distance of the re-integrated Gram matrix from the identity.
pub fn orthonormality_error(basis: &OrthonormalBasis) -> f64 {
    let g = outer_integral(basis, |t| basis.eval(t, Derivative::Value).unwrap());
    (g - DMatrix::identity(basis.dim(), basis.dim())).amax()
}

/// Orthonormal coordinates of `p` by projection, `∫ b(t) p(t) dt`.
pub fn project<F: Fn(f64) -> f64>(basis: &OrthonormalBasis, p: F) -> DVector<f64> {
    let mut c = DVector::zeros(basis.dim());
    for (a, b) in pieces(basis) {
        for (x, w) in tanh_sinh_rule(a, b, 1.0 / 64.0) {
            c += w * p(x) * basis.eval(x, Derivative::Value).unwrap();
        }
    }
    c
}

/// Relative error of `coefᵀ Ω coef` against the exact `∫ p''²` for the
/// cubic `p(t) = Σ a_i t^i`.
pub fn cubic_penalty_error(basis: &OrthonormalBasis, a: [f64; 4]) -> f64 {
    let (lo, hi) = basis.domain();
    let coef = project(basis, |t| a[0] + t * (a[1] + t * (a[2] + t * a[3])));
    let omega = basis.penalty().unwrap();
    let got = (coef.transpose() * omega * &coef)[(0, 0)];
    // p'' = c + d t
    let (c, d) = (2.0 * a[2], 6.0 * a[3]);
    let exact = c * c * (hi - lo) + c * d * (hi * hi - lo * lo) + d * d * (hi.powi(3) - lo.powi(3)) / 3.0;
    (got - exact).abs() / exact.abs().max(1e-300)
}

/// Eigenvalues of Ω in increasing order.
pub fn penalty_spectrum(basis: &OrthonormalBasis) -> Vec<f64> {
    let mut ev: Vec<f64> = basis.penalty().unwrap().clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Largest deviation of `Σ_k B_k(t)` from one over a fine grid.
pub fn partition_error(basis: &OrthonormalBasis) -> f64 {
    let (lo, hi) = basis.domain();
    (0..=1000)
        .map(|i| lo + (hi - lo) * i as f64 / 1000.0)
        .map(|t| (basis.eval_raw(t, Derivative::Value).unwrap().sum() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Three Y points and two Z points.
pub fn tiny_subject() -> SubjectData {
    SubjectData {
        id: "tiny".into(),
        times_y: vec![0.1, 0.45, 0.8],
        values_y: vec![0.9, -0.4, 1.6],
        times_z: vec![0.3, 0.7],
        values_z: vec![-1.1, 0.5],
    }
}

/// Five EM iterations on a small seed-0 heavy-tailed sample.
pub fn seed_zero_instance(family: FamilyKind) -> (OrthonormalBasis, PairedDataset, ParameterSet, Lambdas) {
    let (ds, _) = simulate(Scenario::StudentT, Some(4.0), 0.04, 30, 0).unwrap();
    let basis = unit_basis(6);
    let lambdas = Lambdas::uniform(1e-3);
    let opts = FitOptions {
        lambdas,
        max_iter: 5,
        ..FitOptions::default()
    };
    let p = fit(&ds, &basis, 2, 2, family, &opts).unwrap().params;
    (basis, ds, p, lambdas)
}
