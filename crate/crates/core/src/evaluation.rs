//! Integrated absolute errors of fitted curves against known truth.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RrmeError};
use crate::model::{subject_posterior, Channel, PairedDataset, ParameterSet, PosteriorSummary, SubjectData};
use crate::par;
use crate::simulation::GroundTruth;
use crate::smnfamily::MixingFamily;
use crate::splinebasis::{Derivative, OrthonormalBasis};

/// Number of equal sub-intervals in the IAE Riemann sum.
pub const IAE_INTERVALS: usize = 100;

/// Midpoints of the IAE partition of `domain`.
pub fn iae_grid(domain: (f64, f64)) -> Vec<f64> {
    let h = (domain.1 - domain.0) / IAE_INTERVALS as f64;
    (0..IAE_INTERVALS).map(|i| domain.0 + (i as f64 + 0.5) * h).collect()
}

/// `∫ |ĥ - h|` over `domain` by the midpoint rule on 100 intervals.
pub fn iae<F, G>(estimate: F, truth: G, domain: (f64, f64)) -> f64
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let grid = iae_grid(domain);
    let a: Vec<f64> = grid.iter().map(|&t| estimate(t)).collect();
    let b: Vec<f64> = grid.iter().map(|&t| truth(t)).collect();
    iae_from_samples(&a, &b, domain)
}

/// IAE from values already sampled on [`iae_grid`].
pub fn iae_from_samples(estimate: &[f64], truth: &[f64], domain: (f64, f64)) -> f64 {
    let h = (domain.1 - domain.0) / estimate.len() as f64;
    h * estimate.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Per-component sign in `{+1, -1}` minimising the IAE to the matching
/// true component. Components are not permuted.
pub fn align_components(
    estimated: &[&dyn Fn(f64) -> f64],
    truth: &[&dyn Fn(f64) -> f64],
    domain: (f64, f64),
) -> Result<Vec<f64>> {
    if estimated.len() != truth.len() {
        return Err(RrmeError::InvalidArgument(format!(
            "{} estimated components against {} true ones",
            estimated.len(),
            truth.len()
        )));
    }
    Ok(estimated
        .iter()
        .zip(truth)
        .map(|(e, t)| {
            let plus = iae(|x| e(x), |x| t(x), domain);
            let minus = iae(|x| -e(x), |x| t(x), domain);
            if minus < plus {
                -1.0
            } else {
                1.0
            }
        })
        .collect())
}

/// Anything that can describe mean and PC functions plus the score and
/// noise distribution: a fitted spline model or the closed-form truth.
pub trait CurveModel: Sync {
    fn k(&self, channel: Channel) -> usize;
    /// Mean value and PC values of `channel` at `t`.
    fn eval(&self, channel: Channel, t: f64) -> Result<(f64, Vec<f64>)>;
    fn score_cov(&self) -> DMatrix<f64>;
    fn noise_variances(&self) -> (f64, f64);
    fn family(&self) -> MixingFamily;
}

/// A fitted parameter set together with its basis.
#[derive(Debug, Clone, Copy)]
pub struct SplineModel<'a> {
    pub params: &'a ParameterSet,
    pub basis: &'a OrthonormalBasis,
}

impl CurveModel for SplineModel<'_> {
    fn k(&self, channel: Channel) -> usize {
        match channel {
            Channel::Y => self.params.k_alpha(),
            Channel::Z => self.params.k_beta(),
        }
    }

    fn eval(&self, channel: Channel, t: f64) -> Result<(f64, Vec<f64>)> {
        let b = self.basis.eval(t, Derivative::Value)?;
        let (mean, pcs) = match channel {
            Channel::Y => (&self.params.theta_mu, &self.params.theta_f),
            Channel::Z => (&self.params.theta_nu, &self.params.theta_g),
        };
        Ok((b.dot(mean), (pcs.transpose() * &b).as_slice().to_vec()))
    }

    fn score_cov(&self) -> DMatrix<f64> {
        self.params.score_cov()
    }

    fn noise_variances(&self) -> (f64, f64) {
        (self.params.sigma2_eps, self.params.sigma2_xi)
    }

    fn family(&self) -> MixingFamily {
        self.params.family
    }
}

/// E-step posterior of one subject under any [`CurveModel`].
pub fn model_posterior<M: CurveModel + ?Sized>(model: &M, subject: &SubjectData) -> Result<PosteriorSummary> {
    if subject.is_empty() {
        return Err(RrmeError::EmptySubject(subject.id.clone()));
    }
    let (ka, kb) = (model.k(Channel::Y), model.k(Channel::Z));
    let (ny, nz) = (subject.n_y(), subject.n_z());
    let mut resid = DVector::zeros(ny + nz);
    let mut loadings = DMatrix::zeros(ny + nz, ka + kb);
    for (row, (&t, &v)) in subject.times_y.iter().zip(&subject.values_y).enumerate() {
        let (m, pcs) = model.eval(Channel::Y, t)?;
        resid[row] = v - m;
        for (j, p) in pcs.into_iter().enumerate() {
            loadings[(row, j)] = p;
        }
    }
    for (i, (&t, &v)) in subject.times_z.iter().zip(&subject.values_z).enumerate() {
        let (m, pcs) = model.eval(Channel::Z, t)?;
        resid[ny + i] = v - m;
        for (j, p) in pcs.into_iter().enumerate() {
            loadings[(ny + i, ka + j)] = p;
        }
    }
    let (s2e, s2x) = model.noise_variances();
    subject_posterior(&resid, &loadings, ny, &model.score_cov(), s2e, s2x, &model.family())
}

/// Mean, PC and individual-curve IAEs of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_y: f64,
    pub mean_z: f64,
    /// Sign-aligned IAE per Y component.
    pub pc_y: Vec<f64>,
    pub pc_z: Vec<f64>,
    pub signs_y: Vec<f64>,
    pub signs_z: Vec<f64>,
    /// Average over subjects of the reconstructed-curve IAE.
    pub individual_y: f64,
    pub individual_z: f64,
    /// The fitted and true PC counts differ; unmatched components were
    /// compared against the zero function.
    pub component_mismatch: bool,
}

impl EvalReport {
    /// Every error value multiplied by `factor` (signs untouched).
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |v: &Vec<f64>| v.iter().map(|x| x * factor).collect();
        Self {
            mean_y: self.mean_y * factor,
            mean_z: self.mean_z * factor,
            pc_y: s(&self.pc_y),
            pc_z: s(&self.pc_z),
            signs_y: self.signs_y.clone(),
            signs_z: self.signs_z.clone(),
            individual_y: self.individual_y * factor,
            individual_z: self.individual_z * factor,
            component_mismatch: self.component_mismatch,
        }
    }

    /// Average IAE over all PC functions of both channels.
    pub fn pc_mean(&self) -> f64 {
        let all: Vec<f64> = self.pc_y.iter().chain(&self.pc_z).copied().collect();
        all.iter().sum::<f64>() / all.len().max(1) as f64
    }

    pub fn individual_mean(&self) -> f64 {
        0.5 * (self.individual_y + self.individual_z)
    }

    /// Column labels and values in table order: means, Y PCs, Z PCs,
    /// individual curves.
    pub fn columns(&self) -> Vec<(String, f64)> {
        let mut out = vec![("mu".to_string(), self.mean_y), ("nu".to_string(), self.mean_z)];
        out.extend(self.pc_y.iter().enumerate().map(|(j, v)| (format!("f{}", j + 1), *v)));
        out.extend(self.pc_z.iter().enumerate().map(|(j, v)| (format!("g{}", j + 1), *v)));
        out.push(("Y".to_string(), self.individual_y));
        out.push(("Z".to_string(), self.individual_z));
        out
    }
}

struct Sampled {
    mean: Vec<f64>,
    /// `pcs[j][i]`: component `j` at grid point `i`.
    pcs: Vec<Vec<f64>>,
}

fn sample<M: CurveModel + ?Sized>(model: &M, channel: Channel, grid: &[f64]) -> Result<Sampled> {
    let k = model.k(channel);
    let mut mean = Vec::with_capacity(grid.len());
    let mut pcs = vec![Vec::with_capacity(grid.len()); k];
    for &t in grid {
        let (m, p) = model.eval(channel, t)?;
        mean.push(m);
        for (j, v) in p.into_iter().enumerate() {
            pcs[j].push(v);
        }
    }
    Ok(Sampled { mean, pcs })
}

fn aligned_pcs(est: &Sampled, truth: &Sampled, domain: (f64, f64)) -> (Vec<f64>, Vec<f64>) {
    let m = est.pcs.len().max(truth.pcs.len());
    let zero = vec![0.0; IAE_INTERVALS];
    let mut errs = Vec::with_capacity(m);
    let mut signs = Vec::with_capacity(m);
    for j in 0..m {
        let e = est.pcs.get(j).unwrap_or(&zero);
        let t = truth.pcs.get(j).unwrap_or(&zero);
        let plus = iae_from_samples(e, t, domain);
        let neg: Vec<f64> = e.iter().map(|v| -v).collect();
        let minus = iae_from_samples(&neg, t, domain);
        if minus < plus {
            errs.push(minus);
            signs.push(-1.0);
        } else {
            errs.push(plus);
            signs.push(1.0);
        }
    }
    (errs, signs)
}

fn curve(s: &Sampled, scores: &[f64]) -> Vec<f64> {
    let mut c = s.mean.clone();
    for (pc, a) in s.pcs.iter().zip(scores) {
        for (ci, p) in c.iter_mut().zip(pc) {
            *ci += a * p;
        }
    }
    c
}

/// Compare a fitted model with the simulation truth on `dataset`.
pub fn evaluate_fit<M: CurveModel + ?Sized>(
    model: &M,
    truth: &GroundTruth,
    dataset: &PairedDataset,
) -> Result<EvalReport> {
    if truth.subjects.len() != dataset.n() {
        return Err(RrmeError::InvalidArgument(format!(
            "truth covers {} subjects, dataset has {}",
            truth.subjects.len(),
            dataset.n()
        )));
    }
    let domain = dataset.domain;
    let grid = iae_grid(domain);
    let true_model = truth.model();
    let (ey, ez) = (sample(model, Channel::Y, &grid)?, sample(model, Channel::Z, &grid)?);
    let (ty, tz) = (sample(&true_model, Channel::Y, &grid)?, sample(&true_model, Channel::Z, &grid)?);
    let (pc_y, signs_y) = aligned_pcs(&ey, &ty, domain);
    let (pc_z, signs_z) = aligned_pcs(&ez, &tz, domain);
    let ka = model.k(Channel::Y);
    let true_ka = true_model.k(Channel::Y);

    let per_subject = par::map_range(dataset.n(), |i| -> Result<(f64, f64)> {
        let post = model_posterior(model, &dataset.subjects[i])?;
        let s = post.score_mean.as_slice();
        let real = &truth.subjects[i].scores;
        let iy = iae_from_samples(&curve(&ey, &s[..ka]), &curve(&ty, &real[..true_ka]), domain);
        let iz = iae_from_samples(&curve(&ez, &s[ka..]), &curve(&tz, &real[true_ka..]), domain);
        Ok((iy, iz))
    });
    let (mut sy, mut sz) = (0.0, 0.0);
    for r in per_subject {
        let (a, b) = r?;
        sy += a;
        sz += b;
    }
    let n = dataset.n() as f64;
    Ok(EvalReport {
        mean_y: iae_from_samples(&ey.mean, &ty.mean, domain),
        mean_z: iae_from_samples(&ez.mean, &tz.mean, domain),
        component_mismatch: ka != true_ka || model.k(Channel::Z) != true_model.k(Channel::Z),
        pc_y,
        pc_z,
        signs_y,
        signs_z,
        individual_y: sy / n,
        individual_z: sz / n,
    })
}
