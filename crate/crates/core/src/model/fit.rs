//! EM driver.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::design::Designs;
use super::estep::{e_step_designs, objective_from};
use super::init::initial_from_designs;
use super::mstep::{identifiability_rotation, means, pcs, score_cov_update, variances};
use super::{Lambdas, PairedDataset, ParameterSet, PosteriorSummary};
use crate::error::{Result, RrmeError};
use crate::smnfamily::{gamma_objective, gamma_update, FamilyKind, GammaBounds};
use crate::splinebasis::OrthonormalBasis;

/// Weighting of the roughness penalty in the PC-column updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcPenaltyScale {
    /// Penalty `n σ² λ Ω`: the exact conditional minimizer of the
    /// expected criterion.
    #[default]
    Unit,
    /// Penalty `n σ² D_jj λ Ω`, weighting each column by its current score
    /// variance.
    ScoreVariance,
}

/// Where EM starts.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitMode {
    #[default]
    Default,
    /// Start from a given parameter set (family and PC counts must match).
    Warm(ParameterSet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub lambdas: Lambdas,
    pub max_iter: usize,
    /// Stop once the relative change of the objective falls below this.
    pub rel_tol: f64,
    pub gamma_bounds: GammaBounds,
    /// Starting degrees of freedom; the family default when `None`.
    pub gamma_init: Option<f64>,
    /// Keep the degrees of freedom at their starting value.
    pub fix_gamma: bool,
    pub init: InitMode,
    pub pc_penalty_scale: PcPenaltyScale,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lambdas: Lambdas::default(),
            max_iter: 500,
            rel_tol: 1e-6,
            gamma_bounds: GammaBounds::default(),
            gamma_init: None,
            fix_gamma: false,
            init: InitMode::Default,
            pc_penalty_scale: PcPenaltyScale::Unit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Relative objective change fell below the tolerance.
    Converged,
    /// No update could lower the objective any further.
    Stalled,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ParameterSet,
    /// Posteriors under `params`.
    pub posteriors: Vec<PosteriorSummary>,
    /// Objective after each completed iteration.
    pub objective_trace: Vec<f64>,
    /// Objective at the starting values.
    pub initial_objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// Iterations that had to leave some PC columns un-updated to keep the
    /// objective from rising.
    pub restricted_steps: usize,
    /// The last rotation found a zero score variance.
    pub rank_deficient: bool,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(self.initial_objective)
    }
}

/// Relative slack under which a candidate counts as non-increasing.
const ACCEPT_SLACK: f64 = 1e-10;

/// Fit the model by penalized EM.
pub fn fit(
    dataset: &PairedDataset,
    basis: &OrthonormalBasis,
    k_alpha: usize,
    k_beta: usize,
    family_kind: FamilyKind,
    options: &FitOptions,
) -> Result<FitResult> {
    let designs = Designs::new(basis, dataset)?;
    fit_designs(&designs, k_alpha, k_beta, family_kind, options)
}

pub(crate) fn fit_designs(
    designs: &Designs,
    k_alpha: usize,
    k_beta: usize,
    family_kind: FamilyKind,
    options: &FitOptions,
) -> Result<FitResult> {
    options.lambdas.validate()?;
    if !(options.rel_tol >= 0.0) {
        return Err(RrmeError::InvalidArgument("rel_tol must be non-negative".into()));
    }
    let omega = designs.omega_for(&options.lambdas)?;
    let gamma0 = options.gamma_init.or(family_kind.default_gamma()).unwrap_or(1.0);
    let mut params = match &options.init {
        InitMode::Default => {
            initial_from_designs(designs, k_alpha, k_beta, family_kind.with_gamma(gamma0), &options.lambdas, &omega)?
        }
        InitMode::Warm(p) => {
            if p.k_alpha() != k_alpha || p.k_beta() != k_beta || p.q() != designs.q || p.family.kind() != family_kind {
                return Err(RrmeError::InvalidArgument(
                    "warm start does not match the requested model".into(),
                ));
            }
            let mut p = p.clone();
            if let Some(g) = options.gamma_init {
                p.family = family_kind.with_gamma(g);
            }
            p
        }
    };
    params.validate()?;

    let evaluate = |p: &ParameterSet| -> Result<(Vec<PosteriorSummary>, f64)> {
        let posts = e_step_designs(p, designs)?;
        let f = objective_from(&posts, super::design::penalty_value(&omega, p, &options.lambdas));
        Ok((posts, f))
    };

    let (mut posts, mut current) = evaluate(&params)?;
    if !current.is_finite() {
        return Err(RrmeError::Numerical("objective is not finite at the starting values".into()));
    }
    let initial_objective = current;
    let mut trace = Vec::new();
    let mut stop = StopReason::MaxIter;
    let mut restricted_steps = 0;
    let mut rank_deficient = false;

    for iter in 1..=options.max_iter {
        let limit = current + ACCEPT_SLACK * current.abs();
        let mut accepted = None;
        if let Ok(blocks) = block_updates(&params, designs, &posts, options, &omega) {
            let widest = params.k_alpha().max(params.k_beta());
            for lead in (0..=widest).rev() {
                let Ok((cand, deficient)) = blocks.assemble(&params, lead) else {
                    continue;
                };
                let Ok((cand_posts, value)) = evaluate(&cand) else {
                    continue;
                };
                if value.is_nan() {
                    return Err(RrmeError::Numerical(format!("objective is NaN at iteration {iter}")));
                }
                if value <= limit {
                    if lead < widest {
                        restricted_steps += 1;
                    }
                    accepted = Some((cand, cand_posts, value, deficient));
                    break;
                }
            }
        }
        let Some((cand, cand_posts, value, deficient)) = accepted else {
            stop = StopReason::Stalled;
            break;
        };
        let change = (current - value).abs() / value.abs().max(f64::MIN_POSITIVE);
        params = cand;
        posts = cand_posts;
        current = value;
        rank_deficient = deficient;
        trace.push(value);
        if change < options.rel_tol {
            stop = StopReason::Converged;
            break;
        }
    }

    Ok(FitResult {
        params,
        posteriors: posts,
        iterations: trace.len(),
        objective_trace: trace,
        initial_objective,
        converged: stop != StopReason::MaxIter,
        stop_reason: stop,
        restricted_steps,
        rank_deficient,
    })
}

struct Blocks {
    next: ParameterSet,
    sigma_star: DMatrix<f64>,
    f_star: DMatrix<f64>,
    g_star: DMatrix<f64>,
}

impl Blocks {
    /// Take the updated values of the first `lead` PC columns of each
    /// channel, keep the rest, then restore identifiability.
    ///
    /// Renormalising a column whose score variance has collapsed can raise
    /// its roughness penalty by more than the likelihood gains, so the
    /// driver falls back to updating fewer trailing columns. With
    /// `lead = 0` the current columns are only rotated.
    fn assemble(&self, p: &ParameterSet, lead: usize) -> Result<(ParameterSet, bool)> {
        let mix = |old: &DMatrix<f64>, new: &DMatrix<f64>| {
            let mut m = old.clone();
            let l = lead.min(m.ncols());
            m.columns_mut(0, l).copy_from(&new.columns(0, l));
            m
        };
        let f = mix(&p.theta_f, &self.f_star);
        let g = mix(&p.theta_g, &self.g_star);
        let rot = identifiability_rotation(&f, &g, &self.sigma_star)?;
        let mut next = self.next.clone();
        next.theta_f = rot.theta_f;
        next.theta_g = rot.theta_g;
        next.d_alpha = rot.d_alpha;
        next.d_beta = rot.d_beta;
        next.c = rot.c;
        next.validate()?;
        Ok((next, rot.rank_deficient))
    }
}

/// One pass of the block updates, with the PC columns left for
/// [`Blocks::assemble`].
fn block_updates(
    p: &ParameterSet,
    designs: &Designs,
    posts: &[PosteriorSummary],
    options: &FitOptions,
    omega: &DMatrix<f64>,
) -> Result<Blocks> {
    let mut next = p.clone();
    let (s2e, s2x) = variances(p, designs, posts)?;
    next.sigma2_eps = s2e;
    next.sigma2_xi = s2x;
    let (mu, nu) = means(&next, designs, posts, &options.lambdas, omega)?;
    next.theta_mu = mu;
    next.theta_nu = nu;
    let sigma_star = score_cov_update(designs, posts)?;
    let (f_star, g_star) = pcs(&next, designs, posts, &options.lambdas, omega, options.pc_penalty_scale)?;

    let kind = p.family.kind();
    if let (Some(old), false) = (p.family.gamma(), options.fix_gamma) {
        let u: Vec<f64> = posts.iter().map(|s| s.u_hat).collect();
        let lu: Vec<f64> = posts.iter().map(|s| s.log_u_hat).collect();
        match gamma_update(kind, &u, &lu, options.gamma_bounds) {
            Ok(g) => {
                // Never accept a value the criterion rates worse than the old one.
                if gamma_objective(kind, g, &u, &lu)? <= gamma_objective(kind, old, &u, &lu)? {
                    next.family = kind.with_gamma(g);
                }
            }
            Err(RrmeError::DegenerateUpdate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(Blocks {
        next,
        sigma_star,
        f_star,
        g_star,
    })
}
