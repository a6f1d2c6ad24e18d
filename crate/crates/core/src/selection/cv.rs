use serde::{Deserialize, Serialize};

use super::folds::FoldPlan;
use crate::error::{Result, RrmeError};
use crate::model::{fit, predict_curve, Channel, FitOptions, Lambdas, PairedDataset};
use crate::par;
use crate::smnfamily::FamilyKind;
use crate::splinebasis::OrthonormalBasis;

/// Absolute-error totals of one fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub fold: usize,
    pub n_y: usize,
    pub n_z: usize,
    pub abs_err_y: f64,
    pub abs_err_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub mae_y: f64,
    pub mae_z: f64,
    /// Mean absolute error pooled over both channels.
    pub mae_combined: f64,
    pub folds: Vec<FoldScore>,
}

impl CvReport {
    fn from_folds(folds: Vec<FoldScore>) -> Result<Self> {
        let ny: usize = folds.iter().map(|f| f.n_y).sum();
        let nz: usize = folds.iter().map(|f| f.n_z).sum();
        if ny + nz == 0 {
            return Err(RrmeError::InvalidArgument("fold plan holds out no observations".into()));
        }
        let ey: f64 = folds.iter().map(|f| f.abs_err_y).sum();
        let ez: f64 = folds.iter().map(|f| f.abs_err_z).sum();
        let ratio = |e: f64, n: usize| if n == 0 { 0.0 } else { e / n as f64 };
        Ok(Self {
            mae_y: ratio(ey, ny),
            mae_z: ratio(ez, nz),
            mae_combined: (ey + ez) / (ny + nz) as f64,
            folds,
        })
    }
}

fn score_fold(
    dataset: &PairedDataset,
    basis: &OrthonormalBasis,
    k_alpha: usize,
    k_beta: usize,
    family_kind: FamilyKind,
    folds: &FoldPlan,
    options: &FitOptions,
    fold: usize,
) -> Result<FoldScore> {
    let (train, held) = folds.split(dataset, fold)?;
    let mut out = FoldScore {
        fold,
        n_y: 0,
        n_z: 0,
        abs_err_y: 0.0,
        abs_err_z: 0.0,
    };
    if held.is_empty() {
        return Ok(out);
    }
    let result = fit(&train, basis, k_alpha, k_beta, family_kind, options)?;
    // The fit's posteriors are the score predictions from each subject's
    // retained points under the final parameters.
    for h in &held {
        let scores = &result.posteriors[h.subject].score_mean;
        let pred = predict_curve(&result.params, basis, scores, &[h.time], h.channel)?[0];
        let err = (pred - h.value).abs();
        match h.channel {
            Channel::Y => {
                out.n_y += 1;
                out.abs_err_y += err;
            }
            Channel::Z => {
                out.n_z += 1;
                out.abs_err_z += err;
            }
        }
    }
    Ok(out)
}

/// K-fold within-subject cross-validated mean absolute prediction error.
/// `options.lambdas` is replaced by `lambdas`.
#[allow(clippy::too_many_arguments)]
pub fn cv_score(
    dataset: &PairedDataset,
    basis: &OrthonormalBasis,
    k_alpha: usize,
    k_beta: usize,
    family_kind: FamilyKind,
    lambdas: Lambdas,
    folds: &FoldPlan,
    options: &FitOptions,
) -> Result<CvReport> {
    let options = FitOptions {
        lambdas,
        ..options.clone()
    };
    let scores = par::map_range(folds.k, |fold| {
        score_fold(dataset, basis, k_alpha, k_beta, family_kind, folds, &options, fold).map_err(|e| RrmeError::Fold {
            fold,
            source: Box::new(e),
        })
    });
    CvReport::from_folds(scores.into_iter().collect::<Result<Vec<_>>>()?)
}
