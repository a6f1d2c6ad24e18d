//! Cross-validated choice of roughness penalties and PC counts.

mod cv;
mod folds;
mod nelder_mead;

pub use cv::{cv_score, CvReport, FoldScore};
pub use folds::{make_folds, FoldPlan, HeldOut, SubjectFolds};
pub use nelder_mead::{nelder_mead, NelderMeadOptions, NelderMeadResult};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RrmeError};
use crate::model::{FitOptions, Lambdas, PairedDataset};
use crate::par;
use crate::smnfamily::FamilyKind;
use crate::splinebasis::OrthonormalBasis;

/// Settings of the penalty search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    /// Starting `log10 λ`, shared by all four penalties.
    pub start_log10: f64,
    /// Further shared `log10 λ` values tried before the simplex; it starts
    /// from the best of these and `start_log10`.
    pub scan_log10: Vec<f64>,
    /// Box on `log10 λ`.
    pub bounds: (f64, f64),
    pub simplex: NelderMeadOptions,
    /// Options of every fit; the penalties are overwritten.
    pub fit: FitOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            start_log10: -2.0,
            scan_log10: vec![-6.0, -5.0, -4.0, -3.0, -1.0, 0.0],
            bounds: (-8.0, 6.0),
            simplex: NelderMeadOptions::default(),
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySelection {
    pub lambdas: Lambdas,
    pub report: CvReport,
    pub evaluations: usize,
    /// Evaluations whose fits failed.
    pub failed: usize,
}

fn lambdas_from_log(x: &[f64]) -> Lambdas {
    Lambdas::from_array([x[0], x[1], x[2], x[3]].map(|v| 10f64.powf(v)))
}

/// Minimise the CV error over `log10 λ` with the downhill simplex method.
#[allow(clippy::too_many_arguments)]
pub fn select_penalties(
    dataset: &PairedDataset,
    basis: &OrthonormalBasis,
    k_alpha: usize,
    k_beta: usize,
    family_kind: FamilyKind,
    folds: &FoldPlan,
    search: &SearchOptions,
) -> Result<PenaltySelection> {
    let (lo, hi) = search.bounds;
    let mut starts = vec![search.start_log10];
    starts.extend(search.scan_log10.iter().copied().filter(|v| *v != search.start_log10));
    if !(lo < hi) || starts.iter().any(|v| !(lo..=hi).contains(v)) {
        return Err(RrmeError::InvalidArgument("start point outside the search box".into()));
    }
    let mut best: Option<(f64, Lambdas, CvReport)> = None;
    let mut failed = 0;
    let mut last_err = None;
    let mut objective = |x: &[f64]| {
        let lambdas = lambdas_from_log(x);
        match cv_score(dataset, basis, k_alpha, k_beta, family_kind, lambdas, folds, &search.fit) {
            Ok(report) => {
                let v = report.mae_combined;
                if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                    best = Some((v, lambdas, report));
                }
                v
            }
            Err(e) => {
                failed += 1;
                last_err = Some(e);
                f64::INFINITY
            }
        }
    };
    let simplex = NelderMeadOptions {
        bounds: Some(search.bounds),
        ..search.simplex.clone()
    };
    let mut x0 = search.start_log10;
    let mut v0 = f64::INFINITY;
    for &s in &starts {
        let v = objective(&[s; 4]);
        if v < v0 {
            (x0, v0) = (s, v);
        }
    }
    let outcome = if v0.is_finite() { Some(nelder_mead(&mut objective, &[x0; 4], &simplex)?) } else { None };
    let evaluations = starts.len() + outcome.map_or(0, |o| o.evaluations);
    match best {
        Some((_, lambdas, report)) => Ok(PenaltySelection {
            lambdas,
            report,
            evaluations,
            failed,
        }),
        None => Err(RrmeError::SelectionFailed(format!(
            "all {} evaluations failed; last error: {}",
            evaluations,
            last_err.map_or_else(|| "none".into(), |e| e.to_string())
        ))),
    }
}

/// One cell of the PC-count grid. `cv` is `None` when the cell could not be
/// fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub k_alpha: usize,
    pub k_beta: usize,
    pub cv: Option<f64>,
    pub lambdas: Option<Lambdas>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcSelection {
    pub k_alpha: usize,
    pub k_beta: usize,
    pub r: f64,
    pub cells: Vec<GridCell>,
}

/// The default `{1,2,3} × {1,2,3}` grid.
pub fn default_grid() -> Vec<(usize, usize)> {
    (1..=3).flat_map(|a| (1..=3).map(move |b| (a, b))).collect()
}

/// Among cells whose CV is within a factor `1 + r` of the smallest, pick the
/// one with the fewest components; ties go to the smaller CV, then the
/// smaller `k_α`. Cells without a CV value are ignored.
pub fn choose_by_rule(cells: &[GridCell], r: f64) -> Option<(usize, usize)> {
    let min = cells.iter().filter_map(|c| c.cv).filter(|v| v.is_finite()).reduce(f64::min)?;
    cells
        .iter()
        .filter_map(|c| c.cv.filter(|v| *v <= (1.0 + r) * min).map(|v| (c, v)))
        .min_by(|(a, va), (b, vb)| {
            (a.k_alpha + a.k_beta)
                .cmp(&(b.k_alpha + b.k_beta))
                .then(va.total_cmp(vb))
                .then(a.k_alpha.cmp(&b.k_alpha))
        })
        .map(|(c, _)| (c.k_alpha, c.k_beta))
}

/// Run the penalty search in every grid cell, then apply [`choose_by_rule`].
pub fn select_pc_numbers(
    dataset: &PairedDataset,
    basis: &OrthonormalBasis,
    family_kind: FamilyKind,
    grid: &[(usize, usize)],
    r: f64,
    folds: &FoldPlan,
    search: &SearchOptions,
) -> Result<PcSelection> {
    if grid.is_empty() {
        return Err(RrmeError::InvalidArgument("empty PC grid".into()));
    }
    if !(r >= 0.0) {
        return Err(RrmeError::InvalidArgument(format!("r must be >= 0, got {r}")));
    }
    let cells = par::map(grid, |&(ka, kb)| {
        match select_penalties(dataset, basis, ka, kb, family_kind, folds, search) {
            Ok(sel) => GridCell {
                k_alpha: ka,
                k_beta: kb,
                cv: Some(sel.report.mae_combined),
                lambdas: Some(sel.lambdas),
                error: None,
            },
            Err(e) => GridCell {
                k_alpha: ka,
                k_beta: kb,
                cv: None,
                lambdas: None,
                error: Some(e.to_string()),
            },
        }
    });
    let (k_alpha, k_beta) = choose_by_rule(&cells, r)
        .ok_or_else(|| RrmeError::SelectionFailed("no grid cell could be fitted".into()))?;
    Ok(PcSelection {
        k_alpha,
        k_beta,
        r,
        cells,
    })
}
