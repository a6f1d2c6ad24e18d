//! Run configuration: a TOML file whose keys can be overridden by flags.

use std::path::{Path, PathBuf};

use rrme::model::PcPenaltyScale;
use rrme::smnfamily::GammaBounds;
use rrme::splinebasis::KnotVector;
use rrme::{FamilyKind, FitOptions, Lambdas, OrthonormalBasis};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Interior knots: a count of equispaced knots or explicit positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KnotSpec {
    Count(usize),
    List(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    /// Inferred from the data when absent.
    pub domain: Option<[f64; 2]>,
    pub knots: KnotSpec,
    pub degree: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            domain: None,
            knots: KnotSpec::Count(10),
            degree: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub family: String,
    pub k_alpha: usize,
    pub k_beta: usize,
    /// Fixed degrees of freedom; estimated when absent.
    pub gamma: Option<f64>,
    pub gamma_bounds: Option<[f64; 2]>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: "t".into(),
            k_alpha: 2,
            k_beta: 2,
            gamma: None,
            gamma_bounds: None,
        }
    }
}

/// A fixed penalty or the keyword `"search"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Value(f64),
    Keyword(String),
}

impl Default for LambdaSpec {
    fn default() -> Self {
        LambdaSpec::Value(1e-2)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    pub lambda_mu: LambdaSpec,
    pub lambda_nu: LambdaSpec,
    pub lambda_f: LambdaSpec,
    pub lambda_g: LambdaSpec,
}

/// PC-count grid: `"AxB"` for `{1..A} × {1..B}` or explicit pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Box(String),
    Pairs(Vec<[usize; 2]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub r: f64,
    pub grid: GridSpec,
    pub max_evals: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            seed: 0,
            r: 0.05,
            grid: GridSpec::Box("3x3".into()),
            max_evals: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Recorded only; fitting involves no randomness.
    pub seed: Option<u64>,
    pub pc_penalty_scale: PcPenaltyScale,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-6,
            seed: None,
            pc_penalty_scale: PcPenaltyScale::Unit,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub data: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads; 0 or absent uses every core.
    pub threads: Option<usize>,
    pub basis: BasisConfig,
    pub model: ModelConfig,
    pub penalty: PenaltyConfig,
    pub cv: CvConfig,
    pub fit: FitConfig,
    pub paths: PathConfig,
}

fn bad<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> CliResult<()> {
        if let Some([lo, hi]) = self.basis.domain {
            if !(lo < hi) {
                return bad(format!("basis.domain must be increasing, got [{lo}, {hi}]"));
            }
        }
        self.family_kind()?;
        if self.model.k_alpha == 0 || self.model.k_beta == 0 {
            return bad("model.k_alpha and model.k_beta must be at least 1");
        }
        if let Some(g) = self.model.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("model.gamma must be positive, got {g}"));
            }
        }
        self.gamma_bounds()?;
        self.lambdas()?;
        if self.cv.folds < 2 {
            return bad("cv.folds must be at least 2");
        }
        if !(self.cv.r >= 0.0) {
            return bad("cv.r must be non-negative");
        }
        if self.cv.max_evals == 0 {
            return bad("cv.max_evals must be positive");
        }
        self.grid()?;
        if self.fit.max_iter == 0 || !(self.fit.rel_tol >= 0.0) {
            return bad("fit.max_iter must be positive and fit.rel_tol non-negative");
        }
        let p = &self.paths;
        let paths: Vec<&PathBuf> = [&p.data, &p.params, &p.truth, &p.out].into_iter().flatten().collect();
        for (i, a) in paths.iter().enumerate() {
            if paths[i + 1..].contains(a) {
                return bad(format!("path {} is used twice", a.display()));
            }
        }
        Ok(())
    }

    pub fn family_kind(&self) -> CliResult<FamilyKind> {
        self.model
            .family
            .parse()
            .map_err(|_| CliError::Config(format!("unknown family {:?}", self.model.family)))
    }

    fn gamma_bounds(&self) -> CliResult<GammaBounds> {
        match self.model.gamma_bounds {
            None => Ok(GammaBounds::default()),
            Some([min, max]) if 0.0 < min && min < max && max.is_finite() => Ok(GammaBounds { min, max }),
            Some(b) => bad(format!("invalid model.gamma_bounds {b:?}")),
        }
    }

    /// Fixed penalties, or `None` when all four are to be searched.
    pub fn lambdas(&self) -> CliResult<Option<Lambdas>> {
        let p = &self.penalty;
        let specs = [&p.lambda_mu, &p.lambda_nu, &p.lambda_f, &p.lambda_g];
        let mut values = [0.0; 4];
        let mut searched = 0;
        for (v, s) in values.iter_mut().zip(specs) {
            match s {
                LambdaSpec::Value(x) if *x >= 0.0 && x.is_finite() => *v = *x,
                LambdaSpec::Value(x) => return bad(format!("penalties must be finite and >= 0, got {x}")),
                LambdaSpec::Keyword(k) if k == "search" => searched += 1,
                LambdaSpec::Keyword(k) => return bad(format!("unknown penalty keyword {k:?}")),
            }
        }
        match searched {
            0 => Ok(Some(Lambdas::from_array(values))),
            4 => Ok(None),
            _ => bad("either all four penalties are searched or none"),
        }
    }

    pub fn grid(&self) -> CliResult<Vec<(usize, usize)>> {
        let cells: Vec<(usize, usize)> = match &self.cv.grid {
            GridSpec::Box(s) => {
                let parsed = s
                    .split_once(['x', 'X'])
                    .and_then(|(a, b)| Some((a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?)));
                let Some((a, b)) = parsed else {
                    return bad(format!("grid must look like \"3x3\", got {s:?}"));
                };
                (1..=a).flat_map(|i| (1..=b).map(move |j| (i, j))).collect()
            }
            GridSpec::Pairs(p) => p.iter().map(|[a, b]| (*a, *b)).collect(),
        };
        if cells.is_empty() || cells.iter().any(|&(a, b)| a == 0 || b == 0) {
            return bad("PC grid must be non-empty with positive counts");
        }
        Ok(cells)
    }

    pub fn interior_knots(&self, domain: (f64, f64)) -> CliResult<Vec<f64>> {
        match &self.basis.knots {
            KnotSpec::Count(c) => Ok(KnotVector::equispaced(domain, *c, self.basis.degree)?.interior),
            KnotSpec::List(v) => Ok(v.clone()),
        }
    }

    pub fn basis(&self, domain: (f64, f64)) -> CliResult<OrthonormalBasis> {
        let knots = KnotVector::new(domain, self.interior_knots(domain)?, self.basis.degree)?;
        Ok(OrthonormalBasis::new(knots)?)
    }

    /// Fit options with `lambdas` (callers substitute searched values).
    pub fn fit_options(&self, lambdas: Lambdas) -> CliResult<FitOptions> {
        Ok(FitOptions {
            lambdas,
            max_iter: self.fit.max_iter,
            rel_tol: self.fit.rel_tol,
            gamma_bounds: self.gamma_bounds()?,
            gamma_init: self.model.gamma,
            fix_gamma: self.model.gamma.is_some(),
            pc_penalty_scale: self.fit.pc_penalty_scale,
            ..FitOptions::default()
        })
    }
}
