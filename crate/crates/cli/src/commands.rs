//! Subcommands of the `rrme` tool.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rrme::evaluation::{evaluate_fit, EvalReport, SplineModel};
use rrme::model::{predict_curve, predict_scores, StopReason};
use rrme::selection::{
    choose_by_rule, cv_score, make_folds, select_pc_numbers, select_penalties, CvReport, GridCell, NelderMeadOptions,
    SearchOptions,
};
use rrme::simulation::{self, simulate, GroundTruth, Scenario};
use rrme::{fit, par, Channel, FamilyKind, Lambdas, MixingFamily, OrthonormalBasis, PairedDataset, ParameterSet};
use serde::{Deserialize, Serialize};

use crate::config::{GridSpec, KnotSpec, LambdaSpec, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{self, ParamFile, StoredMatrix};

#[derive(Debug, Parser)]
#[command(name = "rrme", version, about = "Robust reduced-rank FPCA for sparsely observed paired curves")]
pub struct Cli {
    /// TOML configuration file; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model and write a parameter file and per-subject scores.
    Fit(FitArgs),
    /// Fitted curves of each subject on a time grid.
    Predict(PredictArgs),
    /// Simulate a dataset with a ground-truth sidecar.
    Simulate(SimulateArgs),
    /// Choose PC counts (and penalties) by cross-validation.
    Select(SelectArgs),
    /// Integrated absolute errors of a fit against simulation truth.
    Evaluate(EvaluateArgs),
    /// Cross-validated prediction error for fixed penalties.
    Cv(CvArgs),
}

/// Model, penalty, CV and fit settings shared by several commands.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Domain as LO,HI.
    #[arg(long, value_delimiter = ',')]
    pub domain: Option<Vec<f64>>,
    /// Number of equispaced interior knots.
    #[arg(long)]
    pub knots: Option<usize>,
    #[arg(long)]
    pub degree: Option<usize>,
    /// normal, t or slash.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub k_alpha: Option<usize>,
    #[arg(long)]
    pub k_beta: Option<usize>,
    /// Fix the degrees of freedom at this value.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Same penalty for all four functions.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lambda_mu: Option<f64>,
    #[arg(long)]
    pub lambda_nu: Option<f64>,
    #[arg(long)]
    pub lambda_f: Option<f64>,
    #[arg(long)]
    pub lambda_g: Option<f64>,
    /// Choose all four penalties by cross-validation.
    #[arg(long)]
    pub search: bool,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub cv_seed: Option<u64>,
    #[arg(long)]
    pub r: Option<f64>,
    /// PC grid such as 3x3.
    #[arg(long)]
    pub grid: Option<String>,
    /// Simplex evaluation budget per penalty search.
    #[arg(long)]
    pub max_evals: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
}

impl ModelArgs {
    pub fn apply(&self, c: &mut RunConfig) -> CliResult<()> {
        if let Some(d) = &self.domain {
            let [lo, hi] = d[..] else {
                return Err(CliError::Config("--domain takes LO,HI".into()));
            };
            c.basis.domain = Some([lo, hi]);
        }
        if let Some(k) = self.knots {
            c.basis.knots = KnotSpec::Count(k);
        }
        if let Some(v) = self.degree {
            c.basis.degree = v;
        }
        if let Some(f) = &self.family {
            c.model.family = f.clone();
        }
        if let Some(v) = self.k_alpha {
            c.model.k_alpha = v;
        }
        if let Some(v) = self.k_beta {
            c.model.k_beta = v;
        }
        if let Some(v) = self.gamma {
            c.model.gamma = Some(v);
        }
        let p = &mut c.penalty;
        if let Some(v) = self.lambda {
            for s in [&mut p.lambda_mu, &mut p.lambda_nu, &mut p.lambda_f, &mut p.lambda_g] {
                *s = LambdaSpec::Value(v);
            }
        }
        for (flag, slot) in [
            (self.lambda_mu, &mut p.lambda_mu),
            (self.lambda_nu, &mut p.lambda_nu),
            (self.lambda_f, &mut p.lambda_f),
            (self.lambda_g, &mut p.lambda_g),
        ] {
            if let Some(v) = flag {
                *slot = LambdaSpec::Value(v);
            }
        }
        if self.search {
            for s in [&mut p.lambda_mu, &mut p.lambda_nu, &mut p.lambda_f, &mut p.lambda_g] {
                *s = LambdaSpec::Keyword("search".into());
            }
        }
        if let Some(v) = self.folds {
            c.cv.folds = v;
        }
        if let Some(v) = self.cv_seed {
            c.cv.seed = v;
        }
        if let Some(v) = self.r {
            c.cv.r = v;
        }
        if let Some(g) = &self.grid {
            c.cv.grid = GridSpec::Box(g.clone());
        }
        if let Some(v) = self.max_evals {
            c.cv.max_evals = v;
        }
        if let Some(v) = self.max_iter {
            c.fit.max_iter = v;
        }
        if let Some(v) = self.rel_tol {
            c.fit.rel_tol = v;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Parameter file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-subject score file; defaults to `<out>.scores.csv`.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Mean and mean ± 2 sd × PC curves on a 101-point grid.
    #[arg(long)]
    pub effects: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of equispaced grid points over the domain.
    #[arg(long, default_value_t = 101)]
    pub points: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario 1 to 5.
    #[arg(long)]
    pub scenario: u8,
    /// Degrees of freedom (scenarios 2 and 3).
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 0.04)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ground-truth sidecar; defaults to `<out>.truth.json`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON report to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// JSON report to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

fn required(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| CliError::Config(format!("missing --{name} (or paths.{name} in the config)")))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn domain_of(c: &RunConfig) -> Option<(f64, f64)> {
    c.basis.domain.map(|[a, b]| (a, b))
}

/// Parse flags, merge them over the config file and run the command.
pub fn run(cli: Cli) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = cli.threads {
        config.threads = Some(t);
    }
    let model_args = match &cli.command {
        Command::Fit(a) => Some(&a.model),
        Command::Select(a) => Some(&a.model),
        Command::Cv(a) => Some(&a.model),
        _ => None,
    };
    if let Some(m) = model_args {
        m.apply(&mut config)?;
    }
    config.validate()?;
    let threads = config.threads.unwrap_or(0);
    par::with_threads(threads, move || match cli.command {
        Command::Fit(a) => fit_cmd(&config, a),
        Command::Predict(a) => predict_cmd(&config, a),
        Command::Simulate(a) => simulate_cmd(&config, a),
        Command::Select(a) => select_cmd(&config, a),
        Command::Evaluate(a) => evaluate_cmd(&config, a),
        Command::Cv(a) => cv_cmd(&config, a),
    })
}

fn search_options(c: &RunConfig) -> CliResult<SearchOptions> {
    Ok(SearchOptions {
        simplex: NelderMeadOptions {
            max_evals: c.cv.max_evals,
            ..NelderMeadOptions::default()
        },
        fit: c.fit_options(Lambdas::default())?,
        ..SearchOptions::default()
    })
}

/// `E[1/u]`, the factor turning the conditional score scale into a
/// variance, when finite.
fn inverse_scale_mean(family: MixingFamily) -> Option<f64> {
    match family {
        MixingFamily::Normal => Some(1.0),
        MixingFamily::StudentT { gamma } if gamma > 2.0 => Some(gamma / (gamma - 2.0)),
        MixingFamily::Slash { gamma } if gamma > 1.0 => Some(gamma / (gamma - 1.0)),
        _ => None,
    }
}

fn effect_curves(p: &ParameterSet, basis: &OrthonormalBasis) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let (lo, hi) = basis.domain();
    let grid: Vec<f64> = (0..101).map(|i| lo + (hi - lo) * i as f64 / 100.0).collect();
    let b = basis.design_matrix(&grid)?;
    let factor = inverse_scale_mean(p.family).unwrap_or(1.0);
    let mut header = vec!["time".to_string(), "mu".into(), "nu".into()];
    let mut cols: Vec<Vec<f64>> = vec![grid.clone(), (&b * &p.theta_mu).as_slice().to_vec()];
    cols.push((&b * &p.theta_nu).as_slice().to_vec());
    for (name, mean, pcs, d) in [
        ("f", 1, &p.theta_f, &p.d_alpha),
        ("g", 2, &p.theta_g, &p.d_beta),
    ] {
        let vals = &b * pcs;
        for j in 0..pcs.ncols() {
            let sd = (d[j] * factor).sqrt();
            let pc: Vec<f64> = vals.column(j).iter().copied().collect();
            let base = cols[mean].clone();
            let m = if mean == 1 { "mu" } else { "nu" };
            header.push(format!("{name}{}", j + 1));
            header.push(format!("{m}_plus_{name}{}", j + 1));
            header.push(format!("{m}_minus_{name}{}", j + 1));
            cols.push(pc.clone());
            cols.push(base.iter().zip(&pc).map(|(a, v)| a + 2.0 * sd * v).collect());
            cols.push(base.iter().zip(&pc).map(|(a, v)| a - 2.0 * sd * v).collect());
        }
    }
    let rows = (0..grid.len())
        .map(|i| cols.iter().map(|c| c[i].to_string()).collect())
        .collect();
    Ok((header, rows))
}

fn fit_cmd(c: &RunConfig, a: FitArgs) -> CliResult<()> {
    let data = required(a.data, &c.paths.data, "data")?;
    let out = required(a.out, &c.paths.out, "out")?;
    let ds = io::read_dataset(&data, domain_of(c))?;
    let basis = c.basis(ds.domain)?;
    let kind = c.family_kind()?;
    let (ka, kb) = (c.model.k_alpha, c.model.k_beta);
    let lambdas = match c.lambdas()? {
        Some(l) => l,
        None => {
            let folds = make_folds(&ds, c.cv.folds, c.cv.seed)?;
            let sel = select_penalties(&ds, &basis, ka, kb, kind, &folds, &search_options(c)?)?;
            println!("selected penalties {:?} (cv {:.6})", sel.lambdas, sel.report.mae_combined);
            sel.lambdas
        }
    };
    let result = fit(&ds, &basis, ka, kb, kind, &c.fit_options(lambdas)?)?;
    io::write_json(&out, &ParamFile::new(&basis, lambdas, &result, c.fit.seed))?;

    let scores_path = a.scores.unwrap_or_else(|| sibling(&out, ".scores.csv"));
    let mut header = vec!["subject_id".to_string(), "u_hat".into(), "log_u_hat".into()];
    header.extend((1..=ka).map(|j| format!("alpha_{j}")));
    header.extend((1..=kb).map(|j| format!("beta_{j}")));
    let rows: Vec<Vec<String>> = ds
        .subjects
        .iter()
        .zip(&result.posteriors)
        .map(|(s, p)| {
            let mut r = vec![s.id.clone(), p.u_hat.to_string(), p.log_u_hat.to_string()];
            r.extend(p.score_mean.iter().map(|v| v.to_string()));
            r
        })
        .collect();
    io::write_table(&scores_path, &header, &rows)?;
    if let Some(path) = a.effects {
        let (h, r) = effect_curves(&result.params, &basis)?;
        io::write_table(&path, &h, &r)?;
    }
    println!(
        "objective {:.8} after {} iterations ({:?}); gamma {}",
        result.objective(),
        result.iterations,
        result.stop_reason,
        result.params.family.gamma().map_or("-".into(), |g| format!("{g:.4}"))
    );
    if result.stop_reason == StopReason::MaxIter {
        return Err(CliError::NotConverged(format!(
            "EM reached {} iterations without meeting rel_tol; results written",
            c.fit.max_iter
        )));
    }
    Ok(())
}

fn load_model(path: &Path) -> CliResult<(ParamFile, OrthonormalBasis, ParameterSet)> {
    let file = ParamFile::read(path)?;
    let basis = file.basis.build()?;
    let params = file.parameters.to_params()?;
    if params.q() != basis.dim() {
        return Err(CliError::Data("coefficient length does not match the basis".into()));
    }
    Ok((file, basis, params))
}

fn predict_cmd(c: &RunConfig, a: PredictArgs) -> CliResult<()> {
    let params_path = required(a.params, &c.paths.params, "params")?;
    let data = required(a.data, &c.paths.data, "data")?;
    let out = required(a.out, &c.paths.out, "out")?;
    if a.points < 2 {
        return Err(CliError::Config("--points must be at least 2".into()));
    }
    let (_, basis, params) = load_model(&params_path)?;
    let ds = io::read_dataset(&data, Some(basis.domain()))?;
    let (lo, hi) = basis.domain();
    let grid: Vec<f64> = (0..a.points).map(|i| lo + (hi - lo) * i as f64 / (a.points - 1) as f64).collect();
    let per_subject = par::map(&ds.subjects, |s| -> CliResult<Vec<Vec<String>>> {
        let (scores, _) = predict_scores(&params, &basis, s)?;
        let mut rows = Vec::with_capacity(2 * grid.len());
        for ch in [Channel::Y, Channel::Z] {
            let fitted = predict_curve(&params, &basis, &scores, &grid, ch)?;
            for (t, v) in grid.iter().zip(fitted) {
                rows.push(vec![s.id.clone(), ch.letter().to_string(), t.to_string(), v.to_string()]);
            }
        }
        Ok(rows)
    });
    let mut rows = Vec::new();
    for r in per_subject {
        rows.extend(r?);
    }
    let header = ["subject_id", "channel", "time", "fitted"].map(String::from);
    io::write_table(&out, &header, &rows)
}

/// Ground truth plus closed-form curves on a 101-point grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthFile {
    pub truth: GroundTruth,
    pub grid: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub f: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub score_cov: StoredMatrix,
    pub curves: Vec<SubjectCurves>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectCurves {
    pub id: String,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl TruthFile {
    pub fn new(truth: GroundTruth, ds: &PairedDataset) -> Self {
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let on = |h: &dyn Fn(f64) -> f64| grid.iter().map(|&t| h(t)).collect::<Vec<f64>>();
        let curves = ds
            .subjects
            .iter()
            .enumerate()
            .map(|(i, s)| SubjectCurves {
                id: s.id.clone(),
                y: on(&|t| truth.curve(i, Channel::Y, t)),
                z: on(&|t| truth.curve(i, Channel::Z, t)),
            })
            .collect();
        Self {
            mu: on(&simulation::mu),
            nu: on(&simulation::nu),
            f: (0..2).map(|j| on(&|t| simulation::f(j, t))).collect(),
            g: (0..2).map(|j| on(&|t| simulation::g(j, t))).collect(),
            score_cov: StoredMatrix::from_matrix(&simulation::true_score_cov()),
            curves,
            grid,
            truth,
        }
    }
}

fn simulate_cmd(c: &RunConfig, a: SimulateArgs) -> CliResult<()> {
    let out = required(a.out, &c.paths.out, "out")?;
    let truth_path = a.truth.or_else(|| c.paths.truth.clone()).unwrap_or_else(|| sibling(&out, ".truth.json"));
    if truth_path == out {
        return Err(CliError::Config("--truth and --out must differ".into()));
    }
    let scenario = Scenario::from_number(a.scenario).map_err(|e| CliError::Config(e.to_string()))?;
    let (ds, truth) = simulate(scenario, a.gamma, a.sigma2, a.n, a.seed).map_err(|e| CliError::Config(e.to_string()))?;
    io::write_dataset(&out, &ds)?;
    io::write_json(&truth_path, &TruthFile::new(truth, &ds))?;
    println!(
        "{} subjects, {} Y and {} Z observations",
        ds.n(),
        ds.total_y(),
        ds.total_z()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleChoice {
    pub r: f64,
    pub k_alpha: usize,
    pub k_beta: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectReport {
    pub family: FamilyKind,
    pub folds: usize,
    pub seed: u64,
    pub r: f64,
    pub k_alpha: usize,
    pub k_beta: usize,
    /// Penalties chosen for the selected cell.
    pub lambdas: Option<Lambdas>,
    pub cells: Vec<GridCell>,
    /// The rule's answer for the usual values of `r`.
    pub choices: Vec<RuleChoice>,
}

fn select_cmd(c: &RunConfig, a: SelectArgs) -> CliResult<()> {
    let data = required(a.data, &c.paths.data, "data")?;
    let out = required(a.out, &c.paths.out, "out")?;
    let ds = io::read_dataset(&data, domain_of(c))?;
    let basis = c.basis(ds.domain)?;
    let kind = c.family_kind()?;
    let grid = c.grid()?;
    let folds = make_folds(&ds, c.cv.folds, c.cv.seed)?;
    let sel = select_pc_numbers(&ds, &basis, kind, &grid, c.cv.r, &folds, &search_options(c)?)?;
    let mut rs = vec![0.0, 0.01, 0.05];
    if !rs.contains(&c.cv.r) {
        rs.push(c.cv.r);
    }
    let choices = rs
        .into_iter()
        .filter_map(|r| choose_by_rule(&sel.cells, r).map(|(k_alpha, k_beta)| RuleChoice { r, k_alpha, k_beta }))
        .collect();
    let lambdas = sel
        .cells
        .iter()
        .find(|cell| (cell.k_alpha, cell.k_beta) == (sel.k_alpha, sel.k_beta))
        .and_then(|cell| cell.lambdas);
    println!("k_alpha k_beta cv");
    for cell in &sel.cells {
        let cv = cell.cv.map_or("Na".to_string(), |v| format!("{v:.6}"));
        println!("{:>7} {:>6} {cv}", cell.k_alpha, cell.k_beta);
    }
    println!("selected ({}, {}) at r = {}", sel.k_alpha, sel.k_beta, sel.r);
    io::write_json(
        &out,
        &SelectReport {
            family: kind,
            folds: c.cv.folds,
            seed: c.cv.seed,
            r: sel.r,
            k_alpha: sel.k_alpha,
            k_beta: sel.k_beta,
            lambdas,
            cells: sel.cells,
            choices,
        },
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub raw: EvalReport,
    /// Every error multiplied by 1000.
    pub x1000: EvalReport,
}

fn evaluate_cmd(c: &RunConfig, a: EvaluateArgs) -> CliResult<()> {
    let params_path = required(a.params, &c.paths.params, "params")?;
    let data = required(a.data, &c.paths.data, "data")?;
    let truth_path = required(a.truth, &c.paths.truth, "truth")?;
    let out = required(a.out, &c.paths.out, "out")?;
    let (_, basis, params) = load_model(&params_path)?;
    let ds = io::read_dataset(&data, Some(basis.domain()))?;
    let truth: TruthFile = io::read_json(&truth_path)?;
    let raw = evaluate_fit(&SplineModel { params: &params, basis: &basis }, &truth.truth, &ds)?;
    let x1000 = raw.scaled(1000.0);
    let cols = x1000.columns();
    println!("{}", cols.iter().map(|(n, _)| format!("{n:>9}")).collect::<String>());
    println!("{}", cols.iter().map(|(_, v)| format!("{v:>9.2}")).collect::<String>());
    if raw.component_mismatch {
        println!("note: PC counts differ from the truth; missing components were compared with zero");
    }
    io::write_json(&out, &EvaluateReport { raw, x1000 })
}

fn cv_cmd(c: &RunConfig, a: CvArgs) -> CliResult<()> {
    let data = required(a.data, &c.paths.data, "data")?;
    let out = required(a.out, &c.paths.out, "out")?;
    let lambdas = c
        .lambdas()?
        .ok_or_else(|| CliError::Config("cv needs fixed penalties".into()))?;
    let ds = io::read_dataset(&data, domain_of(c))?;
    let basis = c.basis(ds.domain)?;
    let folds = make_folds(&ds, c.cv.folds, c.cv.seed)?;
    let report: CvReport = cv_score(
        &ds,
        &basis,
        c.model.k_alpha,
        c.model.k_beta,
        c.family_kind()?,
        lambdas,
        &folds,
        &c.fit_options(lambdas)?,
    )?;
    println!(
        "mae_y {:.6} mae_z {:.6} mae_combined {:.6}",
        report.mae_y, report.mae_z, report.mae_combined
    );
    io::write_json(&out, &report)
}
