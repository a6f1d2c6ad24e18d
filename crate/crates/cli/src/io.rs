//! Dataset CSV files and parameter files.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rrme::model::StopReason;
use rrme::splinebasis::KnotVector;
use rrme::{Channel, FitResult, Lambdas, MixingFamily, OrthonormalBasis, PairedDataset, ParameterSet, SubjectData};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DATA_HEADER: [&str; 4] = ["subject_id", "channel", "time", "value"];

fn parse_channel(s: &str) -> Option<Channel> {
    match s {
        "Y" | "y" => Some(Channel::Y),
        "Z" | "z" => Some(Channel::Z),
        _ => None,
    }
}

/// Parse `subject_id,channel,time,value` rows. Subjects keep their order of
/// first appearance; the domain is `[min time, max time]` unless given.
pub fn parse_dataset<R: Read>(reader: R, domain: Option<(f64, f64)>) -> CliResult<PairedDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| CliError::Data(format!("unreadable header: {e}")))?;
    if header.iter().collect::<Vec<_>>() != DATA_HEADER {
        return Err(CliError::Data(format!(
            "line 1: expected header {}, found {}",
            DATA_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut subjects: Vec<SubjectData> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Data(format!("line {line}: {e}"))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let id = field(0);
        if id.is_empty() {
            return Err(CliError::Data(format!("line {line}: empty subject_id")));
        }
        let channel = parse_channel(field(1))
            .ok_or_else(|| CliError::Data(format!("line {line}: unknown channel {:?} (expected Y or Z)", field(1))))?;
        let num = |i: usize, name: &str| -> CliResult<f64> {
            let v: f64 = field(i)
                .parse()
                .map_err(|_| CliError::Data(format!("line {line}: {name} {:?} is not a number", field(i))))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(CliError::Data(format!("line {line}: {name} is not finite")))
            }
        };
        let (t, v) = (num(2, "time")?, num(3, "value")?);
        let slot = *index.entry(id.to_string()).or_insert_with(|| {
            subjects.push(SubjectData {
                id: id.to_string(),
                ..SubjectData::default()
            });
            subjects.len() - 1
        });
        let s = &mut subjects[slot];
        match channel {
            Channel::Y => {
                s.times_y.push(t);
                s.values_y.push(v);
            }
            Channel::Z => {
                s.times_z.push(t);
                s.values_z.push(v);
            }
        }
    }
    if subjects.is_empty() {
        return Err(CliError::Data("no observations".into()));
    }
    let domain = match domain {
        Some(d) => d,
        None => {
            let times = subjects.iter().flat_map(|s| s.times_y.iter().chain(&s.times_z));
            let (lo, hi) = times.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
            if !(lo < hi) {
                return Err(CliError::Data("all observations share one time; give basis.domain".into()));
            }
            (lo, hi)
        }
    };
    PairedDataset::new(subjects, domain).map_err(|e| CliError::Data(e.to_string()))
}

pub fn read_dataset(path: &Path, domain: Option<(f64, f64)>) -> CliResult<PairedDataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_dataset(file, domain).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Write a dataset in the ingest format: per subject, Y rows then Z rows.
pub fn write_dataset_to<W: Write>(writer: W, ds: &PairedDataset) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DATA_HEADER)?;
    for s in &ds.subjects {
        for ch in [Channel::Y, Channel::Z] {
            for (t, v) in s.times(ch).iter().zip(s.values(ch)) {
                w.write_record([s.id.as_str(), &ch.letter().to_string(), &t.to_string(), &v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, ds: &PairedDataset) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_dataset_to(file, ds).map_err(|e| CliError::io(path, e))
}

/// Write a header and rows of already formatted cells.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// A matrix with explicit shape, stored row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Vec<f64>>,
}

impl StoredMatrix {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    pub fn to_matrix(&self) -> CliResult<DMatrix<f64>> {
        if self.data.len() != self.rows || self.data.iter().any(|r| r.len() != self.cols) {
            return Err(CliError::Data(format!("matrix data does not match its shape {}x{}", self.rows, self.cols)));
        }
        Ok(DMatrix::from_fn(self.rows, self.cols, |i, j| self.data[i][j]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub domain: [f64; 2],
    pub interior_knots: Vec<f64>,
    pub degree: usize,
}

impl BasisSpec {
    pub fn of(basis: &OrthonormalBasis) -> Self {
        let k = basis.knots();
        Self {
            domain: [k.lo, k.hi],
            interior_knots: k.interior.clone(),
            degree: k.degree,
        }
    }

    pub fn build(&self) -> CliResult<OrthonormalBasis> {
        let [lo, hi] = self.domain;
        let knots = KnotVector::new((lo, hi), self.interior_knots.clone(), self.degree)?;
        Ok(OrthonormalBasis::new(knots)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredParams {
    pub k_alpha: usize,
    pub k_beta: usize,
    pub family: MixingFamily,
    pub theta_mu: Vec<f64>,
    pub theta_nu: Vec<f64>,
    pub theta_f: StoredMatrix,
    pub theta_g: StoredMatrix,
    pub d_alpha: Vec<f64>,
    pub d_beta: Vec<f64>,
    pub c: StoredMatrix,
    pub sigma2_eps: f64,
    pub sigma2_xi: f64,
}

impl StoredParams {
    pub fn from_params(p: &ParameterSet) -> Self {
        Self {
            k_alpha: p.k_alpha(),
            k_beta: p.k_beta(),
            family: p.family,
            theta_mu: p.theta_mu.as_slice().to_vec(),
            theta_nu: p.theta_nu.as_slice().to_vec(),
            theta_f: StoredMatrix::from_matrix(&p.theta_f),
            theta_g: StoredMatrix::from_matrix(&p.theta_g),
            d_alpha: p.d_alpha.as_slice().to_vec(),
            d_beta: p.d_beta.as_slice().to_vec(),
            c: StoredMatrix::from_matrix(&p.c),
            sigma2_eps: p.sigma2_eps,
            sigma2_xi: p.sigma2_xi,
        }
    }

    pub fn to_params(&self) -> CliResult<ParameterSet> {
        let p = ParameterSet {
            theta_mu: DVector::from_vec(self.theta_mu.clone()),
            theta_nu: DVector::from_vec(self.theta_nu.clone()),
            theta_f: self.theta_f.to_matrix()?,
            theta_g: self.theta_g.to_matrix()?,
            d_alpha: DVector::from_vec(self.d_alpha.clone()),
            d_beta: DVector::from_vec(self.d_beta.clone()),
            c: self.c.to_matrix()?,
            sigma2_eps: self.sigma2_eps,
            sigma2_xi: self.sigma2_xi,
            family: self.family,
        };
        if p.k_alpha() != self.k_alpha || p.k_beta() != self.k_beta {
            return Err(CliError::Data("PC counts disagree with the stored matrices".into()));
        }
        p.validate().map_err(|e| CliError::Data(format!("invalid parameters: {e}")))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub restricted_steps: usize,
    pub rank_deficient: bool,
}

impl FitSummary {
    pub fn of(r: &FitResult) -> Self {
        Self {
            objective: r.objective(),
            initial_objective: r.initial_objective,
            iterations: r.iterations,
            converged: r.converged,
            stop_reason: r.stop_reason,
            restricted_steps: r.restricted_steps,
            rank_deficient: r.rank_deficient,
        }
    }
}

pub const PARAM_FORMAT: &str = "rrme-parameters";
pub const PARAM_VERSION: u32 = 1;

/// Self-describing parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub format: String,
    pub version: u32,
    pub basis: BasisSpec,
    pub lambdas: Lambdas,
    pub parameters: StoredParams,
    pub fit: FitSummary,
    /// `fit.seed` from the configuration, kept for the record.
    pub seed: Option<u64>,
}

impl ParamFile {
    pub fn new(basis: &OrthonormalBasis, lambdas: Lambdas, result: &FitResult, seed: Option<u64>) -> Self {
        Self {
            format: PARAM_FORMAT.into(),
            version: PARAM_VERSION,
            basis: BasisSpec::of(basis),
            lambdas,
            parameters: StoredParams::from_params(&result.params),
            fit: FitSummary::of(result),
            seed,
        }
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let file: Self = read_json(path)?;
        if file.format != PARAM_FORMAT || file.version != PARAM_VERSION {
            return Err(CliError::Data(format!(
                "{}: unsupported parameter file {} v{}",
                path.display(),
                file.format,
                file.version
            )));
        }
        Ok(file)
    }
}
