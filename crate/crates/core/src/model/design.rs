use nalgebra::{DMatrix, DVector};

use super::{Lambdas, PairedDataset, ParameterSet, SubjectData};
use crate::error::{Result, RrmeError};
use crate::splinebasis::OrthonormalBasis;

/// Basis evaluations of one subject, computed once per fit.
#[derive(Debug, Clone)]
pub(crate) struct SubjectDesign {
    pub by: DMatrix<f64>,
    pub bz: DMatrix<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub btb_y: DMatrix<f64>,
    pub btb_z: DMatrix<f64>,
}

impl SubjectDesign {
    pub fn new(basis: &OrthonormalBasis, s: &SubjectData) -> Result<Self> {
        s.validate()?;
        let by = basis.design_matrix(&s.times_y)?;
        let bz = basis.design_matrix(&s.times_z)?;
        Ok(Self {
            btb_y: by.tr_mul(&by),
            btb_z: bz.tr_mul(&bz),
            by,
            bz,
            y: DVector::from_column_slice(&s.values_y),
            z: DVector::from_column_slice(&s.values_z),
        })
    }

    pub fn n_y(&self) -> usize {
        self.y.len()
    }

    pub fn n_z(&self) -> usize {
        self.z.len()
    }

    /// Stacked residual from the mean curves.
    pub fn residual(&self, p: &ParameterSet) -> DVector<f64> {
        let ry = &self.y - &self.by * &p.theta_mu;
        let rz = &self.z - &self.bz * &p.theta_nu;
        stack(&ry, &rz)
    }

    /// Block-diagonal loading matrix `blockdiag(B_y Θ_f, B_z Θ_g)`.
    pub fn loadings(&self, p: &ParameterSet) -> DMatrix<f64> {
        let (ny, nz) = (self.n_y(), self.n_z());
        let (ka, kb) = (p.k_alpha(), p.k_beta());
        let mut a = DMatrix::zeros(ny + nz, ka + kb);
        if ny > 0 {
            a.view_mut((0, 0), (ny, ka)).copy_from(&(&self.by * &p.theta_f));
        }
        if nz > 0 {
            a.view_mut((ny, ka), (nz, kb)).copy_from(&(&self.bz * &p.theta_g));
        }
        a
    }
}

pub(crate) fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut v = DVector::zeros(a.len() + b.len());
    v.rows_mut(0, a.len()).copy_from(a);
    v.rows_mut(a.len(), b.len()).copy_from(b);
    v
}

/// Cached designs for a whole dataset plus the penalty matrix.
#[derive(Debug, Clone)]
pub(crate) struct Designs {
    pub subjects: Vec<SubjectDesign>,
    pub ids: Vec<String>,
    pub omega: Option<DMatrix<f64>>,
    pub q: usize,
}

impl Designs {
    pub fn new(basis: &OrthonormalBasis, dataset: &PairedDataset) -> Result<Self> {
        let subjects = dataset
            .subjects
            .iter()
            .map(|s| SubjectDesign::new(basis, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            subjects,
            ids: dataset.subjects.iter().map(|s| s.id.clone()).collect(),
            omega: basis.penalty().ok().cloned(),
            q: basis.dim(),
        })
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn total_y(&self) -> usize {
        self.subjects.iter().map(SubjectDesign::n_y).sum()
    }

    pub fn total_z(&self) -> usize {
        self.subjects.iter().map(SubjectDesign::n_z).sum()
    }

    /// Penalty matrix, or an error if a positive weight needs one the basis
    /// cannot provide.
    pub fn omega_for(&self, lambdas: &Lambdas) -> Result<DMatrix<f64>> {
        match &self.omega {
            Some(o) => Ok(o.clone()),
            None if lambdas.to_array().iter().all(|l| *l == 0.0) => Ok(DMatrix::zeros(self.q, self.q)),
            None => Err(RrmeError::InvalidArgument(
                "roughness penalties need a spline degree of at least 2".into(),
            )),
        }
    }

    /// The roughness penalty of `p`.
    pub fn penalty_value(&self, p: &ParameterSet, lambdas: &Lambdas) -> Result<f64> {
        let omega = self.omega_for(lambdas)?;
        Ok(penalty_value(&omega, p, lambdas))
    }
}

pub(crate) fn penalty_value(omega: &DMatrix<f64>, p: &ParameterSet, l: &Lambdas) -> f64 {
    let quad = |v: &DVector<f64>| v.dot(&(omega * v));
    let cols = |m: &DMatrix<f64>| m.column_iter().map(|c| c.dot(&(omega * c))).sum::<f64>();
    l.mu * quad(&p.theta_mu) + l.nu * quad(&p.theta_nu) + l.f * cols(&p.theta_f) + l.g * cols(&p.theta_g)
}
