//! Clamped B-spline bases orthonormalized on their domain, together with
//! design and roughness-penalty matrices.
//!
//! The orthonormal basis is `b(t) = M B(t)` where `B` holds the raw
//! B-spline values and `M = L^-1` for the Cholesky factor `G = L L^T` of the
//! raw Gram matrix. Every integral of products of basis functions is a
//! piecewise polynomial, so per-interval Gauss–Legendre quadrature with
//! `degree + 1` nodes is exact.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RrmeError};
use crate::quad::gauss_legendre;

/// Knot configuration of a clamped spline space on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    pub lo: f64,
    pub hi: f64,
    pub interior: Vec<f64>,
    pub degree: usize,
}

impl KnotVector {
    pub fn new(domain: (f64, f64), interior: Vec<f64>, degree: usize) -> Result<Self> {
        let (lo, hi) = domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(RrmeError::InvalidKnots(format!(
                "domain [{lo}, {hi}] is not a proper interval"
            )));
        }
        if interior.is_empty() {
            return Err(RrmeError::InvalidKnots("at least one interior knot is required".into()));
        }
        if degree < 1 {
            return Err(RrmeError::InvalidKnots("degree must be at least 1".into()));
        }
        for (i, &k) in interior.iter().enumerate() {
            if !(k > lo && k < hi) {
                return Err(RrmeError::InvalidKnots(format!(
                    "interior knot {k} (index {i}) is not strictly inside [{lo}, {hi}]"
                )));
            }
            if i > 0 && k < interior[i - 1] {
                return Err(RrmeError::InvalidKnots(format!(
                    "interior knots decrease at index {i}"
                )));
            }
        }
        Ok(Self {
            lo,
            hi,
            interior,
            degree,
        })
    }

    /// `count` equally spaced interior knots.
    pub fn equispaced(domain: (f64, f64), count: usize, degree: usize) -> Result<Self> {
        let (lo, hi) = domain;
        let step = (hi - lo) / (count as f64 + 1.0);
        let interior = (1..=count).map(|i| lo + step * i as f64).collect();
        Self::new(domain, interior, degree)
    }

    /// Number of basis functions.
    pub fn dim(&self) -> usize {
        self.interior.len() + self.degree + 1
    }

    /// Full knot sequence with `degree + 1` copies of each boundary knot.
    pub fn full(&self) -> Vec<f64> {
        let p = self.degree;
        let mut t = Vec::with_capacity(self.interior.len() + 2 * (p + 1));
        t.extend(std::iter::repeat_n(self.lo, p + 1));
        t.extend_from_slice(&self.interior);
        t.extend(std::iter::repeat_n(self.hi, p + 1));
        t
    }

    /// Distinct breakpoints, i.e. the polynomial pieces of the space.
    fn breakpoints(&self) -> Vec<f64> {
        let mut b = vec![self.lo];
        for &k in &self.interior {
            if k > *b.last().unwrap() {
                b.push(k);
            }
        }
        b.push(self.hi);
        b
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lo && t <= self.hi
    }
}

/// Nonzero raw B-spline values (and derivatives) at one point.
struct LocalValues {
    /// Index of the first nonzero basis function.
    first: usize,
    /// `ders[k][j]`: k-th derivative of basis function `first + j`.
    ders: Vec<Vec<f64>>,
}

fn find_span(knots: &[f64], p: usize, n_basis: usize, t: f64) -> usize {
    // Left-limit convention at the right end.
    if t >= knots[n_basis] {
        let mut s = n_basis - 1;
        while s > p && knots[s] == knots[s + 1] {
            s -= 1;
        }
        return s;
    }
    let (mut lo, mut hi) = (p, n_basis);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if t < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Raw basis values and derivatives up to `n_ders` via the triangular
/// Cox–de Boor recursion (Piegl & Tiller, A2.3).
fn local_values(knots: &[f64], p: usize, n_basis: usize, t: f64, n_ders: usize) -> LocalValues {
    let span = find_span(knots, p, n_basis, t);
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let tmp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        ndu[j][j] = saved;
    }
    let n_ders = n_ders.min(p);
    let mut ders = vec![vec![0.0; p + 1]; n_ders + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let mut a = vec![vec![0.0; p + 1]; 2];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=n_ders {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p - k;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = p as f64;
    for k in 1..=n_ders {
        for v in ders[k].iter_mut() {
            *v *= factor;
        }
        factor *= (p - k) as f64;
    }
    LocalValues {
        first: span - p,
        ders,
    }
}

/// Derivative order for basis evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    Value,
    First,
    Second,
}

impl Derivative {
    fn order(self) -> usize {
        match self {
            Derivative::Value => 0,
            Derivative::First => 1,
            Derivative::Second => 2,
        }
    }
}

/// An orthonormal spline basis with its Gram and roughness-penalty matrices.
#[derive(Debug, Clone)]
pub struct OrthonormalBasis {
    knots: KnotVector,
    full_knots: Vec<f64>,
    /// `M`: orthonormal values are `M * raw`.
    transform: DMatrix<f64>,
    gram: DMatrix<f64>,
    omega: Option<DMatrix<f64>>,
}

/// Build the orthonormal basis for the given knot configuration.
pub fn make_basis(domain: (f64, f64), interior_knots: Vec<f64>, degree: usize) -> Result<OrthonormalBasis> {
    OrthonormalBasis::new(KnotVector::new(domain, interior_knots, degree)?)
}

impl OrthonormalBasis {
    pub fn new(knots: KnotVector) -> Result<Self> {
        let q = knots.dim();
        let full_knots = knots.full();
        let gram = raw_product_integral(&knots, &full_knots, Derivative::Value);
        let chol = gram.clone().cholesky().ok_or_else(|| {
            RrmeError::DegenerateBasis("raw Gram matrix is not positive definite".into())
        })?;
        let l = chol.l();
        let diag_min = l.diagonal().iter().cloned().fold(f64::INFINITY, f64::min);
        let diag_max = l.diagonal().iter().cloned().fold(0.0, f64::max);
        if !(diag_min > 1e-7 * diag_max) {
            return Err(RrmeError::DegenerateBasis(format!(
                "raw Gram matrix is numerically singular (pivot ratio {:e})",
                diag_min / diag_max
            )));
        }
        let transform = l
            .solve_lower_triangular(&DMatrix::identity(q, q))
            .ok_or_else(|| RrmeError::DegenerateBasis("Cholesky factor is singular".into()))?;
        let omega = if knots.degree >= 2 {
            let raw = raw_product_integral(&knots, &full_knots, Derivative::Second);
            let om = &transform * raw * transform.transpose();
            Some(symmetrize(om))
        } else {
            None
        };
        Ok(Self {
            knots,
            full_knots,
            transform,
            gram,
            omega,
        })
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn dim(&self) -> usize {
        self.knots.dim()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots.lo, self.knots.hi)
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    /// Inner products of the raw B-splines.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Roughness penalty `∫ b'' b''^T` in orthonormal coordinates.
    pub fn penalty(&self) -> Result<&DMatrix<f64>> {
        self.omega
            .as_ref()
            .ok_or(RrmeError::UnsupportedDegree(self.knots.degree))
    }

    /// Raw (non-orthonormalized) basis values at `t`.
    pub fn eval_raw(&self, t: f64, der: Derivative) -> Result<DVector<f64>> {
        self.check(t, 0)?;
        let q = self.dim();
        let local = local_values(&self.full_knots, self.knots.degree, q, t, der.order());
        let mut out = DVector::zeros(q);
        if let Some(vals) = local.ders.get(der.order()) {
            for (j, v) in vals.iter().enumerate() {
                out[local.first + j] = *v;
            }
        }
        Ok(out)
    }

    /// Orthonormal basis values `b(t)` (or a derivative).
    pub fn eval(&self, t: f64, der: Derivative) -> Result<DVector<f64>> {
        self.check(t, 0)?;
        let mut out = DVector::zeros(self.dim());
        self.accumulate(t, der, out.as_mut_slice());
        Ok(out)
    }

    fn accumulate(&self, t: f64, der: Derivative, out: &mut [f64]) {
        let q = self.dim();
        let local = local_values(&self.full_knots, self.knots.degree, q, t, der.order());
        let Some(vals) = local.ders.get(der.order()) else {
            return;
        };
        for (j, v) in vals.iter().enumerate() {
            let col = self.transform.column(local.first + j);
            // M is lower triangular: rows above the column index are zero.
            for r in (local.first + j)..q {
                out[r] += v * col[r];
            }
        }
    }

    fn check(&self, t: f64, index: usize) -> Result<()> {
        if self.knots.contains(t) {
            Ok(())
        } else {
            Err(RrmeError::OutOfDomain {
                index,
                time: t,
                lo: self.knots.lo,
                hi: self.knots.hi,
            })
        }
    }

    /// Rows `b(t_j)^T` for each time.
    pub fn design_matrix(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        let q = self.dim();
        let mut m = DMatrix::zeros(times.len(), q);
        let mut row = vec![0.0; q];
        for (i, &t) in times.iter().enumerate() {
            self.check(t, i)?;
            row.iter_mut().for_each(|v| *v = 0.0);
            self.accumulate(t, Derivative::Value, &mut row);
            for (c, v) in row.iter().enumerate() {
                m[(i, c)] = *v;
            }
        }
        Ok(m)
    }

    /// Orthonormal coordinates of the function `sum_k raw[k] * B_k(t)`.
    pub fn coefficients_from_raw(&self, raw: &DVector<f64>) -> DVector<f64> {
        // b = M B  =>  c_orth = M^-T c_raw = L^T c_raw
        let l = self
            .transform
            .clone()
            .try_inverse()
            .expect("transform is invertible by construction");
        l.transpose() * raw
    }

    /// Evaluate `b(t)^T coef` at many points.
    pub fn eval_function(&self, coef: &DVector<f64>, times: &[f64]) -> Result<Vec<f64>> {
        let d = self.design_matrix(times)?;
        Ok((d * coef).iter().cloned().collect())
    }
}

/// Penalty matrix accessor mirroring `design_matrix`.
pub fn penalty_matrix(basis: &OrthonormalBasis) -> Result<DMatrix<f64>> {
    basis.penalty().cloned()
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// `∫ D B(t) D B(t)^T dt` for raw B-splines, exact per-interval quadrature.
fn raw_product_integral(knots: &KnotVector, full: &[f64], der: Derivative) -> DMatrix<f64> {
    let q = knots.dim();
    let p = knots.degree;
    let (nodes, weights) = gauss_legendre(p + 1);
    let mut g = DMatrix::zeros(q, q);
    let bps = knots.breakpoints();
    for w in bps.windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, wt) in nodes.iter().zip(&weights) {
            let t = mid + half * x;
            let local = local_values(full, p, q, t, der.order());
            let Some(vals) = local.ders.get(der.order()) else {
                continue;
            };
            for (i, vi) in vals.iter().enumerate() {
                for (j, vj) in vals.iter().enumerate() {
                    g[(local.first + i, local.first + j)] += wt * half * vi * vj;
                }
            }
        }
    }
    symmetrize(g)
}
