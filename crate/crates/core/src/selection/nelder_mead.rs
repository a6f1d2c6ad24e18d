//! Derivative-free downhill simplex minimisation.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RrmeError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    /// Offset of the initial vertices from `x0` along each coordinate.
    pub step: f64,
    /// Stop when every vertex lies within this sup-norm distance of the best.
    pub tol: f64,
    pub max_evals: usize,
    /// Optional box; trial points are clamped into it.
    pub bounds: Option<(f64, f64)>,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            step: 0.5,
            tol: 1e-3,
            max_evals: 200,
            bounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// The simplex collapsed below the tolerance before the budget ran out.
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

struct Tracked<F> {
    f: F,
    evals: usize,
    bounds: Option<(f64, f64)>,
    best: Option<(Vec<f64>, f64)>,
}

impl<F: FnMut(&[f64]) -> f64> Tracked<F> {
    fn eval(&mut self, x: &mut [f64]) -> f64 {
        if let Some((lo, hi)) = self.bounds {
            for v in x.iter_mut() {
                *v = v.clamp(lo, hi);
            }
        }
        self.evals += 1;
        let v = (self.f)(x);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if self.best.as_ref().is_none_or(|(_, b)| v < *b) {
            self.best = Some((x.to_vec(), v));
        }
        v
    }
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect()
}

/// Minimise `f` from `x0`. NaN values count as `+inf`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], options: &NelderMeadOptions) -> Result<NelderMeadResult> {
    let d = x0.len();
    if d == 0 {
        return Err(RrmeError::InvalidArgument("empty starting point".into()));
    }
    if !(options.step != 0.0 && options.step.is_finite() && options.tol >= 0.0) {
        return Err(RrmeError::InvalidArgument("invalid simplex options".into()));
    }
    let mut fx = Tracked {
        f,
        evals: 0,
        bounds: options.bounds,
        best: None,
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    for i in 0..=d {
        let mut x = x0.to_vec();
        if i > 0 {
            x[i - 1] += options.step;
            if let Some((lo, hi)) = options.bounds {
                // Step inward if the vertex would sit on the bound.
                if x[i - 1] > hi {
                    x[i - 1] = x0[i - 1] - options.step;
                }
                x[i - 1] = x[i - 1].clamp(lo, hi);
            }
        }
        let v = fx.eval(&mut x);
        simplex.push((x, v));
    }

    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter < options.tol {
            converged = true;
            break;
        }
        if fx.evals >= options.max_evals {
            break;
        }
        let mut centroid = vec![0.0; d];
        for (x, _) in &simplex[..d] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / d as f64;
            }
        }
        let (worst, f_worst) = simplex[d].clone();
        let f_best = simplex[0].1;
        let f_second = simplex[d - 1].1;

        let mut xr = lerp(&centroid, &worst, -REFLECT);
        let fr = fx.eval(&mut xr);
        if fr < f_best {
            let mut xe = lerp(&centroid, &worst, -EXPAND);
            let fe = fx.eval(&mut xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < f_second {
            simplex[d] = (xr, fr);
            continue;
        }
        let (mut xc, accept) = if fr < f_worst {
            (lerp(&centroid, &xr, CONTRACT), fr)
        } else {
            (lerp(&centroid, &worst, CONTRACT), f_worst)
        };
        let fc = fx.eval(&mut xc);
        if fc < accept || (fr < f_worst && fc <= fr) {
            simplex[d] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let mut x = lerp(&best, &vertex.0, SHRINK);
            let v = fx.eval(&mut x);
            *vertex = (x, v);
        }
    }
    let (x, value) = fx.best.expect("at least one evaluation");
    Ok(NelderMeadResult {
        x,
        value,
        evaluations: fx.evals,
        converged,
    })
}
