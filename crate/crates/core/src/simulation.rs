//! Synthetic paired-curve data with known truth.
//!
//! Two PCs per channel on `[0, 1]`. Each subject is observed at `0` and at
//! `Binomial(15, 0.9)` further uniform times, shared by both channels.
//! Scenarios:
//!
//! 1. `u ≡ 1`
//! 2. `u ~ Gamma(γ/2, rate γ/2)`
//! 3. `u ~ Beta(γ, 1)`
//! 4. scenario 1 plus 5% of all observations shifted by `±U(8, 10)`
//! 5. scenario 1 plus 5% of subjects with `U(-4, 4)` added to every score

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RrmeError};
use crate::evaluation::CurveModel;
use crate::model::{Channel, PairedDataset, SubjectData};
use crate::par;
use crate::smnfamily::MixingFamily;

pub fn mu(t: f64) -> f64 {
    2.5 + 2.5 * t + 2.5 * (-20.0 * (t - 0.6).powi(2)).exp()
}

pub fn nu(t: f64) -> f64 {
    7.5 - 1.5 * t - 2.5 * (-20.0 * (t - 0.3).powi(2)).exp()
}

/// `j`-th Y component (0-based).
pub fn f(j: usize, t: f64) -> f64 {
    let s5 = 5f64.sqrt();
    let s15 = 15f64.sqrt();
    match j {
        0 => s15 / (1.0 + s5) * (t * t + 1.0 / s5),
        1 => s15 / (s5 - 1.0) * (t * t - 1.0 / s5),
        _ => 0.0,
    }
}

/// `j`-th Z component (0-based).
pub fn g(j: usize, t: f64) -> f64 {
    match j {
        0 => 2f64.sqrt() * (2.0 * PI * t).cos(),
        1 => 2f64.sqrt() * (2.0 * PI * t).sin(),
        _ => 0.0,
    }
}

/// Covariance of `(α₁, α₂, β₁, β₂)` at unit scale.
pub fn true_score_cov() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, -0.4, 0.12, //
            0.0, 0.25, 0.15, -0.05, //
            -0.4, 0.15, 1.44, 0.0, //
            0.12, -0.05, 0.0, 0.36,
        ],
    )
}

/// Closed-form generating model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueModel {
    pub sigma2: f64,
    pub family: MixingFamily,
}

/// The generating functions with unit-free defaults (normal, `σ² = 0.04`).
pub fn true_model() -> TrueModel {
    TrueModel {
        sigma2: 0.04,
        family: MixingFamily::Normal,
    }
}

impl CurveModel for TrueModel {
    fn k(&self, _channel: Channel) -> usize {
        2
    }

    fn eval(&self, channel: Channel, t: f64) -> Result<(f64, Vec<f64>)> {
        Ok(match channel {
            Channel::Y => (mu(t), vec![f(0, t), f(1, t)]),
            Channel::Z => (nu(t), vec![g(0, t), g(1, t)]),
        })
    }

    fn score_cov(&self) -> DMatrix<f64> {
        true_score_cov()
    }

    fn noise_variances(&self) -> (f64, f64) {
        (self.sigma2, self.sigma2)
    }

    fn family(&self) -> MixingFamily {
        self.family
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Normal,
    StudentT,
    Slash,
    PointOutliers,
    ShapeOutliers,
}

impl Scenario {
    pub fn from_number(n: u8) -> Result<Self> {
        Ok(match n {
            1 => Scenario::Normal,
            2 => Scenario::StudentT,
            3 => Scenario::Slash,
            4 => Scenario::PointOutliers,
            5 => Scenario::ShapeOutliers,
            _ => return Err(RrmeError::InvalidArgument(format!("scenario must be 1-5, got {n}"))),
        })
    }

    pub fn number(self) -> u8 {
        match self {
            Scenario::Normal => 1,
            Scenario::StudentT => 2,
            Scenario::Slash => 3,
            Scenario::PointOutliers => 4,
            Scenario::ShapeOutliers => 5,
        }
    }

    fn family(self, gamma: Option<f64>) -> MixingFamily {
        match (self, gamma) {
            (Scenario::StudentT, Some(gamma)) => MixingFamily::StudentT { gamma },
            (Scenario::Slash, Some(gamma)) => MixingFamily::Slash { gamma },
            _ => MixingFamily::Normal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub id: String,
    pub u: f64,
    /// `(α₁, α₂, β₁, β₂)` actually used to build the curves.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Contamination {
    /// One observation shifted by `shift`.
    Point {
        subject: usize,
        channel: Channel,
        index: usize,
        shift: f64,
    },
    /// All four scores of a subject shifted.
    Shape { subject: usize, shifts: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: Scenario,
    pub gamma: Option<f64>,
    pub sigma2: f64,
    pub seed: u64,
    pub subjects: Vec<SubjectTruth>,
    pub contamination: Vec<Contamination>,
}

impl GroundTruth {
    pub fn model(&self) -> TrueModel {
        TrueModel {
            sigma2: self.sigma2,
            family: self.scenario.family(self.gamma),
        }
    }

    /// True curve of subject `i` at `t`.
    pub fn curve(&self, i: usize, channel: Channel, t: f64) -> f64 {
        let s = &self.subjects[i].scores;
        match channel {
            Channel::Y => mu(t) + s[0] * f(0, t) + s[1] * f(1, t),
            Channel::Z => nu(t) + s[2] * g(0, t) + s[3] * g(1, t),
        }
    }
}

/// Stream 0 drives contamination, stream `i + 1` subject `i`.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Five percent of `total`, rounded down but at least one.
fn five_percent(total: usize) -> usize {
    (total / 20).max(1).min(total)
}

pub fn simulate(
    scenario: Scenario,
    gamma: Option<f64>,
    sigma2: f64,
    n: usize,
    seed: u64,
) -> Result<(PairedDataset, GroundTruth)> {
    if n == 0 {
        return Err(RrmeError::InvalidArgument("need at least one subject".into()));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(RrmeError::InvalidArgument(format!("noise variance must be positive, got {sigma2}")));
    }
    let gamma = match scenario {
        Scenario::StudentT | Scenario::Slash => match gamma {
            Some(g) if g > 0.0 && g.is_finite() => Some(g),
            other => {
                return Err(RrmeError::InvalidArgument(format!(
                    "scenario {} needs positive degrees of freedom, got {other:?}",
                    scenario.number()
                )))
            }
        },
        _ => None,
    };
    let chol = true_score_cov().cholesky().expect("true score covariance is positive definite");
    let l = chol.l();
    let mut contamination_rng = stream(seed, 0);

    let mut shape_shifts: Vec<Option<Vec<f64>>> = vec![None; n];
    if scenario == Scenario::ShapeOutliers {
        let mut picked = sample(&mut contamination_rng, n, five_percent(n)).into_vec();
        picked.sort_unstable();
        for i in picked {
            shape_shifts[i] = Some((0..4).map(|_| contamination_rng.random_range(-4.0..4.0)).collect());
        }
    }

    let sd = sigma2.sqrt();
    let generated = par::map_range(n, |i| {
        let mut rng = stream(seed, i as u64 + 1);
        let extra = Binomial::new(15, 0.9).expect("valid binomial").sample(&mut rng) as usize;
        let mut times = vec![0.0];
        times.extend((0..extra).map(|_| rng.random::<f64>()));
        times.sort_by(f64::total_cmp);
        let u = match (scenario, gamma) {
            (Scenario::StudentT, Some(g)) => Gamma::new(0.5 * g, 2.0 / g).expect("valid gamma").sample(&mut rng),
            (Scenario::Slash, Some(g)) => (1.0 - rng.random::<f64>()).powf(1.0 / g),
            _ => 1.0,
        };
        let z = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut scores = (&l * z) / u.sqrt();
        if let Some(shift) = &shape_shifts[i] {
            for (s, d) in scores.iter_mut().zip(shift) {
                *s += d;
            }
        }
        let noise = sd / u.sqrt();
        let s = scores.as_slice();
        let values_y: Vec<f64> = times
            .iter()
            .map(|&t| mu(t) + s[0] * f(0, t) + s[1] * f(1, t) + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let values_z: Vec<f64> = times
            .iter()
            .map(|&t| nu(t) + s[2] * g(0, t) + s[3] * g(1, t) + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let id = format!("s{:04}", i + 1);
        (
            SubjectData {
                id: id.clone(),
                times_y: times.clone(),
                values_y,
                times_z: times,
                values_z,
            },
            SubjectTruth {
                id,
                u,
                scores: s.to_vec(),
            },
        )
    });
    let (mut subjects, truths): (Vec<_>, Vec<_>) = generated.into_iter().unzip();

    let mut contamination: Vec<Contamination> = shape_shifts
        .into_iter()
        .enumerate()
        .filter_map(|(subject, s)| s.map(|shifts| Contamination::Shape { subject, shifts }))
        .collect();

    if scenario == Scenario::PointOutliers {
        let mut pool = Vec::new();
        for (si, s) in subjects.iter().enumerate() {
            pool.extend((0..s.n_y()).map(|j| (si, Channel::Y, j)));
            pool.extend((0..s.n_z()).map(|j| (si, Channel::Z, j)));
        }
        let mut picked = sample(&mut contamination_rng, pool.len(), five_percent(pool.len())).into_vec();
        picked.sort_unstable();
        for p in picked {
            let (subject, channel, index) = pool[p];
            let magnitude = contamination_rng.random_range(8.0..10.0);
            let shift = if contamination_rng.random_bool(0.5) { magnitude } else { -magnitude };
            let s = &mut subjects[subject];
            match channel {
                Channel::Y => s.values_y[index] += shift,
                Channel::Z => s.values_z[index] += shift,
            }
            contamination.push(Contamination::Point {
                subject,
                channel,
                index,
                shift,
            });
        }
    }

    let dataset = PairedDataset::new(subjects, (0.0, 1.0))?;
    let truth = GroundTruth {
        scenario,
        gamma,
        sigma2,
        seed,
        subjects: truths,
        contamination,
    };
    Ok((dataset, truth))
}
