use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RrmeError};
use crate::model::{Channel, PairedDataset, SubjectData};

/// Fold membership of one subject's observations; `None` marks points that
/// are never held out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectFolds {
    pub y: Vec<Option<usize>>,
    pub z: Vec<Option<usize>>,
}

impl SubjectFolds {
    pub fn channel(&self, channel: Channel) -> &[Option<usize>] {
        match channel {
            Channel::Y => &self.y,
            Channel::Z => &self.z,
        }
    }
}

/// Within-subject assignment of observations to `k` folds (numbered
/// `0..k`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub subjects: Vec<SubjectFolds>,
}

/// A held-out observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeldOut {
    pub subject: usize,
    pub channel: Channel,
    pub time: f64,
    pub value: f64,
}

fn assign(m: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Option<usize>> {
    if m < 2 {
        return vec![None; m];
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut labels: Vec<usize> = (0..k).collect();
    labels.shuffle(rng);
    let mut out = vec![None; m];
    for (pos, &point) in order.iter().enumerate() {
        out[point] = Some(labels[pos % k]);
    }
    out
}

/// Randomly spread each subject-channel's points evenly over `k` folds.
/// Single-point subject-channels are never held out, and no fold removes
/// every point of a subject-channel.
pub fn make_folds(dataset: &PairedDataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(RrmeError::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = dataset
        .subjects
        .iter()
        .map(|s| SubjectFolds {
            y: assign(s.n_y(), k, &mut rng),
            z: assign(s.n_z(), k, &mut rng),
        })
        .collect();
    Ok(FoldPlan { k, seed, subjects })
}

impl FoldPlan {
    fn check(&self, dataset: &PairedDataset) -> Result<()> {
        let ok = self.subjects.len() == dataset.n()
            && self
                .subjects
                .iter()
                .zip(&dataset.subjects)
                .all(|(f, s)| f.y.len() == s.n_y() && f.z.len() == s.n_z());
        if ok {
            Ok(())
        } else {
            Err(RrmeError::InvalidArgument("fold plan does not match the dataset".into()))
        }
    }

    /// Training data and held-out points of `fold`.
    pub fn split(&self, dataset: &PairedDataset, fold: usize) -> Result<(PairedDataset, Vec<HeldOut>)> {
        self.check(dataset)?;
        let mut held = Vec::new();
        let mut train = Vec::with_capacity(dataset.n());
        for (i, (s, f)) in dataset.subjects.iter().zip(&self.subjects).enumerate() {
            let mut kept = SubjectData {
                id: s.id.clone(),
                ..SubjectData::default()
            };
            for channel in [Channel::Y, Channel::Z] {
                let (times, values) = match channel {
                    Channel::Y => (&mut kept.times_y, &mut kept.values_y),
                    Channel::Z => (&mut kept.times_z, &mut kept.values_z),
                };
                for ((&t, &v), &a) in s.times(channel).iter().zip(s.values(channel)).zip(f.channel(channel)) {
                    if a == Some(fold) {
                        held.push(HeldOut {
                            subject: i,
                            channel,
                            time: t,
                            value: v,
                        });
                    } else {
                        times.push(t);
                        values.push(v);
                    }
                }
            }
            train.push(kept);
        }
        Ok((
            PairedDataset {
                subjects: train,
                domain: dataset.domain,
            },
            held,
        ))
    }
}
