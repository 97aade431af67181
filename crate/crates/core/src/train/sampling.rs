//! Negative sampling for training-data enlargement and class reweighting for
//! click data.

use crate::constraint::{FeatureMap, Interaction, InteractionTensor};
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeStrategy {
    /// Pair users never observed in any bucket of the constraint with items
    /// never observed under it.
    TimeBucket,
    /// Uniform user and item draws.
    Uniform,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SamplingReport {
    pub requested: usize,
    pub added: usize,
    /// Negatives that fell back to uniform draws because the bucket strategy
    /// had no eligible users or items for the constraint.
    pub fallback_uniform: usize,
    pub warnings: Vec<String>,
}

/// Enlarge a positives-only dataset with sampled zero-reward records. The
/// bucket strategy adds, for each positive's constraint `c`, a user never
/// observed in any bucket active in `c` and an item never observed under
/// `c`; a constraint with no eligible pool falls back to uniform draws and
/// is reported as a warning. Deterministic for a fixed seed.
pub fn sample_training_negatives(
    data: &InteractionTensor,
    features: &FeatureMap,
    strategy: NegativeStrategy,
    ratio: f64,
    seed: u64,
) -> Result<(InteractionTensor, SamplingReport)> {
    if ratio < 0.0 {
        return Err(Error::InvalidConfig("negative ratio must be >= 0".into()));
    }
    let positives = data.records();
    let total = (ratio * positives.len() as f64).round() as usize;
    let mut report = SamplingReport {
        requested: total,
        ..SamplingReport::default()
    };
    if total == 0 || positives.is_empty() {
        return Ok((data.clone(), report));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles = data.user_bit_profiles();

    // Eligible user/item pools per distinct constraint.
    let mut pools: HashMap<Vec<usize>, (Vec<usize>, Vec<usize>)> = HashMap::new();
    if strategy == NegativeStrategy::TimeBucket {
        for c in data.unique_constraints() {
            let key = c.active().to_vec();
            let users: Vec<usize> = (0..data.m())
                .filter(|&u| profiles[u].iter().all(|j| !c.is_set(*j)))
                .collect();
            let items: Vec<usize> = (0..data.n())
                .filter(|&i| features.overlap(&c, i).map(|o| o == 0).unwrap_or(false))
                .collect();
            pools.insert(key, (users, items));
        }
    }

    let mut records = positives.to_vec();
    let mut warned: HashMap<Vec<usize>, ()> = HashMap::new();
    for t in 0..total {
        let pos = &positives[t % positives.len()];
        let c = pos.constraint.clone();
        let drawn = match strategy {
            NegativeStrategy::TimeBucket => {
                let (users, items) = &pools[c.active()];
                if users.is_empty() || items.is_empty() {
                    report.fallback_uniform += 1;
                    if warned.insert(c.active().to_vec(), ()).is_none() {
                        report.warnings.push(format!(
                            "constraint {:?}: no eligible {} for bucket sampling; fell back to uniform",
                            c.active(),
                            if users.is_empty() { "users" } else { "items" }
                        ));
                    }
                    (rng.gen_range(0..data.m()), rng.gen_range(0..data.n()))
                } else {
                    (
                        users[rng.gen_range(0..users.len())],
                        items[rng.gen_range(0..items.len())],
                    )
                }
            }
            NegativeStrategy::Uniform => (rng.gen_range(0..data.m()), rng.gen_range(0..data.n())),
        };
        records.push(Interaction {
            user: drawn.0,
            item: drawn.1,
            constraint: c,
            reward: 0.0,
            weight: 1.0,
        });
        report.added += 1;
    }
    let out = InteractionTensor::new(data.m(), data.n(), data.d(), records)?;
    Ok((out, report))
}

/// Set record weights by class. Requires a click regime (rewards exactly 0
/// or 1) with both classes present.
pub fn reweight_classes(
    data: &InteractionTensor,
    positive_weight: f64,
    negative_weight: f64,
) -> Result<InteractionTensor> {
    let (mut pos, mut neg) = (0usize, 0usize);
    for rec in data.records() {
        if rec.reward == 1.0 {
            pos += 1;
        } else if rec.reward == 0.0 {
            neg += 1;
        } else {
            return Err(Error::InvalidConfig(format!(
                "class reweighting needs rewards in {{0,1}}, found {}",
                rec.reward
            )));
        }
    }
    if pos == 0 {
        return Err(Error::MissingClass("no positive records".into()));
    }
    if neg == 0 {
        return Err(Error::MissingClass("no negative records".into()));
    }
    let records = data
        .records()
        .iter()
        .map(|rec| {
            let mut rec = rec.clone();
            rec.weight = if rec.reward == 1.0 {
                positive_weight
            } else {
                negative_weight
            };
            rec
        })
        .collect();
    InteractionTensor::new(data.m(), data.n(), data.d(), records)
}

/// Inverse class frequencies `(t / pos, t / neg)`: with these weights the
/// total weighted mass of each class is equal.
pub fn inverse_class_weights(data: &InteractionTensor) -> Result<(f64, f64)> {
    let t = data.len() as f64;
    let pos = data.records().iter().filter(|r| r.reward == 1.0).count() as f64;
    let neg = data.records().iter().filter(|r| r.reward == 0.0).count() as f64;
    if pos == 0.0 {
        return Err(Error::MissingClass("no positive records".into()));
    }
    if neg == 0.0 {
        return Err(Error::MissingClass("no negative records".into()));
    }
    Ok((t / pos, t / neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::ConstraintVector;

    fn c(d: usize, bits: &[usize]) -> ConstraintVector {
        ConstraintVector::new(d, bits.iter().copied()).unwrap()
    }

    fn rec(u: usize, i: usize, cv: ConstraintVector, r: f64) -> Interaction {
        Interaction {
            user: u,
            item: i,
            constraint: cv,
            reward: r,
            weight: 1.0,
        }
    }

    #[test]
    fn ratio_zero_leaves_data_unchanged() {
        let data = InteractionTensor::new(2, 2, 2, vec![rec(0, 0, c(2, &[0]), 1.0)]).unwrap();
        let f = FeatureMap::new(2, vec![vec![0], vec![1]]).unwrap();
        let (out, report) =
            sample_training_negatives(&data, &f, NegativeStrategy::TimeBucket, 0.0, 1).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(report.added, 0);
    }

    #[test]
    fn shared_bucket_world_triggers_fallback() {
        // Every user observed in the single bucket: no eligible users exist.
        let data = InteractionTensor::new(
            3,
            3,
            1,
            (0..3).map(|u| rec(u, u, c(1, &[0]), 1.0)).collect(),
        )
        .unwrap();
        let f = FeatureMap::new(1, vec![vec![0], vec![0], vec![0]]).unwrap();
        let (out, report) =
            sample_training_negatives(&data, &f, NegativeStrategy::TimeBucket, 1.0, 7).unwrap();
        assert_eq!(report.fallback_uniform, 3);
        assert!(!report.warnings.is_empty());
        assert_eq!(out.len(), 6);
    }

    #[test]
    fn sampled_negatives_are_ineligible_by_construction() {
        // 3 users, 3 items, 2 buckets: user 2 and item 2 live only in bucket
        // 1, so negatives for bucket-0 constraints must pick them.
        let data = InteractionTensor::new(
            3,
            3,
            2,
            vec![
                rec(0, 0, c(2, &[0]), 1.0),
                rec(1, 1, c(2, &[0]), 1.0),
                rec(2, 2, c(2, &[1]), 1.0),
            ],
        )
        .unwrap();
        let f = FeatureMap::new(2, vec![vec![0], vec![0], vec![1]]).unwrap();
        let (out, report) =
            sample_training_negatives(&data, &f, NegativeStrategy::TimeBucket, 2.0, 11).unwrap();
        assert_eq!(report.fallback_uniform, 0);
        let profiles = data.user_bit_profiles();
        for added in &out.records()[3..] {
            assert_eq!(added.reward, 0.0);
            // Exhaustive eligibility: the user shares no bucket with the
            // constraint, and the item's features miss it entirely.
            for j in added.constraint.active() {
                assert!(!profiles[added.user].contains(j));
            }
            assert_eq!(f.overlap(&added.constraint, added.item).unwrap(), 0);
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let data = InteractionTensor::new(
            4,
            4,
            2,
            vec![
                rec(0, 0, c(2, &[0]), 1.0),
                rec(1, 1, c(2, &[1]), 1.0),
                rec(2, 2, c(2, &[1]), 1.0),
            ],
        )
        .unwrap();
        let f = FeatureMap::new(2, vec![vec![0], vec![1], vec![1], vec![]]).unwrap();
        let (a, _) =
            sample_training_negatives(&data, &f, NegativeStrategy::TimeBucket, 3.0, 99).unwrap();
        let (b, _) =
            sample_training_negatives(&data, &f, NegativeStrategy::TimeBucket, 3.0, 99).unwrap();
        assert_eq!(a.records().len(), b.records().len());
        for (x, y) in a.records().iter().zip(b.records()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn reweight_balanced_with_unit_weights_is_identity() {
        let data = InteractionTensor::new(
            2,
            2,
            1,
            vec![rec(0, 0, c(1, &[0]), 1.0), rec(1, 1, c(1, &[0]), 0.0)],
        )
        .unwrap();
        let out = reweight_classes(&data, 1.0, 1.0).unwrap();
        for (a, b) in out.records().iter().zip(data.records()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn inverse_frequency_weights_balance_masses() {
        let mut records = vec![rec(0, 0, c(1, &[0]), 1.0)];
        for i in 0..9 {
            records.push(rec(0, 0, c(1, &[0]), 0.0));
            let _ = i;
        }
        let data = InteractionTensor::new(1, 1, 1, records).unwrap();
        let (wp, wn) = inverse_class_weights(&data).unwrap();
        let out = reweight_classes(&data, wp, wn).unwrap();
        let pos_mass: f64 = out
            .records()
            .iter()
            .filter(|r| r.reward == 1.0)
            .map(|r| r.weight)
            .sum();
        let neg_mass: f64 = out
            .records()
            .iter()
            .filter(|r| r.reward == 0.0)
            .map(|r| r.weight)
            .sum();
        assert!((pos_mass - neg_mass).abs() < 1e-9);
    }

    #[test]
    fn reweight_rejects_missing_class_and_graded_rewards() {
        let all_pos = InteractionTensor::new(1, 1, 1, vec![rec(0, 0, c(1, &[0]), 1.0)]).unwrap();
        assert!(matches!(
            reweight_classes(&all_pos, 1.0, 1.0),
            Err(Error::MissingClass(_))
        ));
        let graded = InteractionTensor::new(
            1,
            1,
            1,
            vec![rec(0, 0, c(1, &[0]), 0.5), rec(0, 0, c(1, &[0]), 0.0)],
        )
        .unwrap();
        assert!(reweight_classes(&graded, 1.0, 1.0).is_err());
    }
}
