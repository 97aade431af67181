//! AUC evaluation: rank statistics with exact tie handling, per-context
//! slicing, constraint-aware test negatives, and per-seed summaries.
//!
//! Scores are compared only through their order, so the metric is invariant
//! under any strictly increasing transform. Ties count one half, which makes
//! the rank computation agree exactly with the exhaustive pairwise count.

use crate::constraint::{ConstraintVector, FeatureMap, InteractionTensor};
use crate::data::RawRecord;
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// One scored evaluation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub score: f64,
    pub label: bool,
    pub user: usize,
    pub item: usize,
    pub constraint: ConstraintVector,
    /// Optional context tag (e.g. the check-in window's center bucket).
    pub tag_bucket: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucResult {
    pub value: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Probability that a uniformly random positive outscores a uniformly random
/// negative, ties counting one half. Computed by midrank statistics.
pub fn auc(pairs: &[ScoredPair]) -> Result<AucResult> {
    let n_pos = pairs.iter().filter(|p| p.label).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "auc needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    for p in pairs {
        if !p.score.is_finite() {
            return Err(Error::NonFinite(format!(
                "score for user {} item {}",
                p.user, p.item
            )));
        }
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| {
        pairs[a]
            .score
            .partial_cmp(&pairs[b].score)
            .expect("finite scores")
    });
    // Midranks over tie groups; ranks are 1-based.
    let mut rank_sum_pos = 0.0;
    let mut idx = 0;
    while idx < order.len() {
        let mut end = idx + 1;
        while end < order.len() && pairs[order[end]].score == pairs[order[idx]].score {
            end += 1;
        }
        let midrank = (idx + 1 + end) as f64 / 2.0;
        for &oi in &order[idx..end] {
            if pairs[oi].label {
                rank_sum_pos += midrank;
            }
        }
        idx = end;
    }
    let p = n_pos as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(AucResult {
        value: u / (p * n_neg as f64),
        n_pos,
        n_neg,
    })
}

/// AUC restricted to the pairs matching the predicate. Errors if the slice
/// is empty or single-class, naming the slice.
pub fn sliced_auc(
    pairs: &[ScoredPair],
    slice_name: &str,
    pred: impl Fn(&ScoredPair) -> bool,
) -> Result<AucResult> {
    let subset: Vec<ScoredPair> = pairs.iter().filter(|p| pred(p)).cloned().collect();
    if subset.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "slice '{slice_name}' is empty"
        )));
    }
    auc(&subset).map_err(|e| match e {
        Error::UndefinedMetric(msg) => {
            Error::UndefinedMetric(format!("slice '{slice_name}': {msg}"))
        }
        other => other,
    })
}

/// An unscored evaluation pair, persisted so every model is scored on the
/// identical set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub user: usize,
    pub item: usize,
    pub constraint_bits: Vec<usize>,
    pub label: bool,
    pub tag_bucket: Option<usize>,
}

impl EvalItem {
    pub fn constraint(&self, d: usize) -> Result<ConstraintVector> {
        ConstraintVector::new(d, self.constraint_bits.iter().copied())
    }
}

pub fn write_eval_items(path: &std::path::Path, items: &[EvalItem]) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut f, item)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_eval_items(path: &std::path::Path) -> Result<Vec<EvalItem>> {
    use std::io::BufRead;
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::DataFormat {
            line: lineno + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Evaluation items from click records: reward 1 is the positive class.
pub fn eval_items_from_clicks(records: &[RawRecord]) -> Vec<EvalItem> {
    records
        .iter()
        .map(|r| EvalItem {
            user: r.user,
            item: r.item,
            constraint_bits: r.constraint_bits.clone(),
            label: r.reward > 0.5,
            tag_bucket: None,
        })
        .collect()
}

/// Evaluation items from records with explicit `-1` negatives: any
/// nonnegative target is the positive class.
pub fn eval_items_from_targets(records: &[RawRecord]) -> Vec<EvalItem> {
    records
        .iter()
        .map(|r| EvalItem {
            user: r.user,
            item: r.item,
            constraint_bits: r.constraint_bits.clone(),
            label: r.reward >= 0.0,
            tag_bucket: None,
        })
        .collect()
}

/// Build check-in-style test pairs: each test positive is kept, and `ratio`
/// negatives per positive pair a random user never observed in any bucket of
/// the positive's window with a random restaurant never observed under it.
/// Eligibility is decided from observation presence only. Errors if some
/// constraint has no eligible users or items: evaluation never silently
/// falls back.
pub fn make_test_negatives_timebucket(
    test_positives: &[RawRecord],
    observations: &InteractionTensor,
    features: &FeatureMap,
    ratio: f64,
    seed: u64,
) -> Result<Vec<EvalItem>> {
    if ratio < 0.0 {
        return Err(Error::InvalidConfig("negative ratio must be >= 0".into()));
    }
    let d = observations.d();
    let profiles = observations.user_bit_profiles();
    let mut pools: HashMap<Vec<usize>, (Vec<usize>, Vec<usize>)> = HashMap::new();
    let mut items = Vec::with_capacity(test_positives.len() * 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for rec in test_positives {
        let c = rec.constraint(d)?;
        let tag = crate::data::foursquare::window_center(&rec.constraint_bits);
        items.push(EvalItem {
            user: rec.user,
            item: rec.item,
            constraint_bits: rec.constraint_bits.clone(),
            label: true,
            tag_bucket: tag,
        });
        if !pools.contains_key(&rec.constraint_bits) {
            let users: Vec<usize> = (0..observations.m())
                .filter(|&u| profiles[u].iter().all(|j| !c.is_set(*j)))
                .collect();
            let eligible_items: Vec<usize> = (0..observations.n())
                .filter(|&i| features.overlap(&c, i).map(|o| o == 0).unwrap_or(false))
                .collect();
            if users.is_empty() {
                return Err(Error::Infeasible(format!(
                    "no users outside buckets {:?}; cannot build test negatives",
                    rec.constraint_bits
                )));
            }
            if eligible_items.is_empty() {
                return Err(Error::Infeasible(format!(
                    "no items unobserved under buckets {:?}; cannot build test negatives",
                    rec.constraint_bits
                )));
            }
            pools.insert(rec.constraint_bits.clone(), (users, eligible_items));
        }
    }
    let total_neg = (ratio * test_positives.len() as f64).round() as usize;
    for t in 0..total_neg {
        let rec = &test_positives[t % test_positives.len()];
        let (users, eligible_items) = &pools[&rec.constraint_bits];
        let tag = crate::data::foursquare::window_center(&rec.constraint_bits);
        items.push(EvalItem {
            user: users[rng.gen_range(0..users.len())],
            item: eligible_items[rng.gen_range(0..eligible_items.len())],
            constraint_bits: rec.constraint_bits.clone(),
            label: false,
            tag_bucket: tag,
        });
    }
    Ok(items)
}

/// Per-seed AUC summary including the folding-risk indicator: the fraction
/// of seeds at or below chance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub frac_at_or_below_half: f64,
}

impl SeedSummary {
    pub fn from_aucs(per_seed: &[f64]) -> SeedSummary {
        let n = per_seed.len().max(1) as f64;
        let mean = per_seed.iter().sum::<f64>() / n;
        let std = if per_seed.len() >= 2 {
            (per_seed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let frac = per_seed.iter().filter(|&&v| v <= 0.5).count() as f64 / n;
        SeedSummary {
            per_seed: per_seed.to_vec(),
            mean,
            std,
            frac_at_or_below_half: frac,
        }
    }

    /// Standard error of the mean.
    pub fn sem(&self) -> f64 {
        if self.per_seed.len() < 2 {
            0.0
        } else {
            self.std / (self.per_seed.len() as f64).sqrt()
        }
    }
}

/// Summarize per-seed AUCs for a folding experiment. Needs at least two
/// seeds for the spread to mean anything.
pub fn folding_report(per_seed_aucs: &[f64]) -> Result<SeedSummary> {
    if per_seed_aucs.len() < 2 {
        return Err(Error::InvalidConfig(
            "folding report needs at least 2 seeds".into(),
        ));
    }
    Ok(SeedSummary::from_aucs(per_seed_aucs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(score: f64, label: bool) -> ScoredPair {
        ScoredPair {
            score,
            label,
            user: 0,
            item: 0,
            constraint: ConstraintVector::new(1, [0]).unwrap(),
            tag_bucket: None,
        }
    }

    /// Exhaustive pairwise oracle: count wins plus half-ties over all
    /// positive-negative pairs.
    fn pairwise_oracle(pairs: &[ScoredPair]) -> f64 {
        let pos: Vec<f64> = pairs.iter().filter(|p| p.label).map(|p| p.score).collect();
        let neg: Vec<f64> = pairs.iter().filter(|p| !p.label).map(|p| p.score).collect();
        let mut wins = 0.0;
        for &p in &pos {
            for &n in &neg {
                if p > n {
                    wins += 1.0;
                } else if p == n {
                    wins += 0.5;
                }
            }
        }
        wins / (pos.len() as f64 * neg.len() as f64)
    }

    #[test]
    fn perfect_separation_is_one() {
        let pairs = vec![pair(0.9, true), pair(0.1, false)];
        assert_eq!(auc(&pairs).unwrap().value, 1.0);
    }

    #[test]
    fn all_ties_is_half() {
        let pairs = vec![pair(0.5, true), pair(0.5, false), pair(0.5, true)];
        assert_eq!(auc(&pairs).unwrap().value, 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        let pairs = vec![pair(0.5, true), pair(0.4, true)];
        assert!(matches!(auc(&pairs), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn rank_auc_equals_pairwise_oracle() {
        let mut rng = crate::test_rng(61);
        for case in 0..100 {
            let n = rng.gen_range(2..60);
            let mut pairs: Vec<ScoredPair> = (0..n)
                .map(|_| {
                    // Coarse score grid to force ties.
                    let s = (rng.gen_range(0..10) as f64) / 10.0;
                    pair(s, rng.gen_bool(0.5))
                })
                .collect();
            if !pairs.iter().any(|p| p.label) {
                pairs[0].label = true;
            }
            if pairs.iter().all(|p| p.label) {
                pairs[0].label = false;
            }
            let fast = auc(&pairs).unwrap().value;
            let slow = pairwise_oracle(&pairs);
            assert!(
                (fast - slow).abs() < 1e-12,
                "case {case}: rank {fast} vs oracle {slow}"
            );
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut rng = crate::test_rng(67);
        for _ in 0..30 {
            let pairs: Vec<ScoredPair> = (0..40)
                .map(|_| pair(rng.gen_range(-2.0..2.0), rng.gen_bool(0.4)))
                .collect();
            if pairs.iter().all(|p| p.label) || pairs.iter().all(|p| !p.label) {
                continue;
            }
            let base = auc(&pairs).unwrap().value;
            let squashed: Vec<ScoredPair> = pairs
                .iter()
                .map(|p| {
                    let mut q = p.clone();
                    q.score = (p.score * 3.0).tanh() + 5.0;
                    q
                })
                .collect();
            assert!((auc(&squashed).unwrap().value - base).abs() < 1e-12);
        }
    }

    #[test]
    fn label_flip_mirrors_auc() {
        let mut rng = crate::test_rng(71);
        let pairs: Vec<ScoredPair> = (0..50)
            .map(|_| pair(rng.gen_range(0.0..1.0), rng.gen_bool(0.5)))
            .collect();
        let a = auc(&pairs).unwrap().value;
        let flipped: Vec<ScoredPair> = pairs
            .iter()
            .map(|p| {
                let mut q = p.clone();
                q.label = !p.label;
                q
            })
            .collect();
        let b = auc(&flipped).unwrap().value;
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slice_of_everything_equals_global() {
        let mut rng = crate::test_rng(73);
        let pairs: Vec<ScoredPair> = (0..30)
            .map(|_| pair(rng.gen_range(0.0..1.0), rng.gen_bool(0.5)))
            .collect();
        let global = auc(&pairs).unwrap().value;
        let sliced = sliced_auc(&pairs, "all", |_| true).unwrap().value;
        assert_eq!(global, sliced);
    }

    #[test]
    fn disjoint_slices_compute_independently() {
        let mut pairs = Vec::new();
        for i in 0..10 {
            let mut p = pair(i as f64, i % 2 == 0);
            p.tag_bucket = Some(if i < 5 { 1 } else { 2 });
            pairs.push(p);
        }
        let s1 = sliced_auc(&pairs, "one", |p| p.tag_bucket == Some(1)).unwrap();
        let s2 = sliced_auc(&pairs, "two", |p| p.tag_bucket == Some(2)).unwrap();
        assert_eq!(s1.n_pos + s1.n_neg, 5);
        assert_eq!(s2.n_pos + s2.n_neg, 5);
    }

    #[test]
    fn empty_slice_error_names_the_slice() {
        let pairs = vec![pair(1.0, true), pair(0.0, false)];
        match sliced_auc(&pairs, "morning", |_| false) {
            Err(Error::UndefinedMetric(msg)) => assert!(msg.contains("morning")),
            other => panic!("expected undefined metric, got {other:?}"),
        }
    }

    #[test]
    fn sliced_matches_bruteforce_on_filtered_subset() {
        let mut rng = crate::test_rng(79);
        let pairs: Vec<ScoredPair> = (0..60)
            .map(|i| {
                let mut p = pair((rng.gen_range(0..8) as f64) / 8.0, rng.gen_bool(0.5));
                p.tag_bucket = Some(i % 3);
                p
            })
            .collect();
        let filtered: Vec<ScoredPair> = pairs
            .iter()
            .filter(|p| p.tag_bucket == Some(0))
            .cloned()
            .collect();
        if filtered.iter().any(|p| p.label) && filtered.iter().any(|p| !p.label) {
            let fast = sliced_auc(&pairs, "t0", |p| p.tag_bucket == Some(0))
                .unwrap()
                .value;
            assert!((fast - pairwise_oracle(&filtered)).abs() < 1e-12);
        }
    }

    #[test]
    fn folding_report_examples() {
        let all_perfect = folding_report(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(all_perfect.frac_at_or_below_half, 0.0);
        let split = folding_report(&[0.4, 0.6]).unwrap();
        assert_eq!(split.frac_at_or_below_half, 0.5);
        assert!(folding_report(&[0.7]).is_err());
    }

    #[test]
    fn seed_summary_matches_direct_recomputation() {
        let mut rng = crate::test_rng(83);
        let vals: Vec<f64> = (0..10).map(|_| rng.gen_range(0.3..0.9)).collect();
        let summary = SeedSummary::from_aucs(&vals);
        let mean = vals.iter().sum::<f64>() / 10.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0;
        assert!((summary.mean - mean).abs() < 1e-12);
        assert!((summary.std - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn test_negatives_ratio_and_eligibility() {
        let (data, features) = crate::fixtures::bucket_world();
        let positives = crate::data::raw_from_tensor(&data);
        // ratio 1: one negative per positive.
        let items = make_test_negatives_timebucket(&positives, &data, &features, 1.0, 3).unwrap();
        let negs: Vec<&EvalItem> = items.iter().filter(|i| !i.label).collect();
        assert_eq!(negs.len(), positives.len());
        // Exhaustive eligibility: negatives never share buckets with their
        // constraint, neither through the user profile nor item features.
        let profiles = data.user_bit_profiles();
        for neg in &negs {
            for j in &neg.constraint_bits {
                assert!(!profiles[neg.user].contains(j));
            }
            let c = neg.constraint(2).unwrap();
            assert_eq!(features.overlap(&c, neg.item).unwrap(), 0);
        }
    }

    #[test]
    fn test_negatives_are_seed_deterministic() {
        let (data, features) = crate::fixtures::bucket_world();
        let positives = crate::data::raw_from_tensor(&data);
        let a = make_test_negatives_timebucket(&positives, &data, &features, 2.0, 9).unwrap();
        let b = make_test_negatives_timebucket(&positives, &data, &features, 2.0, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_negatives_error_with_diagnostic() {
        // Every user and item lives in the single bucket: no eligible pool.
        use crate::constraint::{FeatureMap, Interaction, InteractionTensor};
        let recs: Vec<Interaction> = (0..3)
            .map(|u| Interaction {
                user: u,
                item: u,
                constraint: ConstraintVector::new(1, [0]).unwrap(),
                reward: 1.0,
                weight: 1.0,
            })
            .collect();
        let data = InteractionTensor::new(3, 3, 1, recs).unwrap();
        let features = FeatureMap::new(1, vec![vec![0]; 3]).unwrap();
        let positives = crate::data::raw_from_tensor(&data);
        match make_test_negatives_timebucket(&positives, &data, &features, 1.0, 1) {
            Err(Error::Infeasible(msg)) => assert!(msg.contains("[0]")),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn eval_item_files_roundtrip() {
        let dir = std::env::temp_dir().join("ctxmf_evalset");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pairs.jsonl");
        let items = vec![
            EvalItem {
                user: 1,
                item: 2,
                constraint_bits: vec![0, 3],
                label: true,
                tag_bucket: Some(42),
            },
            EvalItem {
                user: 0,
                item: 5,
                constraint_bits: vec![1],
                label: false,
                tag_bucket: None,
            },
        ];
        write_eval_items(&path, &items).unwrap();
        assert_eq!(read_eval_items(&path).unwrap(), items);
    }
}
