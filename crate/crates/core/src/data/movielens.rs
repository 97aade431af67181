//! MovieLens 100K ingestion and the folding split.
//!
//! The standard distribution layout is expected: `u.data` with tab-separated
//! (user, item, rating, timestamp), `u.item` with pipe-separated fields
//! ending in 19 genre flags, and `u.user` with the age in the second field.
//! Ratings are min-max normalized from the 1-5 scale into [0, 1]; a record's
//! constraint is the movie's genre set, and the per-user age (divided by
//! 100) is the continuous descriptor available to the neural variants.
//!
//! The folding split manufactures disjoint sub-populations: horror ratings
//! survive only for a chosen set of horror-only users, everyone else keeps
//! only non-horror ratings, and children keep neither horror nor thriller.
//! The two test sets then pit held-out adult ratings (positive targets)
//! against explicit child negatives with target -1.

use crate::constraint::FeatureMap;
use crate::data::{DatasetManifest, RawRecord};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub const GENRE_COUNT: usize = 19;
pub const HORROR_GENRE: usize = 11;
pub const THRILLER_GENRE: usize = 16;
/// Users younger than this get explicit negatives in the folding tests.
pub const KID_AGE_LIMIT: u32 = 14;

pub struct MovielensData {
    pub manifest: DatasetManifest,
    pub features: FeatureMap,
    /// All ratings as raw records with normalized rewards.
    pub ratings: Vec<RawRecord>,
    /// Age per internal user id.
    pub ages: Vec<u32>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    crate::data::read_lossy_lines(path)
        .map_err(|e| Error::Schema(format!("missing MovieLens file: {e}")))
}

/// Load the three MovieLens files from a directory.
pub fn load_movielens(dir: &Path) -> Result<MovielensData> {
    // u.item: id|title|date|video date|url|19 genre flags
    let mut genre_rows: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (lineno, line) in read_lines(&dir.join("u.item"))?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('|').collect();
        if cols.len() < 5 + GENRE_COUNT {
            return Err(Error::Schema(format!(
                "u.item line {}: expected {} genre flags, found {} fields",
                lineno + 1,
                GENRE_COUNT,
                cols.len()
            )));
        }
        let flags = &cols[cols.len() - GENRE_COUNT..];
        let mut bits = Vec::new();
        for (j, flag) in flags.iter().enumerate() {
            match *flag {
                "1" => bits.push(j),
                "0" => {}
                other => {
                    return Err(Error::Schema(format!(
                        "u.item line {}: genre flag '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        if bits.is_empty() {
            bits.push(0); // the 'unknown' genre keeps constraints non-empty
        }
        genre_rows.insert(cols[0].to_string(), bits);
    }

    // u.user: id|age|gender|occupation|zip
    let mut ages_by_id: BTreeMap<String, u32> = BTreeMap::new();
    for (lineno, line) in read_lines(&dir.join("u.user"))?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('|').collect();
        if cols.len() < 2 {
            return Err(Error::Schema(format!(
                "u.user line {} too short",
                lineno + 1
            )));
        }
        let age: u32 = cols[1].parse().map_err(|_| {
            Error::Schema(format!("u.user line {}: bad age '{}'", lineno + 1, cols[1]))
        })?;
        ages_by_id.insert(cols[0].to_string(), age);
    }

    // u.data: user \t item \t rating \t timestamp
    let mut user_ids: Vec<String> = Vec::new();
    let mut item_ids: Vec<String> = Vec::new();
    let mut user_map: BTreeMap<String, usize> = BTreeMap::new();
    let mut item_map: BTreeMap<String, usize> = BTreeMap::new();
    let mut ratings: Vec<RawRecord> = Vec::new();
    for (lineno, line) in read_lines(&dir.join("u.data"))?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 3 {
            return Err(Error::Schema(format!(
                "u.data line {} too short",
                lineno + 1
            )));
        }
        let rating: f64 = cols[2].parse().map_err(|_| {
            Error::Schema(format!(
                "u.data line {}: bad rating '{}'",
                lineno + 1,
                cols[2]
            ))
        })?;
        if !(1.0..=5.0).contains(&rating) {
            return Err(Error::Schema(format!(
                "u.data line {}: rating {rating} outside 1-5",
                lineno + 1
            )));
        }
        if !ages_by_id.contains_key(cols[0]) {
            return Err(Error::Schema(format!(
                "u.data line {}: user {} missing from u.user",
                lineno + 1,
                cols[0]
            )));
        }
        let genre_bits = genre_rows.get(cols[1]).ok_or_else(|| {
            Error::Schema(format!(
                "u.data line {}: item {} missing from u.item",
                lineno + 1,
                cols[1]
            ))
        })?;
        let u = *user_map.entry(cols[0].to_string()).or_insert_with(|| {
            user_ids.push(cols[0].to_string());
            user_ids.len() - 1
        });
        let i = *item_map.entry(cols[1].to_string()).or_insert_with(|| {
            item_ids.push(cols[1].to_string());
            item_ids.len() - 1
        });
        ratings.push(RawRecord {
            user: u,
            item: i,
            constraint_bits: genre_bits.clone(),
            reward: (rating - 1.0) / 4.0,
            weight: 1.0,
        });
    }
    if ratings.is_empty() {
        return Err(Error::Schema("no ratings in u.data".into()));
    }

    let feature_rows: Vec<Vec<usize>> = item_ids.iter().map(|id| genre_rows[id].clone()).collect();
    let features = FeatureMap::new(GENRE_COUNT, feature_rows)?;
    let ages: Vec<u32> = user_ids.iter().map(|id| ages_by_id[id]).collect();

    let manifest = DatasetManifest {
        m: user_ids.len(),
        n: item_ids.len(),
        d: GENRE_COUNT,
        user_ids,
        item_ids,
        splits: BTreeMap::new(),
        provenance: vec![
            format!("source: {}", dir.display()),
            format!("ratings: {}", ratings.len()),
        ],
    };
    Ok(MovielensData {
        manifest,
        features,
        ratings,
        ages,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FoldingConfig {
    /// How many adult users (ranked by horror-rating count) form the
    /// horror-only island.
    pub horror_user_count: usize,
    /// Fraction of eligible ratings held out into each test set.
    pub test_fraction: f64,
    /// Child negatives added per test positive.
    pub kid_negative_ratio: f64,
    pub seed: u64,
}

impl Default for FoldingConfig {
    fn default() -> Self {
        FoldingConfig {
            horror_user_count: 50,
            test_fraction: 0.3,
            kid_negative_ratio: 1.0,
            seed: 0,
        }
    }
}

pub struct FoldingSplit {
    pub train: Vec<RawRecord>,
    /// Held-out adult horror ratings plus child negatives (reward -1).
    pub horror_test: Vec<RawRecord>,
    /// Held-out adult thriller ratings plus child negatives (reward -1).
    pub thriller_test: Vec<RawRecord>,
}

fn is_horror(features: &FeatureMap, item: usize) -> bool {
    features
        .row(item)
        .map(|r| r.binary_search(&HORROR_GENRE).is_ok())
        .unwrap_or(false)
}

fn is_thriller_only(features: &FeatureMap, item: usize) -> bool {
    features
        .row(item)
        .map(|r| {
            r.binary_search(&THRILLER_GENRE).is_ok() && r.binary_search(&HORROR_GENRE).is_err()
        })
        .unwrap_or(false)
}

/// Construct the folding split. Users who rate horror most become a
/// horror-only island (their non-horror ratings are dropped); everyone else
/// keeps only non-horror ratings; children additionally lose thriller
/// ratings. The test sets hold out adult ratings as positives and add child
/// pairs with target -1 as explicit negatives.
pub fn build_folding_split(data: &MovielensData, cfg: &FoldingConfig) -> Result<FoldingSplit> {
    let features = &data.features;
    let kid = |u: usize| data.ages[u] < KID_AGE_LIMIT;

    let mut horror_counts: BTreeMap<usize, usize> = BTreeMap::new();
    for rec in &data.ratings {
        if is_horror(features, rec.item) && !kid(rec.user) {
            *horror_counts.entry(rec.user).or_default() += 1;
        }
    }
    let mut ranked: Vec<(usize, usize)> = horror_counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let island: BTreeSet<usize> = ranked
        .iter()
        .take(cfg.horror_user_count)
        .map(|(u, _)| *u)
        .collect();
    if island.is_empty() {
        return Err(Error::Infeasible(
            "no adult users with horror ratings; cannot build folding split".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train = Vec::new();
    let mut horror_pool = Vec::new();
    let mut thriller_pool = Vec::new();
    for rec in &data.ratings {
        let horror = is_horror(features, rec.item);
        if island.contains(&rec.user) {
            if horror {
                horror_pool.push(rec.clone());
            }
            // non-horror ratings of island users are dropped
        } else if !horror {
            if kid(rec.user) {
                if !is_thriller_only(features, rec.item) {
                    train.push(rec.clone());
                }
            } else {
                if is_thriller_only(features, rec.item) {
                    thriller_pool.push(rec.clone());
                } else {
                    train.push(rec.clone());
                }
            }
        }
    }

    // Hold out a fraction of each pool; the rest trains.
    let mut hold_out = |pool: &mut Vec<RawRecord>| -> Vec<RawRecord> {
        pool.shuffle(&mut rng);
        let n_test = ((pool.len() as f64) * cfg.test_fraction).round() as usize;
        let test: Vec<RawRecord> = pool[..n_test.min(pool.len())].to_vec();
        for rec in &pool[n_test.min(pool.len())..] {
            train.push(rec.clone());
        }
        test
    };
    let mut horror_test = hold_out(&mut horror_pool);
    let mut thriller_test = hold_out(&mut thriller_pool);

    // Explicit child negatives: target -1 for (kid, test-category item).
    let kids: Vec<usize> = (0..data.manifest.m).filter(|&u| kid(u)).collect();
    let mut add_kid_negatives = |test: &mut Vec<RawRecord>, items: &[usize]| {
        if kids.is_empty() || items.is_empty() {
            return;
        }
        let count = ((test.len() as f64) * cfg.kid_negative_ratio).round() as usize;
        for t in 0..count {
            use rand::Rng;
            let u = kids[rng.gen_range(0..kids.len())];
            let i = items[rng.gen_range(0..items.len())];
            test.push(RawRecord {
                user: u,
                item: i,
                constraint_bits: features.row(i).expect("item in range").to_vec(),
                reward: -1.0,
                weight: 1.0,
            });
            let _ = t;
        }
    };
    let horror_items: Vec<usize> = horror_test.iter().map(|r| r.item).collect();
    let thriller_items: Vec<usize> = thriller_test.iter().map(|r| r.item).collect();
    add_kid_negatives(&mut horror_test, &horror_items);
    add_kid_negatives(&mut thriller_test, &thriller_items);

    if horror_test.iter().all(|r| r.reward >= 0.0) || horror_test.iter().all(|r| r.reward < 0.0) {
        return Err(Error::Infeasible(
            "horror test needs both adult positives and child negatives".into(),
        ));
    }
    Ok(FoldingSplit {
        train,
        horror_test,
        thriller_test,
    })
}

/// Exhaustive disjointness scan: no user may touch both a horror and a
/// non-horror item in the training records.
pub fn verify_folding_disjoint(train: &[RawRecord], features: &FeatureMap) -> bool {
    let mut touches_horror: BTreeSet<usize> = BTreeSet::new();
    let mut touches_other: BTreeSet<usize> = BTreeSet::new();
    for rec in train {
        if is_horror(features, rec.item) {
            touches_horror.insert(rec.user);
        } else {
            touches_other.insert(rec.user);
        }
    }
    touches_horror.intersection(&touches_other).next().is_none()
}
