//! Deterministic toy worlds for the test suites: a tiny bucket world, an
//! exactly-realizable training fixture, and generated MovieLens- and
//! check-in-shaped datasets with planted context structure.
//!
//! Expected values shipped with the generated fixtures are either immediate
//! consequences of the construction or computed by the independent oracles
//! that live in the test suites; the `expected.json` files record which.

use crate::constraint::{ConstraintVector, FeatureMap, Interaction, InteractionTensor};
use crate::data::RawRecord;
use crate::error::Result;
use crate::linalg::Mat;
use crate::model::{DiagonalTransform, EmbeddingModel, Model, ModelParams};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Three users, three items, two buckets: users 0 and 1 live in bucket 0,
/// user 2 in bucket 1, items likewise. Small enough that every eligibility
/// and co-occurrence question is checkable by hand.
pub fn bucket_world() -> (InteractionTensor, FeatureMap) {
    let c0 = ConstraintVector::new(2, [0]).unwrap();
    let c1 = ConstraintVector::new(2, [1]).unwrap();
    let rec = |user, item, c: &ConstraintVector| Interaction {
        user,
        item,
        constraint: c.clone(),
        reward: 1.0,
        weight: 1.0,
    };
    let records = vec![
        rec(0, 0, &c0),
        rec(0, 1, &c0),
        rec(1, 0, &c0),
        rec(2, 2, &c1),
    ];
    let features = FeatureMap::new(2, vec![vec![0], vec![0], vec![1]]).unwrap();
    (InteractionTensor::new(3, 3, 2, records).unwrap(), features)
}

/// Data generated exactly by a planted diagonal-transform model, so
/// alternating optimization can drive the loss to zero. Returns the data
/// and the planted model.
pub fn realizable_world(
    seed: u64,
    m: usize,
    n: usize,
    k: usize,
    d: usize,
) -> (InteractionTensor, Model) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = EmbeddingModel {
        k,
        u: Mat::from_fn(m, k, |_, _| rng.gen_range(0.05..0.35)),
        p: Mat::from_fn(n, k, |_, _| rng.gen_range(0.05..0.35)),
        b: (0..m).map(|_| rng.gen_range(0.1..0.3)).collect(),
    };
    let diag = DiagonalTransform::new(Mat::from_fn(k, d, |_, _| rng.gen_range(0.5..1.5)));
    let model = Model {
        m,
        n,
        d,
        emb,
        params: ModelParams::DcMf { diag },
    };
    let mut records = Vec::new();
    for u in 0..m {
        for _ in 0..4 {
            let item = rng.gen_range(0..n);
            let bits: Vec<usize> = loop {
                let b: Vec<usize> = (0..d).filter(|_| rng.gen_bool(0.4)).collect();
                if !b.is_empty() {
                    break b;
                }
            };
            let c = ConstraintVector::new(d, bits).unwrap();
            let score = model
                .score(u, item, &c, &crate::model::SideData::none())
                .unwrap();
            assert!(
                (0.0..=1.0).contains(&score),
                "planted scales keep rewards in range"
            );
            records.push(Interaction {
                user: u,
                item,
                constraint: c,
                reward: score,
                weight: 1.0,
            });
        }
    }
    (InteractionTensor::new(m, n, d, records).unwrap(), model)
}

/// Random small training fixtures for monotonicity sweeps.
pub fn random_world(
    rng: &mut ChaCha8Rng,
    m: usize,
    n: usize,
    d: usize,
) -> (InteractionTensor, FeatureMap) {
    let n_records = rng.gen_range(m..(3 * m * n / 2).max(m + 1));
    let mut records = Vec::with_capacity(n_records);
    for _ in 0..n_records {
        let bits: Vec<usize> = loop {
            let b: Vec<usize> = (0..d).filter(|_| rng.gen_bool(0.4)).collect();
            if !b.is_empty() {
                break b;
            }
        };
        records.push(Interaction {
            user: rng.gen_range(0..m),
            item: rng.gen_range(0..n),
            constraint: ConstraintVector::new(d, bits).unwrap(),
            reward: rng.gen_range(0.0..=1.0),
            weight: if rng.gen_bool(0.2) {
                rng.gen_range(0.5..2.0)
            } else {
                1.0
            },
        });
    }
    let rows: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let mut row: Vec<usize> = (0..d).filter(|_| rng.gen_bool(0.5)).collect();
            if row.is_empty() {
                row.push(rng.gen_range(0..d));
            }
            row
        })
        .collect();
    let features = FeatureMap::new(d, rows).unwrap();
    (InteractionTensor::new(m, n, d, records).unwrap(), features)
}

/// Configuration for the generated MovieLens-shaped files.
#[derive(Debug, Clone, Serialize)]
pub struct MlFixtureConfig {
    pub users: usize,
    pub movies: usize,
    pub seed: u64,
    /// Fraction of users younger than the folding age limit.
    pub kid_share: f64,
    /// Fraction of adults who are horror enthusiasts.
    pub horror_fan_share: f64,
    pub ratings_per_user: std::ops::Range<usize>,
}

impl MlFixtureConfig {
    pub fn new(seed: u64, users: usize, movies: usize) -> Self {
        MlFixtureConfig {
            users,
            movies,
            seed,
            kid_share: 0.12,
            horror_fan_share: 0.3,
            ratings_per_user: 22..34,
        }
    }
}

/// Write MovieLens-layout files (`u.data`, `u.item`, `u.user`) with planted
/// age and genre structure: kids rate children's and comedy titles, horror
/// fans rate horror highly, everyone shares a broad mainstream pool.
pub fn write_movielens_fixture(cfg: &MlFixtureConfig, dir: &Path) -> Result<()> {
    use crate::data::movielens::{GENRE_COUNT, HORROR_GENRE, THRILLER_GENRE};
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    const ACTION: usize = 1;
    const CHILDRENS: usize = 4;
    const COMEDY: usize = 5;
    const DRAMA: usize = 8;
    const ROMANCE: usize = 14;

    // Movies: genre bits per movie.
    let mut genres: Vec<Vec<usize>> = Vec::with_capacity(cfg.movies);
    for i in 0..cfg.movies {
        let roll = rng.gen_range(0.0..1.0);
        let bits = if roll < 0.15 {
            // horror titles, sometimes horror-thrillers
            if rng.gen_bool(0.3) {
                vec![HORROR_GENRE, THRILLER_GENRE]
            } else {
                vec![HORROR_GENRE]
            }
        } else if roll < 0.27 {
            vec![THRILLER_GENRE]
        } else if roll < 0.42 {
            vec![
                CHILDRENS,
                if rng.gen_bool(0.5) { COMEDY } else { CHILDRENS },
            ]
        } else {
            let pool = [ACTION, COMEDY, DRAMA, ROMANCE];
            vec![pool[rng.gen_range(0..pool.len())]]
        };
        let mut bits: Vec<usize> = bits;
        bits.sort_unstable();
        bits.dedup();
        genres.push(bits);
        let _ = i;
    }

    // Taste vectors give the ratings real user-item structure beyond the
    // genre personas, and rating propensity follows taste, so held-out
    // positives are pairs the user genuinely favors.
    let item_taste: Vec<[f64; 2]> = (0..cfg.movies)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();

    // Users: ages, personas and tastes.
    let mut ages: Vec<u32> = Vec::with_capacity(cfg.users);
    let mut horror_fan: Vec<bool> = Vec::with_capacity(cfg.users);
    let mut user_taste: Vec<[f64; 2]> = Vec::with_capacity(cfg.users);
    for _ in 0..cfg.users {
        let kid = rng.gen_bool(cfg.kid_share);
        let age = if kid {
            rng.gen_range(7..14)
        } else {
            rng.gen_range(18..60)
        };
        ages.push(age);
        horror_fan.push(!kid && rng.gen_bool(cfg.horror_fan_share));
        user_taste.push([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
    }

    let is = |bits: &[usize], g: usize| bits.contains(&g);
    let mut data_lines: Vec<String> = Vec::new();
    for u in 0..cfg.users {
        let kid = ages[u] < crate::data::movielens::KID_AGE_LIMIT;
        let count = rng.gen_range(cfg.ratings_per_user.clone());
        let mut seen = std::collections::BTreeSet::new();
        let mut tries = 0;
        while seen.len() < count && tries < count * 40 {
            tries += 1;
            let i = rng.gen_range(0..cfg.movies);
            let bits = &genres[i];
            // Kids only ever see child-safe titles.
            if kid && (is(bits, HORROR_GENRE) || is(bits, THRILLER_GENRE)) {
                continue;
            }
            let affinity =
                user_taste[u][0] * item_taste[i][0] + user_taste[u][1] * item_taste[i][1];
            // Persona gate times taste-driven propensity.
            let persona = if kid {
                if is(bits, CHILDRENS) {
                    1.0
                } else {
                    0.3
                }
            } else if horror_fan[u] {
                if is(bits, HORROR_GENRE) {
                    1.0
                } else {
                    0.4
                }
            } else if is(bits, HORROR_GENRE) {
                0.1
            } else {
                0.9
            };
            let propensity = persona * (0.35 + 0.5 / (1.0 + (-2.0 * affinity).exp()));
            if !rng.gen_bool(propensity.clamp(0.0, 1.0)) || !seen.insert(i) {
                continue;
            }
            // A single base for every group: class labels must never leak
            // through the rating level, only through taste and geometry.
            let base: f64 = 3.7;
            let noise = rng.gen_range(-0.9..0.9);
            // Occasional outright dislikes keep the full 1-5 range in play.
            let rating = if rng.gen_bool(0.05) {
                rng.gen_range(1..3)
            } else {
                (base + 0.9 * affinity + noise).round().clamp(1.0, 5.0) as u32
            };
            data_lines.push(format!("{}\t{}\t{}\t88000000{}", u + 1, i + 1, rating, u));
        }
    }

    let mut item_lines: Vec<String> = Vec::new();
    for (i, bits) in genres.iter().enumerate() {
        let flags: Vec<String> = (0..GENRE_COUNT)
            .map(|g| {
                if bits.contains(&g) {
                    "1".into()
                } else {
                    "0".into()
                }
            })
            .collect();
        item_lines.push(format!(
            "{}|Movie {} (1995)|01-Jan-1995||http://example/{}|{}",
            i + 1,
            i + 1,
            i + 1,
            flags.join("|")
        ));
    }
    let user_lines: Vec<String> = (0..cfg.users)
        .map(|u| format!("{}|{}|M|other|00000", u + 1, ages[u]))
        .collect();

    std::fs::write(dir.join("u.data"), data_lines.join("\n") + "\n")?;
    std::fs::write(dir.join("u.item"), item_lines.join("\n") + "\n")?;
    std::fs::write(dir.join("u.user"), user_lines.join("\n") + "\n")?;
    Ok(())
}

/// Generated MovieLens fixture in a content-addressed temp directory.
pub fn movielens_fixture_dir(seed: u64, users: usize, movies: usize) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ctxmf_ml_fixture_{seed}_{users}_{movies}"));
    write_movielens_fixture(&MlFixtureConfig::new(seed, users, movies), &dir)
        .expect("fixture write");
    dir
}

/// Configuration for the generated check-in world.
#[derive(Debug, Clone, Serialize)]
pub struct CheckinWorldConfig {
    pub users: usize,
    pub venues: usize,
    pub checkins_per_user: std::ops::Range<usize>,
    pub seed: u64,
    /// Latent taste dimensions per meal occasion.
    pub taste_dims: usize,
}

impl CheckinWorldConfig {
    pub fn new(seed: u64, users: usize, venues: usize) -> Self {
        CheckinWorldConfig {
            users,
            venues,
            checkins_per_user: 25..40,
            seed,
            taste_dims: 2,
        }
    }
}

/// Write a tab-separated check-in file with planted time-of-day structure.
///
/// Every venue is open all day, but users and venues carry independent
/// taste blocks per meal occasion (morning, noon, evening), so which venue
/// a user favors changes with the time of day. Evening dominates the
/// occasion mix; morning and noon stay rare, which keeps per-venue visit
/// counts in the rare windows thin. That per-context interaction is what a
/// constraint transform can express while a context-free or purely additive
/// model cannot.
pub fn write_checkin_world(cfg: &CheckinWorldConfig, path: &Path) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // (occasion share, hour distribution within the occasion)
    let occasions: [(f64, &[(usize, f64)]); 3] = [
        (0.2, &[(8, 1.0)]),
        (0.2, &[(12, 1.0)]),
        (0.6, &[(21, 0.25), (22, 0.5), (23, 0.25)]),
    ];
    let td = cfg.taste_dims;

    // One taste block per occasion for each venue and each user.
    let venue_taste: Vec<Vec<f64>> = (0..cfg.venues)
        .map(|_| (0..3 * td).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();

    let mut lines: Vec<String> = Vec::new();
    for u in 0..cfg.users {
        let mut habits: Vec<usize> = Vec::new();
        if rng.gen_bool(0.9) {
            habits.push(2);
        }
        if rng.gen_bool(0.25) {
            habits.push(0);
        }
        if rng.gen_bool(0.25) {
            habits.push(1);
        }
        if habits.is_empty() {
            habits.push(2);
        }
        let taste: Vec<f64> = (0..3 * td).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let count = rng.gen_range(cfg.checkins_per_user.clone());
        for _ in 0..count {
            // Pick an occasion among the user's habits, occasion-weighted.
            let total: f64 = habits.iter().map(|&h| occasions[h].0).sum();
            let mut roll = rng.gen_range(0.0..total);
            let mut occ = habits[0];
            for &h in &habits {
                if roll < occasions[h].0 {
                    occ = h;
                    break;
                }
                roll -= occasions[h].0;
            }
            // Soft preference over all venues through the occasion's block.
            let block = occ * td..(occ + 1) * td;
            let weights: Vec<f64> = (0..cfg.venues)
                .map(|v| {
                    let aff: f64 = taste[block.clone()]
                        .iter()
                        .zip(&venue_taste[v][block.clone()])
                        .map(|(a, b)| a * b)
                        .sum();
                    (4.0 * aff).exp()
                })
                .collect();
            let total_w: f64 = weights.iter().sum();
            let mut roll = rng.gen_range(0.0..total_w);
            let mut venue = 0;
            for (v, w) in weights.iter().enumerate() {
                if roll < *w {
                    venue = v;
                    break;
                }
                roll -= w;
            }
            let hours = occasions[occ].1;
            let total_h: f64 = hours.iter().map(|(_, w)| w).sum();
            let mut roll = rng.gen_range(0.0..total_h);
            let mut hour = hours[0].0;
            for &(h, w) in hours {
                if roll < w {
                    hour = h;
                    break;
                }
                roll -= w;
            }
            let minute = rng.gen_range(0..60);
            let second = rng.gen_range(0..60);
            lines.push(format!(
                "user{u}\tvenue{venue}\t4bf58dd8d48988d1c4941735\tRestaurant\t40.7\t-74.0\t-240\tTue Apr 03 {hour:02}:{minute:02}:{second:02} +0000 2012"
            ));
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, lines.join("\n") + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct ExpectedValue {
    value: serde_json::Value,
    provenance: &'static str,
    oracle: &'static str,
}

/// Emit the toy worlds with their expected values to a directory. The same
/// seed always regenerates identical content.
pub fn generate_fixtures(seed: u64, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;

    // Bucket world.
    let bw_dir = out_dir.join("bucket_world");
    std::fs::create_dir_all(&bw_dir)?;
    let (bw, bw_features) = bucket_world();
    crate::data::write_jsonl(
        &bw_dir.join("records.jsonl"),
        &crate::data::raw_from_tensor(&bw),
    )?;
    std::fs::write(
        bw_dir.join("features.json"),
        serde_json::to_string_pretty(&bw_features)?,
    )?;
    let stats = crate::constraint::build_cooccurrence(&bw);
    let expected = vec![
        ExpectedValue {
            value: serde_json::json!({"pair_counts_0_0": stats.count(0, 0)}),
            provenance: "TRIVIAL",
            oracle: "two users observed in bucket 0 by construction",
        },
        ExpectedValue {
            value: serde_json::json!({"pair_counts_0_1": stats.count(0, 1)}),
            provenance: "TRIVIAL",
            oracle: "no user spans both buckets by construction",
        },
    ];
    std::fs::write(
        bw_dir.join("expected.json"),
        serde_json::to_string_pretty(&expected)?,
    )?;

    // Realizable training world.
    let rw_dir = out_dir.join("als_realizable");
    std::fs::create_dir_all(&rw_dir)?;
    let (data, model) = realizable_world(seed, 6, 5, 2, 3);
    crate::data::write_jsonl(
        &rw_dir.join("records.jsonl"),
        &crate::data::raw_from_tensor(&data),
    )?;
    model.save(&rw_dir.join("planted_model.json"))?;
    let expected = vec![ExpectedValue {
        value: serde_json::json!({"reachable_loss_below": 1e-8}),
        provenance: "DERIVED",
        oracle: "rewards generated from the planted model; alternating solves recover them",
    }];
    std::fs::write(
        rw_dir.join("expected.json"),
        serde_json::to_string_pretty(&expected)?,
    )?;

    // Folding micro-split source files.
    let ml_dir = out_dir.join("movielens_micro");
    write_movielens_fixture(&MlFixtureConfig::new(seed, 60, 50), &ml_dir)?;
    let data = crate::data::movielens::load_movielens(&ml_dir)?;
    let split = crate::data::movielens::build_folding_split(
        &data,
        &crate::data::movielens::FoldingConfig::default(),
    )?;
    let expected = vec![ExpectedValue {
        value: serde_json::json!({
            "train_disjoint": crate::data::movielens::verify_folding_disjoint(
                &split.train,
                &data.features
            )
        }),
        provenance: "DERIVED",
        oracle: "exhaustive scan over train users touching horror vs non-horror",
    }];
    std::fs::write(
        ml_dir.join("expected.json"),
        serde_json::to_string_pretty(&expected)?,
    )?;

    // Check-in micro world.
    write_checkin_world(
        &CheckinWorldConfig::new(seed, 40, 30),
        &out_dir.join("checkins_micro.tsv"),
    )?;
    Ok(())
}

/// Convenience: records as a tensor for fixture-driven tests.
pub fn tensor_of(records: &[RawRecord], m: usize, n: usize, d: usize) -> InteractionTensor {
    crate::data::tensor_from_raw(m, n, d, records).expect("fixture records are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_generation_is_idempotent() {
        let dir_a = std::env::temp_dir().join("ctxmf_fixtures_a");
        let dir_b = std::env::temp_dir().join("ctxmf_fixtures_b");
        let _ = std::fs::remove_dir_all(&dir_a);
        let _ = std::fs::remove_dir_all(&dir_b);
        generate_fixtures(42, &dir_a).unwrap();
        generate_fixtures(42, &dir_b).unwrap();
        for name in [
            "bucket_world/records.jsonl",
            "als_realizable/records.jsonl",
            "movielens_micro/u.data",
            "checkins_micro.tsv",
        ] {
            let a = std::fs::read(dir_a.join(name)).unwrap();
            let b = std::fs::read(dir_b.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between regenerations");
        }
    }

    #[test]
    fn realizable_world_scores_match_rewards() {
        let (data, model) = realizable_world(7, 5, 4, 2, 3);
        for rec in data.records() {
            let s = model
                .score(
                    rec.user,
                    rec.item,
                    &rec.constraint,
                    &crate::model::SideData::none(),
                )
                .unwrap();
            assert!((s - rec.reward).abs() < 1e-15);
        }
    }

    #[test]
    fn checkin_world_parses_through_loader() {
        let path = std::env::temp_dir().join("ctxmf_checkin_world_test.tsv");
        write_checkin_world(&CheckinWorldConfig::new(3, 30, 20), &path).unwrap();
        let subset = crate::data::foursquare::FoursquareSubset {
            min_user_checkins: 1,
            min_venue_checkins: 1,
            test_fraction: 0.2,
            ..Default::default()
        };
        let data = crate::data::foursquare::load_foursquare(&path, &subset).unwrap();
        assert!(data.manifest.m > 0);
        assert!(data.manifest.n > 0);
        // Planted occasions put every center bucket inside the meal hours.
        let scheme = crate::data::foursquare::TimeBucketScheme::default();
        let valid: Vec<usize> = [8usize, 12, 21, 22, 23]
            .iter()
            .flat_map(|&h| scheme.hour_buckets(h))
            .collect();
        for split in data.splits.values() {
            for rec in split {
                let center = crate::data::foursquare::window_center(&rec.constraint_bits).unwrap();
                assert!(valid.contains(&center));
            }
        }
    }
}
