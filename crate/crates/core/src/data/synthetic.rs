//! Synthetic click data with brand-style constraints and a controllable
//! constraint-overlap rate.
//!
//! The generator plants the structure the low-overlap regime needs: brands
//! come in pairs ("families") whose per-dimension effects are identical, and
//! families pair up into superfamilies with strongly correlated effects.
//! Each user lives inside one superfamily, splitting records between its
//! primary and secondary family, occasionally issuing a two-brand union.
//! Clicks are Bernoulli draws from a squashed bilinear score, so the data
//! contains both positives and negatives. Because superfamilies partition
//! the brand space, the probability that two users' constraints share a bit
//! is controlled exactly by how concentrated the superfamily assignment is;
//! the generator solves for that concentration to hit `overlap_prob`.

use crate::constraint::FeatureMap;
use crate::data::{split_indices, DatasetManifest, RawRecord};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub m: usize,
    pub n: usize,
    /// Brand count.
    pub d: usize,
    /// True latent dimension behind the planted scores.
    pub k_true: usize,
    /// Target probability that two records of distinct users share a bit.
    pub overlap_prob: f64,
    pub records_per_user: usize,
    /// Probability a record's constraint unions one bit from each family.
    pub multi_rate: f64,
    /// Probability a single-bit record draws from the secondary family.
    pub secondary_rate: f64,
    /// Cosine-style similarity between the two families of a superfamily.
    pub family_correlation: f64,
    /// Probability an item carries a second brand from its sibling family,
    /// which is what lets the same user-item pair appear under contexts
    /// with different effects.
    pub item_second_bit_rate: f64,
    /// Slope and intercept of the click probability squash.
    pub score_gain: f64,
    pub score_bias: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            m: 11_655,
            n: 2_564,
            d: 363,
            k_true: 8,
            overlap_prob: 0.02,
            records_per_user: 20,
            multi_rate: 0.2,
            secondary_rate: 0.35,
            family_correlation: 0.5,
            item_second_bit_rate: 0.8,
            score_gain: 1.8,
            score_bias: -0.8,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Planted factors, persisted so recoverability can be checked.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub user_factors: Mat,
    pub item_factors: Mat,
    /// Per-brand multiplicative effect vectors (k_true by d).
    pub bit_effects: Mat,
    pub config: SynthConfig,
}

pub struct SyntheticData {
    pub manifest: DatasetManifest,
    pub features: FeatureMap,
    pub splits: BTreeMap<String, Vec<RawRecord>>,
    pub truth: GroundTruth,
}

/// Outcome distribution of one record's constraint within a superfamily,
/// over subsets of its four bits (indices 0,1 = primary family, 2,3 =
/// secondary family when the primary is the even family).
fn outcome_dist(cfg: &SynthConfig, primary_first: bool) -> Vec<(Vec<usize>, f64)> {
    let single = 1.0 - cfg.multi_rate;
    let p_primary = single * (1.0 - cfg.secondary_rate) / 2.0;
    let p_secondary = single * cfg.secondary_rate / 2.0;
    let p_multi = cfg.multi_rate / 4.0;
    let (fam_a, fam_b) = if primary_first {
        ([0, 1], [2, 3])
    } else {
        ([2, 3], [0, 1])
    };
    let mut out = Vec::new();
    for &b in &fam_a {
        out.push((vec![b], p_primary));
    }
    for &b in &fam_b {
        out.push((vec![b], p_secondary));
    }
    for &a in &fam_a {
        for &b in &fam_b {
            out.push((vec![a, b], p_multi));
        }
    }
    out
}

/// Probability that two independent records from the same superfamily share
/// a bit, averaged over the users' primary-family roles.
fn same_superfamily_overlap(cfg: &SynthConfig) -> f64 {
    let dists = [outcome_dist(cfg, true), outcome_dist(cfg, false)];
    let mut total = 0.0;
    for da in &dists {
        for db in &dists {
            let mut p = 0.0;
            for (oa, pa) in da {
                for (ob, pb) in db {
                    if oa.iter().any(|x| ob.contains(x)) {
                        p += pa * pb;
                    }
                }
            }
            total += 0.25 * p;
        }
    }
    total
}

/// Solve `mu^2 + (1-mu)^2/(s-1) = v` for the popular-superfamily mass.
fn solve_popular_mass(v: f64, s: usize) -> Option<f64> {
    if s == 1 {
        return if (v - 1.0).abs() < 1e-9 {
            Some(1.0)
        } else {
            None
        };
    }
    let sm1 = (s - 1) as f64;
    let a = 1.0 + 1.0 / sm1;
    let b = -2.0 / sm1;
    let c = 1.0 / sm1 - v;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let mu = (-b + disc.sqrt()) / (2.0 * a);
    if (0.0..=1.0).contains(&mu) {
        Some(mu)
    } else {
        None
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on open-interval uniforms.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generate the synthetic low-overlap dataset.
pub fn synth_low_overlap(cfg: &SynthConfig) -> Result<SyntheticData> {
    if !(0.0..=1.0).contains(&cfg.overlap_prob) {
        return Err(Error::InvalidConfig("overlap_prob must be in [0,1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.k_true;

    // Effects per bit.
    let mut bit_effects = Mat::zeros(k, cfg.d);
    // Disjoint regime: one dedicated bit per user, single-bit records only.
    let disjoint = cfg.overlap_prob == 0.0;
    let superfamilies = cfg.d / 4;
    let (user_superfamily, user_primary_first, popular_mass) = if disjoint {
        if cfg.m > cfg.d {
            return Err(Error::InvalidConfig(format!(
                "overlap_prob 0 needs d >= m ({} users, {} bits)",
                cfg.m, cfg.d
            )));
        }
        (Vec::new(), Vec::new(), 0.0)
    } else {
        if superfamilies == 0 {
            return Err(Error::InvalidConfig(
                "need d >= 4 for overlapping constraints".into(),
            ));
        }
        let po = same_superfamily_overlap(cfg);
        let v = cfg.overlap_prob / po;
        let min_v = 1.0 / superfamilies as f64;
        if v > 1.0 + 1e-9 || v < min_v - 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "overlap_prob {} infeasible for d {}: reachable range is [{:.5}, {:.5}]",
                cfg.overlap_prob,
                cfg.d,
                po * min_v,
                po
            )));
        }
        let mu = solve_popular_mass(v.clamp(min_v, 1.0), superfamilies).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "could not calibrate superfamily distribution for overlap_prob {}",
                cfg.overlap_prob
            ))
        })?;
        let assign: Vec<usize> = (0..cfg.m)
            .map(|_| {
                let popular = rng.gen_bool(mu.min(1.0));
                if popular || superfamilies == 1 {
                    0
                } else {
                    1 + rng.gen_range(0..superfamilies - 1)
                }
            })
            .collect();
        let roles: Vec<bool> = (0..cfg.m).map(|_| rng.gen_bool(0.5)).collect();
        (assign, roles, mu)
    };

    // Bit effects: families share a vector exactly; the two families of a
    // superfamily blend a common base with family-specific noise. Entries
    // change sign, so the context flips preference directions rather than
    // merely rescaling them.
    let effect_draw = |rng: &mut ChaCha8Rng| -> f64 { rng.gen_range(-1.5..1.5) };
    if disjoint {
        for j in 0..cfg.d {
            for kappa in 0..k {
                bit_effects.set(kappa, j, effect_draw(&mut rng));
            }
        }
    } else {
        for s in 0..superfamilies {
            let base: Vec<f64> = (0..k).map(|_| effect_draw(&mut rng)).collect();
            for fam in 0..2 {
                let rho = cfg.family_correlation;
                let fam_vec: Vec<f64> = base
                    .iter()
                    .map(|&b| rho * b + (1.0 - rho) * effect_draw(&mut rng))
                    .collect();
                for off in 0..2 {
                    let j = 4 * s + 2 * fam + off;
                    for kappa in 0..k {
                        bit_effects.set(kappa, j, fam_vec[kappa]);
                    }
                }
            }
        }
    }

    let used_bits: Vec<usize> = if disjoint {
        (0..cfg.d).collect()
    } else {
        (0..4 * superfamilies).collect()
    };

    // Latent factors.
    let user_factors = Mat::from_fn(cfg.m, k, |_, _| gaussian(&mut rng) / (k as f64).sqrt());
    let item_factors = Mat::from_fn(cfg.n, k, |_, _| gaussian(&mut rng));

    // Item brand assignment: every used bit gets coverage; most items also
    // carry a brand from the sibling family of the same superfamily.
    let mut feature_rows: Vec<Vec<usize>> = (0..cfg.n)
        .map(|i| vec![used_bits[i % used_bits.len()]])
        .collect();
    if !disjoint {
        for row in feature_rows.iter_mut() {
            if rng.gen_bool(cfg.item_second_bit_rate) {
                let j = row[0];
                let s = j / 4;
                let fam = (j / 2) % 2;
                let sibling = 4 * s + 2 * (1 - fam) + rng.gen_range(0..2usize);
                row.push(sibling);
            }
        }
    }
    let features = FeatureMap::new(cfg.d, feature_rows)?;
    let mut items_by_bit: Vec<Vec<usize>> = vec![Vec::new(); cfg.d];
    for i in 0..cfg.n {
        for &j in features.row(i)? {
            items_by_bit[j].push(i);
        }
    }

    // Records.
    let click_prob = |u: usize, i: usize, bits: &[usize]| -> f64 {
        let uu = user_factors.row(u);
        let pp = item_factors.row(i);
        let inv = 1.0 / bits.len() as f64;
        let mut s = 0.0;
        for kappa in 0..k {
            let t: f64 = bits.iter().map(|&j| bit_effects.get(kappa, j)).sum::<f64>() * inv;
            s += uu[kappa] * t * pp[kappa];
        }
        let z = cfg.score_gain * s + cfg.score_bias;
        1.0 / (1.0 + (-z).exp())
    };

    let mut records: Vec<RawRecord> = Vec::with_capacity(cfg.m * cfg.records_per_user);
    for u in 0..cfg.m {
        for _ in 0..cfg.records_per_user {
            let bits: Vec<usize> = if disjoint {
                vec![u % cfg.d]
            } else {
                let s = user_superfamily[u];
                let primary_first = user_primary_first[u];
                let base = 4 * s;
                let (fam_a, fam_b) = if primary_first {
                    (base, base + 2)
                } else {
                    (base + 2, base)
                };
                if rng.gen_bool(cfg.multi_rate) {
                    let mut b = vec![
                        fam_a + rng.gen_range(0..2usize),
                        fam_b + rng.gen_range(0..2usize),
                    ];
                    b.sort_unstable();
                    b
                } else if rng.gen_bool(cfg.secondary_rate) {
                    vec![fam_b + rng.gen_range(0..2usize)]
                } else {
                    vec![fam_a + rng.gen_range(0..2usize)]
                }
            };
            // Strict filter: displayed items satisfy the constraint.
            let mut candidates: Vec<usize> = Vec::new();
            for &j in &bits {
                candidates.extend(items_by_bit[j].iter().copied());
            }
            candidates.sort_unstable();
            candidates.dedup();
            if candidates.is_empty() {
                continue;
            }
            let item = candidates[rng.gen_range(0..candidates.len())];
            let p = click_prob(u, item, &bits);
            let reward = if rng.gen_bool(p.clamp(0.0, 1.0)) {
                1.0
            } else {
                0.0
            };
            records.push(RawRecord {
                user: u,
                item,
                constraint_bits: bits,
                reward,
                weight: 1.0,
            });
        }
    }

    let (train_idx, test_idx) = split_indices(records.len(), cfg.test_fraction, cfg.seed);
    let train: Vec<RawRecord> = train_idx.iter().map(|&i| records[i].clone()).collect();
    let test: Vec<RawRecord> = test_idx.iter().map(|&i| records[i].clone()).collect();
    let mut splits = BTreeMap::new();
    let mut split_counts = BTreeMap::new();
    split_counts.insert("train".into(), train.len());
    split_counts.insert("test".into(), test.len());
    splits.insert("train".to_string(), train);
    splits.insert("test".to_string(), test);

    let manifest = DatasetManifest {
        m: cfg.m,
        n: cfg.n,
        d: cfg.d,
        user_ids: (0..cfg.m).map(|u| format!("synth_u{u}")).collect(),
        item_ids: (0..cfg.n).map(|i| format!("synth_i{i}")).collect(),
        splits: split_counts,
        provenance: vec![
            format!("synthetic low-overlap generator, seed {}", cfg.seed),
            format!(
                "superfamilies: {}, popular mass: {:.4}",
                if disjoint { 0 } else { superfamilies },
                popular_mass
            ),
        ],
    };
    Ok(SyntheticData {
        manifest,
        features,
        splits,
        truth: GroundTruth {
            user_factors,
            item_factors,
            bit_effects,
            config: cfg.clone(),
        },
    })
}

/// Monte Carlo estimate of the probability that two records from distinct
/// users share a constraint bit.
pub fn measure_overlap_rate(records: &[RawRecord], pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut done = 0usize;
    let mut guard = 0usize;
    while done < pairs && guard < pairs * 100 {
        guard += 1;
        let a = &records[rng.gen_range(0..records.len())];
        let b = &records[rng.gen_range(0..records.len())];
        if a.user == b.user {
            continue;
        }
        if a.constraint_bits
            .iter()
            .any(|x| b.constraint_bits.contains(x))
        {
            hits += 1;
        }
        done += 1;
    }
    hits as f64 / done.max(1) as f64
}
