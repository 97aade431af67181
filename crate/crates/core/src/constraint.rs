//! Constraint and feature-map algebra shared by every model: satisfaction,
//! overlap, and user co-occurrence statistics over feature bits.
//!
//! A constraint is a non-empty set of feature values, stored as the sorted
//! indices of its active bits. An item satisfies a constraint when it shares
//! at least one active value with it.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// Binary constraint vector over a feature space of size `d`, stored sparsely
/// as sorted active indices. All-zero constraints are rejected at
/// construction: downstream transforms divide by the number of active bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConstraintVector {
    d: usize,
    active: Vec<usize>,
}

impl ConstraintVector {
    pub fn new(d: usize, bits: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut active: Vec<usize> = bits.into_iter().collect();
        active.sort_unstable();
        active.dedup();
        if active.is_empty() {
            return Err(Error::EmptyConstraint);
        }
        if let Some(&max) = active.last() {
            if max >= d {
                return Err(Error::IdOutOfRange {
                    kind: "feature bit",
                    id: max,
                    limit: d,
                });
            }
        }
        Ok(ConstraintVector { d, active })
    }

    pub fn from_dense(bits: &[bool]) -> Result<Self> {
        ConstraintVector::new(
            bits.len(),
            bits.iter()
                .enumerate()
                .filter_map(|(j, &b)| if b { Some(j) } else { None }),
        )
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Number of active bits, i.e. `||c||_1` for a binary vector.
    pub fn l1(&self) -> f64 {
        self.active.len() as f64
    }

    pub fn is_set(&self, j: usize) -> bool {
        self.active.binary_search(&j).is_ok()
    }

    /// `c1^T c2`: the number of shared active bits.
    pub fn overlap(&self, other: &ConstraintVector) -> Result<usize> {
        if self.d != other.d {
            return Err(Error::DimensionMismatch {
                what: "constraint overlap",
                expected: self.d,
                got: other.d,
            });
        }
        Ok(sorted_intersection_len(&self.active, &other.active))
    }

    /// Bitwise union of two constraints.
    pub fn union(&self, other: &ConstraintVector) -> Result<Self> {
        if self.d != other.d {
            return Err(Error::DimensionMismatch {
                what: "constraint union",
                expected: self.d,
                got: other.d,
            });
        }
        ConstraintVector::new(self.d, self.active.iter().chain(&other.active).copied())
    }
}

fn sorted_intersection_len(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Per-item binary feature rows, stored as sorted active indices. Unlike
/// constraints, a row may be empty: such an item never satisfies anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    d: usize,
    rows: Vec<Vec<usize>>,
}

impl FeatureMap {
    pub fn new(d: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        let mut canonical = Vec::with_capacity(rows.len());
        for row in rows {
            let mut row: Vec<usize> = row;
            row.sort_unstable();
            row.dedup();
            if let Some(&max) = row.last() {
                if max >= d {
                    return Err(Error::IdOutOfRange {
                        kind: "feature bit",
                        id: max,
                        limit: d,
                    });
                }
            }
            canonical.push(row);
        }
        Ok(FeatureMap { d, rows: canonical })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, item: usize) -> Result<&[usize]> {
        self.rows
            .get(item)
            .map(|r| r.as_slice())
            .ok_or(Error::IdOutOfRange {
                kind: "item",
                id: item,
                limit: self.rows.len(),
            })
    }

    /// True iff `c^T f_i > 0`: the item carries at least one active value of
    /// the constraint.
    pub fn satisfies(&self, c: &ConstraintVector, item: usize) -> Result<bool> {
        Ok(self.overlap(c, item)? > 0)
    }

    /// `c^T f_i`: the number of constraint bits the item carries.
    pub fn overlap(&self, c: &ConstraintVector, item: usize) -> Result<usize> {
        if self.d != c.d() {
            return Err(Error::DimensionMismatch {
                what: "feature map overlap",
                expected: self.d,
                got: c.d(),
            });
        }
        Ok(sorted_intersection_len(c.active(), self.row(item)?))
    }

    /// Sorted intersection of the constraint's bits with item `i`'s row.
    pub fn compatible_bits(&self, c: &ConstraintVector, item: usize) -> Result<Vec<usize>> {
        let row = self.row(item)?;
        Ok(c.active()
            .iter()
            .copied()
            .filter(|j| row.binary_search(j).is_ok())
            .collect())
    }
}

/// One observed interaction: user `u` gave feedback `reward` on item `i`
/// under constraint `c`, with a loss weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub constraint: ConstraintVector,
    pub reward: f64,
    pub weight: f64,
}

/// Sparse observations of the feedback tensor indexed by (user, item,
/// constraint). Rewards are normalized to `[0, 1]`; duplicate records are
/// kept, each carrying its own weight in the empirical loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteractionTensor {
    m: usize,
    n: usize,
    d: usize,
    records: Vec<Interaction>,
}

impl InteractionTensor {
    pub fn new(m: usize, n: usize, d: usize, records: Vec<Interaction>) -> Result<Self> {
        for rec in &records {
            if rec.user >= m {
                return Err(Error::IdOutOfRange {
                    kind: "user",
                    id: rec.user,
                    limit: m,
                });
            }
            if rec.item >= n {
                return Err(Error::IdOutOfRange {
                    kind: "item",
                    id: rec.item,
                    limit: n,
                });
            }
            if rec.constraint.d() != d {
                return Err(Error::DimensionMismatch {
                    what: "record constraint",
                    expected: d,
                    got: rec.constraint.d(),
                });
            }
            if !(0.0..=1.0).contains(&rec.reward) {
                return Err(Error::InvalidConfig(format!(
                    "reward {} outside [0,1]",
                    rec.reward
                )));
            }
            if rec.weight < 0.0 || !rec.weight.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "weight {} must be finite and nonnegative",
                    rec.weight
                )));
            }
        }
        Ok(InteractionTensor { m, n, d, records })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct constraints observed in the data, in first-seen order. The
    /// observed set is the catalog; no closed-world assumption is made.
    pub fn unique_constraints(&self) -> Vec<ConstraintVector> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for rec in &self.records {
            if seen.insert(rec.constraint.clone()) {
                out.push(rec.constraint.clone());
            }
        }
        out
    }

    /// Union of active bits over each user's observed constraints.
    pub fn user_bit_profiles(&self) -> Vec<Vec<usize>> {
        let mut profiles: Vec<HashSet<usize>> = vec![HashSet::new(); self.m];
        for rec in &self.records {
            profiles[rec.user].extend(rec.constraint.active().iter().copied());
        }
        profiles
            .into_iter()
            .map(|s| {
                let mut v: Vec<usize> = s.into_iter().collect();
                v.sort_unstable();
                v
            })
            .collect()
    }
}

/// Feature-level co-occurrence counts: entry (j, j') is the number of
/// distinct users observed with some constraint activating bit j and some
/// constraint activating bit j'. Symmetric; the diagonal counts users per
/// single bit and dominates its row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CooccurrenceStats {
    d: usize,
    counts: Vec<u64>,
}

impl CooccurrenceStats {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn count(&self, j: usize, jp: usize) -> u64 {
        self.counts[j * self.d + jp]
    }

    /// Bit pairs (j < j') seen together for at least one user.
    pub fn active_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for j in 0..self.d {
            for jp in j + 1..self.d {
                if self.count(j, jp) > 0 {
                    pairs.push((j, jp));
                }
            }
        }
        pairs
    }
}

/// Aggregate co-occurrence at the feature-bit level. Constraints themselves
/// are combinatorial, so statistics are kept per bit pair, counting each user
/// once regardless of how many records exhibit the pair.
pub fn build_cooccurrence(data: &InteractionTensor) -> CooccurrenceStats {
    let d = data.d();
    let mut counts = vec![0u64; d * d];
    for profile in data.user_bit_profiles() {
        for (a, &j) in profile.iter().enumerate() {
            for &jp in &profile[a..] {
                counts[j * d + jp] += 1;
                if j != jp {
                    counts[jp * d + j] += 1;
                }
            }
        }
    }
    CooccurrenceStats { d, counts }
}
