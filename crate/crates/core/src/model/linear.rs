//! Embedding model and the linear constraint transforms, together with the
//! scoring rules for MF, CAMF-CI, WC-MF and DC-MF. All of these scores are
//! linear in each parameter block, which is what makes exact alternating
//! updates possible.

use crate::constraint::{ConstraintVector, FeatureMap};
use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};
use serde::{Deserialize, Serialize};

/// User and item embeddings plus the per-user bias: scores are built from
/// `U_u`, `P_i` and `B_u`. There is no item bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub k: usize,
    pub u: Mat,
    pub p: Mat,
    pub b: Vec<f64>,
}

impl EmbeddingModel {
    pub fn zeros(m: usize, n: usize, k: usize) -> Self {
        EmbeddingModel {
            k,
            u: Mat::zeros(m, k),
            p: Mat::zeros(n, k),
            b: vec![0.0; m],
        }
    }

    pub fn m(&self) -> usize {
        self.u.rows()
    }

    pub fn n(&self) -> usize {
        self.p.rows()
    }

    pub fn check_user(&self, u: usize) -> Result<()> {
        if u >= self.m() {
            return Err(Error::IdOutOfRange {
                kind: "user",
                id: u,
                limit: self.m(),
            });
        }
        Ok(())
    }

    pub fn check_item(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::IdOutOfRange {
                kind: "item",
                id: i,
                limit: self.n(),
            });
        }
        Ok(())
    }
}

/// Diagonal-slice transform: column `j` holds the diagonal of the j-th
/// k-by-k slice, so the whole tensor is stored as a k-by-d matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalTransform {
    pub dmat: Mat,
}

impl DiagonalTransform {
    pub fn new(dmat: Mat) -> Self {
        DiagonalTransform { dmat }
    }

    pub fn ones(k: usize, d: usize) -> Self {
        DiagonalTransform {
            dmat: Mat::filled(k, d, 1.0),
        }
    }

    pub fn k(&self) -> usize {
        self.dmat.rows()
    }

    pub fn d(&self) -> usize {
        self.dmat.cols()
    }
}

/// Scalar-slice transform: slice `j` is `alpha_j` times the identity, so a
/// constraint scales the plain MF score by the mean of its active weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTransform {
    pub alpha: Vec<f64>,
}

impl WeightedTransform {
    pub fn ones(d: usize) -> Self {
        WeightedTransform {
            alpha: vec![1.0; d],
        }
    }

    /// Mean active weight `sum_{j in c} alpha_j / ||c||_1`.
    pub fn mean_active(&self, c: &ConstraintVector) -> f64 {
        let s: f64 = c.active().iter().map(|&j| self.alpha[j]).sum();
        s / c.l1()
    }
}

/// Per-(feature, item) additive context table for CAMF-CI. Only entries
/// where the feature is compatible with the item exist; the rest are
/// structural zeros that are never stored or updated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextItemTable {
    d: usize,
    /// Per item: sorted `(feature, value)` pairs over the item's features.
    entries: Vec<Vec<(usize, f64)>>,
}

impl ContextItemTable {
    /// Allocate zeros at exactly the compatible positions of the feature map.
    pub fn zeros_from(features: &FeatureMap) -> Self {
        let entries = (0..features.n())
            .map(|i| {
                features
                    .row(i)
                    .expect("row index in range")
                    .iter()
                    .map(|&j| (j, 0.0))
                    .collect()
            })
            .collect();
        ContextItemTable {
            d: features.d(),
            entries,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.entries.len()
    }

    pub fn item_entries(&self, item: usize) -> &[(usize, f64)] {
        &self.entries[item]
    }

    pub fn item_entries_mut(&mut self, item: usize) -> &mut [(usize, f64)] {
        &mut self.entries[item]
    }

    pub fn get(&self, feature: usize, item: usize) -> Option<f64> {
        let row = &self.entries[item];
        row.binary_search_by_key(&feature, |e| e.0)
            .ok()
            .map(|idx| row[idx].1)
    }

    pub fn set(&mut self, feature: usize, item: usize, value: f64) -> Result<()> {
        let row = &mut self.entries[item];
        match row.binary_search_by_key(&feature, |e| e.0) {
            Ok(idx) => {
                row[idx].1 = value;
                Ok(())
            }
            Err(_) => Err(Error::InvalidConfig(format!(
                "feature {feature} is structurally zero for item {item}"
            ))),
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|row| row.iter())
            .map(|(_, v)| v * v)
            .sum()
    }

    /// Mean of the stored values at the constraint's active, compatible
    /// features; 0 when no active feature is compatible with the item.
    pub fn context_term(&self, c: &ConstraintVector, item: usize) -> f64 {
        let row = &self.entries[item];
        let mut sum = 0.0;
        let mut count = 0usize;
        for &j in c.active() {
            if let Ok(idx) = row.binary_search_by_key(&j, |e| e.0) {
                sum += row[idx].1;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }
}

/// Plain MF score `U_u . P_i + B_u`.
pub fn score_mf(model: &EmbeddingModel, u: usize, i: usize) -> Result<f64> {
    model.check_user(u)?;
    model.check_item(i)?;
    Ok(dot(model.u.row(u), model.p.row(i)) + model.b[u])
}

/// CAMF-CI score: MF plus the mean context value over the constraint's
/// compatible features of the item.
pub fn score_camf(
    model: &EmbeddingModel,
    table: &ContextItemTable,
    u: usize,
    i: usize,
    c: &ConstraintVector,
) -> Result<f64> {
    Ok(score_mf(model, u, i)? + table.context_term(c, i))
}

/// Diagonal of the linear transform at `c`: the elementwise mean of the
/// transform's active columns, `D c / ||c||_1`.
pub fn transform_linear(diag: &DiagonalTransform, c: &ConstraintVector) -> Result<Vec<f64>> {
    if diag.d() != c.d() {
        return Err(Error::DimensionMismatch {
            what: "transform constraint",
            expected: diag.d(),
            got: c.d(),
        });
    }
    let k = diag.k();
    let inv = 1.0 / c.l1();
    let mut t = vec![0.0; k];
    for &j in c.active() {
        for (kappa, slot) in t.iter_mut().enumerate() {
            *slot += diag.dmat.get(kappa, j);
        }
    }
    for slot in &mut t {
        *slot *= inv;
    }
    Ok(t)
}

/// Score under a diagonal transform: `sum_k U_uk * t_k * P_ik + B_u`.
pub fn score_constrained(
    model: &EmbeddingModel,
    t_diag: &[f64],
    u: usize,
    i: usize,
) -> Result<f64> {
    model.check_user(u)?;
    model.check_item(i)?;
    if t_diag.len() != model.k {
        return Err(Error::DimensionMismatch {
            what: "transform diagonal",
            expected: model.k,
            got: t_diag.len(),
        });
    }
    let (uu, pp) = (model.u.row(u), model.p.row(i));
    // Accumulate the product sum first so an all-ones diagonal reproduces
    // the MF score bit for bit.
    let mut s = 0.0;
    for kappa in 0..model.k {
        s += uu[kappa] * t_diag[kappa] * pp[kappa];
    }
    Ok(s + model.b[u])
}

/// Score under a full k-by-k transform: `U_u T P_i^T + B_u`.
pub fn score_full_transform(model: &EmbeddingModel, t: &Mat, u: usize, i: usize) -> Result<f64> {
    model.check_user(u)?;
    model.check_item(i)?;
    if t.rows() != model.k || t.cols() != model.k {
        return Err(Error::DimensionMismatch {
            what: "transform matrix",
            expected: model.k,
            got: t.rows().max(t.cols()),
        });
    }
    let (uu, pp) = (model.u.row(u), model.p.row(i));
    let mut s = 0.0;
    for a in 0..model.k {
        s += uu[a] * dot(t.row(a), pp);
    }
    Ok(s + model.b[u])
}

/// WC-MF score: the MF dot product scaled by the mean active weight.
pub fn score_weighted(
    model: &EmbeddingModel,
    w: &WeightedTransform,
    u: usize,
    i: usize,
    c: &ConstraintVector,
) -> Result<f64> {
    model.check_user(u)?;
    model.check_item(i)?;
    if w.alpha.len() != c.d() {
        return Err(Error::DimensionMismatch {
            what: "weighted transform",
            expected: w.alpha.len(),
            got: c.d(),
        });
    }
    Ok(w.mean_active(c) * dot(model.u.row(u), model.p.row(i)) + model.b[u])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn c(d: usize, bits: &[usize]) -> ConstraintVector {
        ConstraintVector::new(d, bits.iter().copied()).unwrap()
    }

    fn model_from(u: &[Vec<f64>], p: &[Vec<f64>], b: &[f64]) -> EmbeddingModel {
        EmbeddingModel {
            k: u[0].len(),
            u: Mat::from_rows(u),
            p: Mat::from_rows(p),
            b: b.to_vec(),
        }
    }

    #[test]
    fn score_mf_dot_plus_bias() {
        let m = model_from(&[vec![1.0, 2.0]], &[vec![3.0, 4.0]], &[0.5]);
        assert_eq!(score_mf(&m, 0, 0).unwrap(), 11.5);
    }

    #[test]
    fn score_mf_zero_embeddings_is_bias() {
        let m = model_from(&[vec![0.0, 0.0]], &[vec![3.0, 4.0]], &[0.7]);
        assert_eq!(score_mf(&m, 0, 0).unwrap(), 0.7);
    }

    #[test]
    fn score_mf_orthogonal_is_bias() {
        let m = model_from(&[vec![1.0, 0.0]], &[vec![0.0, 2.0]], &[-0.3]);
        assert_eq!(score_mf(&m, 0, 0).unwrap(), -0.3);
    }

    #[test]
    fn score_mf_id_out_of_range() {
        let m = model_from(&[vec![1.0]], &[vec![1.0]], &[0.0]);
        assert!(score_mf(&m, 1, 0).is_err());
        assert!(score_mf(&m, 0, 1).is_err());
    }

    #[test]
    fn camf_single_compatible_feature() {
        let m = model_from(&[vec![1.0]], &[vec![1.0]], &[0.0]);
        let f = FeatureMap::new(3, vec![vec![1]]).unwrap();
        let mut table = ContextItemTable::zeros_from(&f);
        table.set(1, 0, 0.25).unwrap();
        let s = score_camf(&m, &table, 0, 0, &c(3, &[1])).unwrap();
        assert_eq!(s, 1.0 + 0.25);
    }

    #[test]
    fn camf_no_compatible_feature_reduces_to_mf() {
        let m = model_from(&[vec![1.0]], &[vec![1.0]], &[0.5]);
        let f = FeatureMap::new(3, vec![vec![2]]).unwrap();
        let mut table = ContextItemTable::zeros_from(&f);
        table.set(2, 0, 9.0).unwrap();
        let s = score_camf(&m, &table, 0, 0, &c(3, &[0, 1])).unwrap();
        assert_eq!(s, score_mf(&m, 0, 0).unwrap());
    }

    #[test]
    fn camf_mean_of_two_compatible_features() {
        let m = model_from(&[vec![0.0]], &[vec![0.0]], &[0.0]);
        let f = FeatureMap::new(3, vec![vec![0, 2]]).unwrap();
        let mut table = ContextItemTable::zeros_from(&f);
        table.set(0, 0, 0.2).unwrap();
        table.set(2, 0, 0.6).unwrap();
        let s = score_camf(&m, &table, 0, 0, &c(3, &[0, 2])).unwrap();
        assert!((s - 0.4).abs() < 1e-15);
    }

    #[test]
    fn context_table_rejects_structural_zero_writes() {
        let f = FeatureMap::new(3, vec![vec![1]]).unwrap();
        let mut table = ContextItemTable::zeros_from(&f);
        assert!(table.set(0, 0, 1.0).is_err());
        assert!(table.set(1, 0, 1.0).is_ok());
    }

    #[test]
    fn transform_single_bit_selects_column() {
        let dmat = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let t = transform_linear(&DiagonalTransform::new(dmat), &c(3, &[1])).unwrap();
        assert_eq!(t, vec![2.0, 5.0]);
    }

    #[test]
    fn transform_all_ones_is_identity() {
        let diag = DiagonalTransform::ones(3, 4);
        for bits in [vec![0], vec![1, 3], vec![0, 1, 2, 3]] {
            let t = transform_linear(&diag, &c(4, &bits)).unwrap();
            assert!(t.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        }
    }

    #[test]
    fn transform_two_bits_averages_columns() {
        let dmat = Mat::from_rows(&[vec![1.0, 3.0], vec![-2.0, 4.0]]);
        let t = transform_linear(&DiagonalTransform::new(dmat), &c(2, &[0, 1])).unwrap();
        assert_eq!(t, vec![2.0, 1.0]);
    }

    #[test]
    fn constrained_all_ones_equals_mf_bitwise() {
        let mut rng = crate::test_rng(3);
        for _ in 0..50 {
            let k = rng.gen_range(1..6);
            let m = model_from(
                &[(0..k).map(|_| rng.gen_range(-2.0..2.0)).collect()],
                &[(0..k).map(|_| rng.gen_range(-2.0..2.0)).collect()],
                &[rng.gen_range(-1.0..1.0)],
            );
            let ones = vec![1.0; k];
            assert_eq!(
                score_constrained(&m, &ones, 0, 0).unwrap(),
                score_mf(&m, 0, 0).unwrap()
            );
        }
    }

    #[test]
    fn constrained_zeros_is_bias() {
        let m = model_from(&[vec![1.0, 2.0]], &[vec![3.0, 4.0]], &[0.25]);
        assert_eq!(score_constrained(&m, &[0.0, 0.0], 0, 0).unwrap(), 0.25);
    }

    #[test]
    fn constrained_hand_example() {
        let m = model_from(&[vec![1.0, 2.0]], &[vec![3.0, 4.0]], &[0.0]);
        // 1*0.5*3 + 2*2*4 = 17.5
        assert_eq!(score_constrained(&m, &[0.5, 2.0], 0, 0).unwrap(), 17.5);
    }

    #[test]
    fn weighted_all_ones_equals_mf() {
        let m = model_from(&[vec![1.0, -1.0]], &[vec![2.0, 0.5]], &[0.1]);
        let w = WeightedTransform::ones(3);
        let s = score_weighted(&m, &w, 0, 0, &c(3, &[0, 2])).unwrap();
        assert!((s - score_mf(&m, 0, 0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn weighted_all_zeros_is_bias() {
        let m = model_from(&[vec![1.0, -1.0]], &[vec![2.0, 0.5]], &[0.1]);
        let w = WeightedTransform {
            alpha: vec![0.0; 3],
        };
        assert_eq!(score_weighted(&m, &w, 0, 0, &c(3, &[1])).unwrap(), 0.1);
    }

    #[test]
    fn weighted_single_bit_scales_dot() {
        let m = model_from(&[vec![1.0, 2.0]], &[vec![3.0, 4.0]], &[0.5]);
        let mut alpha = vec![0.0; 3];
        alpha[0] = 2.0;
        let w = WeightedTransform { alpha };
        let s = score_weighted(&m, &w, 0, 0, &c(3, &[0])).unwrap();
        assert_eq!(s, 2.0 * 11.0 + 0.5);
    }

    #[test]
    fn weighted_is_special_case_of_diagonal() {
        // Every row of D set to alpha reproduces the weighted score exactly.
        let mut rng = crate::test_rng(5);
        for _ in 0..50 {
            let (k, d) = (rng.gen_range(1..5), rng.gen_range(1..6));
            let m = model_from(
                &[(0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()],
                &[(0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()],
                &[rng.gen_range(-1.0..1.0)],
            );
            let alpha: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let bits: Vec<usize> = loop {
                let b: Vec<usize> = (0..d).filter(|_| rng.gen_bool(0.5)).collect();
                if !b.is_empty() {
                    break b;
                }
            };
            let cv = c(d, &bits);
            let w = WeightedTransform {
                alpha: alpha.clone(),
            };
            let diag = DiagonalTransform::new(Mat::from_fn(k, d, |_, j| alpha[j]));
            let t = transform_linear(&diag, &cv).unwrap();
            let sw = score_weighted(&m, &w, 0, 0, &cv).unwrap();
            let sd = score_constrained(&m, &t, 0, 0).unwrap();
            assert!((sw - sd).abs() < 1e-12, "{sw} vs {sd}");
        }
    }

    #[test]
    fn score_linear_in_each_block() {
        // Random-direction linearity in U_u, P_i and t separately.
        let mut rng = crate::test_rng(9);
        let k = 4;
        let rand_vec =
            |rng: &mut rand_chacha::ChaCha8Rng| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..50 {
            let u: Vec<f64> = rand_vec(&mut rng);
            let p: Vec<f64> = rand_vec(&mut rng);
            let t: Vec<f64> = rand_vec(&mut rng);
            let du: Vec<f64> = rand_vec(&mut rng);
            let a = rng.gen_range(-2.0..2.0);
            let b = rng.gen_range(-2.0..2.0);
            let score = |uu: &[f64], tt: &[f64], pp: &[f64]| {
                let m = model_from(&[uu.to_vec()], &[pp.to_vec()], &[0.0]);
                score_constrained(&m, tt, 0, 0).unwrap()
            };
            // u-direction
            let mixed: Vec<f64> = u.iter().zip(&du).map(|(x, y)| a * x + b * y).collect();
            let lhs = score(&mixed, &t, &p);
            let rhs = a * score(&u, &t, &p) + b * score(&du, &t, &p);
            assert!((lhs - rhs).abs() < 1e-10);
            // t-direction
            let mixed_t: Vec<f64> = t.iter().zip(&du).map(|(x, y)| a * x + b * y).collect();
            let lhs = score(&u, &mixed_t, &p);
            let rhs = a * score(&u, &t, &p) + b * score(&u, &du, &p);
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn transform_invariant_to_bit_order() {
        let dmat = Mat::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]);
        let diag = DiagonalTransform::new(dmat);
        let a = transform_linear(&diag, &c(4, &[0, 2, 3])).unwrap();
        let b = transform_linear(&diag, &ConstraintVector::new(4, [3, 0, 2, 0]).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
