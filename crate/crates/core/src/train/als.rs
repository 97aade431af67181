//! Alternating exact block updates for the linear model family.
//!
//! The penalized loss is quadratic in each block — user rows, item rows, and
//! the transform parameters — so each update solves the block's ridge normal
//! equations exactly. Every accepted solve is checked against the quadratic
//! objective it minimized, which makes the loss non-increasing per update by
//! construction rather than by hope.

use crate::constraint::{CooccurrenceStats, InteractionTensor};
use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::model::{Model, ModelParams, SideData};
use crate::train::warm::cooccurrence_regularizer;
use crate::train::TrainConfig;

/// Parameter blocks of the alternating scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Items,
    Users,
    Transform,
}

impl std::fmt::Display for Block {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Block::Items => "items",
            Block::Users => "users",
            Block::Transform => "transform",
        })
    }
}

/// Co-occurrence regularization attached to the diagonal transform.
pub struct RegContext<'a> {
    pub stats: &'a CooccurrenceStats,
    pub strength: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockOutcome {
    pub loss_before: f64,
    pub loss_after: f64,
    pub sweeps: usize,
}

/// Weighted sum of squared residuals plus the L2 penalty on the embedding
/// matrices (and on the context table for CAMF-CI), plus the co-occurrence
/// term when attached. Tower models carry no penalty.
pub fn penalized_loss(
    model: &Model,
    data: &InteractionTensor,
    side: &SideData,
    lambda: f64,
    reg: Option<&RegContext>,
) -> Result<f64> {
    let mut loss = 0.0;
    for rec in data.records() {
        let s = model.score(rec.user, rec.item, &rec.constraint, side)?;
        let e = rec.reward - s;
        loss += rec.weight * e * e;
    }
    match &model.params {
        ModelParams::NnMf { .. } | ModelParams::NcNnMf { .. } => {}
        ModelParams::CamfCi { table } => {
            loss += lambda / 2.0 * (model.emb.u.sq_norm() + model.emb.p.sq_norm());
            loss += lambda / 2.0 * table.sq_norm();
        }
        _ => {
            loss += lambda / 2.0 * (model.emb.u.sq_norm() + model.emb.p.sq_norm());
        }
    }
    if let (Some(reg), ModelParams::DcMf { diag }) = (reg, &model.params) {
        loss += cooccurrence_regularizer(diag, reg.stats, reg.strength);
    }
    Ok(loss)
}

/// Accept a block solve only when it is finite and does not increase the
/// quadratic `x^T N x - 2 rhs^T x` it minimized, so diagonal jitter inside
/// the solver can never push the loss up.
fn accept_solution(n: &[f64], rhs: &[f64], old: &[f64], new: &[f64], dim: usize) -> bool {
    if !new.iter().all(|v| v.is_finite()) {
        return false;
    }
    let eval = |x: &[f64]| {
        let mut q = 0.0;
        for a in 0..dim {
            let mut row = 0.0;
            for b in 0..dim {
                row += n[a * dim + b] * x[b];
            }
            q += x[a] * row;
            q -= 2.0 * rhs[a] * x[a];
        }
        q
    };
    eval(new) <= eval(old)
}

fn by_user(data: &InteractionTensor) -> Vec<Vec<usize>> {
    let mut idx = vec![Vec::new(); data.m()];
    for (ri, rec) in data.records().iter().enumerate() {
        idx[rec.user].push(ri);
    }
    idx
}

fn by_item(data: &InteractionTensor) -> Vec<Vec<usize>> {
    let mut idx = vec![Vec::new(); data.n()];
    for (ri, rec) in data.records().iter().enumerate() {
        idx[rec.item].push(ri);
    }
    idx
}

/// Set the named block to the minimizer of the penalized loss with the other
/// blocks held fixed. User and item rows decouple and are solved exactly in
/// one pass; the transform block of DC-MF is coupled across rows and runs
/// exact row (or, under regularization, coordinate) solves until the
/// relative improvement drops below `1e-6` or `steps_per_block` sweeps.
pub fn als_block_update(
    model: &mut Model,
    data: &InteractionTensor,
    block: Block,
    cfg: &TrainConfig,
    reg: Option<&RegContext>,
) -> Result<BlockOutcome> {
    if model.kind().is_neural() {
        return Err(Error::InvalidConfig(format!(
            "alternating updates are for linear models, not {}",
            model.kind()
        )));
    }
    let side = SideData::none();
    let loss_before = penalized_loss(model, data, &side, cfg.lambda, reg)?;
    let sweeps = match block {
        Block::Users => {
            update_users(model, data, cfg.lambda)?;
            1
        }
        Block::Items => {
            update_items(model, data, cfg.lambda)?;
            1
        }
        Block::Transform => update_transform(model, data, cfg, reg)?,
    };
    let loss_after = penalized_loss(model, data, &side, cfg.lambda, reg)?;
    Ok(BlockOutcome {
        loss_before,
        loss_after,
        sweeps,
    })
}

/// Per-record design vector over the embedding coordinates, for whichever
/// side is being solved. `other` is the fixed row (P_i when solving users,
/// U_u when solving items).
fn design_row(model: &Model, other: &[f64], rec: &crate::constraint::Interaction) -> Vec<f64> {
    match &model.params {
        ModelParams::Mf | ModelParams::MfEnlarged | ModelParams::CamfCi { .. } => other.to_vec(),
        ModelParams::WcMf { alpha } => {
            let a = alpha.mean_active(&rec.constraint);
            other.iter().map(|v| a * v).collect()
        }
        ModelParams::DcMf { diag } => {
            let t = crate::model::transform_linear(diag, &rec.constraint)
                .expect("dimensions validated at construction");
            other.iter().zip(&t).map(|(v, tv)| v * tv).collect()
        }
        _ => unreachable!("neural variants rejected above"),
    }
}

fn context_term(model: &Model, rec: &crate::constraint::Interaction) -> f64 {
    match &model.params {
        ModelParams::CamfCi { table } => table.context_term(&rec.constraint, rec.item),
        _ => 0.0,
    }
}

fn update_users(model: &mut Model, data: &InteractionTensor, lambda: f64) -> Result<()> {
    let k = model.emb.k;
    let kk = k + 1; // embedding row plus the user bias
    let index = by_user(data);
    let records = data.records();
    let mut nmat = vec![0.0; kk * kk];
    let mut rhs = vec![0.0; kk];
    let mut x = vec![0.0; kk];
    for u in 0..model.m {
        let recs = &index[u];
        if recs.is_empty() {
            if lambda > 0.0 {
                model.emb.u.row_mut(u).fill(0.0);
            }
            continue;
        }
        nmat.fill(0.0);
        rhs.fill(0.0);
        for &ri in recs {
            let rec = &records[ri];
            let phi = design_row(model, model.emb.p.row(rec.item), rec);
            x[..k].copy_from_slice(&phi);
            x[k] = 1.0;
            let y = rec.reward - context_term(model, rec);
            let w = rec.weight;
            for a in 0..kk {
                let wxa = w * x[a];
                for b in 0..kk {
                    nmat[a * kk + b] += wxa * x[b];
                }
                rhs[a] += wxa * y;
            }
        }
        for a in 0..k {
            nmat[a * kk + a] += lambda / 2.0;
        }
        let mut old = model.emb.u.row(u).to_vec();
        old.push(model.emb.b[u]);
        let new = solve_spd(&nmat, &rhs, kk, 0.0);
        if accept_solution(&nmat, &rhs, &old, &new, kk) {
            model.emb.u.row_mut(u).copy_from_slice(&new[..k]);
            model.emb.b[u] = new[k];
        }
    }
    Ok(())
}

fn update_items(model: &mut Model, data: &InteractionTensor, lambda: f64) -> Result<()> {
    let k = model.emb.k;
    let index = by_item(data);
    let records = data.records();
    let mut nmat = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    for i in 0..model.n {
        let recs = &index[i];
        if recs.is_empty() {
            if lambda > 0.0 {
                model.emb.p.row_mut(i).fill(0.0);
            }
            continue;
        }
        nmat.fill(0.0);
        rhs.fill(0.0);
        for &ri in recs {
            let rec = &records[ri];
            let x = design_row(model, model.emb.u.row(rec.user), rec);
            let y = rec.reward - model.emb.b[rec.user] - context_term(model, rec);
            let w = rec.weight;
            for a in 0..k {
                let wxa = w * x[a];
                for b in 0..k {
                    nmat[a * k + b] += wxa * x[b];
                }
                rhs[a] += wxa * y;
            }
        }
        for a in 0..k {
            nmat[a * k + a] += lambda / 2.0;
        }
        let old = model.emb.p.row(i).to_vec();
        let new = solve_spd(&nmat, &rhs, k, 0.0);
        if accept_solution(&nmat, &rhs, &old, &new, k) {
            model.emb.p.row_mut(i).copy_from_slice(&new);
        }
    }
    Ok(())
}

fn update_transform(
    model: &mut Model,
    data: &InteractionTensor,
    cfg: &TrainConfig,
    reg: Option<&RegContext>,
) -> Result<usize> {
    // Split borrows: the embedding stays read-only while the variant
    // parameters are rewritten.
    let Model { emb, params, .. } = model;
    match params {
        ModelParams::Mf | ModelParams::MfEnlarged => Ok(0),
        ModelParams::CamfCi { table } => {
            update_camf_context(emb, table, data, cfg.lambda)?;
            Ok(1)
        }
        ModelParams::WcMf { alpha } => {
            update_weighted(emb, alpha, data)?;
            Ok(1)
        }
        ModelParams::DcMf { diag } => {
            let reg_active = reg.map_or(false, |r| r.strength > 0.0);
            if reg_active {
                update_diag_coordinate(emb, diag, data, cfg, reg.unwrap())
            } else {
                update_diag_rows(emb, diag, data, cfg)
            }
        }
        _ => unreachable!("neural variants rejected above"),
    }
}

fn update_camf_context(
    emb: &crate::model::EmbeddingModel,
    table: &mut crate::model::ContextItemTable,
    data: &InteractionTensor,
    lambda: f64,
) -> Result<()> {
    let index = by_item(data);
    let records = data.records();
    for i in 0..table.n() {
        let dim = table.item_entries(i).len();
        if dim == 0 || index[i].is_empty() {
            continue;
        }
        let features: Vec<usize> = table.item_entries(i).iter().map(|e| e.0).collect();
        let mut nmat = vec![0.0; dim * dim];
        let mut rhs = vec![0.0; dim];
        for &ri in &index[i] {
            let rec = &records[ri];
            let act: Vec<usize> = rec
                .constraint
                .active()
                .iter()
                .filter_map(|j| features.binary_search(j).ok())
                .collect();
            if act.is_empty() {
                continue;
            }
            let xval = 1.0 / act.len() as f64;
            let y = rec.reward
                - emb.b[rec.user]
                - crate::linalg::dot(emb.u.row(rec.user), emb.p.row(i));
            let w = rec.weight;
            for &a in &act {
                for &b in &act {
                    nmat[a * dim + b] += w * xval * xval;
                }
                rhs[a] += w * xval * y;
            }
        }
        for a in 0..dim {
            nmat[a * dim + a] += lambda / 2.0;
        }
        let old: Vec<f64> = table.item_entries(i).iter().map(|e| e.1).collect();
        let new = solve_spd(&nmat, &rhs, dim, 0.0);
        if accept_solution(&nmat, &rhs, &old, &new, dim) {
            for (entry, v) in table.item_entries_mut(i).iter_mut().zip(&new) {
                entry.1 = *v;
            }
        }
    }
    Ok(())
}

fn update_weighted(
    emb: &crate::model::EmbeddingModel,
    alpha: &mut crate::model::WeightedTransform,
    data: &InteractionTensor,
) -> Result<()> {
    let d = alpha.alpha.len();
    let mut nmat = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    for rec in data.records() {
        let g = crate::linalg::dot(emb.u.row(rec.user), emb.p.row(rec.item));
        let inv = 1.0 / rec.constraint.l1();
        let y = rec.reward - emb.b[rec.user];
        let w = rec.weight;
        let xv = g * inv;
        for &a in rec.constraint.active() {
            for &b in rec.constraint.active() {
                nmat[a * d + b] += w * xv * xv;
            }
            rhs[a] += w * xv * y;
        }
    }
    let old = alpha.alpha.clone();
    let new = solve_spd(&nmat, &rhs, d, 0.0);
    if accept_solution(&nmat, &rhs, &old, &new, d) {
        alpha.alpha = new;
    }
    Ok(())
}

/// Exact per-row ridge solves over the transform matrix, swept until the
/// data loss stalls. Each row solve is an exact minimizer with the other
/// rows fixed, so every sweep is non-increasing.
fn update_diag_rows(
    emb: &crate::model::EmbeddingModel,
    diag: &mut crate::model::DiagonalTransform,
    data: &InteractionTensor,
    cfg: &TrainConfig,
) -> Result<usize> {
    let k = emb.k;
    let d = diag.d();
    let records = data.records();

    // Per-record score cache (without the bias term).
    let mut score: Vec<f64> = Vec::with_capacity(records.len());
    for rec in records {
        let t = crate::model::transform_linear(diag, &rec.constraint)?;
        let uu = emb.u.row(rec.user);
        let pp = emb.p.row(rec.item);
        score.push((0..k).map(|x| uu[x] * t[x] * pp[x]).sum());
    }
    let data_loss = |score: &[f64]| -> f64 {
        records
            .iter()
            .zip(score)
            .map(|(rec, s)| {
                let e = rec.reward - emb.b[rec.user] - s;
                rec.weight * e * e
            })
            .sum()
    };

    let mut prev = data_loss(&score);
    let mut sweeps = 0;
    let mut nmat = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    let mut t_old = vec![0.0; records.len()];
    for _ in 0..cfg.steps_per_block.max(1) {
        for kappa in 0..k {
            nmat.fill(0.0);
            rhs.fill(0.0);
            let row = diag.dmat.row(kappa);
            for (ri, rec) in records.iter().enumerate() {
                let a = emb.u.row(rec.user)[kappa] * emb.p.row(rec.item)[kappa];
                let inv = 1.0 / rec.constraint.l1();
                let t_k: f64 = rec.constraint.active().iter().map(|&j| row[j]).sum::<f64>() * inv;
                t_old[ri] = t_k;
                if a == 0.0 {
                    continue;
                }
                let resid = rec.reward - emb.b[rec.user] - (score[ri] - a * t_k);
                let xv = a * inv;
                let w = rec.weight;
                for &ja in rec.constraint.active() {
                    for &jb in rec.constraint.active() {
                        nmat[ja * d + jb] += w * xv * xv;
                    }
                    rhs[ja] += w * xv * resid;
                }
            }
            if nmat.iter().all(|&v| v == 0.0) {
                continue; // row never touches a record
            }
            let old = diag.dmat.row(kappa).to_vec();
            let new = solve_spd(&nmat, &rhs, d, 0.0);
            if accept_solution(&nmat, &rhs, &old, &new, d) {
                diag.dmat.row_mut(kappa).copy_from_slice(&new);
                let row = diag.dmat.row(kappa);
                for (ri, rec) in records.iter().enumerate() {
                    let a = emb.u.row(rec.user)[kappa] * emb.p.row(rec.item)[kappa];
                    if a == 0.0 {
                        continue;
                    }
                    let inv = 1.0 / rec.constraint.l1();
                    let t_new: f64 =
                        rec.constraint.active().iter().map(|&j| row[j]).sum::<f64>() * inv;
                    score[ri] += a * (t_new - t_old[ri]);
                }
            }
        }
        sweeps += 1;
        let cur = data_loss(&score);
        if prev - cur <= 1e-6 * prev.abs().max(1e-12) {
            prev = cur;
            break;
        }
        prev = cur;
    }
    let _ = prev;
    Ok(sweeps)
}

/// Exact coordinate minimization over transform entries when the
/// co-occurrence regularizer is attached. The regularizer couples entries
/// within a row bilinearly, but each single entry still sees a quadratic, so
/// per-entry minimization stays exact and monotone.
pub(crate) fn update_diag_coordinate(
    emb: &crate::model::EmbeddingModel,
    diag: &mut crate::model::DiagonalTransform,
    data: &InteractionTensor,
    cfg: &TrainConfig,
    reg: &RegContext,
) -> Result<usize> {
    let k = emb.k;
    let d = diag.d();
    let records = data.records();
    let strength = reg.strength;

    let mut by_bit: Vec<Vec<usize>> = vec![Vec::new(); d];
    for (ri, rec) in records.iter().enumerate() {
        for &j in rec.constraint.active() {
            by_bit[j].push(ri);
        }
    }
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); d];
    for (j, jp) in reg.stats.active_pairs() {
        neighbors[j].push(jp);
        neighbors[jp].push(j);
    }

    let mut score: Vec<f64> = Vec::with_capacity(records.len());
    for rec in records {
        let t = crate::model::transform_linear(diag, &rec.constraint)?;
        let uu = emb.u.row(rec.user);
        let pp = emb.p.row(rec.item);
        score.push((0..k).map(|x| uu[x] * t[x] * pp[x]).sum());
    }
    let total_loss = |score: &[f64], diag: &crate::model::DiagonalTransform| -> f64 {
        let data_part: f64 = records
            .iter()
            .zip(score)
            .map(|(rec, s)| {
                let e = rec.reward - emb.b[rec.user] - s;
                rec.weight * e * e
            })
            .sum();
        data_part + cooccurrence_regularizer(diag, reg.stats, strength)
    };

    let mut prev = total_loss(&score, diag);
    let mut sweeps = 0;
    for _ in 0..cfg.steps_per_block.max(1) {
        for kappa in 0..k {
            for j in 0..d {
                let old = diag.dmat.get(kappa, j);
                let mut quad = 0.0;
                let mut lin = 0.0;
                for &ri in &by_bit[j] {
                    let rec = &records[ri];
                    let a = emb.u.row(rec.user)[kappa] * emb.p.row(rec.item)[kappa];
                    if a == 0.0 {
                        continue;
                    }
                    let inv = 1.0 / rec.constraint.l1();
                    let coeff = a * inv;
                    let target = rec.reward - emb.b[rec.user] - (score[ri] - coeff * old);
                    quad += rec.weight * coeff * coeff;
                    lin += rec.weight * coeff * target;
                }
                for &jp in &neighbors[j] {
                    let partner = diag.dmat.get(kappa, jp);
                    quad += strength * partner * partner;
                    lin += strength * partner;
                }
                if quad <= 0.0 {
                    continue;
                }
                let new = lin / quad;
                if new != old {
                    diag.dmat.set(kappa, j, new);
                    for &ri in &by_bit[j] {
                        let rec = &records[ri];
                        let a = emb.u.row(rec.user)[kappa] * emb.p.row(rec.item)[kappa];
                        if a == 0.0 {
                            continue;
                        }
                        let inv = 1.0 / rec.constraint.l1();
                        score[ri] += a * inv * (new - old);
                    }
                }
            }
        }
        sweeps += 1;
        let cur = total_loss(&score, diag);
        if prev - cur <= 1e-6 * prev.abs().max(1e-12) {
            break;
        }
        prev = cur;
    }
    Ok(sweeps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::{build_cooccurrence, ConstraintVector, Interaction};
    use crate::fixtures;
    use crate::model::{EmbeddingModel, ModelParams};
    use crate::train::{init_model, WarmStart};
    use rand::Rng;

    fn mf_model(m: usize, n: usize, k: usize, d: usize, seed: u64) -> Model {
        let data = dummy_tensor(m, n, d, seed);
        init_model(
            ModelKind::Mf,
            &data,
            &crate::constraint::FeatureMap::new(d, vec![vec![0]; n]).unwrap(),
            &SideData::none(),
            &TrainConfig {
                k,
                seed,
                ..TrainConfig::default()
            },
        )
        .unwrap()
    }

    fn dummy_tensor(m: usize, n: usize, d: usize, seed: u64) -> InteractionTensor {
        let mut rng = crate::test_rng(seed);
        let records = (0..m * 2)
            .map(|_| Interaction {
                user: rng.gen_range(0..m),
                item: rng.gen_range(0..n),
                constraint: ConstraintVector::new(d, [rng.gen_range(0..d)]).unwrap(),
                reward: rng.gen_range(0.0..=1.0),
                weight: 1.0,
            })
            .collect();
        InteractionTensor::new(m, n, d, records).unwrap()
    }

    use crate::constraint::FeatureMap;
    use crate::model::ModelKind;

    /// Naive per-record summation, written independently of Model::score.
    fn naive_mf_loss(model: &Model, data: &InteractionTensor, lambda: f64) -> f64 {
        let mut loss = 0.0;
        for rec in data.records() {
            let mut s = 0.0;
            for kappa in 0..model.emb.k {
                s += model.emb.u.get(rec.user, kappa) * model.emb.p.get(rec.item, kappa);
            }
            s += model.emb.b[rec.user];
            loss += rec.weight * (rec.reward - s) * (rec.reward - s);
        }
        let mut pen = 0.0;
        for v in model.emb.u.data() {
            pen += v * v;
        }
        for v in model.emb.p.data() {
            pen += v * v;
        }
        loss + lambda / 2.0 * pen
    }

    #[test]
    fn perfect_fit_zero_lambda_is_zero_loss() {
        let (data, model) = fixtures::realizable_world(3, 5, 4, 2, 3);
        let loss = penalized_loss(&model, &data, &SideData::none(), 0.0, None).unwrap();
        assert!(loss < 1e-20, "planted model should fit exactly: {loss}");
    }

    #[test]
    fn zero_model_single_unit_record_loss_is_one() {
        let data = InteractionTensor::new(
            1,
            1,
            1,
            vec![Interaction {
                user: 0,
                item: 0,
                constraint: ConstraintVector::new(1, [0]).unwrap(),
                reward: 1.0,
                weight: 1.0,
            }],
        )
        .unwrap();
        let model = Model {
            m: 1,
            n: 1,
            d: 1,
            emb: EmbeddingModel::zeros(1, 1, 2),
            params: ModelParams::Mf,
        };
        let loss = penalized_loss(&model, &data, &SideData::none(), 0.0, None).unwrap();
        assert_eq!(loss, 1.0);
    }

    #[test]
    fn penalized_loss_matches_naive_summation() {
        let mut rng = crate::test_rng(101);
        for _ in 0..20 {
            let (m, n, d) = (
                rng.gen_range(2..6),
                rng.gen_range(2..6),
                rng.gen_range(1..4),
            );
            let data = dummy_tensor(m, n, d, rng.gen());
            let model = mf_model(m, n, 3, d, rng.gen());
            let lambda = rng.gen_range(0.0..1.0);
            let fast = penalized_loss(&model, &data, &SideData::none(), lambda, None).unwrap();
            let slow = naive_mf_loss(&model, &data, lambda);
            assert!((fast - slow).abs() < 1e-10 * slow.max(1.0));
        }
    }

    #[test]
    fn single_record_ridge_has_hand_closed_form() {
        // One user, one item, one record, P fixed: minimizing over (U_u, B_u)
        // jointly, the unpenalized bias absorbs the target and the penalty
        // pulls the embedding to zero: U_u -> 0, B_u -> r.
        let r = 0.8;
        let data = InteractionTensor::new(
            1,
            1,
            1,
            vec![Interaction {
                user: 0,
                item: 0,
                constraint: ConstraintVector::new(1, [0]).unwrap(),
                reward: r,
                weight: 1.0,
            }],
        )
        .unwrap();
        let mut model = Model {
            m: 1,
            n: 1,
            d: 1,
            emb: EmbeddingModel {
                k: 1,
                u: crate::linalg::Mat::filled(1, 1, 0.7),
                p: crate::linalg::Mat::filled(1, 1, 0.5),
                b: vec![0.1],
            },
            params: ModelParams::Mf,
        };
        let cfg = TrainConfig {
            k: 1,
            lambda: 0.3,
            ..TrainConfig::default()
        };
        let out = als_block_update(&mut model, &data, Block::Users, &cfg, None).unwrap();
        assert!(out.loss_after <= out.loss_before + 1e-12);
        assert!(
            model.emb.u.get(0, 0).abs() < 1e-10,
            "embedding shrinks to 0"
        );
        assert!(
            (model.emb.b[0] - r).abs() < 1e-10,
            "bias absorbs the target"
        );
    }

    #[test]
    fn realizable_data_reaches_zero_loss() {
        let (data, _planted) = fixtures::realizable_world(11, 6, 5, 2, 3);
        let features = FeatureMap::new(3, vec![vec![0, 1, 2]; 5]).unwrap();
        let cfg = TrainConfig {
            k: 2,
            lambda: 0.0,
            iterations: 500,
            steps_per_block: 20,
            init_scale: 0.2,
            seed: 4,
            ..TrainConfig::default()
        };
        let mut model =
            init_model(ModelKind::DcMf, &data, &features, &SideData::none(), &cfg).unwrap();
        let mut loss = f64::MAX;
        for _ in 0..cfg.iterations {
            for block in [Block::Items, Block::Users, Block::Transform] {
                let out = als_block_update(&mut model, &data, block, &cfg, None).unwrap();
                assert!(out.loss_after <= out.loss_before + 1e-10);
                loss = out.loss_after;
            }
        }
        assert!(
            loss < 1e-8,
            "alternating solves should fit realizable data, got {loss}"
        );
    }

    #[test]
    fn block_updates_never_increase_loss() {
        // Random fixtures across all four linear variants.
        let mut rng = crate::test_rng(300);
        for case in 0..12 {
            let m = rng.gen_range(3..10);
            let n = rng.gen_range(3..10);
            let d = rng.gen_range(2..5);
            let (data, features) = fixtures::random_world(&mut rng, m, n, d);
            for kind in [
                ModelKind::Mf,
                ModelKind::CamfCi,
                ModelKind::WcMf,
                ModelKind::DcMf,
            ] {
                let cfg = TrainConfig {
                    k: rng.gen_range(1..5),
                    lambda: [0.0, 0.01, 0.5][rng.gen_range(0..3)],
                    steps_per_block: 5,
                    seed: rng.gen(),
                    ..TrainConfig::default()
                };
                let mut model =
                    init_model(kind, &data, &features, &SideData::none(), &cfg).unwrap();
                for _ in 0..3 {
                    for block in [Block::Items, Block::Users, Block::Transform] {
                        let out = als_block_update(&mut model, &data, block, &cfg, None).unwrap();
                        assert!(
                            out.loss_after <= out.loss_before + 1e-10,
                            "case {case} {kind} {block}: {} -> {}",
                            out.loss_before,
                            out.loss_after
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn regularized_transform_updates_are_monotone() {
        let mut rng = crate::test_rng(400);
        for _ in 0..8 {
            let (data, features) = fixtures::random_world(&mut rng, 6, 6, 4);
            let stats = build_cooccurrence(&data);
            let cfg = TrainConfig {
                k: 3,
                lambda: 0.05,
                steps_per_block: 4,
                cooccurrence_reg_strength: 0.5,
                warm_start: WarmStart::Cooccurrence,
                seed: rng.gen(),
                ..TrainConfig::default()
            };
            let mut model =
                init_model(ModelKind::DcMf, &data, &features, &SideData::none(), &cfg).unwrap();
            let reg = RegContext {
                stats: &stats,
                strength: cfg.cooccurrence_reg_strength,
            };
            for _ in 0..3 {
                for block in [Block::Items, Block::Users, Block::Transform] {
                    let out = als_block_update(&mut model, &data, block, &cfg, Some(&reg)).unwrap();
                    assert!(
                        out.loss_after <= out.loss_before + 1e-10,
                        "{block}: {} -> {}",
                        out.loss_before,
                        out.loss_after
                    );
                }
            }
        }
    }

    #[test]
    fn neural_variants_are_rejected() {
        let data = dummy_tensor(2, 2, 2, 5);
        let features = FeatureMap::new(2, vec![vec![0], vec![1]]).unwrap();
        let cfg = TrainConfig {
            k: 2,
            hidden_dims: vec![4],
            ..TrainConfig::default()
        };
        let mut model =
            init_model(ModelKind::NcMf, &data, &features, &SideData::none(), &cfg).unwrap();
        assert!(als_block_update(&mut model, &data, Block::Users, &cfg, None).is_err());
    }
}
