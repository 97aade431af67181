//! Minibatch gradient descent for the neural variants (NC-MF, NN-MF,
//! NC-NN-MF). Gradients are hand-derived per variant and flow through the
//! network heads via manual backpropagation.

use crate::constraint::InteractionTensor;
use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};
use crate::model::{apply_net_grads, Model, ModelParams, NetGrads, SideData, TransformMode};
use crate::train::als::penalized_loss;
use crate::train::TrainConfig;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One shuffled pass of minibatch steps over the weighted squared loss.
/// Returns the penalized loss after the epoch. Aborts with a diagnostic if
/// any gradient goes non-finite.
pub fn sgd_epoch(
    model: &mut Model,
    data: &InteractionTensor,
    side: &SideData,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if !model.kind().is_neural() {
        return Err(Error::InvalidConfig(format!(
            "sgd training applies to neural variants, not {}",
            model.kind()
        )));
    }
    let t = data.len().max(1) as f64;
    let mut order: Vec<usize> = (0..data.len()).collect();
    // Fisher-Yates from the epoch RNG.
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }

    let (m, n, k) = (model.m, model.n, model.emb.k);
    let mut du = Mat::zeros(m, k);
    let mut dp = Mat::zeros(n, k);
    let mut db = vec![0.0; m];

    for batch in order.chunks(cfg.batch_size.max(1)) {
        du.data_mut().fill(0.0);
        dp.data_mut().fill(0.0);
        db.fill(0.0);
        let mut net_grads = init_net_grads(model);

        for &ri in batch {
            let rec = &data.records()[ri];
            accumulate_record(model, rec, side, &mut du, &mut dp, &mut db, &mut net_grads)?;
        }
        if !du.is_finite() || !dp.is_finite() || !net_grads.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite(
                "gradient exploded during sgd batch".into(),
            ));
        }

        let lr = cfg.learning_rate;
        let inv_batch = 1.0 / batch.len() as f64;
        for (w, g) in model.emb.u.data_mut().iter_mut().zip(du.data()) {
            *w -= lr * inv_batch * g;
        }
        for (w, g) in model.emb.p.data_mut().iter_mut().zip(dp.data()) {
            *w -= lr * inv_batch * g;
        }
        for (b, g) in model.emb.b.iter_mut().zip(&db) {
            *b -= lr * inv_batch * g;
        }
        // L2 decay on the embedding matrices, spread across the epoch's
        // batches; tower variants carry no penalty.
        if matches!(model.params, ModelParams::NcMf { .. }) && cfg.lambda > 0.0 {
            let decay = lr * cfg.lambda * batch.len() as f64 / t;
            for w in model.emb.u.data_mut() {
                *w -= decay * *w;
            }
            for w in model.emb.p.data_mut() {
                *w -= decay * *w;
            }
        }
        apply_all_net_grads(model, &net_grads, lr * inv_batch);
    }
    penalized_loss(model, data, side, cfg.lambda, None)
}

fn init_net_grads(model: &Model) -> Vec<NetGrads> {
    match &model.params {
        ModelParams::NcMf { net, .. } => vec![NetGrads::zeros_like(net)],
        ModelParams::NnMf {
            user_tower,
            item_tower,
            ..
        } => vec![
            NetGrads::zeros_like(user_tower),
            NetGrads::zeros_like(item_tower),
        ],
        ModelParams::NcNnMf {
            user_tower,
            item_tower,
            net,
            ..
        } => vec![
            NetGrads::zeros_like(user_tower),
            NetGrads::zeros_like(item_tower),
            NetGrads::zeros_like(net),
        ],
        _ => Vec::new(),
    }
}

fn apply_all_net_grads(model: &mut Model, grads: &[NetGrads], lr: f64) {
    match &mut model.params {
        ModelParams::NcMf { net, .. } => apply_net_grads(net, &grads[0], lr),
        ModelParams::NnMf {
            user_tower,
            item_tower,
            ..
        } => {
            apply_net_grads(user_tower, &grads[0], lr);
            apply_net_grads(item_tower, &grads[1], lr);
        }
        ModelParams::NcNnMf {
            user_tower,
            item_tower,
            net,
            ..
        } => {
            apply_net_grads(user_tower, &grads[0], lr);
            apply_net_grads(item_tower, &grads[1], lr);
            apply_net_grads(net, &grads[2], lr);
        }
        _ => {}
    }
}

fn accumulate_record(
    model: &Model,
    rec: &crate::constraint::Interaction,
    side: &SideData,
    du: &mut Mat,
    dp: &mut Mat,
    db: &mut [f64],
    net_grads: &mut [NetGrads],
) -> Result<()> {
    let k = model.emb.k;
    let (u, i) = (rec.user, rec.item);
    match &model.params {
        ModelParams::NcMf { net, g, mode } => {
            let extras = if g.extra_dims == 0 {
                &[][..]
            } else {
                side.user_row(u)
            };
            let feats = g.features(&rec.constraint, extras)?;
            let cache = net.forward_cached(&feats)?;
            let out = cache.output().to_vec();
            let uu = model.emb.u.row(u);
            let pp = model.emb.p.row(i);
            let s = match mode {
                TransformMode::Diagonal => {
                    (0..k).map(|x| uu[x] * out[x] * pp[x]).sum::<f64>() + model.emb.b[u]
                }
                TransformMode::Full => {
                    let mut s = model.emb.b[u];
                    for a in 0..k {
                        for b in 0..k {
                            s += uu[a] * out[a * k + b] * pp[b];
                        }
                    }
                    s
                }
            };
            let gs = 2.0 * rec.weight * (s - rec.reward);
            let mut up = vec![0.0; out.len()];
            match mode {
                TransformMode::Diagonal => {
                    let du_row = du.row_mut(u);
                    for x in 0..k {
                        du_row[x] += gs * out[x] * pp[x];
                        up[x] = gs * uu[x] * pp[x];
                    }
                    let dp_row = dp.row_mut(i);
                    for x in 0..k {
                        dp_row[x] += gs * uu[x] * out[x];
                    }
                }
                TransformMode::Full => {
                    let du_row = du.row_mut(u);
                    for a in 0..k {
                        let mut acc = 0.0;
                        for b in 0..k {
                            acc += out[a * k + b] * pp[b];
                            up[a * k + b] = gs * uu[a] * pp[b];
                        }
                        du_row[a] += gs * acc;
                    }
                    let dp_row = dp.row_mut(i);
                    for b in 0..k {
                        let mut acc = 0.0;
                        for a in 0..k {
                            acc += uu[a] * out[a * k + b];
                        }
                        dp_row[b] += gs * acc;
                    }
                }
            }
            db[u] += gs;
            let (g_net, _) = net.backward(&cache, &up)?;
            net_grads[0].add(&g_net);
        }
        ModelParams::NnMf {
            user_tower,
            item_tower,
            io,
        } => {
            let (user_in, item_in) = tower_inputs(model, io, u, i, &rec.constraint, side);
            let cu = user_tower.forward_cached(&user_in)?;
            let ci = item_tower.forward_cached(&item_in)?;
            let eu = cu.output().to_vec();
            let ei = ci.output().to_vec();
            let s = dot(&eu, &ei);
            let gs = 2.0 * rec.weight * (s - rec.reward);
            let up_u: Vec<f64> = ei.iter().map(|v| gs * v).collect();
            let up_i: Vec<f64> = eu.iter().map(|v| gs * v).collect();
            let (g_u, din_u) = user_tower.backward(&cu, &up_u)?;
            let (g_i, din_i) = item_tower.backward(&ci, &up_i)?;
            net_grads[0].add(&g_u);
            net_grads[1].add(&g_i);
            for (slot, g) in du.row_mut(u).iter_mut().zip(&din_u[..k]) {
                *slot += g;
            }
            for (slot, g) in dp.row_mut(i).iter_mut().zip(&din_i[..k]) {
                *slot += g;
            }
        }
        ModelParams::NcNnMf {
            user_tower,
            item_tower,
            net,
            g,
            mode,
            io,
        } => {
            let (user_in, item_in) = tower_inputs(model, io, u, i, &rec.constraint, side);
            let cu = user_tower.forward_cached(&user_in)?;
            let ci = item_tower.forward_cached(&item_in)?;
            let eu = cu.output().to_vec();
            let ei = ci.output().to_vec();
            let extras = if g.extra_dims == 0 {
                &[][..]
            } else {
                side.user_row(u)
            };
            let feats = g.features(&rec.constraint, extras)?;
            let ct = net.forward_cached(&feats)?;
            let tv = ct.output().to_vec();

            let (s, up_u, up_i, up_t) = match mode {
                TransformMode::Diagonal => {
                    let s: f64 = (0..k).map(|x| eu[x] * tv[x] * ei[x]).sum();
                    (
                        s,
                        (0..k).map(|x| tv[x] * ei[x]).collect::<Vec<f64>>(),
                        (0..k).map(|x| tv[x] * eu[x]).collect::<Vec<f64>>(),
                        (0..k).map(|x| eu[x] * ei[x]).collect::<Vec<f64>>(),
                    )
                }
                TransformMode::Full => {
                    let mut s = 0.0;
                    let mut up_u = vec![0.0; k];
                    let mut up_i = vec![0.0; k];
                    let mut up_t = vec![0.0; k * k];
                    for a in 0..k {
                        for b in 0..k {
                            let tab = tv[a * k + b];
                            s += eu[a] * tab * ei[b];
                            up_u[a] += tab * ei[b];
                            up_i[b] += eu[a] * tab;
                            up_t[a * k + b] = eu[a] * ei[b];
                        }
                    }
                    (s, up_u, up_i, up_t)
                }
            };
            let gs = 2.0 * rec.weight * (s - rec.reward);
            let scale = |v: Vec<f64>| v.into_iter().map(|x| gs * x).collect::<Vec<f64>>();
            let (g_u, din_u) = user_tower.backward(&cu, &scale(up_u))?;
            let (g_i, din_i) = item_tower.backward(&ci, &scale(up_i))?;
            let (g_t, _) = net.backward(&ct, &scale(up_t))?;
            net_grads[0].add(&g_u);
            net_grads[1].add(&g_i);
            net_grads[2].add(&g_t);
            for (slot, g) in du.row_mut(u).iter_mut().zip(&din_u[..k]) {
                *slot += g;
            }
            for (slot, g) in dp.row_mut(i).iter_mut().zip(&din_i[..k]) {
                *slot += g;
            }
        }
        _ => unreachable!("linear variants rejected by sgd_epoch"),
    }
    Ok(())
}

fn tower_inputs(
    model: &Model,
    io: &crate::model::TowerIo,
    u: usize,
    i: usize,
    c: &crate::constraint::ConstraintVector,
    side: &SideData,
) -> (Vec<f64>, Vec<f64>) {
    let cfeat: Vec<f64> = io
        .c_bits
        .iter()
        .map(|&j| if c.is_set(j) { 1.0 } else { 0.0 })
        .collect();
    let mut user_in = model.emb.u.row(u).to_vec();
    if io.use_user_extras {
        user_in.extend_from_slice(side.user_row(u));
    }
    user_in.extend_from_slice(&cfeat);
    let mut item_in = model.emb.p.row(i).to_vec();
    if io.use_item_extras {
        item_in.extend_from_slice(side.item_row(i));
    }
    item_in.extend_from_slice(&cfeat);
    (user_in, item_in)
}
