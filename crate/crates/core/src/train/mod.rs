//! Optimization: alternating exact block updates for the linear family,
//! minibatch SGD for the neural family, warm starts, negative sampling and
//! class reweighting. Everything is deterministic for a fixed seed.

pub mod als;
pub mod sampling;
pub mod sgd;
pub mod warm;

pub use als::{als_block_update, penalized_loss, Block, BlockOutcome, RegContext};
pub use sampling::{
    inverse_class_weights, reweight_classes, sample_training_negatives, NegativeStrategy,
    SamplingReport,
};
pub use sgd::sgd_epoch;
pub use warm::{
    cooccurrence_objective, cooccurrence_regularizer, feature_overlap_objective,
    minimize_cooccurrence, minimize_feature_overlap, warm_start_cooccurrence,
    warm_start_feature_overlap,
};

use crate::constraint::{build_cooccurrence, FeatureMap, InteractionTensor};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{
    ContextItemTable, DiagonalTransform, EmbeddingModel, FeedForwardNet, GFeatureMap, Model,
    ModelKind, ModelParams, SideData, TowerIo, TransformMode, WeightedTransform,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    None,
    FeatureOverlap,
    Cooccurrence,
}

/// Training configuration, read from JSON. Fields not present in the file
/// take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Embedding size.
    pub k: usize,
    /// L2 coefficient on the embedding matrices (and CAMF's context table).
    pub lambda: f64,
    /// Full alternating cycles, or SGD epochs for neural variants.
    pub iterations: usize,
    /// Cap on sweeps inside a coupled block update.
    pub steps_per_block: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Half-width of the uniform embedding initialization.
    pub init_scale: f64,
    pub positive_weight: f64,
    pub negative_weight: f64,
    pub warm_start: WarmStart,
    pub cooccurrence_reg_strength: f64,
    /// Hidden layer widths for the network heads and towers.
    pub hidden_dims: Vec<usize>,
    pub transform_mode: TransformMode,
    /// Negatives per positive for the data-enlargement baseline.
    pub enlargement_ratio: f64,
    /// Bucket-sampled training negatives per positive for any variant.
    /// Positives-only data needs this: exact block minimization on all-ones
    /// targets otherwise collapses to the constant predictor.
    pub train_negative_ratio: f64,
    /// Reweight classes to inverse frequencies before training.
    pub auto_class_weights: bool,
    /// Constraint bits fed to `g` and to the tower inputs; `None` means all.
    pub context_bits: Option<Vec<usize>>,
    /// Append the per-user continuous descriptors to `g` / the user tower.
    pub context_user_extras: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 100,
            lambda: 0.1,
            iterations: 10,
            steps_per_block: 100,
            learning_rate: 0.01,
            batch_size: 128,
            seed: 0,
            init_scale: 0.1,
            positive_weight: 1.0,
            negative_weight: 1.0,
            warm_start: WarmStart::None,
            cooccurrence_reg_strength: 0.0,
            hidden_dims: vec![64],
            transform_mode: TransformMode::Diagonal,
            enlargement_ratio: 1.0,
            train_negative_ratio: 0.0,
            auto_class_weights: false,
            context_bits: None,
            context_user_extras: false,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<TrainConfig> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub block: String,
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Per-block loss bookkeeping across a training run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss_after)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "iteration,block,loss_before,loss_after")?;
        for row in &self.rows {
            writeln!(
                f,
                "{},{},{},{}",
                row.iteration, row.block, row.loss_before, row.loss_after
            )?;
        }
        Ok(())
    }
}

/// Build an initialized (untrained) model for the given variant. The RNG
/// stream is fixed per seed: embeddings first, then any network parameters,
/// so identical configs produce identical models.
pub fn init_model(
    kind: ModelKind,
    data: &InteractionTensor,
    features: &FeatureMap,
    side: &SideData,
    cfg: &TrainConfig,
) -> Result<Model> {
    let (m, n, d, k) = (data.m(), data.n(), data.d(), cfg.k);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s = cfg.init_scale;
    // Biases start at the global mean reward; it is the 0-dimensional fit,
    // and it spares sparsely observed users a long bias climb under SGD.
    let mean_reward = if data.is_empty() {
        0.0
    } else {
        data.records().iter().map(|r| r.reward).sum::<f64>() / data.len() as f64
    };
    let emb = EmbeddingModel {
        k,
        u: Mat::from_fn(m, k, |_, _| rng.gen_range(-s..s)),
        p: Mat::from_fn(n, k, |_, _| rng.gen_range(-s..s)),
        b: vec![mean_reward; m],
    };
    let user_extra_dims = side.user_extras.as_ref().map_or(0, |m| m.cols());
    let g_map = || -> GFeatureMap {
        GFeatureMap {
            d,
            bits: cfg.context_bits.clone(),
            extra_dims: if cfg.context_user_extras {
                user_extra_dims
            } else {
                0
            },
        }
    };
    let head_out = match cfg.transform_mode {
        TransformMode::Diagonal => k,
        TransformMode::Full => k * k,
    };
    let net_dims = |input: usize, out: usize| -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(&cfg.hidden_dims);
        dims.push(out);
        dims
    };
    let params = match kind {
        ModelKind::Mf => ModelParams::Mf,
        ModelKind::MfEnlarged => ModelParams::MfEnlarged,
        ModelKind::CamfCi => ModelParams::CamfCi {
            table: ContextItemTable::zeros_from(features),
        },
        ModelKind::WcMf => ModelParams::WcMf {
            alpha: WeightedTransform::ones(d),
        },
        ModelKind::DcMf => {
            // Warm starts minimize their objective from the seed's random
            // draw. Starting at all-ones would also be a global minimum, but
            // it pins the transform to the identity and exact alternating
            // solves then have no symmetry to break; the random-start
            // minimum keeps co-occurring columns near-equal while leaving
            // per-dimension structure for training to use.
            let start = Mat::from_fn(k, d, |_, _| rng.gen_range(-1.0..1.0));
            let diag = match cfg.warm_start {
                WarmStart::None => DiagonalTransform::new(start),
                WarmStart::FeatureOverlap => {
                    let catalog = data.unique_constraints();
                    if catalog.is_empty() {
                        return Err(Error::InvalidConfig(
                            "feature-overlap warm start needs observed constraints".into(),
                        ));
                    }
                    DiagonalTransform::new(minimize_feature_overlap(start, &catalog, 500, 1e-3))
                }
                WarmStart::Cooccurrence => {
                    let stats = build_cooccurrence(data);
                    DiagonalTransform::new(minimize_cooccurrence(start, &stats, 500, 1e-6))
                }
            };
            ModelParams::DcMf { diag }
        }
        ModelKind::NcMf => {
            let g = g_map();
            ModelParams::NcMf {
                net: FeedForwardNet::glorot(&net_dims(g.output_dim(), head_out), &mut rng)?,
                g,
                mode: cfg.transform_mode,
            }
        }
        ModelKind::NnMf => {
            let c_bits = cfg.context_bits.clone().unwrap_or_else(|| (0..d).collect());
            let io = TowerIo {
                c_bits,
                use_user_extras: cfg.context_user_extras && user_extra_dims > 0,
                use_item_extras: side.item_extras.is_some(),
            };
            let item_extra_dims = side.item_extras.as_ref().map_or(0, |m| m.cols());
            let user_in =
                k + if io.use_user_extras {
                    user_extra_dims
                } else {
                    0
                } + io.c_bits.len();
            let item_in =
                k + if io.use_item_extras {
                    item_extra_dims
                } else {
                    0
                } + io.c_bits.len();
            ModelParams::NnMf {
                user_tower: FeedForwardNet::glorot(&net_dims(user_in, k), &mut rng)?,
                item_tower: FeedForwardNet::glorot(&net_dims(item_in, k), &mut rng)?,
                io,
            }
        }
        ModelKind::NcNnMf => {
            // Context features are transform-only here: the towers see ids.
            let g = g_map();
            ModelParams::NcNnMf {
                user_tower: FeedForwardNet::glorot(&net_dims(k, k), &mut rng)?,
                item_tower: FeedForwardNet::glorot(&net_dims(k, k), &mut rng)?,
                net: FeedForwardNet::glorot(&net_dims(g.output_dim(), head_out), &mut rng)?,
                g,
                mode: cfg.transform_mode,
                io: TowerIo::ids_only(),
            }
        }
    };
    Ok(Model {
        m,
        n,
        d,
        emb,
        params,
    })
}

/// Fit an initialized model in place. Linear variants run alternating block
/// cycles in the order items, users, transform; neural variants run SGD
/// epochs. `on_iter` fires after every completed iteration.
pub fn fit(
    model: &mut Model,
    data: &InteractionTensor,
    side: &SideData,
    cfg: &TrainConfig,
    mut on_iter: impl FnMut(usize, &Model),
) -> Result<TrainTrace> {
    let mut trace = TrainTrace::default();
    if model.kind().is_neural() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        let mut prev = penalized_loss(model, data, side, cfg.lambda, None)?;
        for epoch in 1..=cfg.iterations {
            let after = sgd_epoch(model, data, side, cfg, &mut rng)?;
            trace.rows.push(TraceRow {
                iteration: epoch,
                block: "epoch".into(),
                loss_before: prev,
                loss_after: after,
            });
            prev = after;
            on_iter(epoch, model);
        }
        return Ok(trace);
    }

    let stats;
    let reg = if matches!(model.kind(), ModelKind::DcMf) && cfg.cooccurrence_reg_strength > 0.0 {
        stats = build_cooccurrence(data);
        Some(RegContext {
            stats: &stats,
            strength: cfg.cooccurrence_reg_strength,
        })
    } else {
        None
    };
    for iteration in 1..=cfg.iterations {
        for block in [Block::Items, Block::Users, Block::Transform] {
            let outcome = als_block_update(model, data, block, cfg, reg.as_ref())?;
            trace.rows.push(TraceRow {
                iteration,
                block: block.to_string(),
                loss_before: outcome.loss_before,
                loss_after: outcome.loss_after,
            });
        }
        on_iter(iteration, model);
    }
    Ok(trace)
}

/// Initialize and fit a model variant end to end: class reweighting when
/// configured, data enlargement for the enlargement baseline, warm start,
/// then the optimization loop.
pub fn train(
    kind: ModelKind,
    data: &InteractionTensor,
    features: &FeatureMap,
    side: &SideData,
    cfg: &TrainConfig,
    on_iter: impl FnMut(usize, &Model),
) -> Result<(Model, TrainTrace)> {
    let mut working = data.clone();
    let sample_ratio = if kind == ModelKind::MfEnlarged {
        cfg.enlargement_ratio
    } else {
        cfg.train_negative_ratio
    };
    if sample_ratio > 0.0 {
        let (enlarged, _report) = sample_training_negatives(
            &working,
            features,
            NegativeStrategy::TimeBucket,
            sample_ratio,
            cfg.seed.wrapping_add(0x5eed),
        )?;
        working = enlarged;
    }
    if cfg.auto_class_weights {
        let (wp, wn) = inverse_class_weights(&working)?;
        working = reweight_classes(&working, wp, wn)?;
    } else if cfg.positive_weight != 1.0 || cfg.negative_weight != 1.0 {
        working = reweight_classes(&working, cfg.positive_weight, cfg.negative_weight)?;
    }
    let mut model = init_model(kind, &working, features, side, cfg)?;
    let mut trace = TrainTrace::default();
    // The warm start's cost is comparable to one training iteration; give
    // it a row so traces account for it.
    if kind == ModelKind::DcMf && cfg.warm_start != WarmStart::None {
        let loss = penalized_loss(&model, &working, side, cfg.lambda, None)?;
        trace.rows.push(TraceRow {
            iteration: 0,
            block: "warm_start".into(),
            loss_before: loss,
            loss_after: loss,
        });
    }
    let fitted = fit(&mut model, &working, side, cfg, on_iter)?;
    trace.rows.extend(fitted.rows);
    if !model.emb.u.is_finite() || !model.emb.p.is_finite() {
        return Err(Error::NonFinite("trained embeddings are not finite".into()));
    }
    Ok((model, trace))
}
