//! Model variants and their shared scoring surface.
//!
//! Every variant scores a (user, item, constraint) triple; the linear family
//! does it with closed-form transforms, the neural family through a small
//! network head or a pair of towers. A model serializes to a versioned JSON
//! document whose float round-trip is lossless.

pub mod linear;
pub mod net;

use crate::constraint::ConstraintVector;
use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub use linear::{
    score_camf, score_constrained, score_full_transform, score_mf, score_weighted,
    transform_linear, ContextItemTable, DiagonalTransform, EmbeddingModel, WeightedTransform,
};
pub use net::{
    apply_net_grads, nc_transform, tower_embed, Activation, FeedForwardNet, GFeatureMap, Layer,
    NetGrads, TransformMode, TransformOut,
};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// The model families. Naming follows the transform each one learns:
/// weighted or diagonal slices, a neural transform head, or neural towers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mf,
    /// MF trained on data enlarged with sampled negatives; scores like MF.
    MfEnlarged,
    CamfCi,
    WcMf,
    DcMf,
    NcMf,
    NnMf,
    NcNnMf,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Mf => "mf",
            ModelKind::MfEnlarged => "mf_enlarged",
            ModelKind::CamfCi => "camf_ci",
            ModelKind::WcMf => "wc_mf",
            ModelKind::DcMf => "dc_mf",
            ModelKind::NcMf => "nc_mf",
            ModelKind::NnMf => "nn_mf",
            ModelKind::NcNnMf => "nc_nn_mf",
        }
    }

    pub fn is_neural(&self) -> bool {
        matches!(self, ModelKind::NcMf | ModelKind::NnMf | ModelKind::NcNnMf)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which side features feed the towers of the two-tower variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerIo {
    /// Constraint bits concatenated to both tower inputs; empty disables.
    pub c_bits: Vec<usize>,
    pub use_user_extras: bool,
    pub use_item_extras: bool,
}

impl TowerIo {
    pub fn ids_only() -> Self {
        TowerIo {
            c_bits: Vec::new(),
            use_user_extras: false,
            use_item_extras: false,
        }
    }

    fn c_features(&self, c: &ConstraintVector) -> Vec<f64> {
        self.c_bits
            .iter()
            .map(|&j| if c.is_set(j) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Variant-specific parameters beyond the shared embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ModelParams {
    Mf,
    MfEnlarged,
    CamfCi {
        table: ContextItemTable,
    },
    WcMf {
        alpha: WeightedTransform,
    },
    DcMf {
        diag: DiagonalTransform,
    },
    NcMf {
        net: FeedForwardNet,
        g: GFeatureMap,
        mode: TransformMode,
    },
    NnMf {
        user_tower: FeedForwardNet,
        item_tower: FeedForwardNet,
        io: TowerIo,
    },
    NcNnMf {
        user_tower: FeedForwardNet,
        item_tower: FeedForwardNet,
        net: FeedForwardNet,
        g: GFeatureMap,
        mode: TransformMode,
        io: TowerIo,
    },
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Mf => ModelKind::Mf,
            ModelParams::MfEnlarged => ModelKind::MfEnlarged,
            ModelParams::CamfCi { .. } => ModelKind::CamfCi,
            ModelParams::WcMf { .. } => ModelKind::WcMf,
            ModelParams::DcMf { .. } => ModelKind::DcMf,
            ModelParams::NcMf { .. } => ModelKind::NcMf,
            ModelParams::NnMf { .. } => ModelKind::NnMf,
            ModelParams::NcNnMf { .. } => ModelKind::NcNnMf,
        }
    }
}

/// Per-user and per-item continuous descriptors (e.g. normalized age) that
/// neural variants may feed to `g` or to the towers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SideData {
    pub user_extras: Option<Mat>,
    pub item_extras: Option<Mat>,
}

impl SideData {
    pub fn none() -> Self {
        SideData::default()
    }

    pub fn user_row(&self, u: usize) -> &[f64] {
        self.user_extras.as_ref().map_or(&[], |m| m.row(u))
    }

    pub fn item_row(&self, i: usize) -> &[f64] {
        self.item_extras.as_ref().map_or(&[], |m| m.row(i))
    }
}

/// A trained (or initialized) model: shared embeddings plus the variant's
/// transform or towers. For tower variants the embedding matrices hold the
/// id embeddings that feed the towers and the bias is unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub emb: EmbeddingModel,
    pub params: ModelParams,
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        self.params.kind()
    }

    pub fn k(&self) -> usize {
        self.emb.k
    }

    /// Score a (user, item, constraint) triple.
    pub fn score(&self, u: usize, i: usize, c: &ConstraintVector, side: &SideData) -> Result<f64> {
        match &self.params {
            ModelParams::Mf | ModelParams::MfEnlarged => score_mf(&self.emb, u, i),
            ModelParams::CamfCi { table } => score_camf(&self.emb, table, u, i, c),
            ModelParams::WcMf { alpha } => score_weighted(&self.emb, alpha, u, i, c),
            ModelParams::DcMf { diag } => {
                let t = transform_linear(diag, c)?;
                score_constrained(&self.emb, &t, u, i)
            }
            ModelParams::NcMf { net, g, mode } => {
                let feats = g.features(c, self.g_extras(g, u, side))?;
                match nc_transform(net, &feats, *mode, self.emb.k)? {
                    TransformOut::Diagonal(t) => score_constrained(&self.emb, &t, u, i),
                    TransformOut::Full(t) => score_full_transform(&self.emb, &t, u, i),
                }
            }
            ModelParams::NnMf {
                user_tower,
                item_tower,
                io,
            } => {
                self.emb.check_user(u)?;
                self.emb.check_item(i)?;
                let (eu, ei) = self.tower_pair(user_tower, item_tower, io, u, i, c, side)?;
                Ok(dot(&eu, &ei))
            }
            ModelParams::NcNnMf {
                user_tower,
                item_tower,
                net,
                g,
                mode,
                io,
            } => {
                self.emb.check_user(u)?;
                self.emb.check_item(i)?;
                let (eu, ei) = self.tower_pair(user_tower, item_tower, io, u, i, c, side)?;
                let feats = g.features(c, self.g_extras(g, u, side))?;
                match nc_transform(net, &feats, *mode, self.emb.k)? {
                    TransformOut::Diagonal(t) => {
                        Ok((0..self.emb.k).map(|x| eu[x] * t[x] * ei[x]).sum())
                    }
                    TransformOut::Full(t) => {
                        Ok((0..self.emb.k).map(|a| eu[a] * dot(t.row(a), &ei)).sum())
                    }
                }
            }
        }
    }

    fn g_extras<'a>(&self, g: &GFeatureMap, u: usize, side: &'a SideData) -> &'a [f64] {
        if g.extra_dims == 0 {
            &[]
        } else {
            side.user_row(u)
        }
    }

    fn tower_pair(
        &self,
        user_tower: &FeedForwardNet,
        item_tower: &FeedForwardNet,
        io: &TowerIo,
        u: usize,
        i: usize,
        c: &ConstraintVector,
        side: &SideData,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let cfeat = io.c_features(c);
        let mut user_side = Vec::new();
        if io.use_user_extras {
            user_side.extend_from_slice(side.user_row(u));
        }
        user_side.extend_from_slice(&cfeat);
        let mut item_side = Vec::new();
        if io.use_item_extras {
            item_side.extend_from_slice(side.item_row(i));
        }
        item_side.extend_from_slice(&cfeat);
        let eu = tower_embed(user_tower, self.emb.u.row(u), &user_side)?;
        let ei = tower_embed(item_tower, self.emb.p.row(i), &item_side)?;
        Ok((eu, ei))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = ModelFile {
            version: MODEL_FORMAT_VERSION,
            kind: self.kind(),
            model: self.clone(),
        };
        let json = serde_json::to_string_pretty(&doc)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = std::fs::read_to_string(path)?;
        let doc: ModelFile = serde_json::from_str(&text)?;
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model format version {}",
                doc.version
            )));
        }
        Ok(doc.model)
    }
}

/// On-disk model document.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    kind: ModelKind,
    model: Model,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn model_json_roundtrip_is_lossless() {
        let mut rng = crate::test_rng(13);
        let (m, n, k, d) = (4, 3, 5, 6);
        let emb = EmbeddingModel {
            k,
            u: Mat::from_fn(m, k, |_, _| rng.gen_range(-1.0..1.0)),
            p: Mat::from_fn(n, k, |_, _| rng.gen_range(-1.0..1.0)),
            b: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let model = Model {
            m,
            n,
            d,
            emb,
            params: ModelParams::DcMf {
                diag: DiagonalTransform::new(Mat::from_fn(k, d, |_, _| rng.gen_range(-1.0..1.0))),
            },
        };
        let dir = std::env::temp_dir().join("ctxmf_model_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        model.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        // Bitwise equality of all floats.
        assert_eq!(model, back);
    }

    #[test]
    fn nc_mf_score_matches_score_constrained() {
        // A diagonal-head model must agree with the linear scoring path for
        // whatever diagonal the net produces.
        let mut rng = crate::test_rng(29);
        let (m, n, k, d) = (3, 3, 4, 3);
        let emb = EmbeddingModel {
            k,
            u: Mat::from_fn(m, k, |_, _| rng.gen_range(-1.0..1.0)),
            p: Mat::from_fn(n, k, |_, _| rng.gen_range(-1.0..1.0)),
            b: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let net = FeedForwardNet::glorot(&[d, 6, k], &mut rng).unwrap();
        let g = GFeatureMap::all_bits(d);
        let model = Model {
            m,
            n,
            d,
            emb: emb.clone(),
            params: ModelParams::NcMf {
                net: net.clone(),
                g: g.clone(),
                mode: TransformMode::Diagonal,
            },
        };
        let c = ConstraintVector::new(d, [0, 2]).unwrap();
        let feats = g.features(&c, &[]).unwrap();
        let t = net.forward(&feats).unwrap();
        let expect = score_constrained(&emb, &t, 1, 2).unwrap();
        let got = model.score(1, 2, &c, &SideData::none()).unwrap();
        assert!((expect - got).abs() < 1e-15);
    }

    #[test]
    fn nc_nn_with_identity_towers_reduces_to_nc() {
        // Towers that pass the id embeddings through unchanged, zero user
        // bias: the two-tower transform variant must reproduce NC-MF.
        let mut rng = crate::test_rng(31);
        let (m, n, k, d) = (3, 4, 3, 4);
        let emb = EmbeddingModel {
            k,
            u: Mat::from_fn(m, k, |_, _| rng.gen_range(-1.0..1.0)),
            p: Mat::from_fn(n, k, |_, _| rng.gen_range(-1.0..1.0)),
            b: vec![0.0; m],
        };
        let ident = || {
            FeedForwardNet::from_layers(vec![net::Layer {
                w: Mat::from_fn(k, k, |r, c| if r == c { 1.0 } else { 0.0 }),
                b: vec![0.0; k],
                act: Activation::Identity,
            }])
            .unwrap()
        };
        let head = FeedForwardNet::glorot(&[d, 5, k], &mut rng).unwrap();
        let g = GFeatureMap::all_bits(d);
        let nc = Model {
            m,
            n,
            d,
            emb: emb.clone(),
            params: ModelParams::NcMf {
                net: head.clone(),
                g: g.clone(),
                mode: TransformMode::Diagonal,
            },
        };
        let ncnn = Model {
            m,
            n,
            d,
            emb,
            params: ModelParams::NcNnMf {
                user_tower: ident(),
                item_tower: ident(),
                net: head,
                g,
                mode: TransformMode::Diagonal,
                io: TowerIo::ids_only(),
            },
        };
        let side = SideData::none();
        for _ in 0..20 {
            let u = rng.gen_range(0..m);
            let i = rng.gen_range(0..n);
            let c = ConstraintVector::new(d, [rng.gen_range(0..d)]).unwrap();
            let a = nc.score(u, i, &c, &side).unwrap();
            let b = ncnn.score(u, i, &c, &side).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn kind_tags_are_stable() {
        assert_eq!(
            serde_json::to_string(&ModelKind::DcMf).unwrap(),
            "\"dc_mf\""
        );
        assert_eq!(ModelKind::NcNnMf.to_string(), "nc_nn_mf");
    }
}
