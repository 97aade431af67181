//! Minimal feedforward network with manual backpropagation. This powers the
//! neural constraint transform, the two-tower embedding models, and nothing
//! else: a couple of affine layers with relu in between is all the capacity
//! these small datasets can support.

use crate::constraint::ConstraintVector;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative as a function of the pre-activation value.
    fn grad(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Weights, out-by-in row-major.
    pub w: Mat,
    pub b: Vec<f64>,
    pub act: Activation,
}

/// Layered affine-plus-activation network. Hidden layers are relu; the final
/// layer is identity so transform outputs stay unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardNet {
    layers: Vec<Layer>,
}

impl FeedForwardNet {
    /// Build from explicit layers, validating the dimension chain and the
    /// identity output activation.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig(
                "network needs at least one layer".into(),
            ));
        }
        for pair in layers.windows(2) {
            if pair[1].w.cols() != pair[0].w.rows() {
                return Err(Error::DimensionMismatch {
                    what: "layer chaining",
                    expected: pair[0].w.rows(),
                    got: pair[1].w.cols(),
                });
            }
        }
        for layer in &layers {
            if layer.b.len() != layer.w.rows() {
                return Err(Error::DimensionMismatch {
                    what: "layer bias",
                    expected: layer.w.rows(),
                    got: layer.b.len(),
                });
            }
        }
        if layers.last().unwrap().act != Activation::Identity {
            return Err(Error::InvalidConfig(
                "final layer activation must be identity".into(),
            ));
        }
        Ok(FeedForwardNet { layers })
    }

    /// Glorot-uniform initialized network: hidden layers relu, identity
    /// output. `dims` runs input..output, e.g. `[p, 64, k]`.
    pub fn glorot(dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig("need input and output dims".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (idx, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Mat::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..bound));
            let act = if idx + 1 == dims.len() - 1 {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(Layer {
                w,
                b: vec![0.0; fan_out],
                act,
            });
        }
        FeedForwardNet::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.output().to_vec())
    }

    /// Forward pass keeping the per-layer pre-activations needed by
    /// `backward`. The cache ties the backward pass to this exact input.
    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "network input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut z = layer.b.clone();
            for (out, zslot) in z.iter_mut().enumerate() {
                let wrow = layer.w.row(out);
                for (inp, &xi) in cur.iter().enumerate() {
                    *zslot += wrow[inp] * xi;
                }
            }
            let a: Vec<f64> = z.iter().map(|&v| layer.act.apply(v)).collect();
            pre.push(z);
            cur = a.clone();
            post.push(a);
        }
        Ok(ForwardCache {
            input: x.to_vec(),
            pre,
            post,
        })
    }

    /// Backpropagate `d loss / d output` through the cached pass, returning
    /// gradients for every weight and bias plus the gradient at the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<(NetGrads, Vec<f64>)> {
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                what: "upstream gradient",
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let mut grads = NetGrads::zeros_like(self);
        let mut delta = upstream.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[li];
            for (slot, &z) in delta.iter_mut().zip(pre) {
                *slot *= layer.act.grad(z);
            }
            let below: &[f64] = if li == 0 {
                &cache.input
            } else {
                &cache.post[li - 1]
            };
            let g = &mut grads.layers[li];
            for (out, &dz) in delta.iter().enumerate() {
                g.1[out] += dz;
                let grow = g.0.row_mut(out);
                for (inp, &xi) in below.iter().enumerate() {
                    grow[inp] += dz * xi;
                }
            }
            let mut next = vec![0.0; layer.w.cols()];
            for (out, &dz) in delta.iter().enumerate() {
                let wrow = layer.w.row(out);
                for (inp, slot) in next.iter_mut().enumerate() {
                    *slot += dz * wrow[inp];
                }
            }
            delta = next;
        }
        Ok((grads, delta))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.is_finite() && l.b.iter().all(|v| v.is_finite()))
    }
}

/// Activations recorded during one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("nonempty network")
    }
}

/// Parameter gradients shaped like the network: one (weights, bias) pair per
/// layer. Used as an accumulator across a minibatch.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub layers: Vec<(Mat, Vec<f64>)>,
}

impl NetGrads {
    pub fn zeros_like(net: &FeedForwardNet) -> Self {
        NetGrads {
            layers: net
                .layers
                .iter()
                .map(|l| (Mat::zeros(l.w.rows(), l.w.cols()), vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    pub fn add(&mut self, other: &NetGrads) {
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            for (a, b) in mine.0.data_mut().iter_mut().zip(theirs.0.data()) {
                *a += b;
            }
            for (a, b) in mine.1.iter_mut().zip(&theirs.1) {
                *a += b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.is_finite() && b.iter().all(|v| v.is_finite()))
    }
}

/// Apply one descent step `param -= lr * grad`.
pub fn apply_net_grads(net: &mut FeedForwardNet, grads: &NetGrads, lr: f64) {
    for (layer, (gw, gb)) in net.layers.iter_mut().zip(&grads.layers) {
        for (w, g) in layer.w.data_mut().iter_mut().zip(gw.data()) {
            *w -= lr * g;
        }
        for (b, g) in layer.b.iter_mut().zip(gb) {
            *b -= lr * g;
        }
    }
}

/// How the network output is interpreted as a transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformMode {
    /// Output of length k is the diagonal of T.
    Diagonal,
    /// Output of length k*k is T row-major.
    Full,
}

/// A transform produced by the neural head.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformOut {
    Diagonal(Vec<f64>),
    Full(Mat),
}

/// Run the transform head on the constraint features and shape the output
/// according to the configured mode.
pub fn nc_transform(
    net: &FeedForwardNet,
    g_c: &[f64],
    mode: TransformMode,
    k: usize,
) -> Result<TransformOut> {
    match mode {
        TransformMode::Diagonal => {
            if net.output_dim() != k {
                return Err(Error::InvalidConfig(format!(
                    "diagonal transform head must output k={k}, has {}",
                    net.output_dim()
                )));
            }
            Ok(TransformOut::Diagonal(net.forward(g_c)?))
        }
        TransformMode::Full => {
            if net.output_dim() != k * k {
                return Err(Error::InvalidConfig(format!(
                    "full transform head must output k*k={}, has {}",
                    k * k,
                    net.output_dim()
                )));
            }
            let flat = net.forward(g_c)?;
            Ok(TransformOut::Full(Mat::from_fn(k, k, |r, c| {
                flat[r * k + c]
            })))
        }
    }
}

/// Tower forward pass: the id embedding concatenated with side features runs
/// through the tower net to produce a k-dimensional embedding.
pub fn tower_embed(
    net: &FeedForwardNet,
    id_embedding: &[f64],
    side_features: &[f64],
) -> Result<Vec<f64>> {
    let mut input = Vec::with_capacity(id_embedding.len() + side_features.len());
    input.extend_from_slice(id_embedding);
    input.extend_from_slice(side_features);
    net.forward(&input)
}

/// Constraint feature map `g`: selected bits of the constraint as 0/1 values,
/// optionally followed by per-record continuous descriptors (for example a
/// normalized user age). Deterministic with a fixed output length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GFeatureMap {
    pub d: usize,
    /// Bits of the constraint included in the features; `None` means all d.
    pub bits: Option<Vec<usize>>,
    /// Number of continuous descriptors appended after the bits.
    pub extra_dims: usize,
}

impl GFeatureMap {
    pub fn all_bits(d: usize) -> Self {
        GFeatureMap {
            d,
            bits: None,
            extra_dims: 0,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.bits.as_ref().map_or(self.d, |b| b.len()) + self.extra_dims
    }

    pub fn features(&self, c: &ConstraintVector, extras: &[f64]) -> Result<Vec<f64>> {
        if c.d() != self.d {
            return Err(Error::DimensionMismatch {
                what: "g constraint",
                expected: self.d,
                got: c.d(),
            });
        }
        if extras.len() != self.extra_dims {
            return Err(Error::DimensionMismatch {
                what: "g extras",
                expected: self.extra_dims,
                got: extras.len(),
            });
        }
        let mut out = Vec::with_capacity(self.output_dim());
        match &self.bits {
            None => {
                let mut dense = vec![0.0; self.d];
                for &j in c.active() {
                    dense[j] = 1.0;
                }
                out.extend(dense);
            }
            Some(bits) => {
                for &j in bits {
                    out.push(if c.is_set(j) { 1.0 } else { 0.0 });
                }
            }
        }
        out.extend_from_slice(extras);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use rand::Rng;

    fn identity_layer(n: usize) -> Layer {
        Layer {
            w: Mat::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 }),
            b: vec![0.0; n],
            act: Activation::Identity,
        }
    }

    #[test]
    fn forward_identity_layer() {
        let net = FeedForwardNet::from_layers(vec![identity_layer(3)]).unwrap();
        let x = [0.5, -1.0, 2.0];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn relu_clamps_negative_inputs() {
        let net = FeedForwardNet::from_layers(vec![
            Layer {
                w: Mat::from_fn(2, 2, |r, c| if r == c { 1.0 } else { 0.0 }),
                b: vec![0.0; 2],
                act: Activation::Relu,
            },
            identity_layer(2),
        ])
        .unwrap();
        assert_eq!(net.forward(&[-1.0, -3.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_two_layer_hand_computed() {
        // Per-neuron walk-through:
        //   z1 = [1*1 + 2*(-1) + 0.5, 0*1 + 1*(-1) - 0.25] = [-0.5, -1.25]
        //   a1 = relu(z1) = [0, 0] ... second probe uses positive inputs:
        //   x = [2, 1]: z1 = [2*1 + 1*2 + 0.5, 1*1 - 0.25] = [4.5, 0.75]
        //   out = [1*4.5 - 1*0.75 + 0.1] = [3.85]
        let net = FeedForwardNet::from_layers(vec![
            Layer {
                w: Mat::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]),
                b: vec![0.5, -0.25],
                act: Activation::Relu,
            },
            Layer {
                w: Mat::from_rows(&[vec![1.0, -1.0]]),
                b: vec![0.1],
                act: Activation::Identity,
            },
        ])
        .unwrap();
        let y = net.forward(&[1.0, -1.0]).unwrap();
        assert!((y[0] - 0.1).abs() < 1e-15, "both neurons inactive: {y:?}");
        let y = net.forward(&[2.0, 1.0]).unwrap();
        assert!((y[0] - 3.85).abs() < 1e-12, "{y:?}");
    }

    #[test]
    fn forward_dimension_error() {
        let net = FeedForwardNet::from_layers(vec![identity_layer(3)]).unwrap();
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn final_layer_must_be_identity() {
        let layer = Layer {
            w: Mat::zeros(2, 2),
            b: vec![0.0; 2],
            act: Activation::Relu,
        };
        assert!(FeedForwardNet::from_layers(vec![layer]).is_err());
    }

    #[test]
    fn backward_linear_layer_outer_product() {
        // loss = sum of outputs => dW = outer(1, x), db = 1, dx = col sums.
        let net = FeedForwardNet::from_layers(vec![Layer {
            w: Mat::from_rows(&[vec![2.0, -1.0], vec![0.5, 3.0]]),
            b: vec![0.0; 2],
            act: Activation::Identity,
        }])
        .unwrap();
        let x = [0.7, -0.3];
        let cache = net.forward_cached(&x).unwrap();
        let (grads, dx) = net.backward(&cache, &[1.0, 1.0]).unwrap();
        let gw = &grads.layers[0].0;
        for out in 0..2 {
            for inp in 0..2 {
                assert!((gw.get(out, inp) - x[inp]).abs() < 1e-15);
            }
        }
        assert_eq!(grads.layers[0].1, vec![1.0, 1.0]);
        assert!((dx[0] - 2.5).abs() < 1e-15);
        assert!((dx[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn backward_inactive_relu_zero_grads() {
        let net = FeedForwardNet::from_layers(vec![
            Layer {
                w: Mat::from_rows(&[vec![1.0]]),
                b: vec![0.0],
                act: Activation::Relu,
            },
            identity_layer(1),
        ])
        .unwrap();
        let cache = net.forward_cached(&[-2.0]).unwrap();
        let (grads, dx) = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(grads.layers[0].0.get(0, 0), 0.0);
        assert_eq!(grads.layers[0].1[0], 0.0);
        assert_eq!(dx[0], 0.0);
    }

    /// Central finite differences on a scalar loss `w . output` over every
    /// parameter and the input.
    fn finite_diff_check(net: &FeedForwardNet, x: &[f64], upstream: &[f64]) {
        let loss = |n: &FeedForwardNet, x: &[f64]| dot(&n.forward(x).unwrap(), upstream);
        let cache = net.forward_cached(x).unwrap();
        let (grads, dx) = net.backward(&cache, upstream).unwrap();
        let h = 1e-5;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1.0);

        for li in 0..net.layers().len() {
            for idx in 0..net.layers()[li].w.data().len() {
                let mut plus = net.clone();
                plus.layers_mut()[li].w.data_mut()[idx] += h;
                let mut minus = net.clone();
                minus.layers_mut()[li].w.data_mut()[idx] -= h;
                let fd = (loss(&plus, x) - loss(&minus, x)) / (2.0 * h);
                assert!(
                    close(grads.layers[li].0.data()[idx], fd),
                    "layer {li} weight {idx}: analytic {} vs fd {fd}",
                    grads.layers[li].0.data()[idx]
                );
            }
            for bi in 0..net.layers()[li].b.len() {
                let mut plus = net.clone();
                plus.layers_mut()[li].b[bi] += h;
                let mut minus = net.clone();
                minus.layers_mut()[li].b[bi] -= h;
                let fd = (loss(&plus, x) - loss(&minus, x)) / (2.0 * h);
                assert!(close(grads.layers[li].1[bi], fd));
            }
        }
        for xi in 0..x.len() {
            let mut xp = x.to_vec();
            xp[xi] += h;
            let mut xm = x.to_vec();
            xm[xi] -= h;
            let fd = (loss(net, &xp) - loss(net, &xm)) / (2.0 * h);
            assert!(close(dx[xi], fd), "input {xi}: {} vs {fd}", dx[xi]);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = crate::test_rng(41);
        for _ in 0..20 {
            let p = rng.gen_range(2..5);
            let h = rng.gen_range(2..6);
            let out = rng.gen_range(1..4);
            let net = FeedForwardNet::glorot(&[p, h, out], &mut rng).unwrap();
            let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let upstream: Vec<f64> = (0..out).map(|_| rng.gen_range(-1.0..1.0)).collect();
            finite_diff_check(&net, &x, &upstream);
        }
    }

    #[test]
    fn glorot_is_seed_deterministic() {
        let a = FeedForwardNet::glorot(&[3, 8, 2], &mut crate::test_rng(77)).unwrap();
        let b = FeedForwardNet::glorot(&[3, 8, 2], &mut crate::test_rng(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nc_transform_diagonal_ones_is_identity() {
        // Zero-weight net with bias 1 outputs all-ones regardless of input.
        let k = 3;
        let net = FeedForwardNet::from_layers(vec![Layer {
            w: Mat::zeros(k, 2),
            b: vec![1.0; k],
            act: Activation::Identity,
        }])
        .unwrap();
        match nc_transform(&net, &[0.3, 0.7], TransformMode::Diagonal, k).unwrap() {
            TransformOut::Diagonal(t) => assert_eq!(t, vec![1.0; k]),
            _ => panic!("expected diagonal"),
        }
    }

    #[test]
    fn nc_transform_full_vectorized_identity() {
        let k = 2;
        let mut b = vec![0.0; k * k];
        b[0] = 1.0;
        b[3] = 1.0;
        let net = FeedForwardNet::from_layers(vec![Layer {
            w: Mat::zeros(k * k, 1),
            b,
            act: Activation::Identity,
        }])
        .unwrap();
        match nc_transform(&net, &[0.5], TransformMode::Full, k).unwrap() {
            TransformOut::Full(t) => {
                assert_eq!(t.get(0, 0), 1.0);
                assert_eq!(t.get(1, 1), 1.0);
                assert_eq!(t.get(0, 1), 0.0);
            }
            _ => panic!("expected full"),
        }
    }

    #[test]
    fn nc_transform_dim_mismatch_is_config_error() {
        let net = FeedForwardNet::from_layers(vec![identity_layer(3)]).unwrap();
        assert!(nc_transform(&net, &[1.0; 3], TransformMode::Diagonal, 4).is_err());
        assert!(nc_transform(&net, &[1.0; 3], TransformMode::Full, 3).is_err());
    }

    #[test]
    fn tower_identity_on_id_block() {
        // W = [I_k | 0] passes the id embedding through, ignoring side input.
        let k = 2;
        let net = FeedForwardNet::from_layers(vec![Layer {
            w: Mat::from_fn(k, k + 1, |r, c| if r == c { 1.0 } else { 0.0 }),
            b: vec![0.0; k],
            act: Activation::Identity,
        }])
        .unwrap();
        let e = tower_embed(&net, &[0.4, -0.6], &[9.0]).unwrap();
        assert_eq!(e, vec![0.4, -0.6]);
    }

    #[test]
    fn zero_tower_scores_zero() {
        let net = FeedForwardNet::from_layers(vec![Layer {
            w: Mat::zeros(2, 3),
            b: vec![0.0; 2],
            act: Activation::Identity,
        }])
        .unwrap();
        let e = tower_embed(&net, &[1.0, 1.0], &[1.0]).unwrap();
        assert_eq!(dot(&e, &[5.0, -3.0]), 0.0);
    }

    #[test]
    fn tower_pair_score_matches_hand_dot() {
        // user tower: [1 0; 0 2] * [id] + [0.1, -0.1]; item tower identity.
        let user = FeedForwardNet::from_layers(vec![Layer {
            w: Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]),
            b: vec![0.1, -0.1],
            act: Activation::Identity,
        }])
        .unwrap();
        let item = FeedForwardNet::from_layers(vec![identity_layer(2)]).unwrap();
        let eu = tower_embed(&user, &[0.5, 0.25], &[]).unwrap();
        let ei = tower_embed(&item, &[2.0, -1.0], &[]).unwrap();
        // eu = [0.6, 0.4], ei = [2, -1] => score = 1.2 - 0.4 = 0.8
        assert!((dot(&eu, &ei) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn g_map_selected_bits_and_extras() {
        let g = GFeatureMap {
            d: 5,
            bits: Some(vec![1, 3]),
            extra_dims: 1,
        };
        let c = ConstraintVector::new(5, [1, 2]).unwrap();
        assert_eq!(g.features(&c, &[0.42]).unwrap(), vec![1.0, 0.0, 0.42]);
        let all = GFeatureMap::all_bits(3);
        let c = ConstraintVector::new(3, [2]).unwrap();
        assert_eq!(all.features(&c, &[]).unwrap(), vec![0.0, 0.0, 1.0]);
    }
}
