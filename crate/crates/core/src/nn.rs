//! Dense feed-forward classifiers.
//!
//! A [`DenseNetwork`] is a chain of affine layers with ReLU hidden activations
//! and an identity head producing `C` logits. Everything here is a pure
//! function of the (immutable) network and its inputs.
//!
//! Hidden layers can be *gated*: each post-activation is multiplied by a
//! per-unit gate value. Binary gates give [`masked_forward`]; real-valued gates
//! are the relaxed path used by mask learning.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Affine transform `act(W x + b)`; `weights` is row-major `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Validation("layer dimensions must be positive".into()));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::Dimension {
                context: "layer weights",
                expected: in_dim * out_dim,
                got: weights.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(Error::Dimension {
                context: "layer bias",
                expected: out_dim,
                got: bias.len(),
            });
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("layer parameters must be finite".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    /// Builds a layer from nested rows (`rows[o][i]`).
    pub fn from_rows(rows: &[Vec<f64>], bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let out_dim = rows.len();
        let in_dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != in_dim) {
            return Err(Error::Validation("weight rows have unequal lengths".into()));
        }
        Layer::new(in_dim, out_dim, rows.concat(), bias, activation)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }

    fn affine_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, z) in out.iter_mut().enumerate() {
            let row = self.row(o);
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            *z = acc;
        }
    }
}

/// The frozen reference classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    input_dim: usize,
    class_count: usize,
    layers: Vec<Layer>,
}

/// Per-layer caches of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pre_activations: Vec<Vec<f64>>,
    /// Post-activations after gating (if any).
    pub post_activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

impl DenseNetwork {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Validation("network needs at least one layer".into()))?;
        let input_dim = first.in_dim;
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Validation(format!(
                    "layer {} outputs {} units but layer {} expects {}",
                    l,
                    pair[0].out_dim,
                    l + 1,
                    pair[1].in_dim
                )));
            }
        }
        let last = layers.len() - 1;
        for (l, layer) in layers.iter().enumerate() {
            let expected = if l == last {
                Activation::Identity
            } else {
                Activation::Relu
            };
            if layer.activation != expected {
                return Err(Error::Validation(format!(
                    "layer {l} has activation {:?}; hidden layers must be relu and the head identity",
                    layer.activation
                )));
            }
        }
        let class_count = layers[last].out_dim;
        if class_count < 2 {
            return Err(Error::Validation("class_count must be at least 2".into()));
        }
        Ok(Self {
            input_dim,
            class_count,
            layers,
        })
    }

    /// He-normal initialisation with zero biases. `arch` lists layer widths,
    /// input first and class count last.
    pub fn random(arch: &[usize], seed: u64) -> Result<Self> {
        if arch.len() < 2 {
            return Err(Error::Validation(
                "architecture needs an input and an output width".into(),
            ));
        }
        let mut rng = seed::rng(seed);
        let last = arch.len() - 2;
        let mut layers = Vec::with_capacity(arch.len() - 1);
        for (l, dims) in arch.windows(2).enumerate() {
            let (inp, out) = (dims[0], dims[1]);
            if inp == 0 || out == 0 {
                return Err(Error::Validation("layer widths must be positive".into()));
            }
            let normal = Normal::new(0.0, (2.0 / inp as f64).sqrt())
                .map_err(|e| Error::Validation(e.to_string()))?;
            let weights = (0..inp * out).map(|_| normal.sample(&mut rng)).collect();
            let act = if l == last {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(Layer::new(inp, out, weights, vec![0.0; out], act)?);
        }
        DenseNetwork::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Widths of the maskable (hidden) layers.
    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Layer::out_dim)
            .collect()
    }

    pub fn hidden_unit_count(&self) -> usize {
        self.hidden_sizes().iter().sum()
    }

    /// Layer widths, input first.
    pub fn arch(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("input contains non-finite values".into()));
        }
        Ok(())
    }

    pub(crate) fn check_gates<T>(&self, gates: &[Vec<T>]) -> Result<()> {
        let sizes = self.hidden_sizes();
        if gates.len() != sizes.len() {
            return Err(Error::Dimension {
                context: "mask layer count",
                expected: sizes.len(),
                got: gates.len(),
            });
        }
        for (g, &n) in gates.iter().zip(&sizes) {
            if g.len() != n {
                return Err(Error::Dimension {
                    context: "mask length",
                    expected: n,
                    got: g.len(),
                });
            }
        }
        Ok(())
    }

    /// Forward pass with optional per-unit gates on hidden post-activations.
    /// Gate shapes must already be validated.
    pub(crate) fn gated_trace(&self, gates: Option<&[Vec<f64>]>, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut pre_activations = Vec::with_capacity(n);
        let mut post_activations: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { x } else { &post_activations[l - 1] };
            let mut pre = vec![0.0; layer.out_dim];
            layer.affine_into(input, &mut pre);
            let mut post: Vec<f64> = pre.iter().map(|&z| layer.activation.apply(z)).collect();
            if let Some(g) = gates.filter(|_| l + 1 < n) {
                for (p, gate) in post.iter_mut().zip(&g[l]) {
                    *p *= gate;
                }
            }
            if post.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow(format!("layer {l} activations")));
            }
            pre_activations.push(pre);
            post_activations.push(post);
        }
        let logits = post_activations[n - 1].clone();
        Ok(ForwardTrace {
            pre_activations,
            post_activations,
            logits,
        })
    }

    pub(crate) fn gated_logits(&self, gates: Option<&[Vec<f64>]>, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.gated_trace(gates, x)?.logits)
    }

    /// Reverse pass through a cached trace. `dlogits` is dL/dlogits.
    pub(crate) fn backprop(
        &self,
        trace: &ForwardTrace,
        gates: Option<&[Vec<f64>]>,
        dlogits: &[f64],
    ) -> Backprop {
        let n = self.layers.len();
        let mut pre_grads = vec![Vec::new(); n];
        let mut gate_grads = vec![Vec::new(); n - 1];
        let mut upstream = dlogits.to_vec();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let pre = &trace.pre_activations[l];
            if l + 1 < n {
                if let Some(g) = gates {
                    gate_grads[l] = upstream
                        .iter()
                        .zip(pre)
                        .map(|(u, &z)| u * layer.activation.apply(z))
                        .collect();
                    for (u, gate) in upstream.iter_mut().zip(&g[l]) {
                        *u *= gate;
                    }
                }
            }
            let dpre: Vec<f64> = upstream
                .iter()
                .zip(pre)
                .map(|(u, &z)| u * layer.activation.derivative(z))
                .collect();
            let mut down = vec![0.0; layer.in_dim];
            for (o, d) in dpre.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (acc, w) in down.iter_mut().zip(layer.row(o)) {
                    *acc += d * w;
                }
            }
            pre_grads[l] = dpre;
            upstream = down;
        }
        Backprop {
            pre_grads,
            input_grad: upstream,
            gate_grads,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub(crate) struct Backprop {
    /// dL/d(pre-activation) per layer.
    pub pre_grads: Vec<Vec<f64>>,
    pub input_grad: Vec<f64>,
    /// dL/d(gate) per hidden layer; empty vectors when no gates were supplied.
    pub gate_grads: Vec<Vec<f64>>,
}

pub fn forward(net: &DenseNetwork, x: &[f64]) -> Result<ForwardTrace> {
    net.gated_trace(None, x)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Top logit minus runner-up; zero exactly on ties.
pub fn logit_margin(logits: &[f64]) -> f64 {
    let top = argmax(logits);
    let runner_up = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    logits[top] - runner_up
}

pub fn predict(net: &DenseNetwork, x: &[f64]) -> Result<usize> {
    Ok(argmax(&forward(net, x)?.logits))
}

pub fn margin(net: &DenseNetwork, x: &[f64]) -> Result<f64> {
    Ok(logit_margin(&forward(net, x)?.logits))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax cross-entropy of `logits` against `target`.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// Gradient of softmax cross-entropy w.r.t. the input.
pub fn input_gradient(net: &DenseNetwork, x: &[f64], target_label: usize) -> Result<Vec<f64>> {
    if target_label >= net.class_count {
        return Err(Error::Validation(format!(
            "target label {target_label} out of range for {} classes",
            net.class_count
        )));
    }
    let trace = forward(net, x)?;
    let mut dlogits = softmax(&trace.logits);
    dlogits[target_label] -= 1.0;
    Ok(net.backprop(&trace, None, &dlogits).input_grad)
}

/// Logits with each hidden post-activation multiplied by its binary mask bit.
pub fn masked_forward(net: &DenseNetwork, mask: &[Vec<bool>], x: &[f64]) -> Result<Vec<f64>> {
    net.check_gates(mask)?;
    let gates = bits_to_gates(mask);
    net.gated_logits(Some(&gates), x)
}

pub(crate) fn bits_to_gates(mask: &[Vec<bool>]) -> Vec<Vec<f64>> {
    mask.iter()
        .map(|l| l.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Minibatch gradient descent on softmax cross-entropy.
pub fn train_reference(dataset: &Dataset, arch: &[usize], hyper: &TrainConfig) -> Result<DenseNetwork> {
    if arch.first() != Some(&dataset.dim()) {
        return Err(Error::Validation(format!(
            "architecture input width {:?} does not match dataset dimension {}",
            arch.first(),
            dataset.dim()
        )));
    }
    if arch.last() != Some(&dataset.class_count()) {
        return Err(Error::Validation(format!(
            "architecture output width {:?} does not match class count {}",
            arch.last(),
            dataset.class_count()
        )));
    }
    if hyper.batch_size == 0 || !(hyper.learning_rate > 0.0) {
        return Err(Error::Validation(
            "batch_size and learning_rate must be positive".into(),
        ));
    }
    let mut net = DenseNetwork::random(arch, seed::derive(hyper.seed, "init"))?;
    let mut rng = seed::rng(seed::derive(hyper.seed, "shuffle"));
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let mut w_grads: Vec<Vec<f64>> =
                net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
            let mut b_grads: Vec<Vec<f64>> =
                net.layers.iter().map(|l| vec![0.0; l.out_dim]).collect();
            for &i in batch {
                let x = &dataset.features()[i];
                let y = dataset.labels()[i];
                let trace = forward(&net, x)?;
                epoch_loss += cross_entropy(&trace.logits, y);
                let mut dlogits = softmax(&trace.logits);
                dlogits[y] -= 1.0;
                let bp = net.backprop(&trace, None, &dlogits);
                for (l, layer) in net.layers.iter().enumerate() {
                    let input = if l == 0 { x } else { &trace.post_activations[l - 1] };
                    for (o, &d) in bp.pre_grads[l].iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        b_grads[l][o] += d;
                        let row = &mut w_grads[l][o * layer.in_dim..(o + 1) * layer.in_dim];
                        for (g, v) in row.iter_mut().zip(input) {
                            *g += d * v;
                        }
                    }
                }
            }
            let step = hyper.learning_rate / batch.len() as f64;
            for (l, layer) in net.layers.iter_mut().enumerate() {
                for (w, g) in layer.weights.iter_mut().zip(&w_grads[l]) {
                    *w -= step * g;
                }
                for (b, g) in layer.bias.iter_mut().zip(&b_grads[l]) {
                    *b -= step * g;
                }
            }
        }
        let params_finite = net
            .layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()));
        if !epoch_loss.is_finite() || !params_finite {
            return Err(Error::Training {
                phase: "reference training epoch",
                step: epoch,
            });
        }
    }
    Ok(net)
}

/// Fraction of samples whose prediction matches the label.
pub fn accuracy(net: &DenseNetwork, dataset: &Dataset) -> Result<f64> {
    let mut hits = 0usize;
    for (x, &y) in dataset.features().iter().zip(dataset.labels()) {
        if predict(net, x)? == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / dataset.len() as f64)
}

/// Uniform draw from `[-radius, radius]` per coordinate.
pub(crate) fn uniform_box<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            if radius > 0.0 {
                rng.random_range(-radius..=radius)
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    activation: Activation,
    bias: Vec<f64>,
    weights: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    input_dim: usize,
    class_count: usize,
    layers: Vec<LayerFile>,
}

impl From<&DenseNetwork> for ModelFile {
    fn from(net: &DenseNetwork) -> Self {
        ModelFile {
            input_dim: net.input_dim,
            class_count: net.class_count,
            layers: net
                .layers
                .iter()
                .map(|l| LayerFile {
                    activation: l.activation,
                    bias: l.bias.clone(),
                    weights: l.weights.chunks(l.in_dim).map(<[f64]>::to_vec).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelFile> for DenseNetwork {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        let layers = file
            .layers
            .into_iter()
            .map(|l| Layer::from_rows(&l.weights, l.bias, l.activation))
            .collect::<Result<Vec<_>>>()?;
        let net = DenseNetwork::new(layers)?;
        if net.input_dim != file.input_dim {
            return Err(Error::Validation(format!(
                "input_dim {} does not match first layer width {}",
                file.input_dim, net.input_dim
            )));
        }
        if net.class_count != file.class_count {
            return Err(Error::Validation(format!(
                "class_count {} does not match head width {}",
                file.class_count, net.class_count
            )));
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity2() -> DenseNetwork {
        let layer = Layer::from_rows(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 0.0],
            Activation::Identity,
        )
        .unwrap();
        DenseNetwork::new(vec![layer]).unwrap()
    }

    /// Straightforward re-implementation used as the forward oracle.
    #[allow(clippy::needless_range_loop)]
    fn naive_logits(net: &DenseNetwork, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for layer in net.layers() {
            let mut next = Vec::new();
            for o in 0..layer.out_dim() {
                let mut s = 0.0;
                for i in 0..layer.in_dim() {
                    s += layer.weights()[o * layer.in_dim() + i] * h[i];
                }
                s += layer.bias()[o];
                next.push(match layer.activation() {
                    Activation::Relu => {
                        if s > 0.0 {
                            s
                        } else {
                            0.0
                        }
                    }
                    Activation::Identity => s,
                });
            }
            h = next;
        }
        h
    }

    #[test]
    fn identity_forward() {
        let t = forward(&identity2(), &[0.3, 0.1]).unwrap();
        assert_eq!(t.logits, vec![0.3, 0.1]);
    }

    #[test]
    fn relu_clamps_negative() {
        let hidden = Layer::from_rows(&[vec![1.0, -1.0]], vec![0.0], Activation::Relu).unwrap();
        let head = Layer::from_rows(&[vec![2.0], vec![0.0]], vec![0.0, 0.0], Activation::Identity)
            .unwrap();
        let net = DenseNetwork::new(vec![hidden, head]).unwrap();
        let t = forward(&net, &[0.5, 1.0]).unwrap();
        assert_eq!(t.pre_activations[0], vec![-0.5]);
        assert_eq!(t.post_activations[0], vec![0.0]);
        assert_eq!(t.logits[0], 0.0);
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let net = DenseNetwork::random(&[2, 8, 8, 4], 11).unwrap();
        let mut rng = seed::rng(3);
        for _ in 0..50 {
            let x = uniform_box(&mut rng, 2, 3.0);
            let got = forward(&net, &x).unwrap().logits;
            let want = naive_logits(&net, &x);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = identity2();
        assert!(matches!(forward(&net, &[1.0]), Err(Error::Dimension { .. })));
        assert!(forward(&net, &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn argmax_and_margin() {
        assert_eq!(argmax(&[2.0, 0.5, -1.0]), 0);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(predict(&identity2(), &[0.1, 0.9]).unwrap(), 1);
        assert_eq!(logit_margin(&[2.0, 0.5, -1.0]), 1.5);
        assert_eq!(logit_margin(&[1.0, 1.0, 0.0]), 0.0);
        assert!((margin(&identity2(), &[0.3, 0.1]).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn input_gradient_identity_case() {
        let g = input_gradient(&identity2(), &[0.0, 0.0], 0).unwrap();
        assert_eq!(g, vec![-0.5, 0.5]);
    }

    #[test]
    fn input_gradient_zero_weights() {
        let hidden = Layer::new(2, 3, vec![0.0; 6], vec![0.0; 3], Activation::Relu).unwrap();
        let head = Layer::new(3, 2, vec![0.0; 6], vec![0.0; 2], Activation::Identity).unwrap();
        let net = DenseNetwork::new(vec![hidden, head]).unwrap();
        assert_eq!(input_gradient(&net, &[0.4, -1.0], 1).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn all_ones_mask_is_bit_identical() {
        let net = DenseNetwork::random(&[3, 5, 4, 3], 2).unwrap();
        let mask: Vec<Vec<bool>> = net.hidden_sizes().iter().map(|&n| vec![true; n]).collect();
        let x = [0.2, -0.7, 1.3];
        assert_eq!(masked_forward(&net, &mask, &x).unwrap(), forward(&net, &x).unwrap().logits);
    }

    #[test]
    fn all_zero_mask_gives_bias_chain() {
        // 2-2-2: hidden zeroed, so logits are just the head bias.
        let hidden = Layer::from_rows(
            &[vec![1.0, 2.0], vec![-1.0, 0.5]],
            vec![0.3, 0.1],
            Activation::Relu,
        )
        .unwrap();
        let head = Layer::from_rows(
            &[vec![1.0, 1.0], vec![2.0, -1.0]],
            vec![0.25, -0.75],
            Activation::Identity,
        )
        .unwrap();
        let net = DenseNetwork::new(vec![hidden, head]).unwrap();
        let logits = masked_forward(&net, &[vec![false, false]], &[1.0, 1.0]).unwrap();
        assert_eq!(logits, vec![0.25, -0.75]);
    }

    #[test]
    fn mask_length_mismatch() {
        let net = DenseNetwork::random(&[2, 3, 2], 0).unwrap();
        assert!(masked_forward(&net, &[vec![true, true]], &[0.0, 0.0]).is_err());
        assert!(masked_forward(&net, &[], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn rejects_bad_architectures() {
        let relu_head = Layer::new(2, 2, vec![1.0; 4], vec![0.0; 2], Activation::Relu).unwrap();
        assert!(DenseNetwork::new(vec![relu_head]).is_err());
        let a = Layer::new(2, 3, vec![1.0; 6], vec![0.0; 3], Activation::Relu).unwrap();
        let b = Layer::new(4, 2, vec![1.0; 8], vec![0.0; 2], Activation::Identity).unwrap();
        assert!(DenseNetwork::new(vec![a, b]).is_err());
        assert!(Layer::new(1, 1, vec![f64::INFINITY], vec![0.0], Activation::Identity).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let net = DenseNetwork::random(&[4, 7, 3], 99).unwrap();
        let back = DenseNetwork::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn json_loader_validates() {
        let bad = r#"{"input_dim":3,"class_count":2,"layers":[{"activation":"identity","bias":[0,0],"weights":[[1,0],[0,1]]}]}"#;
        assert!(DenseNetwork::from_json(bad).is_err());
        let nan = r#"{"input_dim":2,"class_count":2,"layers":[{"activation":"identity","bias":[0,null],"weights":[[1,0],[0,1]]}]}"#;
        assert!(DenseNetwork::from_json(nan).is_err());
        let tanh = r#"{"input_dim":2,"class_count":2,"layers":[{"activation":"tanh","bias":[0,0],"weights":[[1,0],[0,1]]}]}"#;
        assert!(DenseNetwork::from_json(tanh).is_err());
    }
}
