//! Learned binary masks over a frozen network.
//!
//! Each component optimises its own mask logits by plain gradient descent on
//! a two-way cross-entropy over `(pos, neg)` plus a sparsity penalty
//! `w * (mean(relaxed) - (1 - s))^2`. The forward pass uses the hard mask and
//! the backward pass goes through the sigmoid (straight-through).

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::component::{rival, Component};
use super::mask::{init_mask_logits, sigmoid, MaskState};
use crate::data::{CalibrationSet, Dataset};
use crate::error::{Error, Result};
use crate::nn::DenseNetwork;
use crate::{par, seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbmaskConfig {
    pub target_sparsity: f64,
    pub init_alpha: f64,
    /// Multiplier on the standardised norms used by magnitude initialisation.
    pub init_scale: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub sparsity_weight: f64,
    pub temperature: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for LbmaskConfig {
    fn default() -> Self {
        Self {
            target_sparsity: 0.5,
            init_alpha: 0.0,
            init_scale: 1.0,
            learning_rate: 0.5,
            steps: 300,
            batch_size: 64,
            sparsity_weight: 1.0,
            temperature: 1.0,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl LbmaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.target_sparsity) {
            return Err(Error::Config(format!(
                "target sparsity {} outside [0, 1)",
                self.target_sparsity
            )));
        }
        if !(0.0..=1.0).contains(&self.init_alpha) {
            return Err(Error::Config(format!("init alpha {} outside [0, 1]", self.init_alpha)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("mask learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("mask batch size must be positive".into()));
        }
        if !(self.sparsity_weight >= 0.0 && self.sparsity_weight.is_finite()) {
            return Err(Error::Config("sparsity weight must be >= 0".into()));
        }
        if !(self.temperature > 0.0) || !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("temperature must be > 0 and threshold in (0, 1)".into()));
        }
        if !self.init_scale.is_finite() {
            return Err(Error::Config("init scale must be finite".into()));
        }
        Ok(())
    }
}

/// Which gate values the forward pass uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateMode {
    /// Binarized mask forward, sigmoid backward.
    Hard,
    /// Sigmoid mask in both directions: the smooth surrogate.
    Relaxed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskObjective {
    pub loss: f64,
    pub cross_entropy: f64,
    pub sparsity_penalty: f64,
    /// d loss / d logit, shaped like the mask logits.
    pub gradient: Vec<Vec<f64>>,
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn mask_objective(
    net: &DenseNetwork,
    class_index: usize,
    features: &[&[f64]],
    labels: &[usize],
    mask: &MaskState,
    cfg: &LbmaskConfig,
    mode: GateMode,
) -> Result<MaskObjective> {
    if features.is_empty() {
        return Err(Error::Validation("mask loss needs a nonempty batch".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::Validation("batch features and labels differ in length".into()));
    }
    if class_index >= net.class_count() {
        return Err(Error::Config(format!("class {class_index} outside the network head")));
    }
    mask.check_for(net)?;

    let relaxed = mask.relaxed();
    let gates = match mode {
        GateMode::Hard => mask.hard_gates(),
        GateMode::Relaxed => relaxed.clone(),
    };
    let n = features.len() as f64;
    let mut gate_grad: Vec<Vec<f64>> = relaxed.iter().map(|l| vec![0.0; l.len()]).collect();
    let mut ce = 0.0;
    for (x, &label) in features.iter().zip(labels) {
        let trace = net.gated_trace(Some(&gates), x)?;
        let logits = &trace.logits;
        let neg = rival(logits, class_index);
        let diff = logits[class_index] - logits[neg];
        let target = if label == class_index { 1.0 } else { 0.0 };
        ce += if target == 1.0 { softplus(-diff) } else { softplus(diff) };
        let ddiff = sigmoid(diff) - target;
        let mut dlogits = vec![0.0; logits.len()];
        dlogits[class_index] = ddiff;
        dlogits[neg] = -ddiff;
        let bp = net.backprop(&trace, Some(&gates), &dlogits);
        for (acc, g) in gate_grad.iter_mut().zip(&bp.gate_grads) {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }
    ce /= n;

    let units = mask.unit_count() as f64;
    let mean_relaxed = relaxed.iter().flatten().sum::<f64>() / units;
    let deviation = mean_relaxed - (1.0 - cfg.target_sparsity);
    let sparsity_penalty = cfg.sparsity_weight * deviation * deviation;
    let dpenalty_dgate = 2.0 * cfg.sparsity_weight * deviation / units;

    let gradient = gate_grad
        .iter()
        .zip(&relaxed)
        .map(|(g, r)| {
            g.iter()
                .zip(r)
                .map(|(&gv, &p)| {
                    let dgate_dlogit = p * (1.0 - p) / mask.temperature;
                    (gv / n + dpenalty_dgate) * dgate_dlogit
                })
                .collect()
        })
        .collect();
    Ok(MaskObjective {
        loss: ce + sparsity_penalty,
        cross_entropy: ce,
        sparsity_penalty,
        gradient,
    })
}

/// Straight-through loss and logit gradient for `component`'s class on a batch.
/// Labels are reference-model predictions; the binary target is `label == k`.
pub fn lbmask_loss(
    net: &DenseNetwork,
    component: &Component,
    batch: &Dataset,
    mask: &MaskState,
    cfg: &LbmaskConfig,
) -> Result<MaskObjective> {
    let feats: Vec<&[f64]> = batch.features().iter().map(Vec::as_slice).collect();
    mask_objective(
        net,
        component.class_index(),
        &feats,
        batch.labels(),
        mask,
        cfg,
        GateMode::Hard,
    )
}

/// Same objective with sigmoid gates in the forward pass.
pub fn relaxed_surrogate_loss(
    net: &DenseNetwork,
    class_index: usize,
    batch: &Dataset,
    mask: &MaskState,
    cfg: &LbmaskConfig,
) -> Result<MaskObjective> {
    let feats: Vec<&[f64]> = batch.features().iter().map(Vec::as_slice).collect();
    mask_objective(
        net,
        class_index,
        &feats,
        batch.labels(),
        mask,
        cfg,
        GateMode::Relaxed,
    )
}

/// Learns the mask for `component`'s class. Network weights are never touched.
pub fn lbmask_train(
    net: &DenseNetwork,
    component: &Component,
    calibration: &CalibrationSet,
    cfg: &LbmaskConfig,
) -> Result<Component> {
    cfg.validate()?;
    if calibration.is_empty() {
        return Err(Error::Validation("calibration set is empty".into()));
    }
    let k = component.class_index();
    let data = calibration.combined();
    let mut mask = init_mask_logits(net, cfg.init_alpha, cfg.init_scale)?;
    mask.temperature = cfg.temperature;
    mask.threshold = cfg.threshold;
    let mut rng = seed::rng(seed::stream(cfg.seed, k as u64));
    let batch = cfg.batch_size.min(data.len());

    for step in 0..cfg.steps {
        let picks = index::sample(&mut rng, data.len(), batch).into_vec();
        let feats: Vec<&[f64]> = picks.iter().map(|&i| data.features()[i].as_slice()).collect();
        let labels: Vec<usize> = picks.iter().map(|&i| data.labels()[i]).collect();
        let obj = mask_objective(net, k, &feats, &labels, &mask, cfg, GateMode::Hard)?;
        if !obj.loss.is_finite() {
            return Err(Error::Training {
                phase: "mask learning",
                step,
            });
        }
        for (l, g) in mask.logits.iter_mut().zip(&obj.gradient) {
            for (v, d) in l.iter_mut().zip(g) {
                *v -= cfg.learning_rate * d;
            }
        }
    }
    Component::new(k, mask)
}

/// Trains one component per class, in parallel when enabled. Class `k` draws
/// from seed stream `k`, so the result is independent of scheduling.
pub fn train_components(
    net: &DenseNetwork,
    calibration: &CalibrationSet,
    cfg: &LbmaskConfig,
) -> Result<Vec<Component>> {
    let start = super::make_components(net);
    par::map_indexed(start.len(), |k| lbmask_train(net, &start[k], calibration, cfg))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::build_calibration_set;
    use crate::decomp::make_components;
    use crate::nn::{self, Activation, Layer};

    fn batch_for(net: &DenseNetwork, n: usize, seed: u64) -> Dataset {
        let mut rng = crate::seed::rng(seed);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| nn::uniform_box(&mut rng, net.input_dim(), 2.0)).collect();
        let ys = xs.iter().map(|x| nn::predict(net, x).unwrap()).collect();
        Dataset::new("batch", xs, ys, net.class_count()).unwrap()
    }

    #[test]
    fn sparsity_penalty_vanishes_at_uniform_init() {
        let net = DenseNetwork::random(&[2, 6, 2], 4).unwrap();
        let comps = make_components(&net);
        let mask = init_mask_logits(&net, 0.0, 1.0).unwrap();
        let cfg = LbmaskConfig {
            sparsity_weight: 0.0,
            ..Default::default()
        };
        let heavy = LbmaskConfig {
            sparsity_weight: 100.0,
            ..Default::default()
        };
        let batch = batch_for(&net, 8, 1);
        let a = lbmask_loss(&net, &comps[0], &batch, &mask, &cfg).unwrap();
        let b = lbmask_loss(&net, &comps[0], &batch, &mask, &heavy).unwrap();
        assert_eq!(b.sparsity_penalty, 0.0);
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.gradient, b.gradient);
    }

    #[test]
    fn saturated_component_has_tiny_gradient() {
        // Hidden unit 0 carries x0 to logit 0, unit 1 carries x1 to logit 1.
        let hidden = Layer::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0; 2], Activation::Relu)
            .unwrap();
        let head = Layer::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0; 2], Activation::Identity)
            .unwrap();
        let net = DenseNetwork::new(vec![hidden, head]).unwrap();
        let batch = Dataset::new(
            "b",
            vec![vec![30.0, 0.0], vec![0.0, 30.0], vec![25.0, 1.0]],
            vec![0, 1, 0],
            2,
        )
        .unwrap();
        let comps = make_components(&net);
        let cfg = LbmaskConfig {
            sparsity_weight: 0.0,
            ..Default::default()
        };
        let obj = lbmask_loss(&net, &comps[0], &batch, comps[0].mask(), &cfg).unwrap();
        assert!(obj.loss < 1e-9, "{}", obj.loss);
        let norm = obj.gradient.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm <= 1e-3, "{norm}");
    }

    #[test]
    fn relaxed_gradient_matches_finite_differences() {
        let net = DenseNetwork::random(&[2, 3, 2], 21).unwrap();
        let batch = batch_for(&net, 6, 2);
        let mask = MaskState::new(vec![vec![0.3, -0.7, 1.1]], 1.0, 0.5).unwrap();
        let cfg = LbmaskConfig {
            sparsity_weight: 2.0,
            ..Default::default()
        };
        let obj = relaxed_surrogate_loss(&net, 1, &batch, &mask, &cfg).unwrap();
        let h = 1e-5;
        for u in 0..3 {
            let mut plus = mask.clone();
            plus.logits[0][u] += h;
            let mut minus = mask.clone();
            minus.logits[0][u] -= h;
            let fd = (relaxed_surrogate_loss(&net, 1, &batch, &plus, &cfg).unwrap().loss
                - relaxed_surrogate_loss(&net, 1, &batch, &minus, &cfg).unwrap().loss)
                / (2.0 * h);
            let an = obj.gradient[0][u];
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-8), "{fd} vs {an}");
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let net = DenseNetwork::random(&[2, 3, 2], 0).unwrap();
        let mask = MaskState::constant(&net, 0.0);
        let err = mask_objective(&net, 0, &[], &[], &mask, &LbmaskConfig::default(), GateMode::Hard);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    fn tiny_calibration(net: &DenseNetwork) -> CalibrationSet {
        build_calibration_set(&batch_for(net, 40, 7), &[], net).unwrap()
    }

    #[test]
    fn zero_steps_returns_binarized_init() {
        let net = DenseNetwork::random(&[3, 5, 3], 9).unwrap();
        let cal = tiny_calibration(&net);
        let cfg = LbmaskConfig {
            steps: 0,
            init_alpha: 1.0,
            init_scale: 2.0,
            ..Default::default()
        };
        let comp = lbmask_train(&net, &make_components(&net)[1], &cal, &cfg).unwrap();
        let init = init_mask_logits(&net, 1.0, 2.0).unwrap();
        assert_eq!(comp.mask(), &init);
        assert_eq!(comp.binary_mask(), init.binarize().as_slice());
    }

    #[test]
    fn training_freezes_weights_and_is_deterministic() {
        let net = DenseNetwork::random(&[3, 8, 3], 5).unwrap();
        let before = net.clone();
        let cal = tiny_calibration(&net);
        let cfg = LbmaskConfig {
            steps: 40,
            batch_size: 16,
            seed: 3,
            ..Default::default()
        };
        let a = train_components(&net, &cal, &cfg).unwrap();
        let b = crate::par::with_workers(1, || train_components(&net, &cal, &cfg).unwrap());
        assert_eq!(net, before);
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(LbmaskConfig::default().validate().is_ok());
        let bad = LbmaskConfig {
            target_sparsity: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = LbmaskConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
