use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::mask::{MaskState, IDENTITY_LOGIT};
use crate::error::{Error, Result};
use crate::nn::{self, DenseNetwork};

/// A hidden unit, addressed by hidden-layer index and unit index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitId {
    pub layer: usize,
    pub unit: usize,
}

/// Binary predictor for one class: the frozen network under a class-specific
/// mask, scoring `[logit_k, max_{j != k} logit_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    class_index: usize,
    mask: MaskState,
    binary: Vec<Vec<bool>>,
    gates: Vec<Vec<f64>>,
    support: BTreeSet<UnitId>,
}

impl Component {
    pub fn new(class_index: usize, mask: MaskState) -> Result<Self> {
        mask.validate()?;
        let binary = mask.binarize();
        let support: BTreeSet<UnitId> = binary
            .iter()
            .enumerate()
            .flat_map(|(layer, bits)| {
                bits.iter()
                    .enumerate()
                    .filter(|&(_, &b)| b)
                    .map(move |(unit, _)| UnitId { layer, unit })
            })
            .collect();
        if support.is_empty() && mask.unit_count() > 0 {
            return Err(Error::Validation(format!(
                "component {class_index} retains no hidden units"
            )));
        }
        let gates = nn::bits_to_gates(&binary);
        Ok(Self {
            class_index,
            mask,
            binary,
            gates,
            support,
        })
    }

    pub fn class_index(&self) -> usize {
        self.class_index
    }

    pub fn mask(&self) -> &MaskState {
        &self.mask
    }

    pub fn binary_mask(&self) -> &[Vec<bool>] {
        &self.binary
    }

    /// Retained units of the binarized mask.
    pub fn support(&self) -> &BTreeSet<UnitId> {
        &self.support
    }

    pub fn unit_count(&self) -> usize {
        self.mask.unit_count()
    }

    /// Masked logits of the whole head.
    pub fn logits(&self, net: &DenseNetwork, x: &[f64]) -> Result<Vec<f64>> {
        net.check_gates(&self.gates)?;
        net.gated_logits(Some(&self.gates), x)
    }
}

/// Phase-one decomposition: one keep-everything component per class.
pub fn make_components(net: &DenseNetwork) -> Vec<Component> {
    (0..net.class_count())
        .map(|k| {
            Component::new(k, MaskState::constant(net, IDENTITY_LOGIT))
                .expect("identity mask keeps every unit")
        })
        .collect()
}

/// Index of the largest entry other than `k`, lowest index on ties.
pub(crate) fn rival(logits: &[f64], k: usize) -> usize {
    let mut best: Option<usize> = None;
    for (j, &v) in logits.iter().enumerate() {
        if j == k {
            continue;
        }
        match best {
            Some(b) if v <= logits[b] => {}
            _ => best = Some(j),
        }
    }
    best.expect("at least two classes")
}

/// `(pos, neg)`: the class logit and the strongest rival logit under the
/// component's mask.
pub fn component_score(component: &Component, net: &DenseNetwork, x: &[f64]) -> Result<(f64, f64)> {
    let logits = component.logits(net, x)?;
    let k = component.class_index;
    if k >= logits.len() {
        return Err(Error::Config(format!(
            "component class {k} outside {} classes",
            logits.len()
        )));
    }
    Ok((logits[k], logits[rival(&logits, k)]))
}

/// Returns the components indexed by class, rejecting missing or duplicate classes.
pub fn order_components<'a>(
    net: &DenseNetwork,
    components: &'a [Component],
) -> Result<Vec<&'a Component>> {
    let c = net.class_count();
    if components.len() != c {
        return Err(Error::Config(format!(
            "expected {c} components, got {}",
            components.len()
        )));
    }
    let mut slots: Vec<Option<&Component>> = vec![None; c];
    for comp in components {
        let k = comp.class_index;
        if k >= c {
            return Err(Error::Config(format!("component class {k} outside {c} classes")));
        }
        if slots[k].replace(comp).is_some() {
            return Err(Error::Config(format!("duplicate component for class {k}")));
        }
        net.check_gates(&comp.gates)?;
    }
    Ok(slots.into_iter().map(|s| s.expect("all filled")).collect())
}

/// `argmax_k pos_k(x)`, lowest class on ties.
pub fn aggregate_predict(net: &DenseNetwork, components: &[Component], x: &[f64]) -> Result<usize> {
    let ordered = order_components(net, components)?;
    aggregate_ordered(net, &ordered, x)
}

pub(crate) fn aggregate_ordered(net: &DenseNetwork, ordered: &[&Component], x: &[f64]) -> Result<usize> {
    let scores = ordered
        .iter()
        .map(|c| Ok(c.logits(net, x)?[c.class_index]))
        .collect::<Result<Vec<f64>>>()?;
    Ok(nn::argmax(&scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};

    fn identity_net() -> DenseNetwork {
        let layer = Layer::from_rows(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 0.0],
            Activation::Identity,
        )
        .unwrap();
        DenseNetwork::new(vec![layer]).unwrap()
    }

    /// 2-2-2 network whose hidden layer copies the input.
    fn passthrough_net(bias: bool) -> DenseNetwork {
        let b = if bias { vec![0.5, -0.25] } else { vec![0.0, 0.0] };
        let hidden = Layer::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0], Activation::Relu)
            .unwrap();
        let head = Layer::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], b, Activation::Identity).unwrap();
        DenseNetwork::new(vec![hidden, head]).unwrap()
    }

    #[test]
    fn scores_on_identity_net() {
        let net = identity_net();
        let comps = make_components(&net);
        assert_eq!(component_score(&comps[0], &net, &[0.3, 0.1]).unwrap(), (0.3, 0.1));
        assert_eq!(component_score(&comps[1], &net, &[0.3, 0.1]).unwrap(), (0.1, 0.3));
    }

    #[test]
    fn zero_mask_on_bias_free_net_scores_zero() {
        let net = passthrough_net(false);
        let mask = MaskState::constant(&net, -1.0);
        // A fully pruned component is rejected, so score through the raw gates.
        let logits = nn::masked_forward(&net, &mask.binarize(), &[0.7, 0.2]).unwrap();
        assert_eq!((logits[0], logits[rival(&logits, 0)]), (0.0, 0.0));
        assert!(Component::new(0, mask).is_err());
    }

    #[test]
    fn fresh_components_cover_everything() {
        let net = DenseNetwork::random(&[4, 8, 4], 3).unwrap();
        let comps = make_components(&net);
        assert_eq!(comps.len(), 4);
        for c in &comps {
            assert_eq!(c.support().len(), 8);
        }
        let x = [0.1, -0.4, 0.9, 0.0];
        let logits = nn::forward(&net, &x).unwrap().logits;
        for (k, c) in comps.iter().enumerate() {
            assert_eq!(component_score(c, &net, &x).unwrap().0, logits[k]);
        }
    }

    #[test]
    fn aggregate_picks_highest_pos() {
        let net = passthrough_net(true);
        let mut keep_first = MaskState::constant(&net, IDENTITY_LOGIT);
        keep_first.logits[0][1] = -1.0;
        // class 0 keeps unit 0 only, class 1 keeps everything
        let comps = vec![
            Component::new(0, keep_first).unwrap(),
            Component::new(1, MaskState::constant(&net, IDENTITY_LOGIT)).unwrap(),
        ];
        // pos scores: 0.2 + 0.5 = 0.7 and 0.9 - 0.25 = 0.65
        assert_eq!(aggregate_predict(&net, &comps, &[0.2, 0.9]).unwrap(), 0);
        // pos scores: 0.0 + 0.5 = 0.5 and 0.9 - 0.25 = 0.65
        assert_eq!(aggregate_predict(&net, &comps, &[0.0, 0.9]).unwrap(), 1);
        // tie at 0.5 vs 0.5 goes to class 0
        assert_eq!(aggregate_predict(&net, &comps, &[0.0, 0.75]).unwrap(), 0);
    }

    #[test]
    fn aggregate_rejects_bad_sets() {
        let net = identity_net();
        let comps = make_components(&net);
        assert!(matches!(
            aggregate_predict(&net, &comps[..1], &[0.0, 0.0]),
            Err(Error::Config(_))
        ));
        let dup = vec![comps[0].clone(), comps[0].clone()];
        assert!(matches!(aggregate_predict(&net, &dup, &[0.0, 0.0]), Err(Error::Config(_))));
    }

    #[test]
    fn support_lists_retained_units() {
        let mask = MaskState::new(vec![vec![1.0, -1.0, 2.0]], 1.0, 0.5).unwrap();
        let c = Component::new(0, mask).unwrap();
        let want: BTreeSet<UnitId> = [UnitId { layer: 0, unit: 0 }, UnitId { layer: 0, unit: 2 }].into();
        assert_eq!(c.support(), &want);
        let again = Component::new(0, c.mask().clone()).unwrap();
        assert_eq!(again.support(), c.support());
        let full: usize = make_components(&DenseNetwork::random(&[2, 8, 8, 2], 0).unwrap())[0]
            .support()
            .len();
        assert_eq!(full, 16);
    }
}
