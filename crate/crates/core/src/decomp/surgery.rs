use crate::error::{Error, Result};
use crate::nn::{DenseNetwork, Layer};

/// Removes pruned hidden units: their rows (and biases) in the producing
/// layer and their columns in the consuming layer. The reduced network
/// computes the same logits as [`crate::nn::masked_forward`] under `mask`.
pub fn dimension_surgery(net: &DenseNetwork, mask: &[Vec<bool>]) -> Result<DenseNetwork> {
    net.check_gates(mask)?;
    if let Some(layer) = mask.iter().position(|bits| !bits.iter().any(|&b| b)) {
        return Err(Error::Surgery { layer });
    }
    let layers = net.layers();
    let mut out = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        let rows: Vec<usize> = match mask.get(l) {
            Some(bits) => (0..layer.out_dim()).filter(|&o| bits[o]).collect(),
            None => (0..layer.out_dim()).collect(),
        };
        let cols: Vec<usize> = match l.checked_sub(1).map(|p| &mask[p]) {
            Some(bits) => (0..layer.in_dim()).filter(|&i| bits[i]).collect(),
            None => (0..layer.in_dim()).collect(),
        };
        let mut weights = Vec::with_capacity(rows.len() * cols.len());
        for &o in &rows {
            let row = layer.row(o);
            weights.extend(cols.iter().map(|&i| row[i]));
        }
        let bias = rows.iter().map(|&o| layer.bias()[o]).collect();
        out.push(Layer::new(cols.len(), rows.len(), weights, bias, layer.activation())?);
    }
    DenseNetwork::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{self, forward, masked_forward};

    #[test]
    fn all_ones_is_structurally_identical() {
        let net = DenseNetwork::random(&[3, 5, 4, 2], 8).unwrap();
        let mask: Vec<Vec<bool>> = net.hidden_sizes().iter().map(|&n| vec![true; n]).collect();
        assert_eq!(dimension_surgery(&net, &mask).unwrap(), net);
    }

    #[test]
    fn drops_middle_unit() {
        let net = DenseNetwork::random(&[2, 3, 2], 12).unwrap();
        let mask = vec![vec![true, false, true]];
        let reduced = dimension_surgery(&net, &mask).unwrap();
        assert_eq!(reduced.arch(), vec![2, 2, 2]);
        let mut rng = crate::seed::rng(1);
        for _ in 0..100 {
            let x = nn::uniform_box(&mut rng, 2, 3.0);
            let a = forward(&reduced, &x).unwrap().logits;
            let b = masked_forward(&net, &mask, &x).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn fully_pruned_layer_is_an_error() {
        let net = DenseNetwork::random(&[2, 3, 4, 2], 1).unwrap();
        let mask = vec![vec![true, true, true], vec![false; 4]];
        assert!(matches!(dimension_surgery(&net, &mask), Err(Error::Surgery { layer: 1 })));
        let net = DenseNetwork::random(&[2, 3, 2], 1).unwrap();
        assert!(matches!(
            dimension_surgery(&net, &[vec![false; 3]]),
            Err(Error::Surgery { layer: 0 })
        ));
    }
}
