use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::DenseNetwork;

/// Logit given to every unit of an identity (keep-everything) mask.
pub const IDENTITY_LOGIT: f64 = 10.0;

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-hidden-unit mask logits.
///
/// The relaxed mask is `sigmoid(logit / temperature)`; a unit is kept when
/// that value reaches `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskState {
    pub logits: Vec<Vec<f64>>,
    pub temperature: f64,
    pub threshold: f64,
}

impl MaskState {
    pub fn new(logits: Vec<Vec<f64>>, temperature: f64, threshold: f64) -> Result<Self> {
        let m = Self {
            logits,
            temperature,
            threshold,
        };
        m.validate()?;
        Ok(m)
    }

    /// Every unit at `value`, temperature 1, threshold 0.5.
    pub fn constant(net: &DenseNetwork, value: f64) -> Self {
        Self {
            logits: net.hidden_sizes().iter().map(|&n| vec![value; n]).collect(),
            temperature: 1.0,
            threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Validation("mask temperature must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Validation("mask threshold must lie in (0, 1)".into()));
        }
        if self.logits.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("mask logits must be finite".into()));
        }
        Ok(())
    }

    pub fn check_for(&self, net: &DenseNetwork) -> Result<()> {
        self.validate()?;
        net.check_gates(&self.logits)
    }

    pub fn unit_count(&self) -> usize {
        self.logits.iter().map(Vec::len).sum()
    }

    pub fn relaxed(&self) -> Vec<Vec<f64>> {
        self.logits
            .iter()
            .map(|l| l.iter().map(|&v| sigmoid(v / self.temperature)).collect())
            .collect()
    }

    /// Hard mask. Compares in logit space so the 0.5 threshold is exactly `λ >= 0`.
    pub fn binarize(&self) -> Vec<Vec<bool>> {
        let cut = (self.threshold / (1.0 - self.threshold)).ln();
        self.logits
            .iter()
            .map(|l| l.iter().map(|&v| v / self.temperature >= cut).collect())
            .collect()
    }

    pub(crate) fn hard_gates(&self) -> Vec<Vec<f64>> {
        crate::nn::bits_to_gates(&self.binarize())
    }
}

/// Initial logits interpolating between uniform (`alpha = 0`) and
/// incoming-weight-norm magnitude (`alpha = 1`).
///
/// Unit `u` of a hidden layer gets `alpha * scale * z_u`, where `z_u` is the
/// ℓ2 norm of its incoming weight row standardised within the layer
/// (population variance). A layer of equal norms gets all zeros.
pub fn init_mask_logits(net: &DenseNetwork, alpha: f64, scale: f64) -> Result<MaskState> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Validation(format!("init alpha {alpha} outside [0, 1]")));
    }
    if !scale.is_finite() {
        return Err(Error::Validation("init scale must be finite".into()));
    }
    let hidden = net.layers().len() - 1;
    let logits = net.layers()[..hidden]
        .iter()
        .map(|layer| {
            let norms: Vec<f64> = (0..layer.out_dim())
                .map(|o| layer.row(o).iter().map(|w| w * w).sum::<f64>().sqrt())
                .collect();
            let n = norms.len() as f64;
            let mean = norms.iter().sum::<f64>() / n;
            let std = (norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            if std <= 1e-12 * mean.abs().max(1.0) {
                vec![0.0; norms.len()]
            } else {
                norms.iter().map(|v| alpha * scale * (v - mean) / std).collect()
            }
        })
        .collect();
    MaskState::new(logits, 1.0, 0.5)
}

#[derive(Serialize, Deserialize)]
struct MaskFile {
    class_index: usize,
    temperature: f64,
    threshold: f64,
    logits: Vec<Vec<f64>>,
}

impl MaskState {
    pub fn save(&self, class_index: usize, path: &Path) -> Result<()> {
        let file = MaskFile {
            class_index,
            temperature: self.temperature,
            threshold: self.threshold,
            logits: self.logits.clone(),
        };
        let text = serde_json::to_string_pretty(&file)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Reads a mask file, returning its class index and state.
    pub fn load(path: &Path) -> Result<(usize, MaskState)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: MaskFile = serde_json::from_str(&text)?;
        Ok((
            file.class_index,
            MaskState::new(file.logits, file.temperature, file.threshold)?,
        ))
    }
}
