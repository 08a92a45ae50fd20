//! Boundary mining: label-flipping PGD, bisection refinement and
//! margin-based boundary subsets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CalibrationSet, Dataset};
use crate::error::{Error, Result};
use crate::nn::{self, DenseNetwork};
use crate::{par, seed};

/// ℓ∞ projected gradient ascent on cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub ball_radius: f64,
    pub step_size: f64,
    pub steps: usize,
    pub random_start: bool,
    pub seed: u64,
}

impl PgdConfig {
    /// Ball of half the mean per-feature standard deviation, ten steps per
    /// radius, 20 steps, random start.
    pub fn for_dataset(dataset: &Dataset, seed: u64) -> Self {
        let std = dataset.feature_std();
        let mean_std = std.iter().sum::<f64>() / std.len() as f64;
        let ball_radius = if mean_std > 0.0 { 0.5 * mean_std } else { 0.5 };
        Self {
            ball_radius,
            step_size: ball_radius / 10.0,
            steps: 20,
            random_start: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ball_radius >= 0.0 && self.ball_radius.is_finite()) {
            return Err(Error::Config("pgd ball_radius must be finite and >= 0".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config("pgd step_size must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("pgd steps must be >= 1".into()));
        }
        if self.ball_radius > 0.0 && self.step_size > self.ball_radius {
            return Err(Error::Config(format!(
                "pgd step_size {} exceeds ball_radius {}",
                self.step_size, self.ball_radius
            )));
        }
        Ok(())
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Closed interval `[centre - r, centre + r]`, tightened so that
/// `|v - centre| <= r` holds in floating point for both ends.
fn ball_bounds(centre: f64, r: f64) -> (f64, f64) {
    let mut lo = centre - r;
    while centre - lo > r {
        lo = lo.next_up();
    }
    let mut hi = centre + r;
    while hi - centre > r {
        hi = hi.next_down();
    }
    (lo, hi)
}

/// Untargeted-style ascent on the cross-entropy of `label`; returns the final iterate.
pub fn pgd_attack(net: &DenseNetwork, x: &[f64], label: usize, cfg: &PgdConfig) -> Result<Vec<f64>> {
    net.check_input(x)?;
    let bounds: Vec<(f64, f64)> = x.iter().map(|&c| ball_bounds(c, cfg.ball_radius)).collect();
    let project = |v: &mut [f64]| {
        for (vi, &(lo, hi)) in v.iter_mut().zip(&bounds) {
            *vi = vi.clamp(lo, hi);
        }
    };
    let mut adv = x.to_vec();
    if cfg.random_start && cfg.ball_radius > 0.0 {
        let mut rng = seed::rng(cfg.seed);
        let noise = nn::uniform_box(&mut rng, x.len(), cfg.ball_radius);
        for (a, n) in adv.iter_mut().zip(noise) {
            *a += n;
        }
        project(&mut adv);
    }
    for _ in 0..cfg.steps {
        let grad = nn::input_gradient(net, &adv, label)?;
        for (a, g) in adv.iter_mut().zip(grad) {
            *a += cfg.step_size * sign(g);
        }
        project(&mut adv);
    }
    Ok(adv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlipPair {
    /// Index of the source sample in the dataset.
    pub index: usize,
    pub x: Vec<f64>,
    pub x_adv: Vec<f64>,
    /// (original prediction, adversarial prediction).
    pub class_pair: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlipSearch {
    pub pairs: Vec<FlipPair>,
    pub attempted: usize,
}

impl FlipSearch {
    pub fn flipped(&self) -> usize {
        self.pairs.len()
    }

    pub fn flip_rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.pairs.len() as f64 / self.attempted as f64
        }
    }
}

/// Attacks every sample against its own predicted label and keeps the ones
/// whose prediction changes. Sample `i` uses seed stream `i` of `cfg.seed`.
pub fn find_flip_pairs(net: &DenseNetwork, dataset: &Dataset, cfg: &PgdConfig) -> Result<FlipSearch> {
    cfg.validate()?;
    let results = par::map_indexed(dataset.len(), |i| -> Result<Option<FlipPair>> {
        let x = &dataset.features()[i];
        let label = nn::predict(net, x)?;
        let sample_cfg = PgdConfig {
            seed: seed::stream(cfg.seed, i as u64),
            ..*cfg
        };
        let x_adv = pgd_attack(net, x, label, &sample_cfg)?;
        let adv_label = nn::predict(net, &x_adv)?;
        Ok((adv_label != label).then(|| FlipPair {
            index: i,
            x: x.clone(),
            x_adv,
            class_pair: (label, adv_label),
        }))
    });
    let mut pairs = Vec::new();
    for r in results {
        if let Some(p) = r? {
            pairs.push(p);
        }
    }
    Ok(FlipSearch {
        pairs,
        attempted: dataset.len(),
    })
}

/// A refined near-boundary input with its straddling pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub midpoint: Vec<f64>,
    /// (prediction at `x_lo`, prediction at `x_hi`).
    pub class_pair: (usize, usize),
    pub final_margin: f64,
    pub iterations: usize,
    /// Position of `x_lo` and `x_hi` on the original segment, as fractions in
    /// `[0, 1]`. The width is exactly `2^-iterations`.
    pub bracket: (f64, f64),
}

impl BoundaryPoint {
    pub fn segment_length(&self) -> f64 {
        euclidean(&self.x_lo, &self.x_hi)
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Point at fraction `t` along `a -> b`; exact at both ends.
fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect()
}

pub const DEFAULT_MARGIN_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_ITERS: usize = 60;

/// Bisection on the segment `x_lo -> x_hi` until the midpoint margin is at
/// most `margin_tol` or `max_iters` halvings have been made.
///
/// The bracket is tracked as dyadic fractions of the original segment, so
/// every iteration halves it exactly. If a midpoint predicts a third class
/// the upper end moves there and the pair keeps straddling.
pub fn refine_pair(
    net: &DenseNetwork,
    x_lo: &[f64],
    x_hi: &[f64],
    margin_tol: f64,
    max_iters: usize,
) -> Result<BoundaryPoint> {
    net.check_input(x_lo)?;
    net.check_input(x_hi)?;
    let c_lo = nn::predict(net, x_lo)?;
    let mut c_hi = nn::predict(net, x_hi)?;
    if c_lo == c_hi {
        return Err(Error::InvalidPair(c_lo));
    }
    let (mut t_lo, mut t_hi) = (0.0_f64, 1.0_f64);
    let mut iterations = 0;
    let (midpoint, final_margin) = loop {
        let t_mid = 0.5 * (t_lo + t_hi);
        let mid = lerp(x_lo, x_hi, t_mid);
        let logits = nn::forward(net, &mid)?.logits;
        let m = nn::logit_margin(&logits);
        if m <= margin_tol || iterations >= max_iters || t_mid <= t_lo || t_mid >= t_hi {
            break (mid, m);
        }
        let c_mid = nn::argmax(&logits);
        if c_mid == c_lo {
            t_lo = t_mid;
        } else {
            t_hi = t_mid;
            c_hi = c_mid;
        }
        iterations += 1;
    };
    let lo = lerp(x_lo, x_hi, t_lo);
    let hi = lerp(x_lo, x_hi, t_hi);
    Ok(BoundaryPoint {
        x_lo: lo,
        x_hi: hi,
        midpoint,
        class_pair: (c_lo, c_hi),
        final_margin,
        iterations,
        bracket: (t_lo, t_hi),
    })
}

#[derive(Debug, Clone)]
pub struct MiningResult {
    pub points: Vec<BoundaryPoint>,
    pub attempted: usize,
    pub flipped: usize,
}

impl MiningResult {
    pub fn flip_rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.flipped as f64 / self.attempted as f64
        }
    }
}

/// PGD flip search followed by refinement of every flip pair.
pub fn mine_boundary(
    net: &DenseNetwork,
    dataset: &Dataset,
    cfg: &PgdConfig,
    margin_tol: f64,
    max_iters: usize,
) -> Result<MiningResult> {
    let search = find_flip_pairs(net, dataset, cfg)?;
    let points = par::map_indexed(search.pairs.len(), |i| {
        let p = &search.pairs[i];
        refine_pair(net, &p.x, &p.x_adv, margin_tol, max_iters)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(MiningResult {
        points,
        attempted: search.attempted,
        flipped: search.flipped(),
    })
}

/// Which dataset samples count as boundary-adjacent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundarySelector {
    /// Samples with margin at most κ.
    Absolute(f64),
    /// The `ceil(q * n)` smallest-margin samples.
    Quantile(f64),
}

impl BoundarySelector {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BoundarySelector::Absolute(k) if !(k >= 0.0 && k.is_finite()) => Err(Error::Validation(
                format!("boundary margin threshold {k} must be finite and >= 0"),
            )),
            BoundarySelector::Quantile(q) if !(q > 0.0 && q <= 1.0) => Err(Error::Validation(
                format!("boundary quantile {q} outside (0, 1]"),
            )),
            _ => Ok(()),
        }
    }
}

impl Default for BoundarySelector {
    fn default() -> Self {
        BoundarySelector::Quantile(0.2)
    }
}

/// Reference-model margin of every sample.
pub fn margins(net: &DenseNetwork, dataset: &Dataset) -> Result<Vec<f64>> {
    par::map_indexed(dataset.len(), |i| nn::margin(net, &dataset.features()[i]))
        .into_iter()
        .collect()
}

/// Selects boundary indices from precomputed margins; result sorted ascending.
pub fn select_boundary(margins: &[f64], selector: BoundarySelector) -> Result<Vec<usize>> {
    selector.validate()?;
    match selector {
        BoundarySelector::Absolute(kappa) => Ok((0..margins.len())
            .filter(|&i| margins[i] <= kappa)
            .collect()),
        BoundarySelector::Quantile(q) => {
            let take = ((q * margins.len() as f64).ceil() as usize).min(margins.len());
            let mut order: Vec<usize> = (0..margins.len()).collect();
            order.sort_by(|&a, &b| margins[a].total_cmp(&margins[b]).then(a.cmp(&b)));
            let mut picked = order[..take].to_vec();
            picked.sort_unstable();
            Ok(picked)
        }
    }
}

pub fn boundary_subset(
    net: &DenseNetwork,
    dataset: &Dataset,
    selector: BoundarySelector,
) -> Result<Vec<usize>> {
    selector.validate()?;
    select_boundary(&margins(net, dataset)?, selector)
}

pub fn build_calibration_set(
    dataset: &Dataset,
    boundary_points: &[BoundaryPoint],
    net: &DenseNetwork,
) -> Result<CalibrationSet> {
    if dataset.dim() != net.input_dim() {
        return Err(Error::Validation(format!(
            "dataset dimension {} does not match network input {}",
            dataset.dim(),
            net.input_dim()
        )));
    }
    let mut features = dataset.features().to_vec();
    let mut labels = dataset.labels().to_vec();
    for p in boundary_points {
        if p.midpoint.len() != net.input_dim() {
            return Err(Error::Validation(format!(
                "boundary point has dimension {}, expected {}",
                p.midpoint.len(),
                net.input_dim()
            )));
        }
        labels.push(nn::predict(net, &p.midpoint)?);
        features.push(p.midpoint.clone());
    }
    let combined = Dataset::new(
        format!("{}+boundary", dataset.name()),
        features,
        labels,
        dataset.class_count(),
    )?;
    Ok(CalibrationSet::from_parts(
        dataset.len(),
        boundary_points.to_vec(),
        combined,
    ))
}

pub fn save_boundary_points(points: &[BoundaryPoint], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(points)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_boundary_points(path: &Path) -> Result<Vec<BoundaryPoint>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
