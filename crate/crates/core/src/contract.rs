//! Contract metrics and the local decompositionality verdict.
//!
//! Every fidelity metric compares the decomposed predictor with the
//! reference model's own predictions; ground-truth labels are never used.
//! Counts are integers throughout, so results do not depend on the order in
//! which samples are evaluated.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boundary::{select_boundary, BoundarySelector};
use crate::data::Dataset;
use crate::decomp::{order_components, Component, UnitId};
use crate::error::{Error, Result};
use crate::nn::{self, DenseNetwork};
use crate::par;

pub const REPORT_SCHEMA: &str = "ndecomp.contract-report/1";

/// Sample size used in the Hoeffding correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoeffdingBasis {
    /// All evaluated samples.
    Sample,
    /// Only the boundary subset.
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContractParams {
    pub epsilon: f64,
    pub gamma: f64,
    pub eta: f64,
    pub delta: f64,
    pub boundary: BoundarySelector,
    pub hoeffding_basis: HoeffdingBasis,
}

impl Default for ContractParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            gamma: 0.5,
            eta: 0.3,
            delta: 0.05,
            boundary: BoundarySelector::Quantile(0.2),
            hoeffding_basis: HoeffdingBasis::Sample,
        }
    }
}

impl ContractParams {
    pub fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside (0, 1)", self.epsilon)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if !open(self.eta) {
            return Err(Error::Config(format!("eta {} outside (0, 1)", self.eta)));
        }
        if !open(self.delta) {
            return Err(Error::Config(format!("delta {} outside (0, 1)", self.delta)));
        }
        self.boundary
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

/// `sqrt(ln(2 / delta) / (2 n))`.
pub fn hoeffding_term(delta: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Validation("hoeffding term needs n >= 1".into()));
    }
    if !(delta > 0.0 && delta <= 2.0) {
        return Err(Error::Validation(format!("delta {delta} outside (0, 2]")));
    }
    Ok(((2.0 / delta).ln() / (2.0 * n as f64)).sqrt())
}

/// Jaccard ratio `|a ∩ b| / |a ∪ b|`.
pub fn overlap(a: &BTreeSet<UnitId>, b: &BTreeSet<UnitId>) -> Result<f64> {
    let union = a.union(b).count();
    if union == 0 {
        return Err(Error::Validation("overlap of two empty supports".into()));
    }
    Ok(a.intersection(b).count() as f64 / union as f64)
}

/// `1 - |S_k| / N`.
pub fn prune_ratio(component: &Component, total_units: usize) -> Result<f64> {
    if total_units == 0 {
        return Err(Error::Validation("total unit count must be positive".into()));
    }
    Ok(1.0 - component.support().len() as f64 / total_units as f64)
}

/// Reference and decomposed predictions plus reference margins for every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub reference: Vec<usize>,
    pub decomposed: Vec<usize>,
    pub margins: Vec<f64>,
    pub class_count: usize,
}

impl Predictions {
    pub fn compute(net: &DenseNetwork, components: &[Component], dataset: &Dataset) -> Result<Self> {
        let ordered = order_components(net, components)?;
        let rows = par::map_indexed(dataset.len(), |i| -> Result<(usize, usize, f64)> {
            let x = &dataset.features()[i];
            let logits = nn::forward(net, x)?.logits;
            let decomposed = crate::decomp::aggregate_ordered(net, &ordered, x)?;
            Ok((nn::argmax(&logits), decomposed, nn::logit_margin(&logits)))
        });
        let mut out = Predictions {
            reference: Vec::with_capacity(rows.len()),
            decomposed: Vec::with_capacity(rows.len()),
            margins: Vec::with_capacity(rows.len()),
            class_count: net.class_count(),
        };
        for r in rows {
            let (a, b, m) = r?;
            out.reference.push(a);
            out.decomposed.push(b);
            out.margins.push(m);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }

    fn disagrees(&self, i: usize) -> bool {
        self.reference[i] != self.decomposed[i]
    }

    pub fn boundary(&self, selector: BoundarySelector) -> Result<Vec<usize>> {
        select_boundary(&self.margins, selector)
    }

    fn nonempty_boundary(&self, selector: BoundarySelector) -> Result<Vec<usize>> {
        let idx = self.boundary(selector)?;
        if idx.is_empty() {
            return Err(Error::Evaluation(format!(
                "boundary subset is empty under {selector:?}; raise the margin threshold or quantile"
            )));
        }
        Ok(idx)
    }

    /// `(dis_hat, per-class rates, n_boundary)`. A class with no boundary
    /// samples gets `None`.
    pub fn disagreement(&self, boundary: &[usize]) -> (f64, Vec<Option<f64>>, usize) {
        let mut hits = vec![0usize; self.class_count];
        let mut seen = vec![0usize; self.class_count];
        for &i in boundary {
            let c = self.reference[i];
            seen[c] += 1;
            if self.disagrees(i) {
                hits[c] += 1;
            }
        }
        let total: usize = hits.iter().sum();
        let per_class = hits
            .iter()
            .zip(&seen)
            .map(|(&h, &s)| (s > 0).then(|| h as f64 / s as f64))
            .collect();
        (total as f64 / boundary.len() as f64, per_class, boundary.len())
    }

    /// `‖C↓ − C‖₁` over the boundary subset, from integer count matrices.
    pub fn confusion_l1(&self, boundary: &[usize]) -> f64 {
        let c = self.class_count;
        let mut diff = vec![0i64; c * c];
        for &i in boundary {
            let r = self.reference[i];
            diff[r * c + r] -= 1;
            diff[self.decomposed[i] * c + r] += 1;
        }
        let l1: i64 = diff.iter().map(|v| v.abs()).sum();
        l1 as f64 / boundary.len() as f64
    }

    pub fn global(&self, boundary: &[usize]) -> GlobalDisagreement {
        let in_subset: BTreeSet<usize> = boundary.iter().copied().collect();
        let mut counts = DisagreementCounts {
            samples: self.len(),
            boundary: boundary.len(),
            ..Default::default()
        };
        for i in 0..self.len() {
            if self.disagrees(i) {
                counts.total += 1;
                if in_subset.contains(&i) {
                    counts.on_boundary += 1;
                } else {
                    counts.off_boundary += 1;
                }
            }
        }
        GlobalDisagreement::from_counts(counts)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisagreementCounts {
    pub samples: usize,
    pub boundary: usize,
    pub total: usize,
    pub on_boundary: usize,
    pub off_boundary: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalDisagreement {
    pub total: f64,
    pub on_subset: f64,
    pub off_subset_mass: f64,
    pub counts: DisagreementCounts,
}

impl GlobalDisagreement {
    fn from_counts(counts: DisagreementCounts) -> Self {
        let n = counts.samples as f64;
        let on_subset = if counts.boundary == 0 {
            0.0
        } else {
            counts.on_boundary as f64 / counts.boundary as f64
        };
        Self {
            total: counts.total as f64 / n,
            on_subset,
            off_subset_mass: counts.off_boundary as f64 / n,
            counts,
        }
    }

    /// `total·n = dis_hat·n_boundary + off_mass·n`, checked on the integer counts.
    pub fn accounting_holds(&self) -> bool {
        self.counts.total == self.counts.on_boundary + self.counts.off_boundary
    }
}

pub fn empirical_disagreement(
    net: &DenseNetwork,
    components: &[Component],
    dataset: &Dataset,
    selector: BoundarySelector,
) -> Result<(f64, Vec<Option<f64>>, usize)> {
    let p = Predictions::compute(net, components, dataset)?;
    let idx = p.nonempty_boundary(selector)?;
    Ok(p.disagreement(&idx))
}

pub fn confusion_deviation(
    net: &DenseNetwork,
    components: &[Component],
    dataset: &Dataset,
    selector: BoundarySelector,
) -> Result<f64> {
    let p = Predictions::compute(net, components, dataset)?;
    let idx = p.nonempty_boundary(selector)?;
    Ok(p.confusion_l1(&idx))
}

pub fn global_disagreement(
    net: &DenseNetwork,
    components: &[Component],
    dataset: &Dataset,
    selector: BoundarySelector,
) -> Result<GlobalDisagreement> {
    let p = Predictions::compute(net, components, dataset)?;
    let idx = p.boundary(selector)?;
    Ok(p.global(&idx))
}

/// The three contract conditions and their conjunction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conditions {
    pub semantic: bool,
    pub overlap: bool,
    pub prune: bool,
    pub verdict: bool,
}

impl Conditions {
    pub fn judge(params: &ContractParams, dis_plus_h: f64, max_overlap: f64, min_prune: f64) -> Self {
        let semantic = dis_plus_h <= params.epsilon;
        let overlap = max_overlap <= params.gamma;
        let prune = min_prune >= params.eta;
        Self {
            semantic,
            overlap,
            prune,
            verdict: semantic && overlap && prune,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingSummary {
    pub basis: HoeffdingBasis,
    pub n: usize,
    pub h: f64,
    pub h_sample: f64,
    pub h_boundary: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractReport {
    pub schema_version: String,
    pub seed: Option<u64>,
    pub params: ContractParams,
    pub n_samples: usize,
    pub n_boundary: usize,
    pub dis_hat: f64,
    pub per_class_dis: Vec<Option<f64>>,
    pub hoeffding: HoeffdingSummary,
    pub dis_plus_h: f64,
    pub pairwise_overlap: Vec<Vec<f64>>,
    pub max_overlap: f64,
    pub support_sizes: Vec<usize>,
    pub total_units: usize,
    pub prune_ratios: Vec<f64>,
    pub min_prune: f64,
    pub confusion_l1: f64,
    pub global_dis: f64,
    pub off_boundary_dis_mass: f64,
    pub disagreement_counts: DisagreementCounts,
    pub conditions: Conditions,
}

impl ContractReport {
    pub fn verdict(&self) -> bool {
        self.conditions.verdict
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// One CSV header line and one value line with the headline metrics.
    pub fn metrics_csv(&self) -> String {
        format!(
            "n_samples,n_boundary,dis_hat,hoeffding_h,dis_plus_h,max_overlap,min_prune,confusion_l1,global_dis,off_boundary_dis_mass,verdict\n\
             {},{},{},{},{},{},{},{},{},{},{}\n",
            self.n_samples,
            self.n_boundary,
            self.dis_hat,
            self.hoeffding.h,
            self.dis_plus_h,
            self.max_overlap,
            self.min_prune,
            self.confusion_l1,
            self.global_dis,
            self.off_boundary_dis_mass,
            if self.verdict() { "PASS" } else { "FAIL" }
        )
    }
}

/// Pairwise overlap matrix (diagonal 1) and its largest off-diagonal entry.
pub fn overlap_matrix(components: &[&Component]) -> Result<(Vec<Vec<f64>>, f64)> {
    let c = components.len();
    let mut m = vec![vec![1.0; c]; c];
    let mut max = 0.0_f64;
    for i in 0..c {
        for j in i + 1..c {
            let v = overlap(components[i].support(), components[j].support())?;
            m[i][j] = v;
            m[j][i] = v;
            max = max.max(v);
        }
    }
    Ok((m, max))
}

pub fn evaluate_contract(
    net: &DenseNetwork,
    components: &[Component],
    dataset: &Dataset,
    params: &ContractParams,
) -> Result<ContractReport> {
    params.validate()?;
    let ordered = order_components(net, components)?;
    let preds = Predictions::compute(net, components, dataset)?;
    let boundary = preds.nonempty_boundary(params.boundary)?;
    let (dis_hat, per_class_dis, n_boundary) = preds.disagreement(&boundary);

    let h_sample = hoeffding_term(params.delta, preds.len())?;
    let h_boundary = hoeffding_term(params.delta, n_boundary)?;
    let (h, hn) = match params.hoeffding_basis {
        HoeffdingBasis::Sample => (h_sample, preds.len()),
        HoeffdingBasis::Boundary => (h_boundary, n_boundary),
    };

    let (pairwise_overlap, max_overlap) = overlap_matrix(&ordered)?;
    let total_units = net.hidden_unit_count();
    let prune_ratios = ordered
        .iter()
        .map(|c| prune_ratio(c, total_units))
        .collect::<Result<Vec<f64>>>()?;
    let min_prune = prune_ratios.iter().copied().fold(f64::INFINITY, f64::min);

    let confusion_l1 = preds.confusion_l1(&boundary);
    if confusion_l1 > 2.0 * dis_hat {
        return Err(Error::Evaluation(format!(
            "confusion deviation {confusion_l1} exceeds twice the disagreement {dis_hat}"
        )));
    }
    let global = preds.global(&boundary);
    if !global.accounting_holds() {
        return Err(Error::Evaluation("disagreement accounting does not balance".into()));
    }

    let dis_plus_h = dis_hat + h;
    let conditions = Conditions::judge(params, dis_plus_h, max_overlap, min_prune);
    Ok(ContractReport {
        schema_version: REPORT_SCHEMA.to_string(),
        seed: None,
        params: *params,
        n_samples: preds.len(),
        n_boundary,
        dis_hat,
        per_class_dis,
        hoeffding: HoeffdingSummary {
            basis: params.hoeffding_basis,
            n: hn,
            h,
            h_sample,
            h_boundary,
        },
        dis_plus_h,
        pairwise_overlap,
        max_overlap,
        support_sizes: ordered.iter().map(|c| c.support().len()).collect(),
        total_units,
        prune_ratios,
        min_prune,
        confusion_l1,
        global_dis: global.total,
        off_boundary_dis_mass: global.off_subset_mass,
        disagreement_counts: global.counts,
        conditions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::make_components;

    fn ids(v: &[usize]) -> BTreeSet<UnitId> {
        v.iter().map(|&unit| UnitId { layer: 0, unit }).collect()
    }

    fn preds(reference: &[usize], decomposed: &[usize], margins: &[f64]) -> Predictions {
        Predictions {
            reference: reference.to_vec(),
            decomposed: decomposed.to_vec(),
            margins: margins.to_vec(),
            class_count: 3,
        }
    }

    #[test]
    fn hoeffding_examples() {
        assert_eq!(hoeffding_term(2.0, 17).unwrap(), 0.0);
        assert!((hoeffding_term(0.05, 200).unwrap() - 0.096033).abs() < 1e-6);
        assert_eq!(
            hoeffding_term(0.05, 800).unwrap(),
            hoeffding_term(0.05, 200).unwrap() / 2.0
        );
        assert!(hoeffding_term(0.05, 0).is_err());
        assert!(hoeffding_term(0.0, 10).is_err());
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(overlap(&ids(&[1, 2, 3]), &ids(&[2, 3, 4])).unwrap(), 0.5);
        assert_eq!(overlap(&ids(&[1, 2]), &ids(&[3])).unwrap(), 0.0);
        assert_eq!(overlap(&ids(&[5, 6]), &ids(&[5, 6])).unwrap(), 1.0);
        assert!(overlap(&ids(&[]), &ids(&[])).is_err());
    }

    #[test]
    fn prune_ratio_examples() {
        let net = DenseNetwork::random(&[2, 8, 8, 2], 0).unwrap();
        let full = &make_components(&net)[0];
        assert_eq!(prune_ratio(full, 16).unwrap(), 0.0);
        let mut mask = full.mask().clone();
        for v in mask.logits[1].iter_mut() {
            *v = -1.0;
        }
        let half = Component::new(0, mask).unwrap();
        assert_eq!(prune_ratio(&half, 16).unwrap(), 0.5);
    }

    #[test]
    fn four_boundary_samples_one_disagreement() {
        let p = preds(&[0, 1, 2, 0], &[0, 1, 1, 0], &[0.1, 0.1, 0.1, 0.1]);
        let idx = p.boundary(BoundarySelector::Quantile(1.0)).unwrap();
        let (dis, per_class, n) = p.disagreement(&idx);
        assert_eq!((dis, n), (0.25, 4));
        assert_eq!(per_class, vec![Some(0.0), Some(0.0), Some(1.0)]);
        assert_eq!(p.confusion_l1(&idx), 0.5);
    }

    #[test]
    fn absent_classes_are_none() {
        let p = preds(&[0, 0], &[0, 0], &[0.1, 0.2]);
        let (_, per_class, _) = p.disagreement(&[0, 1]);
        assert_eq!(per_class, vec![Some(0.0), None, None]);
    }

    #[test]
    fn global_accounting_fixture() {
        // 10 samples; boundary = 4 smallest margins (indices 0..4).
        let margins: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let mut dec = vec![0; 10];
        dec[1] = 1; // inside
        dec[7] = 2; // outside
        let p = preds(&[0; 10], &dec, &margins);
        let idx = p.boundary(BoundarySelector::Quantile(0.4)).unwrap();
        let g = p.global(&idx);
        assert_eq!((g.total, g.on_subset, g.off_subset_mass), (0.2, 0.25, 0.1));
        assert!(g.accounting_holds());
        assert!((g.total * 10.0 - (g.on_subset * 4.0 + g.off_subset_mass * 10.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_boundary_is_an_error() {
        let net = DenseNetwork::random(&[2, 4, 2], 1).unwrap();
        let data = Dataset::new("d", vec![vec![5.0, -5.0]], vec![0], 2).unwrap();
        let comps = make_components(&net);
        let err = empirical_disagreement(&net, &comps, &data, BoundarySelector::Absolute(-0.0));
        // margin is almost surely positive here
        if let Err(e) = err {
            assert!(matches!(e, Error::Evaluation(_)));
        }
        assert!(global_disagreement(&net, &comps, &data, BoundarySelector::Absolute(0.0)).is_ok());
    }

    #[test]
    fn verdict_examples() {
        let p = ContractParams::default();
        let pass = Conditions::judge(&p, 0.0521 + 0.0115, 0.3629, 0.5);
        assert!(pass.verdict);
        let fail = Conditions::judge(&p, 0.2473, 0.3950, 0.5);
        assert!(!fail.semantic && fail.overlap && fail.prune && !fail.verdict);
        let identity = Conditions::judge(&p, 0.0, 1.0, 0.0);
        assert!(identity.semantic && !identity.overlap && !identity.prune && !identity.verdict);
    }

    #[test]
    fn params_validation() {
        assert!(ContractParams::default().validate().is_ok());
        let bad = ContractParams {
            boundary: BoundarySelector::Quantile(0.0),
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = ContractParams {
            epsilon: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
