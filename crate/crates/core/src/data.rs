//! Labeled datasets: CSV ingestion, synthetic blobs and deterministic splits.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::boundary::BoundaryPoint;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    class_count: usize,
    name: String,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Validation("dataset is empty".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if class_count < 2 {
            return Err(Error::Validation("class_count must be at least 2".into()));
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(Error::Validation("feature dimension must be positive".into()));
        }
        for (i, (row, &y)) in features.iter().zip(&labels).enumerate() {
            if row.len() != dim {
                return Err(Error::Validation(format!(
                    "row {i} has {} features, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("row {i} has a non-finite feature")));
            }
            if y >= class_count {
                return Err(Error::Validation(format!(
                    "row {i} has label {y}, outside [0, {class_count})"
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            class_count,
            name: name.into(),
        })
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    /// Population standard deviation of each feature column.
    pub fn feature_std(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.dim())
            .map(|j| {
                let mean = self.features.iter().map(|r| r[j]).sum::<f64>() / n;
                let var = self.features.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                var.sqrt()
            })
            .collect()
    }

    fn subset(&self, name: String, idx: &[usize]) -> Result<Self> {
        Dataset::new(
            name,
            idx.iter().map(|&i| self.features[i].clone()).collect(),
            idx.iter().map(|&i| self.labels[i]).collect(),
            self.class_count,
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (row, y) in self.features.iter().zip(&self.labels) {
            for v in row {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{y}");
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Parses headerless CSV: `d` numeric columns then an integer label.
pub fn parse_csv(text: &str, class_count: usize, name: &str) -> Result<Dataset> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() < 2 {
            return Err(Error::Parse {
                line: lineno,
                message: "expected at least one feature and a label".into(),
            });
        }
        let (label_col, feature_cols) = cols.split_last().expect("nonempty");
        let row = feature_cols
            .iter()
            .map(|c| {
                c.parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno,
                    message: format!("bad feature `{c}`: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: lineno,
                message: format!("non-finite feature {v}"),
            });
        }
        let label: usize = label_col.parse().map_err(|e| Error::Parse {
            line: lineno,
            message: format!("bad label `{label_col}`: {e}"),
        })?;
        if label >= class_count {
            return Err(Error::Validation(format!(
                "line {lineno}: label {label} outside [0, {class_count})"
            )));
        }
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected {d} features, found {}", row.len()),
                })
            }
            _ => {}
        }
        features.push(row);
        labels.push(label);
    }
    Dataset::new(name, features, labels, class_count)
}

pub fn load_csv(path: &Path, class_count: usize) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_csv(&text, class_count, &name)
}

/// Gaussian clusters with engineered coordinate redundancy.
///
/// Cluster centres live in the first `dim - redundancy` coordinates and are
/// rescaled so the closest pair sits exactly `separation` apart. Noise is unit
/// variance. The last `redundancy` columns copy the first `redundancy` columns.
/// Samples are grouped by class.
pub fn gen_blobs(
    class_count: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    redundancy: usize,
    seed: u64,
) -> Result<Dataset> {
    if class_count < 2 || dim == 0 || per_class == 0 {
        return Err(Error::Validation(
            "gen_blobs needs class_count >= 2, dim >= 1 and per_class >= 1".into(),
        ));
    }
    if !(separation.is_finite() && separation > 0.0) {
        return Err(Error::Validation("separation must be positive".into()));
    }
    if 2 * redundancy > dim {
        return Err(Error::Validation(format!(
            "redundancy {redundancy} needs at least {redundancy} free columns to copy (dim {dim})"
        )));
    }
    let base = dim - redundancy;
    let mut rng = seed::rng(seed);
    let mut centers: Vec<Vec<f64>> = (0..class_count)
        .map(|_| (0..base).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut closest = f64::INFINITY;
    for i in 0..class_count {
        for j in i + 1..class_count {
            closest = closest.min(dist(&centers[i], &centers[j]));
        }
    }
    if !(closest > 0.0) {
        return Err(Error::Validation("degenerate cluster centres".into()));
    }
    let scale = separation / closest;
    for c in &mut centers {
        for v in c.iter_mut() {
            *v *= scale;
        }
    }

    let mut features = Vec::with_capacity(class_count * per_class);
    let mut labels = Vec::with_capacity(class_count * per_class);
    for (k, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let mut row: Vec<f64> = center
                .iter()
                .map(|&c| c + rng.sample::<f64, _>(StandardNormal))
                .collect();
            row.extend_from_within(..redundancy);
            features.push(row);
            labels.push(k);
        }
    }
    Dataset::new(
        format!("blobs-c{class_count}-d{dim}-r{redundancy}"),
        features,
        labels,
        class_count,
    )
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Shuffled split into sizes `ceil(fraction * n)` and the remainder.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Validation(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    let n = dataset.len();
    let head = (fraction * n as f64).ceil() as usize;
    if head == 0 || head >= n {
        return Err(Error::Validation(format!(
            "split of {n} samples at {fraction} leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let (a, b) = order.split_at(head);
    Ok((
        dataset.subset(format!("{}-a", dataset.name), a)?,
        dataset.subset(format!("{}-b", dataset.name), b)?,
    ))
}

/// Base samples followed by refined boundary midpoints labelled by the
/// reference model.
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    base_len: usize,
    boundary_points: Vec<BoundaryPoint>,
    combined: Dataset,
}

impl CalibrationSet {
    pub(crate) fn from_parts(
        base_len: usize,
        boundary_points: Vec<BoundaryPoint>,
        combined: Dataset,
    ) -> Self {
        Self {
            base_len,
            boundary_points,
            combined,
        }
    }

    pub fn base_len(&self) -> usize {
        self.base_len
    }

    pub fn boundary_points(&self) -> &[BoundaryPoint] {
        &self.boundary_points
    }

    pub fn combined(&self) -> &Dataset {
        &self.combined
    }

    pub fn len(&self) -> usize {
        self.combined.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combined.is_empty()
    }
}
