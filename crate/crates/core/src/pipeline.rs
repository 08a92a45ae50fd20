//! End-to-end decomposition run driven by a [`PipelineConfig`].
//!
//! Each stage reads its inputs from the output directory and writes its
//! artifacts back there, so running the stages one by one gives the same
//! files as [`run_pipeline`]:
//!
//! | stage           | reads                                    | writes                          |
//! |-----------------|------------------------------------------|---------------------------------|
//! | `gen_data`      | config                                   | `data.csv`                      |
//! | `train_ref`     | `data.csv`                               | `model.json`                    |
//! | `mine_boundary` | `data.csv`, `model.json`                 | `boundary_points.json`          |
//! | `decompose`     | the above                                | `masks/`, `components/`         |
//! | `evaluate`      | `data.csv`, `model.json`, `masks/`       | `report.json`, `metrics.csv`    |
//!
//! Stage seeds are derived from the master seed and the stage name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boundary::{self, BoundaryPoint, PgdConfig};
use crate::contract::{self, ContractParams, ContractReport};
use crate::data::{self, Dataset};
use crate::decomp::{self, Component, LbmaskConfig, MaskState};
use crate::error::{Error, Result};
use crate::nn::{self, DenseNetwork, TrainConfig};
use crate::{par, seed};

pub const DATA_FILE: &str = "data.csv";
pub const MODEL_FILE: &str = "model.json";
pub const BOUNDARY_FILE: &str = "boundary_points.json";
pub const MASK_DIR: &str = "masks";
pub const COMPONENT_DIR: &str = "components";
pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Blobs {
        class_count: usize,
        dim: usize,
        per_class: usize,
        separation: f64,
        #[serde(default)]
        redundancy: usize,
    },
    Csv {
        path: PathBuf,
        class_count: usize,
    },
}

impl DatasetSource {
    pub fn class_count(&self) -> usize {
        match *self {
            DatasetSource::Blobs { class_count, .. } | DatasetSource::Csv { class_count, .. } => {
                class_count
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Hidden layer widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 32,
        }
    }
}

/// PGD settings; unset radius and step fall back to [`PgdConfig::for_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    pub ball_radius: Option<f64>,
    pub step_size: Option<f64>,
    pub steps: usize,
    pub random_start: bool,
    pub margin_tol: f64,
    pub max_iters: usize,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            ball_radius: None,
            step_size: None,
            steps: 20,
            random_start: true,
            margin_tol: boundary::DEFAULT_MARGIN_TOL,
            max_iters: boundary::DEFAULT_MAX_ITERS,
        }
    }
}

impl BoundaryConfig {
    pub fn pgd_for(&self, dataset: &Dataset, seed: u64) -> PgdConfig {
        let base = PgdConfig::for_dataset(dataset, seed);
        let ball_radius = self.ball_radius.unwrap_or(base.ball_radius);
        PgdConfig {
            ball_radius,
            step_size: self.step_size.unwrap_or(ball_radius / 10.0),
            steps: self.steps,
            random_start: self.random_start,
            seed,
        }
    }
}

fn default_lbmask() -> LbmaskConfig {
    LbmaskConfig {
        learning_rate: 0.5,
        steps: 1500,
        batch_size: 64,
        sparsity_weight: 20.0,
        ..LbmaskConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub workers: usize,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    /// `seed` in this table is ignored; the stage seed is derived.
    #[serde(default = "default_lbmask")]
    pub lbmask: LbmaskConfig,
    #[serde(default)]
    pub contract: ContractParams,
}

impl PipelineConfig {
    /// The desk-scale blobs fixture: 4 classes, 20 features of which 10 are
    /// duplicates, separation 8, 200 samples per class.
    pub fn blobs_fixture(seed: u64) -> Self {
        Self {
            seed,
            workers: 0,
            dataset: DatasetSource::Blobs {
                class_count: 4,
                dim: 20,
                per_class: 200,
                separation: 8.0,
                redundancy: 10,
            },
            reference: ReferenceConfig::default(),
            boundary: BoundaryConfig::default(),
            lbmask: default_lbmask(),
            contract: ContractParams::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every nested setting before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.dataset.class_count() < 2 {
            return Err(Error::Config("dataset class_count must be at least 2".into()));
        }
        if self.reference.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if self.reference.batch_size == 0 || !(self.reference.learning_rate > 0.0) {
            return Err(Error::Config(
                "reference batch_size and learning_rate must be positive".into(),
            ));
        }
        if self.boundary.steps == 0 {
            return Err(Error::Config("boundary steps must be >= 1".into()));
        }
        if !(self.boundary.margin_tol >= 0.0) {
            return Err(Error::Config("boundary margin_tol must be >= 0".into()));
        }
        self.lbmask.validate()?;
        self.contract.validate()
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        seed::derive(self.seed, stage)
    }
}

fn require(path: PathBuf, hint: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact {
            path,
            hint: hint.to_string(),
        })
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn mask_path(dir: &Path, class_index: usize) -> PathBuf {
    dir.join(format!("mask_{class_index}.json"))
}

pub fn component_path(dir: &Path, class_index: usize) -> PathBuf {
    dir.join(format!("component_{class_index}.json"))
}

pub fn load_dataset(cfg: &PipelineConfig, out: &Path) -> Result<Dataset> {
    let path = require(out.join(DATA_FILE), "run `gen-data` first")?;
    data::load_csv(&path, cfg.dataset.class_count())
}

pub fn load_model(out: &Path) -> Result<DenseNetwork> {
    let path = require(out.join(MODEL_FILE), "run `train-ref` first")?;
    DenseNetwork::load(&path)
}

/// Stage 0: generate or ingest the dataset and write `data.csv`.
pub fn gen_data(cfg: &PipelineConfig, out: &Path) -> Result<Dataset> {
    ensure_dir(out)?;
    let dataset = match &cfg.dataset {
        DatasetSource::Blobs {
            class_count,
            dim,
            per_class,
            separation,
            redundancy,
        } => data::gen_blobs(
            *class_count,
            *dim,
            *per_class,
            *separation,
            *redundancy,
            cfg.stage_seed("data"),
        )?,
        DatasetSource::Csv { path, class_count } => data::load_csv(path, *class_count)?,
    };
    dataset.save_csv(&out.join(DATA_FILE))?;
    Ok(dataset)
}

/// Train the reference classifier and write `model.json`.
pub fn train_ref(cfg: &PipelineConfig, out: &Path) -> Result<DenseNetwork> {
    let dataset = load_dataset(cfg, out)?;
    let mut arch = vec![dataset.dim()];
    arch.extend(&cfg.reference.hidden);
    arch.push(dataset.class_count());
    let hyper = TrainConfig {
        learning_rate: cfg.reference.learning_rate,
        epochs: cfg.reference.epochs,
        batch_size: cfg.reference.batch_size,
        seed: cfg.stage_seed("reference"),
    };
    let net = nn::train_reference(&dataset, &arch, &hyper)?;
    net.save(&out.join(MODEL_FILE))?;
    Ok(net)
}

/// PGD + bisection; writes `boundary_points.json`.
pub fn mine_boundary(cfg: &PipelineConfig, out: &Path) -> Result<boundary::MiningResult> {
    let dataset = load_dataset(cfg, out)?;
    let net = load_model(out)?;
    let pgd = cfg.boundary.pgd_for(&dataset, cfg.stage_seed("boundary"));
    let mined = par::with_workers(cfg.workers, || {
        boundary::mine_boundary(
            &net,
            &dataset,
            &pgd,
            cfg.boundary.margin_tol,
            cfg.boundary.max_iters,
        )
    })?;
    boundary::save_boundary_points(&mined.points, &out.join(BOUNDARY_FILE))?;
    Ok(mined)
}

/// Learns one mask per class on the calibration set; writes mask files and
/// surgically reduced component models.
pub fn decompose(cfg: &PipelineConfig, out: &Path) -> Result<Vec<Component>> {
    let dataset = load_dataset(cfg, out)?;
    let net = load_model(out)?;
    let points: Vec<BoundaryPoint> = boundary::load_boundary_points(&require(
        out.join(BOUNDARY_FILE),
        "run `mine-boundary` first",
    )?)?;
    let calibration = boundary::build_calibration_set(&dataset, &points, &net)?;
    let lbmask = LbmaskConfig {
        seed: cfg.stage_seed("lbmask"),
        ..cfg.lbmask
    };
    let components = par::with_workers(cfg.workers, || {
        decomp::train_components(&net, &calibration, &lbmask)
    })?;

    let mask_dir = out.join(MASK_DIR);
    let comp_dir = out.join(COMPONENT_DIR);
    ensure_dir(&mask_dir)?;
    ensure_dir(&comp_dir)?;
    for c in &components {
        c.mask().save(c.class_index(), &mask_path(&mask_dir, c.class_index()))?;
        let reduced = decomp::dimension_surgery(&net, c.binary_mask())?;
        reduced.save(&component_path(&comp_dir, c.class_index()))?;
    }
    Ok(components)
}

/// Reads every `mask_<k>.json` in `dir` for `class_count` classes.
pub fn load_components(dir: &Path, class_count: usize) -> Result<Vec<Component>> {
    (0..class_count)
        .map(|k| {
            let path = require(mask_path(dir, k), "run `decompose` or supply --masks")?;
            let (class_index, mask) = MaskState::load(&path)?;
            if class_index != k {
                return Err(Error::Config(format!(
                    "{} declares class {class_index}, expected {k}",
                    path.display()
                )));
            }
            Component::new(class_index, mask)
        })
        .collect()
}

/// Contract evaluation on the dataset; `masks` defaults to `<out>/masks`.
pub fn evaluate(cfg: &PipelineConfig, out: &Path, masks: Option<&Path>) -> Result<ContractReport> {
    let dataset = load_dataset(cfg, out)?;
    let net = load_model(out)?;
    let mask_dir = masks.map_or_else(|| out.join(MASK_DIR), Path::to_path_buf);
    let components = load_components(&mask_dir, net.class_count())?;
    let mut report = par::with_workers(cfg.workers, || {
        contract::evaluate_contract(&net, &components, &dataset, &cfg.contract)
    })?;
    report.seed = Some(cfg.seed);
    report.save(&out.join(REPORT_FILE))?;
    let metrics = out.join(METRICS_FILE);
    std::fs::write(&metrics, report.metrics_csv()).map_err(|e| Error::io(&metrics, e))?;
    Ok(report)
}

/// All stages in order.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<ContractReport> {
    cfg.validate()?;
    gen_data(cfg, out).map_err(|e| e.in_stage("gen-data"))?;
    train_ref(cfg, out).map_err(|e| e.in_stage("train-ref"))?;
    mine_boundary(cfg, out).map_err(|e| e.in_stage("mine-boundary"))?;
    decompose(cfg, out).map_err(|e| e.in_stage("decompose"))?;
    evaluate(cfg, out, None).map_err(|e| e.in_stage("evaluate"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::BoundarySelector;

    #[test]
    fn fixture_round_trips_through_toml() {
        let cfg = PipelineConfig::blobs_fixture(7);
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let cfg = PipelineConfig::from_toml(
            "seed = 3\n[dataset]\nsource = \"blobs\"\nclass_count = 3\ndim = 4\nper_class = 10\nseparation = 5.0\n",
        )
        .unwrap();
        assert_eq!(cfg.lbmask, default_lbmask());
        assert_eq!(cfg.contract, ContractParams::default());
    }

    #[test]
    fn zero_quantile_is_rejected_up_front() {
        let mut cfg = PipelineConfig::blobs_fixture(1);
        cfg.contract.boundary = BoundarySelector::Quantile(0.0);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let dir = tempfile::tempdir().unwrap();
        assert!(run_pipeline(&cfg, dir.path()).is_err());
        assert!(!dir.path().join(DATA_FILE).exists());
    }

    #[test]
    fn missing_model_names_the_file() {
        let cfg = PipelineConfig::blobs_fixture(1);
        let dir = tempfile::tempdir().unwrap();
        gen_data(&cfg, dir.path()).unwrap();
        let err = decompose(&cfg, dir.path()).unwrap_err();
        match err {
            Error::MissingArtifact { path, .. } => assert!(path.ends_with(MODEL_FILE)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn stage_seeds_differ() {
        let cfg = PipelineConfig::blobs_fixture(1);
        assert_ne!(cfg.stage_seed("data"), cfg.stage_seed("reference"));
    }
}
