use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ndecomp::boundary::BoundarySelector;
use ndecomp::contract::ContractReport;
use ndecomp::pipeline::{self, PipelineConfig};

#[derive(Parser)]
#[command(name = "ndecomp", version, about = "Decompose a dense classifier into class-wise components and check the decomposition contract")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or ingest) the dataset into <out>/data.csv.
    GenData(Common),
    /// Train the reference classifier into <out>/model.json.
    TrainRef(Common),
    /// Mine refined boundary points into <out>/boundary_points.json.
    MineBoundary(Common),
    /// Learn per-class masks into <out>/masks and reduced models into <out>/components.
    Decompose(Common),
    /// Evaluate the contract and write <out>/report.json. Exit 0 on PASS, 1 on FAIL.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory of mask_<k>.json files (relative paths resolve under --out).
        #[arg(long)]
        masks: Option<PathBuf>,
    },
    /// Run every stage. Exit 0 on PASS, 1 on FAIL.
    Run(Common),
    /// Print the built-in blobs fixture configuration as TOML.
    InitConfig {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// TOML pipeline configuration; the built-in blobs fixture when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for parallel stages (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Boundary subset as the q lowest-margin fraction.
    #[arg(long, conflicts_with = "kappa")]
    q: Option<f64>,
    /// Boundary subset as samples with margin <= kappa.
    #[arg(long)]
    kappa: Option<f64>,
    /// Target sparsity of the learned masks.
    #[arg(long)]
    s: Option<f64>,
    /// Mask initialisation: 0 uniform, 1 weight-magnitude.
    #[arg(long)]
    alpha: Option<f64>,
}

impl Common {
    fn config(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => PipelineConfig::blobs_fixture(0),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        let c = &mut cfg.contract;
        if let Some(v) = self.epsilon {
            c.epsilon = v;
        }
        if let Some(v) = self.gamma {
            c.gamma = v;
        }
        if let Some(v) = self.eta {
            c.eta = v;
        }
        if let Some(v) = self.delta {
            c.delta = v;
        }
        if let Some(v) = self.q {
            c.boundary = BoundarySelector::Quantile(v);
        }
        if let Some(v) = self.kappa {
            c.boundary = BoundarySelector::Absolute(v);
        }
        if let Some(v) = self.s {
            cfg.lbmask.target_sparsity = v;
        }
        if let Some(v) = self.alpha {
            cfg.lbmask.init_alpha = v;
        }
        cfg.validate().context("invalid configuration")?;
        Ok(cfg)
    }
}

fn print_report(report: &ContractReport, out: &Path) {
    let mark = |ok: bool| if ok { "ok" } else { "violated" };
    println!(
        "boundary samples {} of {}; disagreement {:.4} + h {:.4} = {:.4} (<= {}: {})",
        report.n_boundary,
        report.n_samples,
        report.dis_hat,
        report.hoeffding.h,
        report.dis_plus_h,
        report.params.epsilon,
        mark(report.conditions.semantic)
    );
    println!(
        "max overlap {:.4} (<= {}: {}); min prune {:.4} (>= {}: {})",
        report.max_overlap,
        report.params.gamma,
        mark(report.conditions.overlap),
        report.min_prune,
        report.params.eta,
        mark(report.conditions.prune)
    );
    println!(
        "verdict: {}  ({})",
        if report.verdict() { "PASS" } else { "FAIL" },
        out.join(pipeline::REPORT_FILE).display()
    );
}

fn verdict_code(report: &ContractReport) -> ExitCode {
    if report.verdict() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::GenData(c) => {
            let cfg = c.config()?;
            let d = pipeline::gen_data(&cfg, &c.out)?;
            println!("wrote {} samples ({} features) to {}", d.len(), d.dim(), c.out.join(pipeline::DATA_FILE).display());
        }
        Command::TrainRef(c) => {
            let cfg = c.config()?;
            let net = pipeline::train_ref(&cfg, &c.out)?;
            let data = pipeline::load_dataset(&cfg, &c.out)?;
            println!(
                "trained {:?}, training accuracy {:.4}",
                net.arch(),
                ndecomp::nn::accuracy(&net, &data)?
            );
        }
        Command::MineBoundary(c) => {
            let cfg = c.config()?;
            let mined = pipeline::mine_boundary(&cfg, &c.out)?;
            let worst = mined.points.iter().map(|p| p.final_margin).fold(0.0, f64::max);
            println!(
                "{} boundary points from {} samples (flip rate {:.4}), largest final margin {:.3e}",
                mined.points.len(),
                mined.attempted,
                mined.flip_rate(),
                worst
            );
        }
        Command::Decompose(c) => {
            let cfg = c.config()?;
            let comps = pipeline::decompose(&cfg, &c.out)?;
            for comp in &comps {
                println!("class {}: {} units kept", comp.class_index(), comp.support().len());
            }
        }
        Command::Evaluate { common, masks } => {
            let cfg = common.config()?;
            let masks = masks.map(|m| common.out.join(m));
            let report = pipeline::evaluate(&cfg, &common.out, masks.as_deref())?;
            print_report(&report, &common.out);
            return Ok(verdict_code(&report));
        }
        Command::Run(c) => {
            let cfg = c.config()?;
            let report = pipeline::run_pipeline(&cfg, &c.out)?;
            print_report(&report, &c.out);
            return Ok(verdict_code(&report));
        }
        Command::InitConfig { seed } => {
            print!("{}", PipelineConfig::blobs_fixture(seed).to_toml()?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
