//! Desk-scale experiment commands: gradient checks, toy training, memory
//! reports, quantizer benchmarks and EER scoring. Every command renders CSV.

pub mod args;
pub mod data;
pub mod eer;
pub mod gradcheck;
pub mod memreport;
pub mod quantbench;
pub mod train;

use std::path::PathBuf;

pub use args::{run_main, Args};
pub use data::SynthDataset;
pub use eer::{eer, eer_canonical, Trials};
pub use train::TrainLog;

use crate::error::{config_err, Error, Result};
use crate::ops::fault::OpKind;
use crate::optim::{Hyper, OptimKind, DEFAULT_BLOCK_SIZE};
use crate::rev::{Mode, Network, ResidualKind};
use crate::scalar::Scalar;
use crate::zoo::{build, build_spec, toy_spec, AamConfig, NetworkSpec, RevType};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Gradcheck,
    Train,
    Memreport,
    Quantbench,
    Eer,
}

/// Reversible toy network: stages of reversible blocks with invertible or strided downsampling in between.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub blocks: Vec<usize>,
    pub width: usize,
    pub kind: ResidualKind,
    pub rev_type: RevType,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { blocks: vec![2, 2], width: 16, kind: ResidualKind::DfBottleneck, rev_type: RevType::TypeII }
    }
}

impl ToyConfig {
    pub fn spec(&self) -> Result<NetworkSpec> {
        toy_spec(&self.blocks, self.width, self.kind, self.rev_type)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NetSource {
    Toy(ToyConfig),
    Named(String),
    SpecFile(PathBuf),
}

impl NetSource {
    pub fn spec(&self) -> Result<NetworkSpec> {
        match self {
            NetSource::Toy(t) => t.spec(),
            NetSource::Named(name) => crate::zoo::registry::spec(name),
            NetSource::SpecFile(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| config_err!("cannot read spec file {}: {e}", path.display()))?;
                NetworkSpec::from_json(&text)
            }
        }
    }

    pub fn build<S: Scalar>(&self, seed: u64) -> Result<Network<S>> {
        match self {
            NetSource::Named(name) => build(name, seed),
            _ => build_spec(&self.spec()?, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub net: NetSource,
    /// `None` lets commands that compare modes run both.
    pub mode: Option<Mode>,
    pub optim: OptimKind,
    pub hyper: Hyper,
    pub aam: AamConfig,
    pub batch: Option<usize>,
    pub frames: Option<usize>,
    pub speakers: usize,
    pub separation: f64,
    pub steps: usize,
    pub seed: u64,
    pub use_f64: bool,
    pub out: Option<PathBuf>,
    pub embeddings_out: Option<PathBuf>,
    pub sweep: bool,
    pub elements: usize,
    pub scores: Option<PathBuf>,
    pub embeddings_in: Option<PathBuf>,
    pub corrupt_vjp: Option<OpKind>,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            net: NetSource::Toy(ToyConfig::default()),
            mode: None,
            optim: OptimKind::AdamW,
            hyper: default_hyper(OptimKind::AdamW),
            aam: AamConfig::default(),
            batch: None,
            frames: None,
            speakers: 3,
            separation: data::DEFAULT_SEPARATION,
            steps: 200,
            seed: 0,
            use_f64: false,
            out: None,
            embeddings_out: None,
            sweep: false,
            elements: 1_000_000,
            scores: None,
            embeddings_in: None,
            corrupt_vjp: None,
        }
    }

    pub fn with_optim(mut self, kind: OptimKind) -> Self {
        self.optim = kind;
        self.hyper = default_hyper(kind);
        self
    }

    pub fn mode_or(&self, default: Mode) -> Mode {
        self.mode.unwrap_or(default)
    }
}

/// Per-family defaults: SGD with momentum 0.9, AdamW with weight decay 0.05.
pub fn default_hyper(kind: OptimKind) -> Hyper {
    let base = Hyper { block_size: DEFAULT_BLOCK_SIZE, ..Hyper::default() };
    match kind {
        OptimKind::Sgd | OptimKind::Sgd8 => Hyper { lr: 0.01, momentum: 0.9, ..base },
        OptimKind::Adam => Hyper { lr: 1e-3, ..base },
        OptimKind::AdamW | OptimKind::Adam8 => Hyper { lr: 1e-3, weight_decay: 0.05, ..base },
    }
}

/// Rendered CSV plus the names of failed checks (empty on success).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub csv: String,
    pub failures: Vec<String>,
    pub summary: String,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn run(cfg: &RunConfig) -> Result<Report> {
    match cfg.command {
        Command::Gradcheck => gradcheck::run(cfg),
        Command::Train if cfg.use_f64 => train::run::<f64>(cfg).map(|(r, _)| r),
        Command::Train => train::run::<f32>(cfg).map(|(r, _)| r),
        Command::Memreport if cfg.use_f64 => memreport::run::<f64>(cfg),
        Command::Memreport => memreport::run::<f32>(cfg),
        Command::Quantbench => quantbench::run(cfg),
        Command::Eer => eer_command(cfg),
    }
}

fn eer_command(cfg: &RunConfig) -> Result<Report> {
    let trials = match (&cfg.scores, &cfg.embeddings_in) {
        (Some(path), None) => Trials::parse(&read(path)?)?,
        (None, Some(path)) => {
            let (labels, embeddings) = train::read_embeddings(&read(path)?)?;
            Trials::from_embeddings(&embeddings, &labels)?
        }
        _ => return Err(config_err!("eer needs exactly one of --scores or --embeddings")),
    };
    let e = trials.eer()?;
    Ok(Report {
        csv: format!("targets,nontargets,eer\n{},{},{e}\n", trials.target.len(), trials.nontarget.len()),
        failures: Vec::new(),
        summary: format!("EER {:.4}% over {} trials", 100.0 * e, trials.target.len() + trials.nontarget.len()),
    })
}

fn read(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))
}

/// Exit status for a finished command: 0 pass, 1 failed check or runtime error, 2 bad configuration.
pub fn exit_code(result: &Result<Report>) -> i32 {
    match result {
        Ok(r) if r.passed() => 0,
        Ok(_) => 1,
        Err(Error::Config(_)) => 2,
        Err(_) => 1,
    }
}
