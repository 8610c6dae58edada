//! Command-line grammar of the `revmem` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use super::{default_hyper, exit_code, run, Command, NetSource, RunConfig, ToyConfig};
use crate::error::{config_err, Error, Result};
use crate::ops::fault::OpKind;
use crate::optim::OptimKind;
use crate::rev::{Mode, ResidualKind};
use crate::zoo::RevType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CommandArg {
    Gradcheck,
    Train,
    Memreport,
    Quantbench,
    Eer,
}

impl From<CommandArg> for Command {
    fn from(c: CommandArg) -> Self {
        match c {
            CommandArg::Gradcheck => Command::Gradcheck,
            CommandArg::Train => Command::Train,
            CommandArg::Memreport => Command::Memreport,
            CommandArg::Quantbench => Command::Quantbench,
            CommandArg::Eer => Command::Eer,
        }
    }
}

#[derive(Clone, Debug, Parser)]
#[command(name = "revmem", version, about = "Reversible speaker networks: gradient checks, training, memory and quantizer reports")]
pub struct Args {
    pub command: CommandArg,
    /// Registry network name, or `toy` for the configurable toy network.
    #[arg(long, conflicts_with = "spec")]
    pub net: Option<String>,
    /// JSON network spec file.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// stored or reversible; commands comparing modes run both when unset.
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long, default_value = "adamw")]
    pub optim: OptimKind,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run in 64-bit precision.
    #[arg(long)]
    pub f64: bool,
    /// Output CSV path (stdout when unset).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Input frames per sample.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub speakers: usize,
    /// Spread of the synthetic speaker means relative to the noise.
    #[arg(long, default_value_t = super::data::DEFAULT_SEPARATION)]
    pub separation: f64,
    /// Reversible blocks per toy stage, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2,2")]
    pub blocks: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    /// Toy residual branch: basic, bottleneck or df_bottleneck.
    #[arg(long, default_value = "df_bottleneck")]
    pub kind: ResidualKind,
    /// Toy downsampling: 1 keeps strided layers, 2 uses invertible reshapes.
    #[arg(long, default_value_t = 2)]
    pub rev_type: u8,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub bias_correction: bool,
    #[arg(long)]
    pub block_size: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub scale: Option<f64>,
    /// memreport: sweep toy depths instead of reporting one network.
    #[arg(long)]
    pub sweep: bool,
    /// quantbench: elements per distribution.
    #[arg(long, default_value_t = 1_000_000)]
    pub elements: usize,
    /// eer: score file of `target|nontarget score` lines.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// eer: embeddings CSV written by `train --save-embeddings`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// train: write final embeddings to this CSV.
    #[arg(long)]
    pub save_embeddings: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub corrupt_vjp: Option<OpKind>,
}

impl Args {
    pub fn to_config(&self) -> Result<RunConfig> {
        let rev_type = match self.rev_type {
            1 => RevType::TypeI,
            2 => RevType::TypeII,
            t => return Err(config_err!("--rev-type must be 1 or 2, got {t}")),
        };
        let toy = ToyConfig { blocks: self.blocks.clone(), width: self.width, kind: self.kind, rev_type };
        let net = match (&self.net, &self.spec) {
            (_, Some(path)) => NetSource::SpecFile(path.clone()),
            (Some(name), None) if name != "toy" => NetSource::Named(name.clone()),
            _ => NetSource::Toy(toy),
        };
        let mut hyper = default_hyper(self.optim);
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut hyper.lr, self.lr);
        set(&mut hyper.momentum, self.momentum);
        set(&mut hyper.beta1, self.beta1);
        set(&mut hyper.beta2, self.beta2);
        set(&mut hyper.eps, self.eps);
        set(&mut hyper.weight_decay, self.weight_decay);
        hyper.bias_correction = self.bias_correction;
        if let Some(b) = self.block_size {
            hyper.block_size = b;
        }
        hyper.validate()?;
        let mut cfg = RunConfig::new(self.command.into());
        set(&mut cfg.aam.margin, self.margin);
        set(&mut cfg.aam.scale, self.scale);
        cfg.net = net;
        cfg.mode = self.mode;
        cfg.optim = self.optim;
        cfg.hyper = hyper;
        cfg.batch = self.batch;
        cfg.frames = self.frames;
        cfg.speakers = self.speakers;
        cfg.separation = self.separation;
        cfg.steps = self.steps;
        cfg.seed = self.seed;
        cfg.use_f64 = self.f64;
        cfg.out = self.out.clone();
        cfg.embeddings_out = self.save_embeddings.clone();
        cfg.sweep = self.sweep;
        cfg.elements = self.elements;
        cfg.scores = self.scores.clone();
        cfg.embeddings_in = self.embeddings.clone();
        cfg.corrupt_vjp = self.corrupt_vjp;
        Ok(cfg)
    }
}

/// Parses `argv`, runs the command, writes its CSV and returns the exit code.
pub fn run_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = args.to_config().and_then(|cfg| {
        let report = run(&cfg)?;
        match &cfg.out {
            Some(path) => std::fs::write(path, &report.csv)
                .map_err(|e| Error::InvalidArgument(format!("cannot write {}: {e}", path.display())))?,
            None => print!("{}", report.csv),
        }
        Ok(report)
    });
    match &result {
        Ok(r) if r.passed() => eprintln!("{}", r.summary),
        Ok(r) => eprintln!("{}\nfailed: {}", r.summary, r.failures.join(", ")),
        Err(e) => eprintln!("error: {e}"),
    }
    exit_code(&result)
}
