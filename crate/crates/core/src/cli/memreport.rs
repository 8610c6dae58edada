//! Analytic memory ledgers per network and mode, with an optional depth sweep.

use std::fmt::Write;

use super::{NetSource, Report, RunConfig, ToyConfig};
use crate::error::{config_err, Result};
use crate::optim::Optimizer;
use crate::rev::{plan, Category, MemoryLedger, Mode, Network};
use crate::scalar::Scalar;

/// Total reversible blocks per network in the sweep.
pub const SWEEP_DEPTHS: [usize; 4] = [4, 8, 16, 32];
pub const DEFAULT_BATCH: usize = 64;
pub const DEFAULT_FRAMES: usize = 200;

const HEADER: &str = "net,mode,batch,frames,rev_blocks,params,category,bytes,share\n";

/// Ledger of one training step, optimizer states included.
pub fn ledger<S: Scalar>(net: &Network<S>, cfg: &RunConfig, mode: Mode) -> Result<MemoryLedger> {
    let shape = net.input_shape(cfg.batch.unwrap_or(DEFAULT_BATCH), cfg.frames.unwrap_or(DEFAULT_FRAMES));
    let mut l = plan(net, shape, mode)?;
    let sizes: Vec<usize> = net.params().iter().map(|p| p.numel()).collect();
    l.optimizer_states = Optimizer::<S>::state_bytes_for(cfg.optim, cfg.hyper.block_size, &sizes);
    Ok(l)
}

fn push_rows<S: Scalar>(csv: &mut String, net: &Network<S>, cfg: &RunConfig, mode: Mode, l: &MemoryLedger) {
    let prefix = format!(
        "{},{},{},{},{},{}",
        net.name,
        mode.name(),
        cfg.batch.unwrap_or(DEFAULT_BATCH),
        cfg.frames.unwrap_or(DEFAULT_FRAMES),
        net.rev_block_count(),
        net.param_count()
    );
    for c in Category::ALL {
        let _ = writeln!(csv, "{prefix},{},{},{:.6}", c.name(), l.get(c), l.share(c));
    }
    let _ = writeln!(csv, "{prefix},transient,{},{:.6}", l.transient, l.transient as f64 / l.total().max(1) as f64);
    let _ = writeln!(csv, "{prefix},total,{},1.000000", l.total());
    let _ = writeln!(csv, "{prefix},peak,{},{:.6}", l.peak(), l.peak() as f64 / l.total().max(1) as f64);
}

fn modes(cfg: &RunConfig) -> Vec<Mode> {
    cfg.mode.map_or_else(|| vec![Mode::Stored, Mode::Reversible], |m| vec![m])
}

/// Activation bytes per sweep depth for one mode.
pub fn sweep<S: Scalar>(cfg: &RunConfig, mode: Mode, csv: &mut String) -> Result<Vec<u64>> {
    let base = match &cfg.net {
        NetSource::Toy(t) => t.clone(),
        _ => ToyConfig::default(),
    };
    let stages = base.blocks.len();
    let mut out = Vec::new();
    for depth in SWEEP_DEPTHS {
        if depth % stages != 0 {
            return Err(config_err!("sweep depth {depth} does not split over {stages} stages"));
        }
        let toy = ToyConfig { blocks: vec![depth / stages; stages], ..base.clone() };
        let net: Network<S> = NetSource::Toy(toy).build(cfg.seed)?;
        let l = ledger(&net, cfg, mode)?;
        push_rows(csv, &net, cfg, mode, &l);
        out.push(l.activations);
    }
    Ok(out)
}

pub fn run<S: Scalar>(cfg: &RunConfig) -> Result<Report> {
    let mut csv = String::from(HEADER);
    let mut failures = Vec::new();
    if cfg.sweep {
        for mode in modes(cfg) {
            let acts = sweep::<S>(cfg, mode, &mut csv)?;
            let ok = match mode {
                Mode::Reversible => acts.windows(2).all(|w| w[0] == w[1]),
                Mode::Stored => acts.windows(2).all(|w| w[0] < w[1]),
            };
            if !ok {
                failures.push(format!("sweep:{}", mode.name()));
            }
        }
        let summary = format!("depth sweep over {SWEEP_DEPTHS:?} blocks");
        return Ok(Report { csv, failures, summary });
    }
    let net: Network<S> = cfg.net.build(cfg.seed)?;
    let mut summary = String::new();
    for mode in modes(cfg) {
        let l = ledger(&net, cfg, mode)?;
        push_rows(&mut csv, &net, cfg, mode, &l);
        let _ = write!(
            summary,
            "{} {}: {} bytes, activations {:.1}%; ",
            net.name,
            mode.name(),
            l.total(),
            100.0 * l.share(Category::Activations)
        );
    }
    Ok(Report { csv, failures, summary: summary.trim_end_matches("; ").to_string() })
}
