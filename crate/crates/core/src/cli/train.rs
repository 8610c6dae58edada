//! AAM-softmax training on synthetic speakers: a fresh batch per step, a fixed held-out batch for the reported loss.

use std::fmt::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Report, RunConfig, SynthDataset};
use crate::error::{config_err, Error, Result};
use crate::optim::Optimizer;
use crate::param::Param;
use crate::rev::{run_backward, run_forward, MemoryLedger, Mode, Network};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::zoo::{aam_softmax_loss, class_weight_shape};

pub const DEFAULT_BATCH: usize = 6;
pub const DEFAULT_FRAMES: usize = 8;
/// Samples per speaker in the fixed evaluation batch.
pub const EVAL_PER_SPEAKER: usize = 8;
/// Batch index reserved for the evaluation batch.
const EVAL_INDEX: u64 = u64::MAX;

/// Offset keeping the data stream independent of the weight initialization stream.
const DATA_SEED: u64 = 0x5eed_da7a;

#[derive(Clone, Debug, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub loss: f64,
    pub ledger: MemoryLedger,
    /// Loss on the fixed evaluation batch, recorded at the first and last rows.
    pub eval_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainLog {
    /// Rows `0..=steps`, each the loss on that step's fresh batch before the
    /// update; the last one is an evaluation without an update.
    pub rows: Vec<StepRow>,
    pub labels: Vec<usize>,
    pub embeddings: Vec<Vec<f64>>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    /// Evaluation-batch loss before training.
    pub fn initial_loss(&self) -> f64 {
        self.rows[0].eval_loss.expect("first row is evaluated")
    }

    /// Evaluation-batch loss after the last update.
    pub fn final_loss(&self) -> f64 {
        self.rows[self.rows.len() - 1].eval_loss.expect("last row is evaluated")
    }

    pub fn to_csv(&self) -> String {
        let mut csv = String::from(
            "step,loss,eval_loss,activations,weights,gradients,optimizer_states,workspace,transient,total,peak\n",
        );
        for r in &self.rows {
            let l = &r.ledger;
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.loss,
                r.eval_loss.map_or(String::new(), |v| v.to_string()),
                l.activations,
                l.weights,
                l.gradients,
                l.optimizer_states,
                l.workspace,
                l.transient,
                l.total(),
                l.peak()
            );
        }
        csv
    }

    pub fn embeddings_csv(&self) -> String {
        let mut out = String::new();
        for (l, e) in self.labels.iter().zip(&self.embeddings) {
            let _ = write!(out, "{l}");
            for v in e {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Parses `label,v0,v1,...` rows written by [`TrainLog::embeddings_csv`].
pub fn read_embeddings(text: &str) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let (mut labels, mut rows) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || Error::InvalidArgument(format!("embedding line {}: expected `label,v0,v1,...`", i + 1));
        let mut fields = line.split(',');
        let label = fields.next().and_then(|f| f.trim().parse().ok()).ok_or_else(bad)?;
        let v: Vec<f64> = fields.map(|f| f.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
        if v.is_empty() {
            return Err(bad());
        }
        labels.push(label);
        rows.push(v);
    }
    Ok((labels, rows))
}

/// Trains the configured network and returns the per-step log.
pub fn train<S: Scalar>(cfg: &RunConfig) -> Result<TrainLog> {
    let mode = cfg.mode_or(Mode::Reversible);
    let batch = cfg.batch.unwrap_or(DEFAULT_BATCH);
    if cfg.speakers < 2 || batch % cfg.speakers != 0 {
        return Err(config_err!("batch {batch} must be a positive multiple of the {} speakers (at least 2)", cfg.speakers));
    }
    let mut net: Network<S> = cfg.net.build(cfg.seed)?;
    let frames = cfg.frames.unwrap_or(DEFAULT_FRAMES);
    let data = SynthDataset::new(cfg.speakers, net.feat_dim, frames, cfg.separation, cfg.seed ^ DATA_SEED)?;
    let per_speaker = batch / cfg.speakers;
    let emb_dim = net.output_shape(net.input_shape(batch, frames))?.sample_len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut head = Param::<S>::he_uniform(class_weight_shape(emb_dim, cfg.speakers), emb_dim, &mut rng);
    let mut opt = Optimizer::<S>::new(cfg.optim, cfg.hyper)?;
    let mut sizes: Vec<usize> = net.params().iter().map(|p| p.numel()).collect();
    sizes.push(head.numel());
    let state_bytes = Optimizer::<S>::state_bytes_for(cfg.optim, cfg.hyper.block_size, &sizes);
    let head_bytes = (head.numel() * S::BYTES) as u64;

    let (eval_x, eval_labels) = data.batch::<S>(EVAL_INDEX, EVAL_PER_SPEAKER)?;
    let mut rows = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let (x, labels) = data.batch::<S>(step as u64, per_speaker)?;
        net.zero_grad();
        head.zero_grad();
        let (y, store, mut ledger) = run_forward(&mut net, &x, mode)?;
        ledger.weights += head_bytes;
        ledger.gradients += head_bytes;
        ledger.optimizer_states = state_bytes;
        let out = aam_softmax_loss(&y, &labels, &head.value, &cfg.aam)?;
        let loss = out.loss.f64();
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        let eval_loss = if step == 0 || step == cfg.steps {
            Some(evaluate(&net, &head, &eval_x, &eval_labels, cfg, mode, step)?)
        } else {
            None
        };
        rows.push(StepRow { step, loss, ledger, eval_loss });
        if step == cfg.steps {
            let embeddings = (0..y.shape().n).map(|i| y.sample(i).iter().map(|v| v.f64()).collect()).collect();
            return Ok(TrainLog { rows, labels: labels.clone(), embeddings });
        }
        run_backward(&mut net, store, &out.d_embeddings)?;
        head.accumulate(&out.d_weights)?;
        let mut params = net.params_mut();
        params.push(&mut head);
        opt.step(&mut params)?;
    }
    unreachable!("loop returns at the final step")
}

/// Loss of the evaluation batch on a copy, leaving the running statistics untouched.
fn evaluate<S: Scalar>(
    net: &Network<S>,
    head: &Param<S>,
    x: &Tensor<S>,
    labels: &[usize],
    cfg: &RunConfig,
    mode: Mode,
    step: usize,
) -> Result<f64> {
    let (y, _, _) = run_forward(&mut net.clone(), x, mode)?;
    let loss = aam_softmax_loss(&y, labels, &head.value, &cfg.aam)?.loss.f64();
    if !loss.is_finite() {
        return Err(Error::Divergence { step, loss });
    }
    Ok(loss)
}

pub fn run<S: Scalar>(cfg: &RunConfig) -> Result<(Report, TrainLog)> {
    let log = train::<S>(cfg)?;
    if let Some(path) = &cfg.embeddings_out {
        std::fs::write(path, log.embeddings_csv())
            .map_err(|e| Error::InvalidArgument(format!("cannot write {}: {e}", path.display())))?;
    }
    let summary = format!(
        "{} steps with {}: loss {:.6} -> {:.6}",
        cfg.steps,
        cfg.optim,
        log.initial_loss(),
        log.final_loss()
    );
    Ok((Report { csv: log.to_csv(), failures: Vec::new(), summary }, log))
}
