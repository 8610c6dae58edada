//! Layer-level network execution in stored-activation or reversible mode.

use std::fmt;
use std::str::FromStr;

use super::block::{BlockStats, RevBlock};
use super::chain::{Chain, Stats, Trace};
use super::ledger::MemoryLedger;
use super::residual::ResidualFn;
use crate::error::{config_err, shape_err, Error, Result};
use crate::ops;
use crate::param::Param;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Cache every operator input, as in conventional backprop.
    Stored,
    /// Cache only what reversible stages cannot reconstruct.
    Reversible,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Stored => "stored",
            Mode::Reversible => "reversible",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stored" => Ok(Mode::Stored),
            "reversible" => Ok(Mode::Reversible),
            _ => Err(config_err!("unknown mode `{s}`")),
        }
    }
}

/// 1x1 strided projection on the skip path of a non-reversible residual block.
#[derive(Clone, Debug)]
pub struct Projection<S> {
    pub w: Param<S>,
    pub stride: usize,
}

#[derive(Clone, Debug)]
pub enum Layer<S> {
    /// Plain stage: Conv -> BN -> ReLU.
    Conv(Chain<S>),
    /// `y = shortcut(x) + F(x)`.
    Residual { f: ResidualFn<S>, shortcut: Option<Projection<S>> },
    /// Sequence of reversible blocks over a first-half / second-half channel split.
    RevStage(Vec<RevBlock<S>>),
    /// Invertible space-to-depth reshape.
    RevDs { ratio: usize },
    /// Global statistics pooling over time.
    Pool,
    Fc { w: Param<S>, b: Param<S> },
}

impl<S: Scalar> Layer<S> {
    pub fn is_reversible(&self) -> bool {
        matches!(self, Layer::RevStage(_) | Layer::RevDs { .. })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Residual { .. } => "res",
            Layer::RevStage(_) => "rev_res",
            Layer::RevDs { .. } => "rev_ds",
            Layer::Pool => "pooling",
            Layer::Fc { .. } => "fc",
        }
    }

    pub fn out_shape(&self, s: Shape) -> Result<Shape> {
        match self {
            Layer::Conv(c) => c.out_shape(s),
            Layer::Residual { f, shortcut } => {
                f.check_input(s)?;
                let out = f.chain.out_shape(s)?;
                let skip = match shortcut {
                    Some(p) => {
                        let ws = p.w.value.shape();
                        if ws.c != s.c {
                            return Err(shape_err!("projection expects {} channels, got {}", ws.c, s.c));
                        }
                        Shape::new(s.n, ws.n, ops::out_dim(s.f, 1, p.stride, 0)?, ops::out_dim(s.t, 1, p.stride, 0)?)
                    }
                    None => s,
                };
                if skip != out {
                    return Err(shape_err!("residual branch output {out} does not match skip path {skip}"));
                }
                Ok(out)
            }
            Layer::RevStage(blocks) => {
                if s.c % 2 != 0 {
                    return Err(config_err!("reversible stage input has odd channel count {}", s.c));
                }
                if let Some(b) = blocks.first() {
                    if b.half() * 2 != s.c {
                        return Err(shape_err!("reversible stage expects {} channels, got {}", 2 * b.half(), s.c));
                    }
                }
                Ok(s)
            }
            Layer::RevDs { ratio } => {
                let r = *ratio;
                if r == 0 || s.f % r != 0 || s.t % r != 0 {
                    return Err(config_err!("cannot rearrange {}x{} by ratio {r}", s.f, s.t));
                }
                Ok(Shape::new(s.n, s.c * r * r, s.f / r, s.t / r))
            }
            Layer::Pool => {
                if s.t == 0 {
                    return Err(shape_err!("pooling over empty time axis"));
                }
                Ok(Shape::flat(s.n, 2 * s.c * s.f))
            }
            Layer::Fc { w, .. } => {
                let ws = w.value.shape();
                if s.sample_len() != ws.n {
                    return Err(shape_err!("fc expects {} inputs, got {}", ws.n, s.sample_len()));
                }
                Ok(Shape::flat(s.n, ws.c))
            }
        }
    }

    pub fn params(&self) -> Vec<&Param<S>> {
        match self {
            Layer::Conv(c) => c.params(),
            Layer::Residual { f, shortcut } => {
                let mut p = f.params();
                p.extend(shortcut.iter().map(|s| &s.w));
                p
            }
            Layer::RevStage(blocks) => blocks.iter().flat_map(RevBlock::params).collect(),
            Layer::RevDs { .. } | Layer::Pool => Vec::new(),
            Layer::Fc { w, b } => vec![w, b],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        match self {
            Layer::Conv(c) => c.params_mut(),
            Layer::Residual { f, shortcut } => {
                let mut p = f.params_mut();
                p.extend(shortcut.iter_mut().map(|s| &mut s.w));
                p
            }
            Layer::RevStage(blocks) => blocks.iter_mut().flat_map(RevBlock::params_mut).collect(),
            Layer::RevDs { .. } | Layer::Pool => Vec::new(),
            Layer::Fc { w, b } => vec![w, b],
        }
    }

    fn chains(&self) -> Vec<&Chain<S>> {
        match self {
            Layer::Conv(c) => vec![c],
            Layer::Residual { f, .. } => vec![&f.chain],
            Layer::RevStage(blocks) => blocks.iter().flat_map(|b| [&b.f.chain, &b.g.chain]).collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Network<S> {
    pub name: String,
    pub layers: Vec<Layer<S>>,
    pub in_channels: usize,
    pub feat_dim: usize,
    generation: u64,
}

impl<S: Scalar> Network<S> {
    pub fn new(name: impl Into<String>, layers: Vec<Layer<S>>, in_channels: usize, feat_dim: usize) -> Self {
        Self { name: name.into(), layers, in_channels, feat_dim, generation: 0 }
    }

    /// Bumped by every forward pass and every mutable parameter access.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn params(&self) -> Vec<&Param<S>> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    /// Mutable parameter access; invalidates outstanding saved stores.
    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        self.generation += 1;
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            for p in l.params_mut() {
                p.zero_grad();
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn rev_block_count(&self) -> usize {
        self.layers.iter().map(|l| if let Layer::RevStage(b) = l { b.len() } else { 0 }).sum()
    }

    pub fn input_shape(&self, n: usize, t: usize) -> Shape {
        Shape::new(n, self.in_channels, self.feat_dim, t)
    }

    /// Running BN statistics of every normalization layer, in traversal order.
    pub fn running_stats(&self) -> Vec<(Vec<S>, Vec<S>)> {
        self.layers
            .iter()
            .flat_map(|l| l.chains())
            .flat_map(|c| c.batchnorms().map(|b| (b.running_mean.clone(), b.running_var.clone())).collect::<Vec<_>>())
            .collect()
    }

    /// Scalars held by BN running buffers.
    pub fn buffer_elems(&self) -> usize {
        self.running_stats().iter().map(|(m, v)| m.len() + v.len()).sum()
    }

    pub fn check_input(&self, s: Shape) -> Result<()> {
        if s.n == 0 || s.c != self.in_channels || s.f != self.feat_dim {
            return Err(shape_err!(
                "network expects input (n, {}, {}, t), got {s}",
                self.in_channels,
                self.feat_dim
            ));
        }
        Ok(())
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.check_input(input)?;
        self.layers.iter().try_fold(input, |s, l| l.out_shape(s))
    }
}

enum Record<S> {
    Chain(Trace<S>),
    Residual(Trace<S>),
    RevTraced(Vec<(Trace<S>, Trace<S>)>),
    RevStats(Vec<BlockStats<S>>),
    RevDs,
    Pool(Tensor<S>),
    Fc(Tensor<S>),
}

impl<S: Scalar> Record<S> {
    fn tensors(&self) -> Vec<&Tensor<S>> {
        match self {
            Record::Chain(t) | Record::Residual(t) => t.inputs.iter().collect(),
            Record::RevTraced(b) => b.iter().flat_map(|(f, g)| f.inputs.iter().chain(&g.inputs)).collect(),
            Record::RevStats(_) | Record::RevDs => Vec::new(),
            Record::Pool(x) | Record::Fc(x) => vec![x],
        }
    }

    fn stats_elems(&self) -> usize {
        match self {
            Record::Chain(t) | Record::Residual(t) => t.stats_elems(),
            Record::RevTraced(b) => b.iter().map(|(f, g)| f.stats_elems() + g.stats_elems()).sum(),
            Record::RevStats(b) => b.iter().map(BlockStats::numel).sum(),
            _ => 0,
        }
    }
}

/// Everything a forward pass leaves for the matching backward pass.
pub struct SavedStore<S> {
    mode: Mode,
    generation: u64,
    records: Vec<Record<S>>,
    output: Option<Tensor<S>>,
}

impl<S: Scalar> SavedStore<S> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Number of cached activation tensors.
    pub fn tensor_count(&self) -> usize {
        self.records.iter().map(|r| r.tensors().len()).sum::<usize>() + usize::from(self.output.is_some())
    }

    pub fn activation_elems(&self) -> usize {
        let cached: usize = self.records.iter().flat_map(|r| r.tensors()).map(Tensor::len).sum();
        cached + self.output.as_ref().map_or(0, Tensor::len)
    }

    pub fn activation_bytes(&self) -> u64 {
        (self.activation_elems() * S::BYTES) as u64
    }

    /// Batch-statistic scalars captured for backward.
    pub fn stats_elems(&self) -> usize {
        self.records.iter().map(Record::stats_elems).sum()
    }
}

/// Largest branch trace rebuilt at once during reversible backward, in elements.
fn rev_transient<S: Scalar>(blocks: &[RevBlock<S>], s: Shape) -> Result<usize> {
    let half = s.with_c(s.c / 2);
    let mut worst = 0;
    for b in blocks {
        worst = worst.max(b.f.chain.trace_size(half)?.0).max(b.g.chain.trace_size(half)?.0);
    }
    Ok(worst)
}

fn base_ledger<S: Scalar>(net: &Network<S>) -> MemoryLedger {
    let w = (net.param_count() * S::BYTES) as u64;
    MemoryLedger { weights: w, gradients: w, ..MemoryLedger::default() }
}

/// Runs the network on `x`, caching what `mode` requires for [`run_backward`].
pub fn run_forward<S: Scalar>(net: &mut Network<S>, x: &Tensor<S>, mode: Mode) -> Result<(Tensor<S>, SavedStore<S>, MemoryLedger)> {
    net.check_input(x.shape())?;
    net.generation += 1;
    let mut records = Vec::with_capacity(net.layers.len());
    let mut transient = 0;
    let mut cur = x.clone();
    for (i, layer) in net.layers.iter_mut().enumerate() {
        let name = layer.kind_name();
        let at = |e: Error| match e {
            Error::Shape(m) => Error::Shape(format!("layer {i} ({name}): {m}")),
            other => other,
        };
        let (y, rec) = forward_layer(layer, cur, mode, &mut transient).map_err(at)?;
        records.push(rec);
        cur = y;
    }
    let output = match (mode, net.layers.last()) {
        (Mode::Reversible, Some(l)) if l.is_reversible() => Some(cur.clone()),
        _ => None,
    };
    let store = SavedStore { mode, generation: net.generation, records, output };
    let mut ledger = base_ledger(net);
    ledger.activations = store.activation_bytes();
    ledger.workspace = ((store.stats_elems() + net.buffer_elems()) * S::BYTES) as u64;
    ledger.transient = (transient * S::BYTES) as u64;
    Ok((cur, store, ledger))
}

fn forward_layer<S: Scalar>(layer: &mut Layer<S>, x: Tensor<S>, mode: Mode, transient: &mut usize) -> Result<(Tensor<S>, Record<S>)> {
    Ok(match layer {
        Layer::Conv(chain) => {
            let (y, t) = chain.forward(&x, Stats::Fresh, true)?;
            (y, Record::Chain(t))
        }
        Layer::Residual { f, shortcut } => {
            f.check_input(x.shape())?;
            let (fy, t) = f.chain.forward(&x, Stats::Fresh, true)?;
            let skip = match shortcut {
                Some(p) => ops::conv2d(&x, &p.w.value, p.stride, 0)?,
                None => x,
            };
            (skip.add(&fy)?, Record::Residual(t))
        }
        Layer::RevStage(blocks) => {
            let s = x.shape();
            let (mut a, mut b) = ops::channel_split(&x)?;
            drop(x);
            let rec = match mode {
                Mode::Stored => {
                    let mut traces = Vec::with_capacity(blocks.len());
                    for blk in blocks.iter_mut() {
                        let (y1, y2, tf, tg) = blk.forward_traced(&a, &b)?;
                        traces.push((tf, tg));
                        (a, b) = (y1, y2);
                    }
                    Record::RevTraced(traces)
                }
                Mode::Reversible => {
                    *transient = (*transient).max(rev_transient(blocks, s)?);
                    let mut stats = Vec::with_capacity(blocks.len());
                    for blk in blocks.iter_mut() {
                        let (y1, y2, st) = blk.forward(&a, &b)?;
                        stats.push(st);
                        (a, b) = (y1, y2);
                    }
                    Record::RevStats(stats)
                }
            };
            (ops::concat_channels(&a, &b)?, rec)
        }
        Layer::RevDs { ratio } => (ops::pixel_unshuffle(&x, *ratio)?, Record::RevDs),
        Layer::Pool => (ops::gsp(&x)?, Record::Pool(x)),
        Layer::Fc { w, b } => (ops::linear(&x, &w.value, b.value.data())?, Record::Fc(x)),
    })
}

/// Back-propagates `dy` (gradient w.r.t. the network output), accumulating
/// every parameter gradient. Returns the gradient w.r.t. the network input.
pub fn run_backward<S: Scalar>(net: &mut Network<S>, store: SavedStore<S>, dy: &Tensor<S>) -> Result<Tensor<S>> {
    if store.generation != net.generation || store.records.len() != net.layers.len() {
        return Err(Error::State("saved store does not belong to the latest forward pass of this network".into()));
    }
    let mut grad = dy.clone();
    let mut out = store.output;
    for (layer, rec) in net.layers.iter_mut().zip(store.records).rev() {
        let (dx, input) = backward_layer(layer, rec, out.take(), grad)?;
        grad = dx;
        out = input;
    }
    Ok(grad)
}

fn backward_layer<S: Scalar>(
    layer: &mut Layer<S>,
    rec: Record<S>,
    out: Option<Tensor<S>>,
    dy: Tensor<S>,
) -> Result<(Tensor<S>, Option<Tensor<S>>)> {
    let kind = rec_kind(&rec);
    let mismatch = || Error::State(format!("saved {kind} record does not match the layer it is replayed through"));
    match (layer, rec) {
        (Layer::Conv(chain), Record::Chain(t)) => {
            let dx = chain.backward(&t, dy)?;
            Ok((dx, t.inputs.into_iter().next().or(out)))
        }
        (Layer::Residual { f, shortcut }, Record::Residual(t)) => {
            let df = f.chain.backward(&t, dy.clone())?;
            let x = t.inputs.into_iter().next().ok_or_else(mismatch)?;
            let dskip = match shortcut {
                Some(p) => {
                    let (dx, dw) = ops::conv2d_backward(&x, &p.w.value, p.stride, 0, &dy)?;
                    p.w.accumulate(&dw)?;
                    dx
                }
                None => dy,
            };
            Ok((dskip.add(&df)?, Some(x)))
        }
        (Layer::RevStage(blocks), Record::RevTraced(traces)) => {
            let (mut d1, mut d2) = ops::channel_split(&dy)?;
            for (blk, (tf, tg)) in blocks.iter_mut().zip(&traces).rev() {
                (d1, d2) = blk.backward_traced(tf, tg, &d1, &d2)?;
            }
            Ok((ops::concat_channels(&d1, &d2)?, None))
        }
        (Layer::RevStage(blocks), Record::RevStats(stats)) => {
            let y = out.ok_or_else(|| Error::State("reversible stage has no output to reconstruct from".into()))?;
            let (mut y1, mut y2) = ops::channel_split(&y)?;
            drop(y);
            let (mut d1, mut d2) = ops::channel_split(&dy)?;
            for (blk, st) in blocks.iter_mut().zip(&stats).rev() {
                let g = blk.backward(&y1, &y2, &d1, &d2, st)?;
                (y1, y2, d1, d2) = (g.x1, g.x2, g.dx1, g.dx2);
            }
            Ok((ops::concat_channels(&d1, &d2)?, Some(ops::concat_channels(&y1, &y2)?)))
        }
        (Layer::RevDs { ratio }, Record::RevDs) => {
            let input = out.map(|y| ops::pixel_shuffle(&y, *ratio)).transpose()?;
            Ok((ops::pixel_shuffle(&dy, *ratio)?, input))
        }
        (Layer::Pool, Record::Pool(x)) => {
            let y = ops::gsp(&x)?;
            Ok((ops::gsp_backward(&x, &y, &dy)?, Some(x)))
        }
        (Layer::Fc { w, b }, Record::Fc(x)) => {
            let (dx, dw, db) = ops::linear_backward(&x, &w.value, &dy)?;
            w.accumulate(&dw)?;
            b.accumulate_slice(&db)?;
            Ok((dx, Some(x)))
        }
        _ => Err(mismatch()),
    }
}

fn rec_kind<S>(rec: &Record<S>) -> &'static str {
    match rec {
        Record::Chain(_) => "conv",
        Record::Residual(_) => "res",
        Record::RevTraced(_) | Record::RevStats(_) => "rev_res",
        Record::RevDs => "rev_ds",
        Record::Pool(_) => "pooling",
        Record::Fc(_) => "fc",
    }
}

/// Shape-only ledger: the bytes [`run_forward`] would report for `input` in `mode`.
pub fn plan<S: Scalar>(net: &Network<S>, input: Shape, mode: Mode) -> Result<MemoryLedger> {
    net.check_input(input)?;
    let (mut act, mut stats, mut transient) = (0usize, 0usize, 0usize);
    let mut s = input;
    for (i, layer) in net.layers.iter().enumerate() {
        let ctx = |e: Error| match e {
            Error::Shape(m) => Error::Shape(format!("layer {i}: {m}")),
            other => other,
        };
        match layer {
            Layer::Conv(c) => {
                let (a, _, st) = c.trace_size(s).map_err(ctx)?;
                act += a;
                stats += st;
            }
            Layer::Residual { f, .. } => {
                let (a, _, st) = f.chain.trace_size(s).map_err(ctx)?;
                act += a;
                stats += st;
            }
            Layer::RevStage(blocks) => {
                let half = s.with_c(s.c / 2);
                for b in blocks {
                    let (fa, _, fs) = b.f.chain.trace_size(half).map_err(ctx)?;
                    let (ga, _, gs) = b.g.chain.trace_size(half).map_err(ctx)?;
                    stats += fs + gs;
                    if mode == Mode::Stored {
                        act += fa + ga;
                    }
                }
                if mode == Mode::Reversible {
                    transient = transient.max(rev_transient(blocks, s).map_err(ctx)?);
                }
            }
            Layer::RevDs { .. } => {}
            Layer::Pool | Layer::Fc { .. } => act += s.numel(),
        }
        s = layer.out_shape(s).map_err(ctx)?;
    }
    if mode == Mode::Reversible && net.layers.last().is_some_and(Layer::is_reversible) {
        act += s.numel();
    }
    let mut ledger = base_ledger(net);
    ledger.activations = (act * S::BYTES) as u64;
    ledger.workspace = ((stats + net.buffer_elems()) * S::BYTES) as u64;
    ledger.transient = (transient * S::BYTES) as u64;
    Ok(ledger)
}

/// Largest batch whose planned total (plus fixed optimizer-state bytes) fits
/// `budget_bytes`, treating memory as affine in the batch size.
pub fn max_batch<S: Scalar>(
    net: &Network<S>,
    frames: usize,
    mode: Mode,
    budget_bytes: u64,
    optimizer_state_bytes: u64,
) -> Result<usize> {
    let one = plan(net, net.input_shape(1, frames), mode)?.peak() + optimizer_state_bytes;
    let two = plan(net, net.input_shape(2, frames), mode)?.peak() + optimizer_state_bytes;
    if one > budget_bytes {
        return Err(Error::Capacity(format!("a single sample needs {one} bytes, budget is {budget_bytes}")));
    }
    let per_sample = two - one;
    if per_sample == 0 {
        return Err(Error::InvalidArgument("memory does not grow with batch size".into()));
    }
    Ok(1 + ((budget_bytes - one) / per_sample) as usize)
}
