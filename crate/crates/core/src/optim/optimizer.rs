//! SGD with momentum and Adam/AdamW, each with 32-bit or 8-bit state.

use std::fmt;
use std::str::FromStr;

use super::dtree::DynamicTreeMap;
use super::quant::{dequantize_blockwise, quantize_blockwise, state_bytes, QuantizedState, DEFAULT_BLOCK_SIZE};
use crate::error::{config_err, shape_err, Error, Result};
use crate::param::Param;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimKind {
    Sgd,
    Sgd8,
    Adam,
    AdamW,
    /// 8-bit AdamW: weight decay, when set, is decoupled.
    Adam8,
}

impl OptimKind {
    pub const ALL: [OptimKind; 5] = [Self::Sgd, Self::Sgd8, Self::Adam, Self::AdamW, Self::Adam8];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Sgd8 => "sgd8",
            Self::Adam => "adam",
            Self::AdamW => "adamw",
            Self::Adam8 => "adam8",
        }
    }

    pub fn is_8bit(self) -> bool {
        matches!(self, Self::Sgd8 | Self::Adam8)
    }

    /// State tensors kept per parameter.
    pub fn states_per_param(self) -> usize {
        match self {
            Self::Sgd | Self::Sgd8 => 1,
            Self::Adam | Self::AdamW | Self::Adam8 => 2,
        }
    }

    fn decoupled_decay(self) -> bool {
        matches!(self, Self::AdamW | Self::Adam8)
    }
}

impl fmt::Display for OptimKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| config_err!("unknown optimizer {s:?} (expected sgd, sgd8, adam, adamw or adam8)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub bias_correction: bool,
    pub block_size: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            bias_correction: false,
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(config_err!("{name} must lie in [0, 1), got {v}"))
            }
        };
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(config_err!("learning rate must be positive, got {}", self.lr));
        }
        unit("momentum", self.momentum)?;
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(config_err!("eps must be positive, got {}", self.eps));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(config_err!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.block_size == 0 {
            return Err(config_err!("block size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum StateBuf<S> {
    Dense(Vec<S>),
    Quant(QuantizedState),
}

impl<S: Scalar> StateBuf<S> {
    fn zeros(n: usize, quantized: bool, block_size: usize, map: &DynamicTreeMap) -> Result<Self> {
        Ok(if quantized {
            Self::Quant(quantize_blockwise(&vec![0.0; n], block_size, map)?)
        } else {
            Self::Dense(vec![S::zero(); n])
        })
    }

    fn len(&self) -> usize {
        match self {
            Self::Dense(v) => v.len(),
            Self::Quant(q) => q.len(),
        }
    }

    fn bytes(&self) -> u64 {
        match self {
            Self::Dense(v) => (v.len() * S::BYTES) as u64,
            Self::Quant(q) => q.bytes(),
        }
    }

    fn load(&self, map: &DynamicTreeMap) -> Vec<S> {
        match self {
            Self::Dense(v) => v.clone(),
            Self::Quant(q) => dequantize_blockwise(q, map).into_iter().map(|v| S::of(f64::from(v))).collect(),
        }
    }

    fn store(&mut self, values: Vec<S>, map: &DynamicTreeMap) -> Result<()> {
        match self {
            Self::Dense(v) => *v = values,
            Self::Quant(q) => {
                let f: Vec<f32> = values.iter().map(|v| v.f64() as f32).collect();
                let shape = q.shape;
                *q = quantize_blockwise(&f, q.block_size, map)?;
                q.shape = shape;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Slot<S> {
    m: StateBuf<S>,
    r: Option<StateBuf<S>>,
}

/// First-order optimizer; state slots are created on the first step.
#[derive(Clone, Debug)]
pub struct Optimizer<S> {
    kind: OptimKind,
    hyper: Hyper,
    slots: Vec<Slot<S>>,
    t: u64,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(kind: OptimKind, hyper: Hyper) -> Result<Self> {
        hyper.validate()?;
        Ok(Self { kind, hyper, slots: Vec::new(), t: 0 })
    }

    pub fn kind(&self) -> OptimKind {
        self.kind
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Bytes held in state slots so far.
    pub fn state_bytes(&self) -> u64 {
        self.slots.iter().map(|s| s.m.bytes() + s.r.as_ref().map_or(0, StateBuf::bytes)).sum()
    }

    /// State bytes this optimizer will hold for parameters of the given sizes.
    pub fn state_bytes_for(kind: OptimKind, block_size: usize, sizes: &[usize]) -> u64 {
        let per: u64 = sizes
            .iter()
            .map(|&n| if kind.is_8bit() { state_bytes(n, block_size) } else { (n * S::BYTES) as u64 })
            .sum();
        per * kind.states_per_param() as u64
    }

    /// Decoded first state (momentum or Adam's `m`) of parameter `i`.
    pub fn first_moment(&self, i: usize) -> Option<Vec<S>> {
        self.slots.get(i).map(|s| s.m.load(DynamicTreeMap::shared()))
    }

    /// Decoded Adam second moment `r` of parameter `i`.
    pub fn second_moment(&self, i: usize) -> Option<Vec<S>> {
        self.slots.get(i)?.r.as_ref().map(|r| r.load(DynamicTreeMap::shared()))
    }

    /// Applies one update using each parameter's accumulated gradient.
    pub fn step(&mut self, params: &mut [&mut Param<S>]) -> Result<()> {
        let map = DynamicTreeMap::shared();
        if self.slots.is_empty() {
            let q = self.kind.is_8bit();
            let b = self.hyper.block_size;
            for p in params.iter() {
                let n = p.numel();
                let r = if self.kind.states_per_param() == 2 { Some(StateBuf::zeros(n, q, b, map)?) } else { None };
                self.slots.push(Slot { m: StateBuf::zeros(n, q, b, map)?, r });
            }
        }
        if self.slots.len() != params.len() {
            return Err(shape_err!("optimizer holds state for {} parameters, got {}", self.slots.len(), params.len()));
        }
        for (i, (p, s)) in params.iter().zip(&self.slots).enumerate() {
            if p.numel() != s.m.len() || p.grad.len() != p.numel() {
                return Err(shape_err!("parameter {i} has {} elements, state has {}", p.numel(), s.m.len()));
            }
        }
        self.t += 1;
        for (p, slot) in params.iter_mut().zip(self.slots.iter_mut()) {
            match self.kind {
                OptimKind::Sgd | OptimKind::Sgd8 => sgd_update(p, slot, &self.hyper, map)?,
                _ => adam_update(p, slot, &self.hyper, self.kind.decoupled_decay(), self.t, map)?,
            }
        }
        Ok(())
    }
}

fn sgd_update<S: Scalar>(p: &mut Param<S>, slot: &mut Slot<S>, h: &Hyper, map: &DynamicTreeMap) -> Result<()> {
    let (lr, beta) = (S::of(h.lr), S::of(h.momentum));
    let mut m = slot.m.load(map);
    for ((w, &g), m) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m.iter_mut()) {
        *m = beta * *m + g;
        *w = *w - lr * *m;
    }
    slot.m.store(m, map)
}

fn adam_update<S: Scalar>(
    p: &mut Param<S>,
    slot: &mut Slot<S>,
    h: &Hyper,
    decoupled: bool,
    t: u64,
    map: &DynamicTreeMap,
) -> Result<()> {
    let one = S::one();
    let (lr, b1, b2, eps) = (S::of(h.lr), S::of(h.beta1), S::of(h.beta2), S::of(h.eps));
    let decay = if decoupled { S::of(h.lr * h.weight_decay) } else { S::zero() };
    let (c1, c2) = if h.bias_correction {
        let t = i32::try_from(t).unwrap_or(i32::MAX);
        (one - b1.powi(t), one - b2.powi(t))
    } else {
        (one, one)
    };
    let r_buf = slot.r.as_mut().expect("adam slot has a second moment");
    let mut m = slot.m.load(map);
    let mut r = r_buf.load(map);
    for (((w, &g), m), r) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m.iter_mut()).zip(r.iter_mut()) {
        *w = *w - decay * *w;
        *m = b1 * *m + (one - b1) * g;
        *r = b2 * *r + (one - b2) * g * g;
        *w = *w - lr * (*m / c1) / ((*r / c2).sqrt() + eps);
    }
    slot.m.store(m, map)?;
    r_buf.store(r, map)
}
