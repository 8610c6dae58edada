//! Sequential composition of primitives with an optional tape for backward.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::ops::{self, BnStats};
use crate::param::Param;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct BatchNorm<S> {
    pub gamma: Param<S>,
    pub beta: Param<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub eps: S,
    pub momentum: S,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(Shape::flat(1, c), S::one())),
            beta: Param::zeros(Shape::flat(1, c)),
            running_mean: vec![S::zero(); c],
            running_var: vec![S::one(); c],
            eps: S::of(BN_EPS),
            momentum: S::of(BN_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    fn update_running(&mut self, stats: &BnStats<S>, count: usize) {
        let unbias = if count > 1 { S::of(count as f64 / (count - 1) as f64) } else { S::one() };
        let k = self.momentum;
        for c in 0..self.channels() {
            self.running_mean[c] = (S::one() - k) * self.running_mean[c] + k * stats.mean[c];
            self.running_var[c] = (S::one() - k) * self.running_var[c] + k * stats.var[c] * unbias;
        }
    }
}

/// Building blocks of every residual branch and plain convolution stage.
#[derive(Clone, Debug)]
pub enum Prim<S> {
    Conv { w: Param<S>, stride: usize, pad: usize },
    DepthwiseConv { w: Param<S>, stride: usize, pad: usize },
    Bn(BatchNorm<S>),
    Relu,
}

impl<S: Scalar> Prim<S> {
    /// He-uniform `c_out x c_in x k x k` convolution with "same" padding.
    pub fn conv<R: Rng + ?Sized>(c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut R) -> Self {
        let w = Param::he_uniform(Shape::new(c_out, c_in, k, k), c_in * k * k, rng);
        Prim::Conv { w, stride, pad: k / 2 }
    }

    pub fn depthwise<R: Rng + ?Sized>(c: usize, k: usize, stride: usize, rng: &mut R) -> Self {
        let w = Param::he_uniform(Shape::new(c, 1, k, k), k * k, rng);
        Prim::DepthwiseConv { w, stride, pad: k / 2 }
    }

    pub fn bn(c: usize) -> Self {
        Prim::Bn(BatchNorm::new(c))
    }

    pub fn out_shape(&self, s: Shape) -> Result<Shape> {
        match self {
            Prim::Conv { w, stride, pad } => {
                let ws = w.value.shape();
                if s.c != ws.c {
                    return Err(shape_err!("conv expects {} input channels, got {}", ws.c, s.c));
                }
                Ok(Shape::new(s.n, ws.n, ops::out_dim(s.f, ws.f, *stride, *pad)?, ops::out_dim(s.t, ws.t, *stride, *pad)?))
            }
            Prim::DepthwiseConv { w, stride, pad } => {
                let ws = w.value.shape();
                if s.c != ws.n {
                    return Err(shape_err!("depthwise conv expects {} channels, got {}", ws.n, s.c));
                }
                Ok(Shape::new(s.n, s.c, ops::out_dim(s.f, ws.f, *stride, *pad)?, ops::out_dim(s.t, ws.t, *stride, *pad)?))
            }
            Prim::Bn(bn) => {
                if s.c != bn.channels() {
                    return Err(shape_err!("batchnorm expects {} channels, got {}", bn.channels(), s.c));
                }
                Ok(s)
            }
            Prim::Relu => Ok(s),
        }
    }

    pub fn stride(&self) -> usize {
        match self {
            Prim::Conv { stride, .. } | Prim::DepthwiseConv { stride, .. } => *stride,
            _ => 1,
        }
    }
}

/// Source of batch statistics for BN layers during a chain evaluation.
#[derive(Clone, Copy, Debug)]
pub enum Stats<'a, S> {
    /// Compute from the batch and update running statistics.
    Fresh,
    /// Reuse statistics captured on an earlier forward pass; running statistics untouched.
    Replay(&'a [BnStats<S>]),
}

/// What a chain evaluation leaves behind for its backward pass.
#[derive(Clone, Debug, Default)]
pub struct Trace<S> {
    /// Input of every primitive, in order (empty when not recorded).
    pub inputs: Vec<Tensor<S>>,
    pub stats: Vec<BnStats<S>>,
}

impl<S: Scalar> Trace<S> {
    pub fn activation_elems(&self) -> usize {
        self.inputs.iter().map(Tensor::len).sum()
    }

    pub fn stats_elems(&self) -> usize {
        self.stats.iter().map(BnStats::numel).sum()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Chain<S> {
    pub prims: Vec<Prim<S>>,
}

impl<S: Scalar> Chain<S> {
    pub fn new(prims: Vec<Prim<S>>) -> Self {
        Self { prims }
    }

    pub fn is_empty(&self) -> bool {
        self.prims.is_empty()
    }

    pub fn bn_count(&self) -> usize {
        self.prims.iter().filter(|p| matches!(p, Prim::Bn(_))).count()
    }

    pub fn out_shape(&self, s: Shape) -> Result<Shape> {
        self.prims.iter().try_fold(s, |s, p| p.out_shape(s))
    }

    /// Elements a recorded trace holds for input shape `s`: `(activations, tensors, bn statistics)`.
    pub fn trace_size(&self, mut s: Shape) -> Result<(usize, usize, usize)> {
        let (mut act, mut stats) = (0, 0);
        for p in &self.prims {
            act += s.numel();
            if let Prim::Bn(bn) = p {
                stats += 2 * bn.channels();
            }
            s = p.out_shape(s)?;
        }
        Ok((act, self.prims.len(), stats))
    }

    pub fn forward(&mut self, x: &Tensor<S>, stats: Stats<'_, S>, record: bool) -> Result<(Tensor<S>, Trace<S>)> {
        if let Stats::Replay(st) = stats {
            if st.len() != self.bn_count() {
                return Err(Error::State(format!(
                    "{} captured batch statistics for {} batchnorm layers",
                    st.len(),
                    self.bn_count()
                )));
            }
        }
        let mut trace = Trace::default();
        let mut cur = x.clone();
        let mut bn_index = 0;
        for p in &mut self.prims {
            let next = match p {
                Prim::Conv { w, stride, pad } => ops::conv2d(&cur, &w.value, *stride, *pad)?,
                Prim::DepthwiseConv { w, stride, pad } => ops::depthwise_conv2d(&cur, &w.value, *stride, *pad)?,
                Prim::Relu => ops::relu(&cur),
                Prim::Bn(bn) => {
                    let (y, st) = match stats {
                        Stats::Fresh => {
                            let (y, st) = ops::batchnorm2d(&cur, bn.gamma.value.data(), bn.beta.value.data(), bn.eps)?;
                            let s = cur.shape();
                            bn.update_running(&st, s.n * s.plane());
                            (y, st)
                        }
                        Stats::Replay(all) => {
                            let st = all[bn_index].clone();
                            (ops::batchnorm2d_with_stats(&cur, bn.gamma.value.data(), bn.beta.value.data(), &st, bn.eps)?, st)
                        }
                    };
                    bn_index += 1;
                    trace.stats.push(st);
                    y
                }
            };
            if record {
                trace.inputs.push(std::mem::replace(&mut cur, next));
            } else {
                cur = next;
            }
        }
        Ok((cur, trace))
    }

    /// Reverse traversal over a recorded trace; accumulates parameter gradients.
    pub fn backward(&mut self, trace: &Trace<S>, dy: Tensor<S>) -> Result<Tensor<S>> {
        if trace.inputs.len() != self.prims.len() || trace.stats.len() != self.bn_count() {
            return Err(Error::State("trace does not match the chain it is replayed through".into()));
        }
        let mut grad = dy;
        let mut bn_index = self.bn_count();
        for (p, x) in self.prims.iter_mut().zip(&trace.inputs).rev() {
            grad = match p {
                Prim::Conv { w, stride, pad } => {
                    let (dx, dw) = ops::conv2d_backward(x, &w.value, *stride, *pad, &grad)?;
                    w.accumulate(&dw)?;
                    dx
                }
                Prim::DepthwiseConv { w, stride, pad } => {
                    let (dx, dw) = ops::depthwise_conv2d_backward(x, &w.value, *stride, *pad, &grad)?;
                    w.accumulate(&dw)?;
                    dx
                }
                Prim::Relu => ops::relu_backward(x, &grad)?,
                Prim::Bn(bn) => {
                    bn_index -= 1;
                    let st = &trace.stats[bn_index];
                    let (dx, dg, db) = ops::batchnorm2d_backward(x, bn.gamma.value.data(), st, bn.eps, &grad)?;
                    bn.gamma.accumulate_slice(&dg)?;
                    bn.beta.accumulate_slice(&db)?;
                    dx
                }
            };
        }
        Ok(grad)
    }

    pub fn params(&self) -> Vec<&Param<S>> {
        let mut out = Vec::new();
        for p in &self.prims {
            match p {
                Prim::Conv { w, .. } | Prim::DepthwiseConv { w, .. } => out.push(w),
                Prim::Bn(bn) => {
                    out.push(&bn.gamma);
                    out.push(&bn.beta);
                }
                Prim::Relu => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut out = Vec::new();
        for p in &mut self.prims {
            match p {
                Prim::Conv { w, .. } | Prim::DepthwiseConv { w, .. } => out.push(w),
                Prim::Bn(bn) => {
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.beta);
                }
                Prim::Relu => {}
            }
        }
        out
    }

    pub fn batchnorms(&self) -> impl Iterator<Item = &BatchNorm<S>> {
        self.prims.iter().filter_map(|p| match p {
            Prim::Bn(bn) => Some(bn),
            _ => None,
        })
    }
}
