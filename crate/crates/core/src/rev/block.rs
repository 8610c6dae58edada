//! Additive-coupling reversible block: forward, exact inverse and recomputing backward.

use super::chain::{Stats, Trace};
use super::residual::ResidualFn;
use crate::error::{config_err, shape_err, Error, Result};
use crate::ops::BnStats;
use crate::param::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Reconstruction tolerance for unit-scale activations at 32-bit.
pub const INVERSE_TOL_F32: f64 = 1e-4;
/// Reconstruction tolerance at 64-bit.
pub const INVERSE_TOL_F64: f64 = 1e-12;

/// Batch statistics captured by one block's forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BlockStats<S> {
    pub f: Vec<BnStats<S>>,
    pub g: Vec<BnStats<S>>,
}

impl<S: Scalar> BlockStats<S> {
    pub fn numel(&self) -> usize {
        self.f.iter().chain(&self.g).map(BnStats::numel).sum()
    }
}

/// Result of a reversible backward step.
#[derive(Clone, Debug)]
pub struct RevGrads<S> {
    pub x1: Tensor<S>,
    pub x2: Tensor<S>,
    pub dx1: Tensor<S>,
    pub dx2: Tensor<S>,
}

#[derive(Clone, Debug)]
pub struct RevBlock<S> {
    pub f: ResidualFn<S>,
    pub g: ResidualFn<S>,
}

fn same_shape<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{what}: stream shapes {} and {} differ", a.shape(), b.shape()));
    }
    Ok(())
}

impl<S: Scalar> RevBlock<S> {
    pub fn new(f: ResidualFn<S>, g: ResidualFn<S>) -> Result<Self> {
        for (name, b) in [("F", &f), ("G", &g)] {
            if !b.is_stride_one() {
                return Err(config_err!("reversible branch {name} contains a strided convolution"));
            }
            if b.c_in != b.c_out {
                return Err(config_err!("reversible branch {name} maps {} to {} channels", b.c_in, b.c_out));
            }
        }
        if f.c_in != g.c_in {
            return Err(config_err!("branches operate on {} and {} channels", f.c_in, g.c_in));
        }
        Ok(Self { f, g })
    }

    /// Channels per stream.
    pub fn half(&self) -> usize {
        self.f.c_in
    }

    fn check_streams(&self, a: &Tensor<S>, b: &Tensor<S>, what: &str) -> Result<()> {
        same_shape(a, b, what)?;
        self.f.check_input(a.shape())
    }

    /// `y1 = x1 + F(x2)`, `y2 = x2 + G(y1)`; returns the batch statistics used.
    pub fn forward(&mut self, x1: &Tensor<S>, x2: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>, BlockStats<S>)> {
        self.check_streams(x1, x2, "reversible forward")?;
        let (fx, tf) = self.f.chain.forward(x2, Stats::Fresh, false)?;
        let y1 = x1.add(&fx)?;
        let (gy, tg) = self.g.chain.forward(&y1, Stats::Fresh, false)?;
        let y2 = x2.add(&gy)?;
        Ok((y1, y2, BlockStats { f: tf.stats, g: tg.stats }))
    }

    /// Forward that keeps every branch input for conventional backprop.
    pub fn forward_traced(&mut self, x1: &Tensor<S>, x2: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>, Trace<S>, Trace<S>)> {
        self.check_streams(x1, x2, "reversible forward")?;
        let (fx, tf) = self.f.chain.forward(x2, Stats::Fresh, true)?;
        let y1 = x1.add(&fx)?;
        let (gy, tg) = self.g.chain.forward(&y1, Stats::Fresh, true)?;
        let y2 = x2.add(&gy)?;
        Ok((y1, y2, tf, tg))
    }

    /// `x2 = y2 - G(y1)`, `x1 = y1 - F(x2)` with BN statistics replayed.
    pub fn inverse(&mut self, y1: &Tensor<S>, y2: &Tensor<S>, stats: &BlockStats<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        self.check_streams(y1, y2, "reversible inverse")?;
        self.check_stats(stats)?;
        let x2 = y2.sub(&self.g.chain.forward(y1, Stats::Replay(&stats.g), false)?.0)?;
        let x1 = y1.sub(&self.f.chain.forward(&x2, Stats::Replay(&stats.f), false)?.0)?;
        Ok((x1, x2))
    }

    fn check_stats(&self, stats: &BlockStats<S>) -> Result<()> {
        if stats.f.len() != self.f.chain.bn_count() || stats.g.len() != self.g.chain.bn_count() {
            return Err(Error::State("captured batch statistics missing for reversible block".into()));
        }
        Ok(())
    }

    /// Reconstructs the inputs from the outputs and back-propagates without
    /// reading any activation saved by the forward pass. Parameter gradients
    /// are accumulated into the branch parameters.
    pub fn backward(
        &mut self,
        y1: &Tensor<S>,
        y2: &Tensor<S>,
        dy1: &Tensor<S>,
        dy2: &Tensor<S>,
        stats: &BlockStats<S>,
    ) -> Result<RevGrads<S>> {
        self.check_streams(y1, y2, "reversible backward")?;
        same_shape(y1, dy1, "reversible backward")?;
        same_shape(y2, dy2, "reversible backward")?;
        self.check_stats(stats)?;
        let z1 = y1;
        let (gz, tg) = self.g.chain.forward(z1, Stats::Replay(&stats.g), true)?;
        let x2 = y2.sub(&gz)?;
        drop(gz);
        let dz1 = dy1.add(&self.g.chain.backward(&tg, dy2.clone())?)?;
        drop(tg);
        let (fx, tf) = self.f.chain.forward(&x2, Stats::Replay(&stats.f), true)?;
        let x1 = z1.sub(&fx)?;
        drop(fx);
        let dx2 = dy2.add(&self.f.chain.backward(&tf, dz1.clone())?)?;
        Ok(RevGrads { x1, x2, dx1: dz1, dx2 })
    }

    /// Conventional backprop over traces recorded by [`RevBlock::forward_traced`].
    pub fn backward_traced(
        &mut self,
        tf: &Trace<S>,
        tg: &Trace<S>,
        dy1: &Tensor<S>,
        dy2: &Tensor<S>,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        let dz1 = dy1.add(&self.g.chain.backward(tg, dy2.clone())?)?;
        let dx2 = dy2.add(&self.f.chain.backward(tf, dz1.clone())?)?;
        Ok((dz1, dx2))
    }

    pub fn params(&self) -> Vec<&Param<S>> {
        let mut p = self.f.params();
        p.extend(self.g.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut p = self.f.params_mut();
        p.extend(self.g.params_mut());
        p
    }
}
