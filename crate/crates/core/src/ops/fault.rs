//! Test hook that deliberately corrupts one operator's VJP on the current thread.

use std::cell::Cell;
use std::str::FromStr;

use crate::error::Error;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Conv,
    DepthwiseConv,
    BatchNorm,
    Relu,
    Linear,
    StatPool,
}

impl OpKind {
    pub const ALL: [OpKind; 6] =
        [OpKind::Conv, OpKind::DepthwiseConv, OpKind::BatchNorm, OpKind::Relu, OpKind::Linear, OpKind::StatPool];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv => "conv2d",
            OpKind::DepthwiseConv => "depthwise_conv2d",
            OpKind::BatchNorm => "batchnorm2d",
            OpKind::Relu => "relu",
            OpKind::Linear => "linear",
            OpKind::StatPool => "global_stat_pool",
        }
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        OpKind::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown operator `{s}`")))
    }
}

thread_local! {
    static TARGET: Cell<Option<OpKind>> = const { Cell::new(None) };
}

/// Corrupts the VJP of `op` (or none) for subsequent calls on this thread.
pub fn inject(op: Option<OpKind>) {
    TARGET.with(|t| t.set(op));
}

pub fn active() -> Option<OpKind> {
    TARGET.with(|t| t.get())
}

pub(crate) fn corrupt<S: Scalar>(op: OpKind, grad: &mut Tensor<S>) {
    if active() == Some(op) {
        for v in grad.data_mut() {
            *v = *v * S::of(1.5) + S::of(1e-3);
        }
    }
}
