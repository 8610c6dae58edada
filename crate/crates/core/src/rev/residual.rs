use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::chain::{Chain, Prim, Stats};
use crate::error::{config_err, shape_err, Error, Result};
use crate::param::Param;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    Basic,
    Bottleneck,
    DfBottleneck,
}

impl ResidualKind {
    pub const ALL: [ResidualKind; 3] = [ResidualKind::Basic, ResidualKind::Bottleneck, ResidualKind::DfBottleneck];

    pub fn name(self) -> &'static str {
        match self {
            ResidualKind::Basic => "basic",
            ResidualKind::Bottleneck => "bottleneck",
            ResidualKind::DfBottleneck => "df_bottleneck",
        }
    }

    /// Output-to-base channel ratio of a non-reversible block of this kind.
    pub fn expansion(self) -> usize {
        match self {
            ResidualKind::Bottleneck => 4,
            _ => 1,
        }
    }
}

impl fmt::Display for ResidualKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResidualKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(ResidualKind::Basic),
            "bottleneck" => Ok(ResidualKind::Bottleneck),
            "df_bottleneck" | "df" => Ok(ResidualKind::DfBottleneck),
            _ => Err(config_err!("unknown residual kind `{s}`")),
        }
    }
}

/// A residual branch: the skip-add is applied by the caller.
#[derive(Clone, Debug)]
pub struct ResidualFn<S> {
    pub kind: Option<ResidualKind>,
    pub chain: Chain<S>,
    pub c_in: usize,
    pub c_out: usize,
}

impl<S: Scalar> ResidualFn<S> {
    /// Branch from `c_in` to `c_out` channels; only the first convolution is strided.
    ///
    /// basic: Conv3x3 -> BN -> ReLU -> Conv3x3
    /// bottleneck: Conv1x1 (c_out/4) -> BN -> ReLU -> Conv3x3 -> Conv1x1
    /// df_bottleneck: Conv1x1 (4 c_in) -> BN -> ReLU -> DConv3x3 -> Conv1x1
    pub fn new<R: Rng + ?Sized>(kind: ResidualKind, c_in: usize, c_out: usize, stride: usize, rng: &mut R) -> Result<Self> {
        if c_in == 0 || c_out == 0 || stride == 0 {
            return Err(config_err!("{kind} branch needs positive channels and stride"));
        }
        let prims = match kind {
            ResidualKind::Basic => vec![
                Prim::conv(c_in, c_out, 3, stride, rng),
                Prim::bn(c_out),
                Prim::Relu,
                Prim::conv(c_out, c_out, 3, 1, rng),
            ],
            ResidualKind::Bottleneck => {
                if c_out % 4 != 0 {
                    return Err(config_err!("bottleneck output width {c_out} is not a multiple of 4"));
                }
                let inner = c_out / 4;
                vec![
                    Prim::conv(c_in, inner, 1, stride, rng),
                    Prim::bn(inner),
                    Prim::Relu,
                    Prim::conv(inner, inner, 3, 1, rng),
                    Prim::conv(inner, c_out, 1, 1, rng),
                ]
            }
            ResidualKind::DfBottleneck => {
                let inner = 4 * c_in;
                vec![
                    Prim::conv(c_in, inner, 1, stride, rng),
                    Prim::bn(inner),
                    Prim::Relu,
                    Prim::depthwise(inner, 3, 1, rng),
                    Prim::conv(inner, c_out, 1, 1, rng),
                ]
            }
        };
        Ok(Self { kind: Some(kind), chain: Chain::new(prims), c_in, c_out })
    }

    /// Shape-preserving branch suitable for a reversible coupling.
    pub fn reversible<R: Rng + ?Sized>(kind: ResidualKind, half: usize, rng: &mut R) -> Result<Self> {
        Self::new(kind, half, half, 1, rng)
    }

    /// Arbitrary branch; must preserve channel count to be used in a coupling.
    pub fn from_chain(chain: Chain<S>, channels: usize) -> Result<Self> {
        let out = chain.out_shape(Shape::new(1, channels, 1, 1))?;
        Ok(Self { kind: None, chain, c_in: channels, c_out: out.c })
    }

    pub fn is_stride_one(&self) -> bool {
        self.chain.prims.iter().all(|p| p.stride() == 1)
    }

    /// Evaluates the branch with fresh batch statistics.
    pub fn apply(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_input(x.shape())?;
        Ok(self.chain.forward(x, Stats::Fresh, false)?.0)
    }

    pub(crate) fn check_input(&self, s: Shape) -> Result<()> {
        if s.c != self.c_in {
            return Err(shape_err!("residual branch expects {} channels, got {}", self.c_in, s.c));
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param<S>> {
        self.chain.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        self.chain.params_mut()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}
