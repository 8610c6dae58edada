use rand::Rng;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// A learnable tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

impl<S: Scalar> Param<S> {
    pub fn new(value: Tensor<S>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::new(Tensor::zeros(shape))
    }

    /// He-uniform fan-in initialization: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
    pub fn he_uniform<R: Rng + ?Sized>(shape: Shape, fan_in: usize, rng: &mut R) -> Self {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        Self::new(Tensor::uniform(shape, bound, rng))
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = S::zero());
    }

    pub fn accumulate(&mut self, g: &Tensor<S>) -> Result<()> {
        if g.shape() != self.value.shape() {
            return Err(shape_err!("gradient {} for parameter {}", g.shape(), self.value.shape()));
        }
        self.grad.add_assign(g)
    }

    pub fn accumulate_slice(&mut self, g: &[S]) -> Result<()> {
        if g.len() != self.grad.len() {
            return Err(shape_err!("gradient of length {} for parameter of {} elements", g.len(), self.grad.len()));
        }
        for (acc, &v) in self.grad.data_mut().iter_mut().zip(g) {
            *acc = *acc + v;
        }
        Ok(())
    }
}
