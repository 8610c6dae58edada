use crate::error::{shape_err, Result};
use crate::ops::fault::{self, OpKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// Masks the upstream gradient where `x <= 0` (subgradient 0 at exactly 0).
pub fn relu_backward<S: Scalar>(x: &Tensor<S>, dy: &Tensor<S>) -> Result<Tensor<S>> {
    if x.shape() != dy.shape() {
        return Err(shape_err!("relu backward: {} vs {}", x.shape(), dy.shape()));
    }
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= S::zero() {
            *d = S::zero();
        }
    }
    fault::corrupt(OpKind::Relu, &mut dx);
    Ok(dx)
}
