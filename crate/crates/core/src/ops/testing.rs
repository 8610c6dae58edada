//! Independent reference implementations used only by unit tests.

pub use crate::check::fd_check;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Direct quadruple-loop cross-correlation.
pub fn naive_conv<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, stride: usize, pad: usize, depthwise: bool) -> Tensor<S> {
    let xs = x.shape();
    let ws = w.shape();
    let fo = (xs.f + 2 * pad - ws.f) / stride + 1;
    let to = (xs.t + 2 * pad - ws.t) / stride + 1;
    let c_out = ws.n;
    let mut y = Tensor::zeros(Shape::new(xs.n, c_out, fo, to));
    for n in 0..xs.n {
        for co in 0..c_out {
            for i in 0..fo {
                for j in 0..to {
                    let mut acc = 0.0f64;
                    let channels: Vec<usize> = if depthwise { vec![co] } else { (0..xs.c).collect() };
                    for ci in channels {
                        let wc = if depthwise { 0 } else { ci };
                        for ki in 0..ws.f {
                            for kj in 0..ws.t {
                                let fi = (i * stride + ki) as isize - pad as isize;
                                let ti = (j * stride + kj) as isize - pad as isize;
                                if fi < 0 || ti < 0 || fi as usize >= xs.f || ti as usize >= xs.t {
                                    continue;
                                }
                                acc += x.at(n, ci, fi as usize, ti as usize).f64() * w.at(co, wc, ki, kj).f64();
                            }
                        }
                    }
                    let idx = y.index(n, co, i, j);
                    y.data_mut()[idx] = S::of(acc);
                }
            }
        }
    }
    y
}
