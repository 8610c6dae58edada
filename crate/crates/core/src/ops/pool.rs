//! Global statistics pooling: per-(c, f) mean and standard deviation over time.

use crate::error::{shape_err, Result};
use crate::ops::fault::{self, OpKind};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const GSP_EPS: f64 = 1e-10;

/// Output `(n, 2*c*f)` laid out as all means followed by all standard deviations.
pub fn gsp<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let s = x.shape();
    if s.t == 0 {
        return Err(shape_err!("statistics pooling over an empty time axis"));
    }
    let rows = s.c * s.f;
    let tn = S::of(s.t as f64);
    let eps = S::of(GSP_EPS);
    let mut y = Tensor::zeros(Shape::flat(s.n, 2 * rows));
    for n in 0..s.n {
        let src = x.sample(n);
        let dst = y.sample_mut(n);
        for r in 0..rows {
            let row = &src[r * s.t..(r + 1) * s.t];
            let mean = row.iter().copied().sum::<S>() / tn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / tn;
            dst[r] = mean;
            dst[rows + r] = (var + eps).sqrt();
        }
    }
    Ok(y)
}

pub fn gsp_backward<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>, dy: &Tensor<S>) -> Result<Tensor<S>> {
    let s = x.shape();
    let rows = s.c * s.f;
    if y.shape() != Shape::flat(s.n, 2 * rows) || dy.shape() != y.shape() {
        return Err(shape_err!("statistics pooling backward: upstream {} for input {s}", dy.shape()));
    }
    let tn = S::of(s.t as f64);
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n {
        let (src, out, up) = (x.sample(n), y.sample(n), dy.sample(n));
        let dst = dx.sample_mut(n);
        for r in 0..rows {
            let (mean, std) = (out[r], out[rows + r]);
            let gm = up[r] / tn;
            let gs = up[rows + r] / (tn * std);
            for k in r * s.t..(r + 1) * s.t {
                dst[k] = gm + gs * (src[k] - mean);
            }
        }
    }
    fault::corrupt(OpKind::StatPool, &mut dx);
    Ok(dx)
}
