//! Cross-correlation convolutions (no kernel flip) and their VJPs.

use crate::error::{config_err, shape_err, Result};
use crate::ops::fault::{self, OpKind};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Spatial output size of a windowed op; floors like every mainstream
/// framework so that stride-2 downsampling of even inputs is accepted.
pub fn out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(config_err!("stride must be positive"));
    }
    let span = input + 2 * pad;
    if span < kernel {
        return Err(config_err!(
            "kernel {kernel} larger than padded input {span} (input {input}, pad {pad})"
        ));
    }
    Ok((span - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    c_in: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    fo: usize,
    to: usize,
}

impl Geom {
    fn new(x: Shape, w: Shape, stride: usize, pad: usize, depthwise: bool) -> Result<Self> {
        let (c_out, c_in, kh, kw) = (w.n, w.c, w.f, w.t);
        if depthwise {
            if c_in != 1 || c_out != x.c {
                return Err(shape_err!(
                    "depthwise kernel {w} needs shape ({}, 1, kh, kw) for input {x}",
                    x.c
                ));
            }
        } else if x.c != c_in {
            return Err(shape_err!("conv2d: input has {} channels, kernel {w} expects {c_in}", x.c));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(config_err!("kernel sizes must be odd, got {kh}x{kw}"));
        }
        let fo = out_dim(x.f, kh, stride, pad)?;
        let to = out_dim(x.t, kw, stride, pad)?;
        Ok(Self { c_in: x.c, c_out, kh, kw, stride, pad, fo, to })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.fo * self.to
    }

    #[inline]
    fn src(&self, o: usize, k: usize, len: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < len).then_some(i as usize)
    }

    /// Outputs `lo..hi` whose tap `k` lands inside an input line of `len`.
    #[inline]
    fn valid(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > k { (self.pad - k).div_ceil(s) } else { 0 };
        if len + self.pad < k + 1 {
            return (0, 0);
        }
        let hi = ((len - 1 + self.pad - k) / s + 1).min(out_len);
        (lo.min(hi), hi)
    }
}

/// Valid output range and first input index of one tap along a line.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    first: usize,
}

fn line_taps(g: &Geom, len: usize, out_len: usize, kernel: usize) -> Vec<Tap> {
    (0..kernel)
        .map(|k| {
            let (lo, hi) = g.valid(k, len, out_len);
            let first = if lo < hi { lo * g.stride + k - g.pad } else { 0 };
            Tap { lo, hi, first }
        })
        .collect()
}

/// `out[o] += w * line[o * stride + k - pad]` over the valid outputs.
#[inline]
fn tap_forward<S: Scalar>(g: &Geom, tap: Tap, w: S, line: &[S], out: &mut [S]) {
    let Tap { lo, hi, first } = tap;
    if lo == hi {
        return;
    }
    if g.stride == 1 {
        for (o, &v) in out[lo..hi].iter_mut().zip(&line[first..first + hi - lo]) {
            *o = *o + w * v;
        }
    } else {
        for (j, o) in out[lo..hi].iter_mut().enumerate() {
            *o = *o + w * line[first + j * g.stride];
        }
    }
}

/// Adjoint of [`tap_forward`]: scatters `w * up` into `grad` and returns `sum up * line`.
#[inline]
fn tap_backward<S: Scalar>(g: &Geom, tap: Tap, w: S, line: &[S], up: &[S], grad: &mut [S]) -> S {
    let Tap { lo, hi, first } = tap;
    let mut acc = S::zero();
    if lo == hi {
        return acc;
    }
    if g.stride == 1 {
        let n = hi - lo;
        for ((&u, &v), gr) in up[lo..hi].iter().zip(&line[first..first + n]).zip(&mut grad[first..first + n]) {
            acc = acc + u * v;
            *gr = *gr + u * w;
        }
    } else {
        for (j, &u) in up[lo..hi].iter().enumerate() {
            let ti = first + j * g.stride;
            acc = acc + u * line[ti];
            grad[ti] = grad[ti] + u * w;
        }
    }
    acc
}

fn im2col<S: Scalar>(g: &Geom, x: &[S], f: usize, t: usize, cols: &mut [S]) {
    let p = g.cols();
    let taps = line_taps(g, t, g.to, g.kw);
    for ci in 0..g.c_in {
        let plane = &x[ci * f * t..(ci + 1) * f * t];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((ci * g.kh + ki) * g.kw + kj) * p;
                for fo in 0..g.fo {
                    let dst = &mut cols[row + fo * g.to..row + (fo + 1) * g.to];
                    match g.src(fo, ki, f) {
                        None => dst.iter_mut().for_each(|v| *v = S::zero()),
                        Some(fi) => {
                            let line = &plane[fi * t..(fi + 1) * t];
                            dst.iter_mut().for_each(|v| *v = S::zero());
                            tap_forward(g, taps[kj], S::one(), line, dst);
                        }
                    }
                }
            }
        }
    }
}

fn col2im<S: Scalar>(g: &Geom, cols: &[S], f: usize, t: usize, dx: &mut [S]) {
    let p = g.cols();
    for ci in 0..g.c_in {
        let plane = &mut dx[ci * f * t..(ci + 1) * f * t];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((ci * g.kh + ki) * g.kw + kj) * p;
                for fo in 0..g.fo {
                    let Some(fi) = g.src(fo, ki, f) else { continue };
                    let src = &cols[row + fo * g.to..row + (fo + 1) * g.to];
                    let line = &mut plane[fi * t..(fi + 1) * t];
                    let (lo, hi) = g.valid(kj, t, g.to);
                    for (j, &v) in src[lo..hi].iter().enumerate() {
                        let ti = (lo + j) * g.stride + kj - g.pad;
                        line[ti] = line[ti] + v;
                    }
                }
            }
        }
    }
}

/// Dense 2-D cross-correlation. `w` has shape `(c_out, c_in, kh, kw)`.
pub fn conv2d<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, stride: usize, pad: usize) -> Result<Tensor<S>> {
    let xs = x.shape();
    let g = Geom::new(xs, w.shape(), stride, pad, false)?;
    let mut y = Tensor::zeros(Shape::new(xs.n, g.c_out, g.fo, g.to));
    let (k, p) = (g.rows(), g.cols());
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![S::zero(); k * p] };
    for n in 0..xs.n {
        let b: &[S] = if g.is_pointwise() {
            x.sample(n)
        } else {
            im2col(&g, x.sample(n), xs.f, xs.t, &mut cols);
            &cols
        };
        S::gemm(g.c_out, k, p, S::one(), w.data(), k as isize, 1, b, p as isize, 1, S::zero(), y.sample_mut(n), p as isize, 1);
    }
    Ok(y)
}

/// VJP of [`conv2d`]: returns `(dL/dx, dL/dw)`.
pub fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    stride: usize,
    pad: usize,
    dy: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let xs = x.shape();
    let g = Geom::new(xs, w.shape(), stride, pad, false)?;
    let expect = Shape::new(xs.n, g.c_out, g.fo, g.to);
    if dy.shape() != expect {
        return Err(shape_err!("conv2d backward: upstream {} but output is {expect}", dy.shape()));
    }
    let (k, p) = (g.rows(), g.cols());
    let mut dx = Tensor::zeros(xs);
    let mut dw = Tensor::zeros(w.shape());
    let mut cols = vec![S::zero(); k * p];
    let mut dcols = vec![S::zero(); k * p];
    for n in 0..xs.n {
        let dyn_ = dy.sample(n);
        if g.is_pointwise() {
            let xn = x.sample(n);
            S::gemm(g.c_out, p, k, S::one(), dyn_, p as isize, 1, xn, 1, p as isize, S::one(), dw.data_mut(), k as isize, 1);
            S::gemm(k, g.c_out, p, S::one(), w.data(), 1, k as isize, dyn_, p as isize, 1, S::zero(), dx.sample_mut(n), p as isize, 1);
        } else {
            im2col(&g, x.sample(n), xs.f, xs.t, &mut cols);
            S::gemm(g.c_out, p, k, S::one(), dyn_, p as isize, 1, &cols, 1, p as isize, S::one(), dw.data_mut(), k as isize, 1);
            S::gemm(k, g.c_out, p, S::one(), w.data(), 1, k as isize, dyn_, p as isize, 1, S::zero(), &mut dcols, p as isize, 1);
            col2im(&g, &dcols, xs.f, xs.t, dx.sample_mut(n));
        }
    }
    fault::corrupt(OpKind::Conv, &mut dx);
    Ok((dx, dw))
}

/// Channel-wise convolution with one `(kh, kw)` filter per channel; `w` has
/// shape `(c, 1, kh, kw)`.
pub fn depthwise_conv2d<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, stride: usize, pad: usize) -> Result<Tensor<S>> {
    let xs = x.shape();
    let g = Geom::new(xs, w.shape(), stride, pad, true)?;
    let mut y = Tensor::zeros(Shape::new(xs.n, xs.c, g.fo, g.to));
    let kk = g.kh * g.kw;
    let taps = line_taps(&g, xs.t, g.to, g.kw);
    for n in 0..xs.n {
        for c in 0..xs.c {
            let filt = &w.data()[c * kk..(c + 1) * kk];
            let src = x.plane(n, c);
            let dst = y.plane_mut(n, c);
            for fo in 0..g.fo {
                for ki in 0..g.kh {
                    let Some(fi) = g.src(fo, ki, xs.f) else { continue };
                    let line = &src[fi * xs.t..(fi + 1) * xs.t];
                    let out = &mut dst[fo * g.to..(fo + 1) * g.to];
                    for kj in 0..g.kw {
                        tap_forward(&g, taps[kj], filt[ki * g.kw + kj], line, out);
                    }
                }
            }
        }
    }
    Ok(y)
}

/// VJP of [`depthwise_conv2d`]: returns `(dL/dx, dL/dw)`.
pub fn depthwise_conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    stride: usize,
    pad: usize,
    dy: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let xs = x.shape();
    let g = Geom::new(xs, w.shape(), stride, pad, true)?;
    let expect = Shape::new(xs.n, xs.c, g.fo, g.to);
    if dy.shape() != expect {
        return Err(shape_err!("depthwise backward: upstream {} but output is {expect}", dy.shape()));
    }
    let kk = g.kh * g.kw;
    let mut dx = Tensor::zeros(xs);
    let mut dw = Tensor::zeros(w.shape());
    let taps = line_taps(&g, xs.t, g.to, g.kw);
    for n in 0..xs.n {
        for c in 0..xs.c {
            let src = x.plane(n, c);
            let up = dy.plane(n, c);
            let mut grad_plane = vec![S::zero(); xs.plane()];
            for fo in 0..g.fo {
                for ki in 0..g.kh {
                    let Some(fi) = g.src(fo, ki, xs.f) else { continue };
                    let line = &src[fi * xs.t..(fi + 1) * xs.t];
                    let gline = &mut grad_plane[fi * xs.t..(fi + 1) * xs.t];
                    let upl = &up[fo * g.to..(fo + 1) * g.to];
                    for kj in 0..g.kw {
                        let wv = w.data()[c * kk + ki * g.kw + kj];
                        let acc = tap_backward(&g, taps[kj], wv, line, upl, gline);
                        let slot = &mut dw.data_mut()[c * kk + ki * g.kw + kj];
                        *slot = *slot + acc;
                    }
                }
            }
            dx.plane_mut(n, c).copy_from_slice(&grad_plane);
        }
    }
    fault::corrupt(OpKind::DepthwiseConv, &mut dx);
    Ok((dx, dw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::testing::{fd_check, naive_conv};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_kernel(c: usize) -> Tensor<f64> {
        let mut w = Tensor::zeros(Shape::new(c, c, 3, 3));
        for i in 0..c {
            let idx = w.index(i, i, 1, 1);
            w.data_mut()[idx] = 1.0;
        }
        w
    }

    #[test]
    fn scalar_product() {
        let x = Tensor::<f32>::from_vec(Shape::new(1, 1, 1, 1), vec![3.0]).unwrap();
        let w = Tensor::<f32>::from_vec(Shape::new(1, 1, 1, 1), vec![2.0]).unwrap();
        assert_eq!(conv2d(&x, &w, 1, 0).unwrap().data(), &[6.0]);
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::randn(Shape::new(1, 2, 4, 4), 1.0, &mut rng);
        let y = conv2d(&x, &identity_kernel(2), 1, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 1), (1, 2, 5)] {
            let x = Tensor::<f64>::randn(Shape::new(2, 3, 7, 6), 1.0, &mut rng);
            let w = Tensor::<f64>::randn(Shape::new(4, 3, k, k), 1.0, &mut rng);
            let fast = conv2d(&x, &w, stride, pad).unwrap();
            let slow = naive_conv(&x, &w, stride, pad, false);
            assert_eq!(fast.shape(), slow.shape());
            assert!(crate::tensor::rel_error(fast.data(), slow.data(), 1e-8) < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::randn(Shape::new(1, 2, 5, 5), 1.0, &mut rng);
        let w = Tensor::<f64>::randn(Shape::new(3, 2, 3, 3), 1.0, &mut rng);
        for &(stride, pad) in &[(1, 1), (2, 1), (1, 0)] {
            let y = conv2d(&x, &w, stride, pad).unwrap();
            let probe = Tensor::<f64>::randn(y.shape(), 1.0, &mut rng);
            let (dx, dw) = conv2d_backward(&x, &w, stride, pad, &probe).unwrap();
            let ex = fd_check(&x, &dx, |xx| conv2d(xx, &w, stride, pad).unwrap().dot(&probe).unwrap());
            let ew = fd_check(&w, &dw, |ww| conv2d(&x, ww, stride, pad).unwrap().dot(&probe).unwrap());
            assert!(ex <= 1e-6 && ew <= 1e-6, "stride {stride} pad {pad}: {ex} {ew}");
        }
    }

    #[test]
    fn rejects_channel_mismatch_and_even_kernels() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::<f32>::zeros(Shape::new(1, 3, 3, 3));
        assert!(matches!(conv2d(&x, &w, 1, 1), Err(crate::Error::Shape(_))));
        let w = Tensor::<f32>::zeros(Shape::new(1, 2, 2, 2));
        assert!(matches!(conv2d(&x, &w, 1, 0), Err(crate::Error::Config(_))));
        let w = Tensor::<f32>::zeros(Shape::new(1, 2, 7, 7));
        assert!(matches!(conv2d(&x, &w, 1, 0), Err(crate::Error::Config(_))));
    }

    #[test]
    fn depthwise_ones_kernel_counts_neighbours() {
        let x = Tensor::<f32>::full(Shape::new(1, 2, 3, 3), 1.0);
        let w = Tensor::<f32>::full(Shape::new(2, 1, 3, 3), 1.0);
        let y = depthwise_conv2d(&x, &w, 1, 1).unwrap();
        for c in 0..2 {
            assert_eq!(y.plane(0, c), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
        }
    }

    #[test]
    fn depthwise_identity_and_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::randn(Shape::new(2, 3, 5, 4), 1.0, &mut rng);
        let mut w = Tensor::<f64>::zeros(Shape::new(3, 1, 3, 3));
        for c in 0..3 {
            let idx = w.index(c, 0, 1, 1);
            w.data_mut()[idx] = 1.0;
        }
        assert_eq!(depthwise_conv2d(&x, &w, 1, 1).unwrap(), x);
        let w = Tensor::<f64>::randn(Shape::new(3, 1, 3, 3), 1.0, &mut rng);
        for stride in [1, 2] {
            let fast = depthwise_conv2d(&x, &w, stride, 1).unwrap();
            let slow = naive_conv(&x, &w, stride, 1, true);
            assert!(crate::tensor::rel_error(fast.data(), slow.data(), 1e-8) < 1e-12);
        }
    }

    #[test]
    fn depthwise_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::randn(Shape::new(2, 3, 5, 5), 1.0, &mut rng);
        let w = Tensor::<f64>::randn(Shape::new(3, 1, 3, 3), 1.0, &mut rng);
        for stride in [1, 2] {
            let y = depthwise_conv2d(&x, &w, stride, 1).unwrap();
            let probe = Tensor::<f64>::randn(y.shape(), 1.0, &mut rng);
            let (dx, dw) = depthwise_conv2d_backward(&x, &w, stride, 1, &probe).unwrap();
            let ex = fd_check(&x, &dx, |xx| depthwise_conv2d(xx, &w, stride, 1).unwrap().dot(&probe).unwrap());
            let ew = fd_check(&w, &dw, |ww| depthwise_conv2d(&x, ww, stride, 1).unwrap().dot(&probe).unwrap());
            assert!(ex <= 1e-6 && ew <= 1e-6, "{ex} {ew}");
        }
    }
}
