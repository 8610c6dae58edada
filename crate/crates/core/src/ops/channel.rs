//! Channel-axis split/concatenation and pixel (un)shuffle.

use crate::error::{config_err, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Splits along channels into `(x[:, :c1], x[:, c1:])`.
pub fn split_channels<S: Scalar>(x: &Tensor<S>, c1: usize) -> Result<(Tensor<S>, Tensor<S>)> {
    let s = x.shape();
    if c1 > s.c {
        return Err(shape_err!("split at channel {c1} of a {}-channel tensor", s.c));
    }
    let plane = s.plane();
    let mut a = Tensor::zeros(s.with_c(c1));
    let mut b = Tensor::zeros(s.with_c(s.c - c1));
    for n in 0..s.n {
        let src = x.sample(n);
        a.sample_mut(n).copy_from_slice(&src[..c1 * plane]);
        b.sample_mut(n).copy_from_slice(&src[c1 * plane..]);
    }
    Ok((a, b))
}

/// Even first-half / second-half split used by reversible coupling.
pub fn channel_split<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
    let c = x.shape().c;
    if c % 2 != 0 {
        return Err(config_err!("cannot split {c} channels into equal halves"));
    }
    split_channels(x, c / 2)
}

/// Concatenates along channels; batch and spatial extents must agree.
pub fn concat_channels<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.f != sb.f || sa.t != sb.t {
        return Err(shape_err!("concat of {sa} and {sb}"));
    }
    let mut y = Tensor::zeros(sa.with_c(sa.c + sb.c));
    let split = a.shape().sample_len();
    for n in 0..sa.n {
        let dst = y.sample_mut(n);
        dst[..split].copy_from_slice(a.sample(n));
        dst[split..].copy_from_slice(b.sample(n));
    }
    Ok(y)
}

/// `out[n][c*r*r + i*r + j][u][v] = in[n][c][u*r + i][v*r + j]`.
pub fn pixel_unshuffle<S: Scalar>(x: &Tensor<S>, r: usize) -> Result<Tensor<S>> {
    let s = x.shape();
    if r == 0 {
        return Err(config_err!("pixel unshuffle ratio must be positive"));
    }
    if s.f % r != 0 || s.t % r != 0 {
        return Err(config_err!("spatial extent {}x{} not divisible by ratio {r}", s.f, s.t));
    }
    let (fo, to) = (s.f / r, s.t / r);
    let mut y = Tensor::zeros(Shape::new(s.n, s.c * r * r, fo, to));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            for i in 0..r {
                for j in 0..r {
                    let dst = y.plane_mut(n, c * r * r + i * r + j);
                    for u in 0..fo {
                        for v in 0..to {
                            dst[u * to + v] = src[(u * r + i) * s.t + v * r + j];
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Exact inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle<S: Scalar>(x: &Tensor<S>, r: usize) -> Result<Tensor<S>> {
    let s = x.shape();
    if r == 0 {
        return Err(config_err!("pixel shuffle ratio must be positive"));
    }
    if s.c % (r * r) != 0 {
        return Err(shape_err!("{} channels not divisible by {}", s.c, r * r));
    }
    let c_out = s.c / (r * r);
    let (fo, to) = (s.f * r, s.t * r);
    let mut y = Tensor::zeros(Shape::new(s.n, c_out, fo, to));
    for n in 0..s.n {
        for c in 0..c_out {
            for i in 0..r {
                for j in 0..r {
                    let src = x.plane(n, c * r * r + i * r + j);
                    let dst = y.plane_mut(n, c);
                    for u in 0..s.f {
                        for v in 0..s.t {
                            dst[(u * r + i) * to + v * r + j] = src[u * s.t + v];
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn split_concat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::randn(Shape::new(2, 5, 3, 4), 1.0, &mut rng);
        let (a, b) = split_channels(&x, 2).unwrap();
        assert_eq!(a.shape().c, 2);
        assert_eq!(b.shape().c, 3);
        assert_eq!(concat_channels(&a, &b).unwrap(), x);
        assert!(split_channels(&x, 6).is_err());
        assert!(matches!(channel_split(&x), Err(crate::Error::Config(_))));
        let x = Tensor::<f32>::from_vec(Shape::new(1, 4, 1, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (a, b) = channel_split(&x).unwrap();
        assert_eq!((a.data(), b.data()), (&[1.0, 2.0][..], &[3.0, 4.0][..]));
        let short = Tensor::<f32>::zeros(Shape::new(1, 2, 1, 2));
        assert!(concat_channels(&a, &short).is_err());
    }

    #[test]
    fn unshuffle_matches_index_formula() {
        let x = Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_unshuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 4, 1, 1));
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::randn(Shape::new(2, 3, 4, 6), 1.0, &mut rng);
        let y = pixel_unshuffle(&x, 2).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                for i in 0..2 {
                    for j in 0..2 {
                        for u in 0..2 {
                            for v in 0..3 {
                                assert_eq!(y.at(n, c * 4 + i * 2 + j, u, v), x.at(n, c, u * 2 + i, v * 2 + j));
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(pixel_shuffle(&y, 2).unwrap(), x);
        assert!(pixel_unshuffle(&x, 4).is_err());
    }
}
