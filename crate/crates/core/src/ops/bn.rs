//! Training-mode batch normalization over `(n, f, t)` per channel.

use crate::error::{config_err, shape_err, Result};
use crate::ops::fault::{self, OpKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel batch mean and biased variance used by one BN evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

impl<S: Scalar> BnStats<S> {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Scalars held (mean and variance for every channel).
    pub fn numel(&self) -> usize {
        self.mean.len() + self.var.len()
    }
}

fn check_affine<S: Scalar>(x: &Tensor<S>, gamma: &[S], beta: Option<&[S]>) -> Result<()> {
    let c = x.shape().c;
    if gamma.len() != c || beta.is_some_and(|b| b.len() != c) {
        return Err(shape_err!("batchnorm: affine parameters do not match {c} channels"));
    }
    Ok(())
}

/// Two-pass per-channel mean and biased variance.
pub fn batch_stats<S: Scalar>(x: &Tensor<S>) -> BnStats<S> {
    let s = x.shape();
    let count = S::of((s.n * s.plane()) as f64);
    let mut mean = vec![S::zero(); s.c];
    let mut var = vec![S::zero(); s.c];
    for c in 0..s.c {
        let mut acc = S::zero();
        for n in 0..s.n {
            acc = acc + x.plane(n, c).iter().copied().sum::<S>();
        }
        let m = acc / count;
        let mut sq = S::zero();
        for n in 0..s.n {
            sq = sq + x.plane(n, c).iter().map(|&v| (v - m) * (v - m)).sum::<S>();
        }
        mean[c] = m;
        var[c] = sq / count;
    }
    BnStats { mean, var }
}

/// Normalizes with freshly computed batch statistics and returns them.
pub fn batchnorm2d<S: Scalar>(x: &Tensor<S>, gamma: &[S], beta: &[S], eps: S) -> Result<(Tensor<S>, BnStats<S>)> {
    let s = x.shape();
    if s.n * s.plane() == 1 && eps == S::zero() {
        return Err(config_err!("batchnorm over a single element with eps = 0 has degenerate variance"));
    }
    check_affine(x, gamma, Some(beta))?;
    let stats = batch_stats(x);
    let y = batchnorm2d_with_stats(x, gamma, beta, &stats, eps)?;
    Ok((y, stats))
}

/// Normalizes with externally supplied statistics (recomputation replay).
pub fn batchnorm2d_with_stats<S: Scalar>(
    x: &Tensor<S>,
    gamma: &[S],
    beta: &[S],
    stats: &BnStats<S>,
    eps: S,
) -> Result<Tensor<S>> {
    check_affine(x, gamma, Some(beta))?;
    let s = x.shape();
    if stats.channels() != s.c || stats.var.len() != s.c {
        return Err(shape_err!("batchnorm: statistics for {} channels, input has {}", stats.channels(), s.c));
    }
    let mut y = Tensor::zeros(s);
    for c in 0..s.c {
        let inv = S::one() / (stats.var[c] + eps).sqrt();
        let (m, g, b) = (stats.mean[c], gamma[c], beta[c]);
        for n in 0..s.n {
            for (o, &v) in y.plane_mut(n, c).iter_mut().zip(x.plane(n, c)) {
                *o = g * (v - m) * inv + b;
            }
        }
    }
    Ok(y)
}

/// VJP of training-mode batch norm (statistics treated as functions of `x`).
/// Returns `(dL/dx, dL/dgamma, dL/dbeta)`.
pub fn batchnorm2d_backward<S: Scalar>(
    x: &Tensor<S>,
    gamma: &[S],
    stats: &BnStats<S>,
    eps: S,
    dy: &Tensor<S>,
) -> Result<(Tensor<S>, Vec<S>, Vec<S>)> {
    check_affine(x, gamma, None)?;
    let s = x.shape();
    if dy.shape() != s {
        return Err(shape_err!("batchnorm backward: upstream {} vs input {s}", dy.shape()));
    }
    let count = S::of((s.n * s.plane()) as f64);
    let mut dx = Tensor::zeros(s);
    let mut dgamma = vec![S::zero(); s.c];
    let mut dbeta = vec![S::zero(); s.c];
    for c in 0..s.c {
        let inv = S::one() / (stats.var[c] + eps).sqrt();
        let m = stats.mean[c];
        let mut sum_dy = S::zero();
        let mut sum_dy_xhat = S::zero();
        for n in 0..s.n {
            for (&u, &v) in dy.plane(n, c).iter().zip(x.plane(n, c)) {
                sum_dy = sum_dy + u;
                sum_dy_xhat = sum_dy_xhat + u * (v - m) * inv;
            }
        }
        dgamma[c] = sum_dy_xhat;
        dbeta[c] = sum_dy;
        let k = gamma[c] * inv / count;
        for n in 0..s.n {
            let (up, src) = (dy.plane(n, c), x.plane(n, c));
            for (i, o) in dx.plane_mut(n, c).iter_mut().enumerate() {
                let xhat = (src[i] - m) * inv;
                *o = k * (count * up[i] - sum_dy - xhat * sum_dy_xhat);
            }
        }
    }
    fault::corrupt(OpKind::BatchNorm, &mut dx);
    Ok((dx, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::fd_check;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor::<f32>::full(Shape::new(2, 3, 2, 2), 5.0);
        let (y, stats) = batchnorm2d(&x, &[1.0; 3], &[0.0; 3], 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(stats.mean, vec![5.0; 3]);
    }

    #[test]
    fn unit_affine_gives_zero_mean_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::randn(Shape::new(3, 4, 5, 6), 3.0, &mut rng).map(|v| v + 2.0);
        let (y, _) = batchnorm2d(&x, &[1.0; 4], &[0.0; 4], 1e-5).unwrap();
        let st = batch_stats(&y);
        for c in 0..4 {
            assert!(st.mean[c].abs() <= 1e-6);
            assert!((st.var[c] - 1.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn degenerate_single_element_without_eps_errors() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 1, 1), 2.0);
        assert!(matches!(batchnorm2d(&x, &[1.0], &[0.0], 0.0), Err(crate::Error::Config(_))));
        assert!(batchnorm2d(&x, &[1.0], &[0.0], 1e-5).is_ok());
    }

    #[test]
    fn replayed_statistics_reproduce_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Tensor::<f64>::randn(Shape::new(2, 3, 4, 4), 1.0, &mut rng);
        let (y, stats) = batchnorm2d(&x, &[1.5, 0.5, 2.0], &[0.1, -0.2, 0.3], 1e-5).unwrap();
        let y2 = batchnorm2d_with_stats(&x, &[1.5, 0.5, 2.0], &[0.1, -0.2, 0.3], &stats, 1e-5).unwrap();
        assert_eq!(y, y2);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = Tensor::<f64>::randn(Shape::new(2, 3, 3, 4), 1.0, &mut rng);
        let gamma = Tensor::<f64>::randn(Shape::flat(1, 3), 1.0, &mut rng);
        let beta = Tensor::<f64>::randn(Shape::flat(1, 3), 1.0, &mut rng);
        let eps = 1e-5;
        let probe = Tensor::<f64>::randn(x.shape(), 1.0, &mut rng);
        let loss = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| {
            batchnorm2d(x, g.data(), b.data(), eps).unwrap().0.dot(&probe).unwrap()
        };
        let (_, stats) = batchnorm2d(&x, gamma.data(), beta.data(), eps).unwrap();
        let (dx, dg, db) = batchnorm2d_backward(&x, gamma.data(), &stats, eps, &probe).unwrap();
        let dg = Tensor::from_vec(gamma.shape(), dg).unwrap();
        let db = Tensor::from_vec(beta.shape(), db).unwrap();
        assert!(fd_check(&x, &dx, |xx| loss(xx, &gamma, &beta)) <= 1e-6);
        assert!(fd_check(&gamma, &dg, |gg| loss(&x, gg, &beta)) <= 1e-6);
        assert!(fd_check(&beta, &db, |bb| loss(&x, &gamma, bb)) <= 1e-6);
    }
}
