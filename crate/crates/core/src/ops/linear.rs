use crate::error::{shape_err, Result};
use crate::ops::fault::{self, OpKind};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

fn dims<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>) -> Result<(usize, usize, usize)> {
    let xs = x.shape();
    let ws = w.shape();
    let d_in = xs.sample_len();
    if ws.f != 1 || ws.t != 1 || ws.n != d_in {
        return Err(shape_err!("linear: input width {d_in} does not match weight ({}, {})", ws.n, ws.c));
    }
    Ok((xs.n, d_in, ws.c))
}

/// `y = x W + b` with `x` flattened to `(n, d_in)` and `W` stored as `(d_in, d_out, 1, 1)`.
pub fn linear<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &[S]) -> Result<Tensor<S>> {
    let (n, d_in, d_out) = dims(x, w)?;
    if b.len() != d_out {
        return Err(shape_err!("linear: bias of length {} for {d_out} outputs", b.len()));
    }
    let mut y = Tensor::zeros(Shape::flat(n, d_out));
    for row in 0..n {
        y.sample_mut(row).copy_from_slice(b);
    }
    S::gemm(n, d_in, d_out, S::one(), x.data(), d_in as isize, 1, w.data(), d_out as isize, 1, S::one(), y.data_mut(), d_out as isize, 1);
    Ok(y)
}

/// VJP of [`linear`]: `(dL/dx, dL/dW, dL/db)`; `dL/dx` keeps the shape of `x`.
pub fn linear_backward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, dy: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>, Vec<S>)> {
    let (n, d_in, d_out) = dims(x, w)?;
    if dy.shape() != Shape::flat(n, d_out) {
        return Err(shape_err!("linear backward: upstream {} expected {}", dy.shape(), Shape::flat(n, d_out)));
    }
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    S::gemm(n, d_out, d_in, S::one(), dy.data(), d_out as isize, 1, w.data(), 1, d_out as isize, S::zero(), dx.data_mut(), d_in as isize, 1);
    S::gemm(d_in, n, d_out, S::one(), x.data(), 1, d_in as isize, dy.data(), d_out as isize, 1, S::zero(), dw.data_mut(), d_out as isize, 1);
    let mut db = vec![S::zero(); d_out];
    for row in 0..n {
        for (acc, &g) in db.iter_mut().zip(dy.sample(row)) {
            *acc = *acc + g;
        }
    }
    fault::corrupt(OpKind::Linear, &mut dx);
    Ok((dx, dw, db))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::fd_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_small_cases() {
        let x = Tensor::<f32>::from_vec(Shape::flat(1, 2), vec![1.0, 2.0]).unwrap();
        let w = Tensor::<f32>::from_vec(Shape::new(2, 2, 1, 1), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(linear(&x, &w, &[0.0, 0.0]).unwrap().data(), &[1.0, 2.0]);
        let x = Tensor::<f32>::from_vec(Shape::flat(1, 2), vec![1.0, 1.0]).unwrap();
        let w = Tensor::<f32>::from_vec(Shape::new(2, 1, 1, 1), vec![2.0, 3.0]).unwrap();
        assert_eq!(linear(&x, &w, &[1.0]).unwrap().data(), &[6.0]);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let x = Tensor::<f32>::zeros(Shape::flat(1, 3));
        let w = Tensor::<f32>::zeros(Shape::new(2, 2, 1, 1));
        assert!(linear(&x, &w, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Tensor::<f64>::randn(Shape::flat(3, 5), 1.0, &mut rng);
        let w = Tensor::<f64>::randn(Shape::new(5, 4, 1, 1), 1.0, &mut rng);
        let b = Tensor::<f64>::randn(Shape::flat(1, 4), 1.0, &mut rng);
        let probe = Tensor::<f64>::randn(Shape::flat(3, 4), 1.0, &mut rng);
        let (dx, dw, db) = linear_backward(&x, &w, &probe).unwrap();
        let db = Tensor::from_vec(b.shape(), db).unwrap();
        let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| linear(x, w, b.data()).unwrap().dot(&probe).unwrap();
        assert!(fd_check(&x, &dx, |v| f(v, &w, &b)) <= 1e-6);
        assert!(fd_check(&w, &dw, |v| f(&x, v, &b)) <= 1e-6);
        assert!(fd_check(&b, &db, |v| f(&x, &w, v)) <= 1e-6);
    }
}
