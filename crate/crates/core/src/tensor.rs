use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Rank-4 shape: batch, channels, frequency bins, time frames.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub f: usize,
    pub t: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, f: usize, t: usize) -> Self {
        Self { n, c, f, t }
    }

    /// Shape used for flat `(n, d)` matrices.
    pub const fn flat(n: usize, d: usize) -> Self {
        Self { n, c: d, f: 1, t: 1 }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.f * self.t
    }

    /// Elements per sample.
    pub const fn sample_len(&self) -> usize {
        self.c * self.f * self.t
    }

    pub const fn plane(&self) -> usize {
        self.f * self.t
    }

    pub const fn with_c(self, c: usize) -> Self {
        Self { c, ..self }
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.f, self.t]
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.f, self.t)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Dense row-major `(n, c, f, t)` array.
#[derive(Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Shape,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![S::zero(); shape.numel()] }
    }

    pub fn full(shape: Shape, value: S) -> Self {
        Self { shape, data: vec![value; shape.numel()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<S>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(shape_err!("buffer of {} elements does not fit shape {shape}", data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Shape, data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| S::of(v)).collect())
    }

    pub fn randn<R: Rng + ?Sized>(shape: Shape, std: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                S::of(z * std)
            })
            .collect();
        Self { shape, data }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: Shape, bound: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel()).map(|_| S::of(rng.random_range(-bound..=bound))).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(shape_err!("cannot reshape {} into {shape}", self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| T::of(v.f64())).collect() }
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, f: usize, t: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.f + f) * self.shape.t + t
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, f: usize, t: usize) -> S {
        self.data[self.index(n, c, f, t)]
    }

    /// Slice of one `(f, t)` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[S] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [S] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// Slice holding all channels of sample `n`.
    pub fn sample(&self, n: usize) -> &[S] {
        let len = self.shape.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [S] {
        let len = self.shape.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    fn same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err!("{op}: {} vs {}", self.shape, other.shape));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Self { shape: self.shape, data })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Ok(Self { shape: self.shape, data })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn scale(&self, k: S) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| v * k).collect() }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    /// Inner product of the flattened buffers.
    pub fn dot(&self, other: &Self) -> Result<S> {
        self.same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<S> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self.data.iter().zip(&other.data).fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<S: fmt::Debug> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        write!(f, "Tensor({}, {:?}{})", self.shape, preview, if self.data.len() > 8 { " .." } else { "" })
    }
}

/// Relative error between two tensors measured in the max norm:
/// `||a - b||_inf / ||b||_inf`, falling back to the absolute difference when
/// the reference is smaller than `floor`.
pub fn rel_error<S: Scalar>(a: &[S], reference: &[S], floor: f64) -> f64 {
    assert_eq!(a.len(), reference.len(), "rel_error length mismatch");
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (&x, &y) in a.iter().zip(reference) {
        diff = diff.max((x.f64() - y.f64()).abs());
        scale = scale.max(y.f64().abs());
    }
    if scale < floor {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_row_major() {
        let s = Shape::new(2, 3, 4, 5);
        let t = Tensor::<f32>::zeros(s);
        assert_eq!(t.index(1, 2, 3, 4), s.numel() - 1);
        assert_eq!(t.index(0, 0, 1, 0), 5);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::<f64>::from_vec(Shape::new(1, 2, 2, 2), vec![0.0; 7]).is_err());
    }

    #[test]
    fn rel_error_uses_absolute_below_floor() {
        let a = [1e-10f64, 0.0];
        let b = [0.0f64, 0.0];
        assert!((rel_error(&a, &b, 1e-8) - 1e-10).abs() < 1e-20);
        assert!((rel_error(&[1.1f64], &[1.0], 1e-8) - 0.1).abs() < 1e-12);
    }
}
