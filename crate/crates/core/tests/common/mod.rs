#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use revmem::optim::{Hyper, OptimKind, Optimizer};
use revmem::{Param, Shape, Tensor};

/// `0.5 * sum a_i (w_i - c_i)^2` with curvatures in `[0.01, 1]`.
pub struct Bowl {
    pub a: Vec<f32>,
    pub c: Vec<f32>,
}

impl Bowl {
    pub fn new(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = (0..d).map(|_| rng.random_range(0.01f32..1.0)).collect();
        let c = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        Self { a, c }
    }

    pub fn loss(&self, w: &[f32]) -> f64 {
        w.iter()
            .zip(&self.a)
            .zip(&self.c)
            .map(|((&w, &a), &c)| 0.5 * f64::from(a) * f64::from(w - c).powi(2))
            .sum()
    }

    /// Final loss after `steps` updates from zero.
    pub fn minimize(&self, kind: OptimKind, hyper: Hyper, steps: usize) -> f64 {
        let d = self.a.len();
        let mut p = Param::<f32>::new(Tensor::zeros(Shape::flat(1, d)));
        let mut opt = Optimizer::new(kind, hyper).expect("valid hyperparameters");
        for _ in 0..steps {
            let g: Vec<f32> = p.value.data().iter().zip(&self.a).zip(&self.c).map(|((&w, &a), &c)| a * (w - c)).collect();
            p.grad.data_mut().copy_from_slice(&g);
            opt.step(&mut [&mut p]).expect("step");
        }
        self.loss(p.value.data())
    }
}

pub fn bowl_hyper(kind: OptimKind) -> Hyper {
    match kind {
        OptimKind::Sgd | OptimKind::Sgd8 => Hyper { lr: 0.1, momentum: 0.9, ..Hyper::default() },
        _ => Hyper { lr: 1e-3, ..Hyper::default() },
    }
}
