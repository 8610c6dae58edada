//! Finite-difference checks of every operator VJP, stored-vs-reversible
//! gradient equivalence and reversible-block inverse reconstruction.

use std::fmt::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Report, RunConfig};
use crate::check::{fd_check, mode_gradient_error, ABS_FLOOR, FD_STEP};
use crate::error::Result;
use crate::ops::fault::{self, OpKind};
use crate::ops::{self, BnStats};
use crate::rev::{run_forward, Layer, Mode, Network, INVERSE_TOL_F64};
use crate::tensor::{rel_error, Shape, Tensor};

pub const OP_TOL: f64 = 1e-6;
pub const NETWORK_FD_TOL: f64 = 1e-5;
pub const MODE_TOL: f64 = 1e-6;
/// Input coordinates probed by the whole-network finite-difference check.
pub const NETWORK_FD_PROBES: usize = 48;
/// One-sided slope disagreement marking a probe as non-smooth.
const KINK_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    /// Number of items the check covered (0 means a vacuous pass).
    pub cases: usize,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn randn(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Moves values away from the ReLU kink so central differences stay one-sided-free.
fn off_kink(mut x: Tensor<f64>) -> Tensor<f64> {
    x.data_mut().iter_mut().for_each(|v| *v = if *v >= 0.0 { *v + 0.1 } else { *v - 0.1 });
    x
}

fn op_check(op: OpKind, rng: &mut ChaCha8Rng) -> Result<f64> {
    let eps = 1e-5;
    Ok(match op {
        OpKind::Conv | OpKind::DepthwiseConv => {
            let depthwise = op == OpKind::DepthwiseConv;
            let x = randn(Shape::new(2, 3, 5, 6), rng);
            let w = randn(if depthwise { Shape::new(3, 1, 3, 3) } else { Shape::new(4, 3, 3, 3) }, rng);
            let fwd = |x: &Tensor<f64>, w: &Tensor<f64>| {
                if depthwise {
                    ops::depthwise_conv2d(x, w, 2, 1)
                } else {
                    ops::conv2d(x, w, 2, 1)
                }
            };
            let dy = randn(fwd(&x, &w)?.shape(), rng);
            let (dx, dw) = if depthwise {
                ops::depthwise_conv2d_backward(&x, &w, 2, 1, &dy)?
            } else {
                ops::conv2d_backward(&x, &w, 2, 1, &dy)?
            };
            let ex = fd_check(&x, &dx, |p| dot(&dy, &fwd(p, &w).expect("conv")));
            let ew = fd_check(&w, &dw, |p| dot(&dy, &fwd(&x, p).expect("conv")));
            ex.max(ew)
        }
        OpKind::BatchNorm => {
            let x = randn(Shape::new(3, 2, 3, 4), rng);
            let gamma = vec![1.3, -0.7];
            let beta = vec![0.2, 0.1];
            let dy = randn(x.shape(), rng);
            let (_, stats): (_, BnStats<f64>) = ops::batchnorm2d(&x, &gamma, &beta, eps)?;
            let (dx, _, _) = ops::batchnorm2d_backward(&x, &gamma, &stats, eps, &dy)?;
            fd_check(&x, &dx, |p| dot(&dy, &ops::batchnorm2d(p, &gamma, &beta, eps).expect("bn").0))
        }
        OpKind::Relu => {
            let x = off_kink(randn(Shape::new(2, 3, 4, 4), rng));
            let dy = randn(x.shape(), rng);
            let dx = ops::relu_backward(&x, &dy)?;
            fd_check(&x, &dx, |p| dot(&dy, &ops::relu(p)))
        }
        OpKind::Linear => {
            let x = randn(Shape::flat(3, 7), rng);
            let w = randn(Shape::new(7, 5, 1, 1), rng);
            let b = vec![0.5, -0.1, 0.0, 0.3, 0.2];
            let dy = randn(Shape::flat(3, 5), rng);
            let (dx, dw, _) = ops::linear_backward(&x, &w, &dy)?;
            let ex = fd_check(&x, &dx, |p| dot(&dy, &ops::linear(p, &w, &b).expect("linear")));
            let ew = fd_check(&w, &dw, |p| dot(&dy, &ops::linear(&x, p, &b).expect("linear")));
            ex.max(ew)
        }
        OpKind::StatPool => {
            let x = randn(Shape::new(2, 3, 4, 6), rng);
            let y = ops::gsp(&x)?;
            let dy = randn(y.shape(), rng);
            let dx = ops::gsp_backward(&x, &y, &dy)?;
            fd_check(&x, &dx, |p| dot(&dy, &ops::gsp(p).expect("gsp")))
        }
    })
}

/// Central differences of `<dy, net(x)>` on a seeded subset of input coordinates.
/// Coordinates whose one-sided slopes disagree sit within a step of a ReLU kink
/// and are replaced by the next candidate.
fn network_fd(net: &Network<f64>, x: &Tensor<f64>, dy: &Tensor<f64>, rng: &mut ChaCha8Rng) -> Result<(f64, usize)> {
    let mut work = net.clone();
    let (_, store, _) = run_forward(&mut work, x, Mode::Stored)?;
    let dx = crate::rev::run_backward(&mut work, store, dy)?;
    let mut probe = x.clone();
    let eval = |p: &Tensor<f64>| -> Result<f64> {
        let mut n = net.clone();
        Ok(dot(dy, &run_forward(&mut n, p, Mode::Stored)?.0))
    };
    let f0 = eval(x)?;
    let candidates = sample(rng, x.len(), (4 * NETWORK_FD_PROBES).min(x.len())).into_vec();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for &i in &candidates {
        if analytic.len() == NETWORK_FD_PROBES {
            break;
        }
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - FD_STEP;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let central = (up - down) / (2.0 * FD_STEP);
        let (fwd, bwd) = ((up - f0) / FD_STEP, (f0 - down) / FD_STEP);
        if (fwd - bwd).abs() > KINK_TOL * central.abs().max(1.0) {
            continue;
        }
        analytic.push(dx.data()[i]);
        numeric.push(central);
    }
    Ok((rel_error(&analytic, &numeric, ABS_FLOOR), analytic.len()))
}

/// Forward then inverse of every reversible block on seeded unit-scale inputs.
fn inverse_check(net: &Network<f64>, rng: &mut ChaCha8Rng) -> Result<(f64, usize)> {
    let mut net = net.clone();
    let (mut worst, mut count) = (0f64, 0usize);
    for layer in &mut net.layers {
        if let Layer::RevStage(blocks) = layer {
            for block in blocks {
                let s = Shape::new(2, block.half(), 6, 5);
                let (x1, x2) = (randn(s, rng), randn(s, rng));
                let (y1, y2, stats) = block.forward(&x1, &x2)?;
                let (r1, r2) = block.inverse(&y1, &y2, &stats)?;
                worst = worst.max(r1.max_abs_diff(&x1)?).max(r2.max_abs_diff(&x2)?);
                count += 1;
            }
        }
    }
    Ok((worst, count))
}

/// Every check on the configured network (always in 64-bit).
pub fn checks(cfg: &RunConfig) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    fault::inject(cfg.corrupt_vjp);
    let result = (|| -> Result<()> {
        for op in OpKind::ALL {
            let e = op_check(op, &mut rng)?;
            rows.push(CheckRow { name: format!("op:{}", op.name()), max_error: e, tolerance: OP_TOL, cases: 1 });
        }
        let net: Network<f64> = cfg.net.build(cfg.seed)?;
        let x = Tensor::randn(net.input_shape(cfg.batch.unwrap_or(2), cfg.frames.unwrap_or(8)), 1.0, &mut rng);
        let dy = Tensor::randn(net.output_shape(x.shape())?, 1.0, &mut rng);
        let (e, n) = network_fd(&net, &x, &dy, &mut rng)?;
        rows.push(CheckRow { name: "network_fd".into(), max_error: e, tolerance: NETWORK_FD_TOL, cases: n });
        let e = mode_gradient_error(&net, &x, &dy)?;
        rows.push(CheckRow { name: "stored_vs_reversible".into(), max_error: e, tolerance: MODE_TOL, cases: 1 });
        let (e, n) = inverse_check(&net, &mut rng)?;
        rows.push(CheckRow { name: "inverse_reconstruction".into(), max_error: e, tolerance: INVERSE_TOL_F64, cases: n });
        Ok(())
    })();
    fault::inject(None);
    result.map(|_| rows)
}

pub fn run(cfg: &RunConfig) -> Result<Report> {
    let rows = checks(cfg)?;
    let mut csv = String::from("check,max_error,tolerance,cases,status\n");
    for r in &rows {
        let status = if r.passed() { "pass" } else { "fail" };
        let _ = writeln!(csv, "{},{:e},{:e},{},{status}", r.name, r.max_error, r.tolerance, r.cases);
    }
    let failures: Vec<String> = rows.iter().filter(|r| !r.passed()).map(|r| r.name.clone()).collect();
    let summary = format!("{} of {} checks passed", rows.len() - failures.len(), rows.len());
    Ok(Report { csv, failures, summary })
}
