//! Central finite-difference oracle shared by unit tests and `revmem gradcheck`.

use crate::error::Result;
use crate::rev::{run_backward, run_forward, Mode, Network};
use crate::scalar::Scalar;
use crate::tensor::{rel_error, Tensor};

/// Step used for all finite-difference probes (64-bit runs).
pub const FD_STEP: f64 = 1e-5;
/// Values with magnitude below this are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-8;

/// Numerical gradient of the scalar function `f` at `x`.
pub fn fd_gradient<S: Scalar>(x: &Tensor<S>, mut f: impl FnMut(&Tensor<S>) -> S) -> Tensor<S> {
    let h = S::of(FD_STEP);
    let two_h = S::of(2.0 * FD_STEP);
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / two_h;
    }
    grad
}

/// Relative error between an analytic gradient and the finite-difference one.
pub fn fd_check<S: Scalar>(x: &Tensor<S>, analytic: &Tensor<S>, f: impl FnMut(&Tensor<S>) -> S) -> f64 {
    let numeric = fd_gradient(x, f);
    rel_error(analytic.data(), numeric.data(), ABS_FLOOR)
}

/// Output, input gradient and per-parameter gradients of `<dy, net(x)>`.
#[derive(Clone, Debug)]
pub struct ModeGrads<S> {
    pub output: Tensor<S>,
    pub input: Tensor<S>,
    pub params: Vec<Tensor<S>>,
}

/// Runs one forward/backward pass on a copy of `net` in `mode`.
pub fn mode_gradients<S: Scalar>(net: &Network<S>, x: &Tensor<S>, dy: &Tensor<S>, mode: Mode) -> Result<ModeGrads<S>> {
    let mut net = net.clone();
    net.zero_grad();
    let (output, store, _) = run_forward(&mut net, x, mode)?;
    let input = run_backward(&mut net, store, dy)?;
    let params = net.params().iter().map(|p| p.grad.clone()).collect();
    Ok(ModeGrads { output, input, params })
}

/// Largest tensor-level relative error of reversible-mode gradients against stored-mode ones.
pub fn mode_gradient_error<S: Scalar>(net: &Network<S>, x: &Tensor<S>, dy: &Tensor<S>) -> Result<f64> {
    let stored = mode_gradients(net, x, dy, Mode::Stored)?;
    let rev = mode_gradients(net, x, dy, Mode::Reversible)?;
    let mut worst = rel_error(rev.input.data(), stored.input.data(), ABS_FLOOR);
    for (a, b) in rev.params.iter().zip(&stored.params) {
        worst = worst.max(rel_error(a.data(), b.data(), ABS_FLOOR));
    }
    Ok(worst)
}
