//! Additive angular margin softmax cross-entropy.

use crate::error::{config_err, shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_MARGIN: f64 = 0.2;
pub const DEFAULT_SCALE: f64 = 32.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AamConfig {
    pub margin: f64,
    pub scale: f64,
    /// Replace `cos(theta + m)` by `cos(theta) - m sin(m)` once `theta + m > pi`.
    pub monotonic_fix: bool,
}

impl Default for AamConfig {
    fn default() -> Self {
        Self { margin: DEFAULT_MARGIN, scale: DEFAULT_SCALE, monotonic_fix: true }
    }
}

#[derive(Clone, Debug)]
pub struct AamOutput<S> {
    pub loss: S,
    pub d_embeddings: Tensor<S>,
    pub d_weights: Tensor<S>,
}

fn normalize_rows(x: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let mut out = x.to_vec();
    let mut norms = vec![0.0; rows];
    for r in 0..rows {
        let row = &mut out[r * cols..(r + 1) * cols];
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        norms[r] = n;
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    (out, norms)
}

/// Mean AAM-softmax loss of `(n, d)` embeddings against `(d, K)` class weights.
/// Both embeddings and weight columns are L2-normalized internally.
pub fn aam_softmax_loss<S: Scalar>(
    embeddings: &Tensor<S>,
    labels: &[usize],
    weights: &Tensor<S>,
    cfg: &AamConfig,
) -> Result<AamOutput<S>> {
    let es = embeddings.shape();
    let ws = weights.shape();
    let (n, d) = (es.n, es.sample_len());
    let k = ws.c;
    if ws.n != d || ws.f != 1 || ws.t != 1 {
        return Err(shape_err!("class weights {ws} do not match embedding width {d}"));
    }
    if labels.len() != n {
        return Err(shape_err!("{} labels for {n} embeddings", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} outside [0, {k})")));
    }
    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&cfg.margin) {
        return Err(config_err!("margin {} outside [0, pi/2)", cfg.margin));
    }
    let (cos_m, sin_m) = (cfg.margin.cos(), cfg.margin.sin());
    // cos(theta + m) is monotone while theta + m <= pi, i.e. cos(theta) >= cos(pi - m).
    let threshold = (std::f64::consts::PI - cfg.margin).cos();
    let (e, e_norm) = normalize_rows(&embeddings.to_f64_vec(), n, d);
    // Transpose weights to (K, d) rows and normalize each class vector.
    let w_raw = weights.to_f64_vec();
    let mut wt = vec![0.0; k * d];
    for i in 0..d {
        for j in 0..k {
            wt[j * d + i] = w_raw[i * k + j];
        }
    }
    let (w, w_norm) = normalize_rows(&wt, k, d);
    let s = cfg.scale;
    let mut loss = 0.0;
    // dL/dcos for every (sample, class)
    let mut gcos = vec![0.0; n * k];
    for i in 0..n {
        let y = labels[i];
        let ei = &e[i * d..(i + 1) * d];
        let cos: Vec<f64> = (0..k).map(|j| ei.iter().zip(&w[j * d..(j + 1) * d]).map(|(a, b)| a * b).sum::<f64>()).collect();
        let c = cos[y].clamp(-1.0, 1.0);
        let sin = (1.0 - c * c).max(0.0).sqrt();
        let (phi, dphi) = if cfg.monotonic_fix && c < threshold {
            (c - cfg.margin * sin_m, 1.0)
        } else {
            (c * cos_m - sin * sin_m, cos_m + sin_m * c / sin.max(1e-12))
        };
        let mut z: Vec<f64> = cos.iter().map(|&v| s * v).collect();
        z[y] = s * phi;
        // log-sum-exp relative to the target logit keeps tiny losses accurate.
        let rest: f64 = (0..k).filter(|&j| j != y).map(|j| (z[j] - z[y]).exp()).sum();
        loss += rest.ln_1p();
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
        for j in 0..k {
            let p = (z[j] - zmax).exp() / denom;
            let dz = (p - if j == y { 1.0 } else { 0.0 }) / n as f64;
            gcos[i * k + j] = s * dz * if j == y { dphi } else { 1.0 };
        }
    }
    loss /= n as f64;
    // Back through cosine and the two normalizations.
    let mut de = vec![0.0; n * d];
    let mut dwt = vec![0.0; k * d];
    for i in 0..n {
        for j in 0..k {
            let g = gcos[i * k + j];
            for t in 0..d {
                de[i * d + t] += g * w[j * d + t];
                dwt[j * d + t] += g * e[i * d + t];
            }
        }
    }
    let unnormalize = |g: &mut [f64], unit: &[f64], norms: &[f64], rows: usize| {
        for r in 0..rows {
            let (gr, ur) = (&mut g[r * d..(r + 1) * d], &unit[r * d..(r + 1) * d]);
            let proj: f64 = gr.iter().zip(ur).map(|(a, b)| a * b).sum();
            let nrm = norms[r].max(1e-12);
            for (a, b) in gr.iter_mut().zip(ur) {
                *a = (*a - b * proj) / nrm;
            }
        }
    };
    unnormalize(&mut de, &e, &e_norm, n);
    unnormalize(&mut dwt, &w, &w_norm, k);
    let mut dw = vec![0.0; d * k];
    for i in 0..d {
        for j in 0..k {
            dw[i * k + j] = dwt[j * d + i];
        }
    }
    Ok(AamOutput {
        loss: S::of(loss),
        d_embeddings: Tensor::from_f64(es, &de)?,
        d_weights: Tensor::from_f64(ws, &dw)?,
    })
}

/// Class-weight matrix `(d, K)` in the layout expected by [`aam_softmax_loss`].
pub fn class_weight_shape(d: usize, k: usize) -> Shape {
    Shape::new(d, k, 1, 1)
}
