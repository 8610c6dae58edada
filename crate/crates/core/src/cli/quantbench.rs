//! Roundtrip error, oracle agreement and state-size ratio of the 8-bit codec.

use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use super::{Report, RunConfig};
use crate::error::{config_err, Result};
use crate::optim::{
    dequantize_blockwise, linear_scan_quantize, quantize_blockwise, state_bytes, DynamicTreeMap,
};

pub const DISTRIBUTIONS: [&str; 3] = ["gaussian", "heavy_tailed", "sparse"];
/// Fraction of exact zeros in the sparse distribution.
pub const SPARSITY: f64 = 0.99;

pub fn sample(dist: &str, n: usize, seed: u64) -> Result<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match dist {
        "gaussian" => (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
        "heavy_tailed" => {
            let t = StudentT::new(2.0f32).expect("valid degrees of freedom");
            (0..n).map(|_| t.sample(&mut rng)).collect()
        }
        "sparse" => (0..n)
            .map(|_| if rng.random_bool(SPARSITY) { 0.0 } else { StandardNormal.sample(&mut rng) })
            .collect(),
        _ => return Err(config_err!("unknown distribution {dist:?}")),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub distribution: &'static str,
    pub elements: usize,
    pub block_size: usize,
    pub max_error: f64,
    pub mean_error: f64,
    /// Largest `N_b * gap / 2` over blocks.
    pub error_bound: f64,
    pub bound_violations: usize,
    pub oracle_agreement: f64,
    pub zeros_exact: bool,
    pub state_bytes: u64,
    pub dense_bytes: u64,
}

impl BenchRow {
    pub fn ratio(&self) -> f64 {
        self.state_bytes as f64 / self.dense_bytes as f64
    }
}

pub fn bench(dist: &'static str, values: &[f32], block_size: usize) -> Result<BenchRow> {
    let map = DynamicTreeMap::shared();
    let q = quantize_blockwise(values, block_size, map)?;
    let back = dequantize_blockwise(&q, map);
    let half_gap = f64::from(map.max_gap()) / 2.0;
    let oracle = linear_scan_quantize(values, block_size, map);
    let agree = q.codes.iter().zip(&oracle).filter(|(a, b)| a == b).count();
    let (mut max_error, mut sum, mut violations) = (0f64, 0f64, 0usize);
    for (i, (&a, &b)) in values.iter().zip(&back).enumerate() {
        let e = f64::from((a - b).abs());
        let bound = f64::from(q.absmax[i / block_size]) * half_gap;
        // One f32 rounding of the decoded product on top of the codec bound.
        if e > bound * (1.0 + 1e-6) {
            violations += 1;
        }
        max_error = max_error.max(e);
        sum += e;
    }
    let error_bound = q.absmax.iter().fold(0f64, |m, &n| m.max(f64::from(n) * half_gap));
    let zeros_exact = values.iter().zip(&back).all(|(&a, &b)| a != 0.0 || b == 0.0);
    let n = values.len();
    Ok(BenchRow {
        distribution: dist,
        elements: n,
        block_size,
        max_error,
        mean_error: if n == 0 { 0.0 } else { sum / n as f64 },
        error_bound,
        bound_violations: violations,
        oracle_agreement: if n == 0 { 1.0 } else { agree as f64 / n as f64 },
        zeros_exact,
        state_bytes: state_bytes(n, block_size),
        dense_bytes: 4 * n as u64,
    })
}

pub fn run(cfg: &RunConfig) -> Result<Report> {
    let b = cfg.hyper.block_size;
    if b == 0 {
        return Err(config_err!("block size must be at least 1"));
    }
    let mut csv = String::from(
        "distribution,elements,block_size,max_error,mean_error,error_bound,bound_violations,oracle_agreement,zeros_exact,state_bytes,dense_bytes,bytes_ratio\n",
    );
    let mut failures = Vec::new();
    for (i, dist) in DISTRIBUTIONS.into_iter().enumerate() {
        let values = sample(dist, cfg.elements, cfg.seed.wrapping_add(i as u64))?;
        let r = bench(dist, &values, b)?;
        let _ = writeln!(
            csv,
            "{},{},{},{:e},{:e},{:e},{},{},{},{},{},{:.6}",
            r.distribution,
            r.elements,
            r.block_size,
            r.max_error,
            r.mean_error,
            r.error_bound,
            r.bound_violations,
            r.oracle_agreement,
            r.zeros_exact,
            r.state_bytes,
            r.dense_bytes,
            r.ratio()
        );
        if r.oracle_agreement < 1.0 {
            failures.push(format!("{dist}: oracle agreement {}", r.oracle_agreement));
        }
        if r.bound_violations > 0 {
            failures.push(format!("{dist}: {} elements exceed the roundtrip bound", r.bound_violations));
        }
        if !r.zeros_exact {
            failures.push(format!("{dist}: zeros do not roundtrip"));
        }
    }
    let summary = format!("{} distributions, {} elements each, block size {b}", DISTRIBUTIONS.len(), cfg.elements);
    Ok(Report { csv, failures, summary })
}
