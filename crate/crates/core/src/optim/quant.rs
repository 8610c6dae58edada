//! Blockwise absmax quantization onto the dynamic tree map.

use super::dtree::{DynamicTreeMap, ZERO_CODE};
use crate::error::{config_err, Error, Result};
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_BLOCK_SIZE: usize = 2048;

/// An 8-bit encoded state tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedState {
    pub codes: Vec<u8>,
    /// Per-block absolute maximum.
    pub absmax: Vec<f32>,
    pub block_size: usize,
    pub shape: Shape,
}

impl QuantizedState {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn block_count(&self) -> usize {
        self.absmax.len()
    }

    /// Stored bytes: one per code plus a 32-bit scale per block.
    pub fn bytes(&self) -> u64 {
        state_bytes(self.len(), self.block_size)
    }

    /// Header `{element_count, block_size, block_count}` as little-endian u64,
    /// then little-endian f32 scales, then the code bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.absmax.len() + self.codes.len());
        for v in [self.codes.len(), self.block_size, self.absmax.len()] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for a in &self.absmax {
            out.extend_from_slice(&a.to_le_bytes());
        }
        out.extend_from_slice(&self.codes);
        out
    }

    /// Inverse of [`QuantizedState::to_bytes`]; the shape comes back flat.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |i: usize| -> Result<usize> {
            let b = bytes.get(8 * i..8 * i + 8).ok_or_else(|| Error::Decode("truncated header".into()))?;
            let v = u64::from_le_bytes(b.try_into().expect("8 bytes"));
            usize::try_from(v).map_err(|_| Error::Decode(format!("header field {v} too large")))
        };
        let (count, block_size, blocks) = (word(0)?, word(1)?, word(2)?);
        if block_size == 0 || blocks != count.div_ceil(block_size) {
            return Err(Error::Decode(format!("{blocks} blocks inconsistent with {count} elements in blocks of {block_size}")));
        }
        let scales_end = blocks
            .checked_mul(4)
            .and_then(|n| n.checked_add(24))
            .ok_or_else(|| Error::Decode("block count overflows".into()))?;
        if scales_end.checked_add(count) != Some(bytes.len()) {
            return Err(Error::Decode(format!("expected {} bytes, got {}", scales_end.saturating_add(count), bytes.len())));
        }
        let absmax: Vec<f32> = bytes[24..scales_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if absmax.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::Decode("block scale is negative or not finite".into()));
        }
        Ok(Self { codes: bytes[scales_end..].to_vec(), absmax, block_size, shape: Shape::flat(1, count) })
    }
}

/// Bytes of an 8-bit state of `elements` values in blocks of `block_size`.
pub fn state_bytes(elements: usize, block_size: usize) -> u64 {
    (elements + 4 * elements.div_ceil(block_size.max(1))) as u64
}

pub fn quantize_blockwise(values: &[f32], block_size: usize, map: &DynamicTreeMap) -> Result<QuantizedState> {
    if block_size == 0 {
        return Err(config_err!("block size must be at least 1"));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Quantization(format!("element {i} is not finite ({})", values[i])));
    }
    let mut codes = Vec::with_capacity(values.len());
    let mut absmax = Vec::with_capacity(values.len().div_ceil(block_size));
    for block in values.chunks(block_size) {
        let n = block.iter().fold(0f32, |m, v| m.max(v.abs()));
        absmax.push(n);
        if n == 0.0 {
            codes.extend(std::iter::repeat_n(ZERO_CODE, block.len()));
        } else {
            codes.extend(block.iter().map(|&v| map.nearest_code(v / n)));
        }
    }
    Ok(QuantizedState { codes, absmax, block_size, shape: Shape::flat(1, values.len()) })
}

pub fn quantize_tensor(t: &Tensor<f32>, block_size: usize, map: &DynamicTreeMap) -> Result<QuantizedState> {
    let mut q = quantize_blockwise(t.data(), block_size, map)?;
    q.shape = t.shape();
    Ok(q)
}

pub fn dequantize_blockwise(q: &QuantizedState, map: &DynamicTreeMap) -> Vec<f32> {
    q.codes
        .chunks(q.block_size)
        .zip(&q.absmax)
        .flat_map(|(codes, &n)| codes.iter().map(move |&c| map.decode(c) * n))
        .collect()
}

pub fn dequantize_tensor(q: &QuantizedState, map: &DynamicTreeMap) -> Result<Tensor<f32>> {
    Tensor::from_vec(q.shape, dequantize_blockwise(q, map))
}

/// Reference encoder: exhaustive scan over all 256 codes.
pub fn linear_scan_code(v: f32, map: &DynamicTreeMap) -> u8 {
    let mut best = 0u8;
    let mut best_d = f32::INFINITY;
    for code in 0..=255u8 {
        let c = map.decode(code);
        let d = (c - v).abs();
        if d < best_d || (d == best_d && c.abs() < map.decode(best).abs()) {
            best = code;
            best_d = d;
        }
    }
    best
}

/// Reference blockwise quantizer built on [`linear_scan_code`].
pub fn linear_scan_quantize(values: &[f32], block_size: usize, map: &DynamicTreeMap) -> Vec<u8> {
    values
        .chunks(block_size)
        .flat_map(|block| {
            let n = block.iter().fold(0f32, |m, v| m.max(v.abs()));
            block.iter().map(move |&v| if n == 0.0 { ZERO_CODE } else { linear_scan_code(v / n, map) })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn zero_block_roundtrips_exactly() {
        let map = DynamicTreeMap::shared();
        let q = quantize_blockwise(&[0.0; 10], 4, map).unwrap();
        assert_eq!(q.absmax, vec![0.0; 3]);
        assert!(dequantize_blockwise(&q, map).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn map_values_are_fixed_points() {
        let map = DynamicTreeMap::shared();
        for c in [0.37f32, 1.0, 5.5, 1e3] {
            let t: Vec<f32> = map.values().iter().map(|v| c * v).collect();
            let q = quantize_blockwise(&t, 256, map).unwrap();
            assert_eq!(q.absmax[0], c);
            assert_eq!(dequantize_blockwise(&q, map), t);
        }
    }

    #[test]
    fn single_element_blocks_are_exact() {
        let map = DynamicTreeMap::shared();
        let t = gaussian(200, 1);
        let q = quantize_blockwise(&t, 1, map).unwrap();
        assert_eq!(dequantize_blockwise(&q, map), t);
    }

    #[test]
    fn gaussian_block_agrees_with_linear_scan() {
        let map = DynamicTreeMap::shared();
        let t = gaussian(2048, 2);
        let q = quantize_blockwise(&t, 2048, map).unwrap();
        assert_eq!(q.codes, linear_scan_quantize(&t, 2048, map));
    }

    #[test]
    fn non_finite_and_zero_block_size_rejected() {
        let map = DynamicTreeMap::shared();
        assert!(matches!(quantize_blockwise(&[1.0, f32::NAN], 2, map), Err(Error::Quantization(_))));
        assert!(matches!(quantize_blockwise(&[1.0], 0, map), Err(Error::Config(_))));
    }

    #[test]
    fn serialization_rejects_bad_input() {
        let map = DynamicTreeMap::shared();
        let q = quantize_blockwise(&gaussian(10, 3), 4, map).unwrap();
        let bytes = q.to_bytes();
        assert_eq!(bytes.len(), 24 + 3 * 4 + 10);
        assert!(QuantizedState::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[16] = 9;
        assert!(QuantizedState::from_bytes(&bad).is_err());
        assert!(QuantizedState::from_bytes(&[1, 2, 3]).is_err());
    }

    proptest! {
        #[test]
        fn serialization_roundtrip(values in prop::collection::vec(-1e3f32..1e3, 0..300), block in 1usize..64) {
            let map = DynamicTreeMap::shared();
            let q = quantize_blockwise(&values, block, map).unwrap();
            let back = QuantizedState::from_bytes(&q.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), q.to_bytes());
            prop_assert_eq!(back, q);
        }

        #[test]
        fn roundtrip_error_bounded_by_half_gap(values in prop::collection::vec(-50f32..50.0, 1..400), block in 1usize..100) {
            let map = DynamicTreeMap::shared();
            let q = quantize_blockwise(&values, block, map).unwrap();
            let half_gap = map.max_gap() / 2.0;
            let back = dequantize_blockwise(&q, map);
            for (i, (a, b)) in values.iter().zip(&back).enumerate() {
                let n = q.absmax[i / block];
                prop_assert!((a - b).abs() <= n * half_gap * (1.0 + 1e-5));
            }
        }

        #[test]
        fn power_of_two_scaling_commutes(values in prop::collection::vec(-10f32..10.0, 1..200), k in -8i32..8) {
            let map = DynamicTreeMap::shared();
            let c = 2f32.powi(k);
            let base = dequantize_blockwise(&quantize_blockwise(&values, 16, map).unwrap(), map);
            let scaled: Vec<f32> = values.iter().map(|v| v * c).collect();
            let got = dequantize_blockwise(&quantize_blockwise(&scaled, 16, map).unwrap(), map);
            let want: Vec<f32> = base.iter().map(|v| v * c).collect();
            prop_assert_eq!(got, want);
        }
    }
}
