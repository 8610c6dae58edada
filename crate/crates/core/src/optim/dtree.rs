//! 8-bit dynamic tree data type.
//!
//! Bit 7 is the sign. Starting at bit 6, the run of zero bits up to the first
//! set bit (the indicator) gives the decimal exponent `z`; the remaining
//! `f = 6 - z` bits hold an unsigned integer `i`. The decoded magnitude is
//! `(i + 1) / 2^f * 10^-z`. A tail of all zeros decodes to zero.

use std::sync::OnceLock;

/// Code byte of the (unsigned) zero value.
pub const ZERO_CODE: u8 = 0x00;

/// Fields of a decoded code byte.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodeFields {
    pub negative: bool,
    /// Decimal exponent; `None` for the zero codes.
    pub exponent: Option<u32>,
    pub fraction_bits: u32,
    pub fraction: u32,
}

pub fn code_fields(code: u8) -> CodeFields {
    let negative = code & 0x80 != 0;
    let tail = code & 0x7f;
    if tail == 0 {
        return CodeFields { negative, exponent: None, fraction_bits: 0, fraction: 0 };
    }
    // Position of the indicator bit counted from bit 6 downwards.
    let z = tail.leading_zeros() - 1;
    let fraction_bits = 6 - z;
    let fraction = u32::from(tail) & ((1 << fraction_bits) - 1);
    CodeFields { negative, exponent: Some(z), fraction_bits, fraction }
}

/// Exact decoded magnitude as a ratio evaluated in double precision.
pub fn decode_f64(code: u8) -> f64 {
    let cf = code_fields(code);
    let Some(z) = cf.exponent else { return 0.0 };
    let num = f64::from(cf.fraction + 1);
    let den = f64::from(1u32 << cf.fraction_bits) * 10f64.powi(z as i32);
    let v = num / den;
    if cf.negative {
        -v
    } else {
        v
    }
}

/// Decoded values indexed by code, plus a strictly increasing companion for nearest-value search.
#[derive(Clone, Debug)]
pub struct DynamicTreeMap {
    values: [f32; 256],
    sorted: Vec<f32>,
    sorted_codes: Vec<u8>,
}

impl DynamicTreeMap {
    pub fn new() -> Self {
        let mut values = [0f32; 256];
        for (code, v) in values.iter_mut().enumerate() {
            *v = decode_f64(code as u8) as f32;
        }
        let mut order: Vec<u8> = (0..=255u8).collect();
        // Stable sort by value keeps the lowest code first among equal values.
        order.sort_by(|&a, &b| values[a as usize].total_cmp(&values[b as usize]).then(a.cmp(&b)));
        let mut sorted = Vec::with_capacity(256);
        let mut sorted_codes = Vec::with_capacity(256);
        for code in order {
            let v = values[code as usize];
            // -0.0 and 0.0 compare equal; both collapse onto the zero code.
            if sorted.last().is_some_and(|&last: &f32| last == v) {
                continue;
            }
            sorted.push(if v == 0.0 { 0.0 } else { v });
            sorted_codes.push(if v == 0.0 { ZERO_CODE } else { code });
        }
        Self { values, sorted, sorted_codes }
    }

    /// Process-wide instance.
    pub fn shared() -> &'static DynamicTreeMap {
        static MAP: OnceLock<DynamicTreeMap> = OnceLock::new();
        MAP.get_or_init(DynamicTreeMap::new)
    }

    pub fn decode(&self, code: u8) -> f32 {
        self.values[code as usize]
    }

    pub fn values(&self) -> &[f32; 256] {
        &self.values
    }

    /// Distinct representable values in ascending order.
    pub fn sorted(&self) -> &[f32] {
        &self.sorted
    }

    pub fn sorted_codes(&self) -> &[u8] {
        &self.sorted_codes
    }

    pub fn max_gap(&self) -> f32 {
        self.sorted.windows(2).map(|w| w[1] - w[0]).fold(0.0, f32::max)
    }

    /// Code of the value nearest to `v`; ties go to the smaller magnitude.
    /// `v` is expected in `[-1, 1]`; values outside clamp to the endpoints.
    pub fn nearest_code(&self, v: f32) -> u8 {
        let s = &self.sorted;
        let hi = s.partition_point(|&x| x < v);
        if hi == 0 {
            return self.sorted_codes[0];
        }
        if hi == s.len() {
            return self.sorted_codes[s.len() - 1];
        }
        let lo = hi - 1;
        let (dl, dh) = (v - s[lo], s[hi] - v);
        let pick = if dl < dh {
            lo
        } else if dh < dl {
            hi
        } else if s[lo].abs() <= s[hi].abs() {
            lo
        } else {
            hi
        };
        self.sorted_codes[pick]
    }
}

impl Default for DynamicTreeMap {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_zero() {
        let m = DynamicTreeMap::new();
        // sign +, z = 0 (indicator at bit 6), i = 63
        assert_eq!(m.decode(0b0111_1111), 1.0);
        assert_eq!(m.decode(0b1111_1111), -1.0);
        assert_eq!(m.decode(0x00), 0.0);
        assert_eq!(m.decode(0x80), 0.0);
        let s = m.sorted();
        assert_eq!((s[0], s[s.len() - 1]), (-1.0, 1.0));
        assert!(s.contains(&0.0));
    }

    #[test]
    fn matches_bitwise_enumeration() {
        let m = DynamicTreeMap::new();
        for code in 0..=255u8 {
            let sign = if code >> 7 == 1 { -1.0 } else { 1.0 };
            let mut z = 0;
            let mut bit = 6i32;
            while bit >= 0 && (code >> bit) & 1 == 0 {
                z += 1;
                bit -= 1;
            }
            let want = if bit < 0 {
                0.0
            } else {
                let f = bit as u32;
                let i = u32::from(code) & ((1 << f) - 1);
                sign * f64::from(i + 1) / (f64::from(1u32 << f) * 10f64.powi(z))
            };
            assert_eq!(m.decode(code), want as f32, "code {code:#04x}");
        }
    }

    #[test]
    fn structure_of_the_value_set() {
        let m = DynamicTreeMap::new();
        let s = m.sorted();
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        for &v in s {
            assert!(s.contains(&-v));
            assert!((-1.0..=1.0).contains(&v));
        }
        let min_pos = s.iter().copied().filter(|&v| v > 0.0).fold(f32::INFINITY, f32::min);
        assert!(min_pos <= 1e-6);
        assert_eq!(m.max_gap(), 1.0 / 64.0);
        let top = s[s.len() - 1] - s[s.len() - 2];
        assert_eq!(top, 1.0 / 64.0);
        // duplicate magnitudes such as 1/64 (z = 0 and z = 1) are listed once
        assert!(s.len() < 255);
    }

    #[test]
    fn nearest_agrees_with_linear_scan_and_breaks_ties_toward_zero() {
        let m = DynamicTreeMap::new();
        let scan = |v: f32| {
            let mut best = 0u8;
            for code in 0..=255u8 {
                let (c, b) = (m.decode(code), m.decode(best));
                let (dc, db) = ((c - v).abs(), (b - v).abs());
                if dc < db || (dc == db && c.abs() < b.abs()) {
                    best = code;
                }
            }
            m.decode(best)
        };
        for k in 0..=4000 {
            let v = -1.0 + k as f32 / 2000.0;
            assert_eq!(m.decode(m.nearest_code(v)), scan(v), "{v}");
        }
        assert_eq!(m.decode(m.nearest_code(127.0 / 128.0)), 63.0 / 64.0);
        assert_eq!(m.decode(m.nearest_code(-127.0 / 128.0)), -63.0 / 64.0);
        assert_eq!(m.nearest_code(0.0), ZERO_CODE);
    }
}
