//! Power-of-two fixed-point tensors.
//!
//! A value stored as the int8 code `q` with exponent `dec` represents the
//! real number `q * 2^(dec - 7)`. Quantizing a float tensor picks the
//! smallest `dec` such that its largest magnitude fits in `2^dec`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An int8 tensor with a single per-tensor scale exponent.
///
/// Activations use H, W, C order; conv weights use Z, Z, C, K; dense
/// weights use in, out. Storage is row-major in all cases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantTensor {
    shape: Vec<usize>,
    values: Vec<i8>,
    dec: i32,
}

impl QuantTensor {
    pub fn new(shape: Vec<usize>, values: Vec<i8>, dec: i32) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::shape(
                "<tensor>",
                format!(
                    "shape {shape:?} needs {expected} values, got {}",
                    values.len()
                ),
            ));
        }
        Ok(Self { shape, values, dec })
    }

    pub fn zeros(shape: Vec<usize>, dec: i32) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            values: vec![0; len],
            dec,
        }
    }

    /// Quantizes `reals` with the exponent derived from their largest magnitude.
    pub fn from_reals(shape: Vec<usize>, reals: &[f64]) -> Result<Self> {
        let max_abs = reals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dec = compute_dec(max_abs);
        let values = reals.iter().map(|&x| quantize(x, dec)).collect();
        Self::new(shape, values, dec)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [i8] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<i8> {
        self.values
    }

    pub fn dec(&self) -> i32 {
        self.dec
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_reals(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|&q| dequantize(q, self.dec))
            .collect()
    }
}

/// Scale exponent `ceil(log2(max_abs))`.
///
/// Zero (and any non-finite input) maps to 0 so that downstream shifts stay
/// well defined for all-zero tensors.
pub fn compute_dec(max_abs: f64) -> i32 {
    if !(max_abs.is_finite() && max_abs > 0.0) {
        return 0;
    }
    // log2 may be off by one ulp near exact powers of two; settle on the
    // smallest d with 2^d >= max_abs.
    let mut dec = max_abs.log2().ceil() as i32;
    while 2f64.powi(dec - 1) >= max_abs {
        dec -= 1;
    }
    while 2f64.powi(dec) < max_abs {
        dec += 1;
    }
    dec
}

/// `round(x * 2^(7 - dec))`, ties away from zero, saturated to int8.
pub fn quantize(x: f64, dec: i32) -> i8 {
    debug_assert!((-32..=32).contains(&dec), "dec {dec} out of range");
    let scaled = (x * 2f64.powi(7 - dec)).round();
    scaled.clamp(i8::MIN as f64, i8::MAX as f64) as i8
}

pub fn dequantize(q: i8, dec: i32) -> f64 {
    q as f64 * 2f64.powi(dec - 7)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccumMode {
    /// Clamp to [-128, 127].
    #[default]
    Saturate,
    /// Keep the low 8 bits (two's complement), like an unchecked narrowing store.
    Wrap,
}

impl std::str::FromStr for AccumMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "saturate" => Ok(AccumMode::Saturate),
            "wrap" => Ok(AccumMode::Wrap),
            other => Err(format!("unknown accumulator mode `{other}`")),
        }
    }
}

/// The 32-bit multiply-accumulate register of one output element.
///
/// Additions wrap at 32 bits as they do on the target core.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accumulator {
    pub value: i32,
    pub mode: AccumMode,
}

impl Accumulator {
    pub fn new(value: i32, mode: AccumMode) -> Self {
        Self { value, mode }
    }

    #[inline]
    pub fn mac(&mut self, weight: i8, input: i8) {
        self.value = self
            .value
            .wrapping_add(i32::from(weight) * i32::from(input));
    }

    #[inline]
    pub fn requantize(self, right_shift: u32) -> i8 {
        requantize(self, right_shift)
    }
}

/// Shifts the accumulator right with rounding and narrows it to int8.
///
/// Rounding adds `2^(right_shift - 1)` before the arithmetic shift, i.e.
/// `floor(value / 2^s + 1/2)`. This is translation invariant, which keeps
/// wrap-mode narrowing periodic in `256 * 2^s`.
#[inline]
pub fn requantize(acc: Accumulator, right_shift: u32) -> i8 {
    debug_assert!(right_shift <= 31);
    let value = i64::from(acc.value);
    let rounded = if right_shift == 0 {
        value
    } else {
        (value + (1i64 << (right_shift - 1))) >> right_shift
    };
    match acc.mode {
        AccumMode::Saturate => rounded.clamp(i8::MIN as i64, i8::MAX as i64) as i8,
        AccumMode::Wrap => rounded as i8,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compute_dec_examples() {
        assert_eq!(compute_dec(1.0), 0);
        assert_eq!(compute_dec(6.0), 3);
        assert_eq!(compute_dec(0.5), -1);
        assert_eq!(compute_dec(0.0), 0);
        assert_eq!(compute_dec(0.500001), 0);
        assert_eq!(compute_dec(1024.0), 10);
        assert_eq!(compute_dec(f64::NAN), 0);
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.5, 0), 64);
        assert_eq!(quantize(1.0, 0), 127);
        assert_eq!(quantize(-0.25, -1), -64);
        assert_eq!(quantize(-1.0, 0), -128);
        assert_eq!(quantize(-5.0, 0), -128);
        // ties go away from zero
        assert_eq!(quantize(0.5 / 128.0, 0), 1);
        assert_eq!(quantize(-0.5 / 128.0, 0), -1);
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(dequantize(64, 0), 0.5);
        assert_eq!(dequantize(0, 5), 0.0);
        assert_eq!(dequantize(-128, 3), -8.0);
    }

    #[test]
    fn requantize_examples() {
        let sat = |v| Accumulator::new(v, AccumMode::Saturate);
        assert_eq!(requantize(sat(256), 1), 127);
        assert_eq!(requantize(sat(300), 2), 75);
        assert_eq!(requantize(Accumulator::new(300, AccumMode::Wrap), 0), 44);
        assert_eq!(requantize(sat(i32::MIN), 0), -128);
        assert_eq!(requantize(sat(i32::MAX), 31), 1);
        assert_eq!(requantize(sat(-6), 2), -1);
        assert_eq!(requantize(sat(-7), 2), -2);
    }

    /// Exact rational oracle: floor(v / 2^s + 1/2), then narrowing.
    fn oracle(value: i32, shift: u32, mode: AccumMode) -> i8 {
        let exact = (value as f64 / 2f64.powi(shift as i32) + 0.5).floor() as i64;
        match mode {
            AccumMode::Saturate => exact.clamp(-128, 127) as i8,
            AccumMode::Wrap => (exact.rem_euclid(256) as u8) as i8,
        }
    }

    #[test]
    fn requantize_matches_rational_oracle() {
        for shift in 0..=12 {
            for value in -5000..=5000 {
                for mode in [AccumMode::Saturate, AccumMode::Wrap] {
                    assert_eq!(
                        requantize(Accumulator::new(value, mode), shift),
                        oracle(value, shift, mode),
                        "value={value} shift={shift} mode={mode:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn accumulator_wraps_at_32_bits() {
        let mut acc = Accumulator::new(i32::MAX, AccumMode::Saturate);
        acc.mac(1, 1);
        assert_eq!(acc.value, i32::MIN);
    }

    #[test]
    fn tensor_length_is_checked() {
        assert!(QuantTensor::new(vec![2, 2], vec![0; 3], 0).is_err());
        let t = QuantTensor::from_reals(vec![3], &[0.5, -6.0, 2.0]).unwrap();
        assert_eq!(t.dec(), 3);
        assert_eq!(t.values(), &[8, -96, 32]);
    }
}
