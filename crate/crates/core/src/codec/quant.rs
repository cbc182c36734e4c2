//! Per-tensor affine quantization.

use crate::error::{config_err, Error, Result};

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub codes: Vec<u32>,
    pub scale: f64,
    pub offset: f64,
    pub bits: u8,
}

impl Quantized {
    /// Quantization step; zero for constant inputs.
    pub fn step(&self) -> f64 {
        self.scale
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.codes.iter().map(|&c| dequantize_code(c, self.scale, self.offset)).collect()
    }
}

pub fn dequantize_code(code: u32, scale: f64, offset: f64) -> f64 {
    if scale == 0.0 {
        offset
    } else {
        offset + code as f64 * scale
    }
}

pub fn check_bits(bits: u8) -> Result<()> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(config_err!("quantization bits must be in {MIN_BITS}..={MAX_BITS}, got {bits}"));
    }
    Ok(())
}

/// `offset = min`, `scale = (max − min)/(2^bits − 1)`, `code = round((v − offset)/scale)`.
pub fn quantize(values: &[f64], bits: u8) -> Result<Quantized> {
    check_bits(bits)?;
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("quantize input ({v})")));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || hi == lo {
        return Ok(Quantized {
            codes: vec![0; values.len()],
            scale: 0.0,
            offset: if values.is_empty() { 0.0 } else { lo },
            bits,
        });
    }
    let levels = ((1u32 << bits) - 1) as f64;
    let scale = (hi - lo) / levels;
    let codes = values
        .iter()
        .map(|&v| ((v - lo) / scale).round().clamp(0.0, levels) as u32)
        .collect();
    Ok(Quantized {
        codes,
        scale,
        offset: lo,
        bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_bound_on_unit_range() {
        let vals: Vec<f64> = (0..=1000).map(|i| -1.0 + i as f64 * 0.002).collect();
        let q = quantize(&vals, 8).unwrap();
        let bound = (2.0 / 255.0) / 2.0;
        for (v, r) in vals.iter().zip(q.dequantize()) {
            assert!((v - r).abs() <= bound + 1e-15);
        }
        assert_eq!(*q.codes.iter().max().unwrap(), 255);
    }

    #[test]
    fn constant_is_exact() {
        let q = quantize(&[0.25; 7], 8).unwrap();
        assert_eq!(q.scale, 0.0);
        assert_eq!(q.dequantize(), vec![0.25; 7]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(quantize(&[1.0], 1).is_err());
        assert!(quantize(&[1.0], 17).is_err());
        assert!(quantize(&[f64::NAN, 1.0], 8).is_err());
    }
}
