/// HEVC-style step size: `2^((qp - 4) / 6)`.
pub fn qstep(qp: u32) -> f64 {
    2f64.powf((qp as f64 - 4.0) / 6.0)
}

/// Uniform scalar quantizer; `f64::round` rounds half away from zero.
#[inline]
pub fn quantize(c: f64, step: f64) -> i32 {
    (c / step).round() as i32
}

#[inline]
pub fn dequantize(level: i32, step: f64) -> f64 {
    level as f64 * step
}

pub fn quantize_all(coeffs: &[f64], step: f64) -> Vec<i32> {
    coeffs.iter().map(|&c| quantize(c, step)).collect()
}

pub fn dequantize_all(levels: &[i32], step: f64) -> Vec<f64> {
    levels.iter().map(|&q| dequantize(q, step)).collect()
}
