use super::{luma_pair, PEAK};
use crate::error::{Error, Result};
use crate::raster::{Plane, RgbImage};

pub fn mse(reference: &Plane, test: &Plane) -> f64 {
    let sum: f64 = reference
        .data
        .iter()
        .zip(&test.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    sum / reference.data.len() as f64
}

/// Peak signal-to-noise ratio in dB. Identical inputs give `f64::INFINITY`.
pub fn psnr(reference: &RgbImage, test: &RgbImage) -> Result<f64> {
    let (a, b) = luma_pair(reference, test)?;
    psnr_planes(&a, &b)
}

pub fn psnr_planes(reference: &Plane, test: &Plane) -> Result<f64> {
    if (reference.width, reference.height) != (test.width, test.height) {
        return Err(Error::InvalidInput("plane dimensions differ".into()));
    }
    let m = mse(reference, test);
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / m).log10())
}
