use super::filter::{gaussian_kernel, local_moments};
use super::{luma_pair, PEAK};
use crate::error::{Error, Result};
use crate::raster::{Plane, RgbImage};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Mean structural similarity over all fully-contained 11×11 Gaussian windows.
pub fn ssim(reference: &RgbImage, test: &RgbImage) -> Result<f64> {
    let (a, b) = luma_pair(reference, test)?;
    ssim_planes(&a, &b)
}

pub fn ssim_planes(reference: &Plane, test: &Plane) -> Result<f64> {
    if (reference.width, reference.height) != (test.width, test.height) {
        return Err(Error::InvalidInput("plane dimensions differ".into()));
    }
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let kernel = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let m = local_moments(reference, test, &kernel)
        .ok_or_else(|| Error::InvalidInput(format!("SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")))?;
    let n = m.mu1.data.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (m1, m2) = (m.mu1.data[i], m.mu2.data[i]);
            ((2.0 * m1 * m2 + c1) * (2.0 * m.cov[i] + c2)) / ((m1 * m1 + m2 * m2 + c1) * (m.var1[i] + m.var2[i] + c2))
        })
        .sum();
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Rgb;

    #[test]
    fn identical_is_one() {
        let img = RgbImage::from_fn(40, 30, |x, y| Rgb([(x * 5) as u8, (y * 3) as u8, (x * y) as u8]));
        assert_eq!(ssim(&img, &img).unwrap(), 1.0);
    }

    #[test]
    fn too_small() {
        assert!(ssim(&RgbImage::new(10, 40), &RgbImage::new(10, 40)).is_err());
    }

    #[test]
    fn inverted_structure_is_negative() {
        let a = RgbImage::from_fn(32, 32, |x, _| if x % 4 < 2 { Rgb([0; 3]) } else { Rgb([255; 3]) });
        let b = RgbImage::from_fn(32, 32, |x, _| if x % 4 < 2 { Rgb([255; 3]) } else { Rgb([0; 3]) });
        let v = ssim(&a, &b).unwrap();
        assert!((-1.0..0.0).contains(&v), "{v}");
    }
}
