use super::filter::{decimate, filter_valid, gaussian_kernel, local_moments};
use super::luma_pair;
use crate::error::{Error, Result};
use crate::raster::{Plane, RgbImage};

pub const VIF_SCALES: usize = 4;
/// Variance of the additive neural noise in the HVS model.
pub const VIF_NOISE_VARIANCE: f64 = 2.0;
const EPS: f64 = 1e-10;

/// Pixel-domain visual information fidelity over four Gaussian-pyramid
/// scales. Scales whose window no longer fits are skipped; the first scale
/// must fit (images at least 17×17).
pub fn vif(reference: &RgbImage, test: &RgbImage) -> Result<f64> {
    let (a, b) = luma_pair(reference, test)?;
    vif_planes(&a, &b)
}

pub fn vif_planes(reference: &Plane, test: &Plane) -> Result<f64> {
    if (reference.width, reference.height) != (test.width, test.height) {
        return Err(Error::InvalidInput("plane dimensions differ".into()));
    }
    let first = (1 << VIF_SCALES) + 1;
    if reference.width < first || reference.height < first {
        return Err(Error::InvalidInput(format!(
            "VIF needs images of at least {first}x{first}"
        )));
    }
    let mut ref_s = reference.clone();
    let mut dist_s = test.clone();
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for scale in 1..=VIF_SCALES {
        let n = (1 << (VIF_SCALES - scale + 1)) + 1;
        let kernel = gaussian_kernel(n, n as f64 / 5.0);
        if scale > 1 {
            match (filter_valid(&ref_s, &kernel), filter_valid(&dist_s, &kernel)) {
                (Some(r), Some(d)) => {
                    ref_s = decimate(&r);
                    dist_s = decimate(&d);
                }
                _ => break,
            }
        }
        let Some(m) = local_moments(&ref_s, &dist_s, &kernel) else {
            break;
        };
        for i in 0..m.var1.len() {
            let mut s1 = m.var1[i].max(0.0);
            let s2 = m.var2[i].max(0.0);
            let s12 = m.cov[i];
            let mut g = s12 / (s1 + EPS);
            let mut sv = s2 - g * s12;
            if s1 < EPS {
                g = 0.0;
                sv = s2;
                s1 = 0.0;
            }
            if s2 < EPS {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = s2;
                g = 0.0;
            }
            let sv = sv.max(EPS);
            num += (1.0 + g * g * s1 / (sv + VIF_NOISE_VARIANCE)).log10();
            den += (1.0 + s1 / VIF_NOISE_VARIANCE).log10();
        }
    }
    if den == 0.0 {
        // A flat reference carries no information to preserve.
        return Ok(if reference == test { 1.0 } else { 0.0 });
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Rgb;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(64, 64, |x, y| {
            let base = 128.0 + 60.0 * ((x as f64 / 5.0).sin() * (y as f64 / 7.0).cos());
            let v = (base + rng.random_range(-20.0..20.0)).clamp(0.0, 255.0) as u8;
            Rgb([v, v / 2, 255 - v])
        })
    }

    fn add_noise(img: &RgbImage, amp: f64, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = img.clone();
        for p in out.pixels_mut() {
            for c in p.0.iter_mut() {
                *c = (*c as f64 + rng.random_range(-amp..amp)).round().clamp(0.0, 255.0) as u8;
            }
        }
        out
    }

    #[test]
    fn identical_is_one() {
        let img = textured(1);
        assert!((vif(&img, &img).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn heavier_noise_scores_lower() {
        let img = textured(2);
        let light = vif(&img, &add_noise(&img, 8.0, 3)).unwrap();
        let heavy = vif(&img, &add_noise(&img, 60.0, 4)).unwrap();
        assert!(heavy < light && light < 1.0, "light {light} heavy {heavy}");
        assert!(heavy >= 0.0);
    }

    #[test]
    fn flat_reference() {
        let flat = RgbImage::from_pixel(32, 32, Rgb([200, 200, 200]));
        assert_eq!(vif(&flat, &flat).unwrap(), 1.0);
    }

    #[test]
    fn too_small() {
        assert!(vif(&RgbImage::new(16, 16), &RgbImage::new(16, 16)).is_err());
    }
}
