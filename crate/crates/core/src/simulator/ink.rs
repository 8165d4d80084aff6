//! Marker-ink compositing in naive device CMYK.

use super::mask::{InkColor, InkSpec, Mask};
use crate::error::{Error, Result};
use crate::raster::{Rgb, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cmyk {
    pub c: f64,
    pub m: f64,
    pub y: f64,
    pub k: f64,
}

impl Cmyk {
    pub const fn new(c: f64, m: f64, y: f64, k: f64) -> Self {
        Self { c, m, y, k }
    }

    pub fn from_rgb(p: Rgb<u8>) -> Self {
        let [r, g, b] = p.0.map(|v| v as f64 / 255.0);
        let k = 1.0 - r.max(g).max(b);
        if k >= 1.0 {
            return Cmyk::new(0.0, 0.0, 0.0, 1.0);
        }
        Cmyk::new(
            (1.0 - r - k) / (1.0 - k),
            (1.0 - g - k) / (1.0 - k),
            (1.0 - b - k) / (1.0 - k),
            k,
        )
    }

    pub fn to_rgb(self) -> Rgb<u8> {
        let ch = |v: f64| (255.0 * (1.0 - v) * (1.0 - self.k)).round().clamp(0.0, 255.0) as u8;
        Rgb([ch(self.c), ch(self.m), ch(self.y)])
    }

    pub fn lerp(self, other: Cmyk, alpha: f64) -> Cmyk {
        let mix = |a: f64, b: f64| (1.0 - alpha) * a + alpha * b;
        Cmyk::new(
            mix(self.c, other.c),
            mix(self.m, other.m),
            mix(self.y, other.y),
            mix(self.k, other.k),
        )
    }
}

impl InkColor {
    pub fn cmyk(self) -> Cmyk {
        match self {
            InkColor::Black => Cmyk::new(0.0, 0.0, 0.0, 1.0),
            InkColor::Blue => Cmyk::new(0.9, 0.6, 0.0, 0.1),
            InkColor::Green => Cmyk::new(0.8, 0.0, 0.9, 0.2),
            InkColor::Red => Cmyk::new(0.0, 0.9, 0.8, 0.1),
        }
    }
}

/// Blends the ink colour of `spec` into `clean` on mask pixels; every other
/// pixel is copied unchanged.
pub fn apply_ink(clean: &RgbImage, mask: &Mask, spec: &InkSpec) -> Result<RgbImage> {
    spec.validate()?;
    if clean.dimensions() != (mask.width, mask.height) {
        return Err(Error::InvalidInput(format!(
            "mask {}x{} does not match tile {:?}",
            mask.width,
            mask.height,
            clean.dimensions()
        )));
    }
    let ink = spec.color.cmyk();
    let alpha = spec.opacity as f64;
    let mut out = clean.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        if mask.get(x, y) {
            *p = Cmyk::from_rgb(*p).lerp(ink, alpha).to_rgb();
        }
    }
    Ok(out)
}
