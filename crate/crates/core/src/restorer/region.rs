use super::RestorerWeights;
use crate::detector::BoundingBox;
use crate::error::{Error, Result};
use crate::nn;
use crate::raster::{self, RgbImage};

/// Context added around a box before translation, in pixels.
pub const MARGIN: u32 = 8;
/// Width of the linear blend ramp outside the box, in pixels.
pub const FEATHER: u32 = 8;

/// Integer pixel rectangle `(x0, y0, x1, y1)` (exclusive end) of the box
/// clipped to the image and grown by `margin`; `None` when the box misses
/// the image.
pub(crate) fn expanded_bounds(b: &BoundingBox, width: u32, height: u32, margin: u32) -> Option<(u32, u32, u32, u32)> {
    let (x0, y0, x1, y1) = clipped_bounds(b, width, height)?;
    Some((
        x0.saturating_sub(margin),
        y0.saturating_sub(margin),
        (x1 + margin).min(width),
        (y1 + margin).min(height),
    ))
}

fn clipped_bounds(b: &BoundingBox, width: u32, height: u32) -> Option<(u32, u32, u32, u32)> {
    let (x0, y0, x1, y1) = b.pixel_bounds();
    let (x0, y0) = (x0.max(0), y0.max(0));
    let (x1, y1) = (x1.min(width as i64), y1.min(height as i64));
    (x1 > x0 && y1 > y0).then_some((x0 as u32, y0 as u32, x1 as u32, y1 as u32))
}

/// Blend weight of a pixel: 1 inside the box, falling linearly to 0 over
/// `FEATHER` pixels (Chebyshev distance) outside it.
fn feather_weight(x: u32, y: u32, (x0, y0, x1, y1): (u32, u32, u32, u32)) -> f32 {
    let dx = x0.saturating_sub(x).max((x + 1).saturating_sub(x1));
    let dy = y0.saturating_sub(y).max((y + 1).saturating_sub(y1));
    let d = dx.max(dy);
    if d > FEATHER {
        0.0
    } else {
        1.0 - d as f32 / (FEATHER + 1) as f32
    }
}

/// Repaints one box of `image` with the inked-to-clean generator.
///
/// The box plus an 8 px margin is reflection-padded to a square, resized to
/// the working resolution and translated. The generator's change is resized
/// back and added to the native-resolution crop, so pixels the generator
/// leaves alone keep their full detail. Only the box and its feather ring are
/// written; every other pixel is returned untouched.
pub fn restore_region(weights: &RestorerWeights, image: &RgbImage, bbox: &BoundingBox) -> Result<RgbImage> {
    weights.ready()?;
    let finite = [bbox.x, bbox.y, bbox.w, bbox.h].iter().all(|v| v.is_finite());
    if !finite || bbox.w <= 0.0 || bbox.h <= 0.0 {
        return Err(Error::InvalidBox(format!("degenerate box {bbox:?}")));
    }
    let (w, h) = image.dimensions();
    let inner = clipped_bounds(bbox, w, h)
        .ok_or_else(|| Error::InvalidBox(format!("box {bbox:?} lies outside the {w}x{h} image")))?;
    let (ex0, ey0, ex1, ey1) = expanded_bounds(bbox, w, h, MARGIN).expect("clipped box is non-empty");
    let (cw, ch) = (ex1 - ex0, ey1 - ey0);
    let crop = raster::crop(image, ex0, ey0, cw, ch);
    let (square, left, top) = raster::reflect_pad_square(&crop);
    let side = square.width() as usize;

    let s = weights.config().input_size;
    let small = raster::resize_bilinear(&square, s, s);
    let x = nn::images_to_tensor(&[&small], -1.0, 1.0)?;
    let delta = (weights.ink_to_clean(&x)? - &x)?.squeeze(0)?;
    let planar: Vec<f32> = delta.flatten_all()?.to_vec1()?;
    let plane = (s * s) as usize;
    let mut interleaved = vec![0f32; plane * 3];
    for i in 0..plane {
        for c in 0..3 {
            interleaved[i * 3 + c] = planar[c * plane + i] * 127.5;
        }
    }
    let delta = raster::resize_bilinear_f32(&interleaved, s as usize, s as usize, 3, side, side);

    let mut out = image.clone();
    for y in ey0..ey1 {
        for x in ex0..ex1 {
            let a = feather_weight(x, y, inner);
            if a == 0.0 {
                continue;
            }
            let sx = (x - ex0 + left) as usize;
            let sy = (y - ey0 + top) as usize;
            let px = out.get_pixel_mut(x, y);
            for c in 0..3 {
                let v = px[c] as f32 + a * delta[(sy * side + sx) * 3 + c];
                px[c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(out)
}

/// Mean absolute error (0..=255 scale) between an inked image and its
/// round trip through both generators at the working resolution.
pub fn cycle_consistency(weights: &RestorerWeights, image: &RgbImage) -> Result<f64> {
    weights.ready()?;
    let s = weights.config().input_size;
    let small = raster::resize_bilinear(image, s, s);
    let x = nn::images_to_tensor(&[&small], -1.0, 1.0)?;
    let rec = weights.clean_to_ink(&weights.ink_to_clean(&x)?)?;
    let err = (rec - &x)?.abs()?.mean_all()?.to_scalar::<f32>()?;
    Ok(err as f64 * 127.5)
}
