//! Small raster utilities shared by every stage: luma conversion, bilinear
//! resampling, padding and cropping of 8-bit RGB images.

pub use image::{Rgb, RgbImage};

/// A single-channel floating point image in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(width * height, data.len(), "plane data length");
        Self { width, height, data }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// ITU-R BT.601 luma, unrounded, in the 0..=255 range.
pub fn luma(img: &RgbImage) -> Plane {
    let data = img
        .pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    Plane::new(img.width() as usize, img.height() as usize, data)
}

/// Bilinear resampling of an interleaved float buffer with pixel-centre
/// alignment (`align_corners = false`). Returns the source untouched when the
/// target size equals the source size.
pub fn resize_bilinear_f32(
    src: &[f32],
    src_w: usize,
    src_h: usize,
    channels: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<f32> {
    assert_eq!(src.len(), src_w * src_h * channels);
    if src_w == dst_w && src_h == dst_h {
        return src.to_vec();
    }
    let axis = |dst: usize, src: usize| -> Vec<(usize, usize, f32)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(src - 1);
                (lo, hi, (pos - lo as f64) as f32)
            })
            .collect()
    };
    let xs = axis(dst_w, src_w);
    let ys = axis(dst_h, src_h);
    let mut out = vec![0f32; dst_w * dst_h * channels];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        let row0 = &src[y0 * src_w * channels..(y0 + 1) * src_w * channels];
        let row1 = &src[y1 * src_w * channels..(y1 + 1) * src_w * channels];
        let dst_row = &mut out[oy * dst_w * channels..(oy + 1) * dst_w * channels];
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..channels {
                let a = row0[x0 * channels + c] * (1.0 - fx) + row0[x1 * channels + c] * fx;
                let b = row1[x0 * channels + c] * (1.0 - fx) + row1[x1 * channels + c] * fx;
                dst_row[ox * channels + c] = a * (1.0 - fy) + b * fy;
            }
        }
    }
    out
}

/// Bilinear resize of an RGB image. Same-size requests return a bit-identical copy.
pub fn resize_bilinear(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    if img.dimensions() == (width, height) {
        return img.clone();
    }
    let src: Vec<f32> = img.as_raw().iter().map(|&v| v as f32).collect();
    let out = resize_bilinear_f32(
        &src,
        img.width() as usize,
        img.height() as usize,
        3,
        width as usize,
        height as usize,
    );
    from_f32_rgb(&out, width, height)
}

/// Rounds and clamps an interleaved 0..=255 float buffer into an RGB image.
pub fn from_f32_rgb(data: &[f32], width: u32, height: u32) -> RgbImage {
    let raw = data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    RgbImage::from_raw(width, height, raw).expect("buffer length matches dimensions")
}

/// Zero-pads `img` on the right and bottom to `width` × `height`.
pub fn pad_zero(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    let mut out = RgbImage::new(width.max(img.width()), height.max(img.height()));
    image::imageops::replace(&mut out, img, 0, 0);
    out
}

pub fn crop(img: &RgbImage, x: u32, y: u32, w: u32, h: u32) -> RgbImage {
    image::imageops::crop_imm(img, x, y, w, h).to_image()
}

/// Mirror index for reflection padding (edge pixel not repeated).
fn reflect(i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Reflection-pads `img` to a square whose side is the larger dimension. The
/// original occupies the region starting at the returned `(left, top)` offset.
pub fn reflect_pad_square(img: &RgbImage) -> (RgbImage, u32, u32) {
    let (w, h) = img.dimensions();
    let side = w.max(h);
    let left = (side - w) / 2;
    let top = (side - h) / 2;
    if w == h {
        return (img.clone(), 0, 0);
    }
    let out = RgbImage::from_fn(side, side, |x, y| {
        let sx = reflect(x as i64 - left as i64, w as i64);
        let sy = reflect(y as i64 - top as i64, h as i64);
        *img.get_pixel(sx as u32, sy as u32)
    });
    (out, left, top)
}
