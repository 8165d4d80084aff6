use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::font;
use crate::detector::{BoundingBox, BoxClass};
use crate::error::{Error, Result};

/// Binary image, row-major, `true` = set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn fraction(&self) -> f64 {
        self.area() as f64 / self.data.len() as f64
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// One-pixel 8-neighbourhood dilation.
    pub fn dilate(&self) -> Mask {
        let (w, h) = (self.width as i64, self.height as i64);
        Mask::from_fn(self.width, self.height, |x, y| {
            (-1..=1).any(|dy| {
                (-1..=1).any(|dx| {
                    let (u, v) = (x as i64 + dx, y as i64 + dy);
                    u >= 0 && v >= 0 && u < w && v < h && self.get(u as u32, v as u32)
                })
            })
        })
    }

    pub fn overlaps(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).any(|(a, b)| *a && *b)
    }

    /// 8-connected components as lists of `(x, y)` pixels.
    pub fn components(&self) -> Vec<Vec<(u32, u32)>> {
        let mut label = vec![false; self.data.len()];
        let mut out = Vec::new();
        let (w, h) = (self.width as i64, self.height as i64);
        for start in 0..self.data.len() {
            if !self.data[start] || label[start] {
                continue;
            }
            label[start] = true;
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            while let Some(i) = queue.pop_front() {
                let (x, y) = ((i as i64) % w, (i as i64) / w);
                comp.push((x as u32, y as u32));
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (u, v) = (x + dx, y + dy);
                        if u < 0 || v < 0 || u >= w || v >= h {
                            continue;
                        }
                        let j = (v * w + u) as usize;
                        if self.data[j] && !label[j] {
                            label[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    /// Tight ink-class bounding box of every connected component.
    pub fn component_boxes(&self) -> Vec<BoundingBox> {
        self.components()
            .iter()
            .map(|comp| {
                let x0 = comp.iter().map(|p| p.0).min().unwrap_or(0);
                let x1 = comp.iter().map(|p| p.0).max().unwrap_or(0) + 1;
                let y0 = comp.iter().map(|p| p.1).min().unwrap_or(0);
                let y1 = comp.iter().map(|p| p.1).max().unwrap_or(0) + 1;
                BoundingBox::new(
                    BoxClass::Ink,
                    x0 as f32,
                    y0 as f32,
                    (x1 - x0) as f32,
                    (y1 - y0) as f32,
                    1.0,
                )
            })
            .collect()
    }

    pub fn to_image(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width, self.height, |x, y| {
            image::Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    pub fn from_image(img: &image::GrayImage) -> Self {
        Mask::from_fn(img.width(), img.height(), |x, y| img.get_pixel(x, y)[0] >= 128)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InkColor {
    Green,
    Blue,
    Black,
    Red,
}

impl InkColor {
    pub const ALL: [InkColor; 4] = [InkColor::Green, InkColor::Blue, InkColor::Black, InkColor::Red];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InkPattern {
    Line,
    Circle,
    Arrow,
    Letter,
    Dot,
}

impl InkPattern {
    pub const ALL: [InkPattern; 5] = [
        InkPattern::Line,
        InkPattern::Circle,
        InkPattern::Arrow,
        InkPattern::Letter,
        InkPattern::Dot,
    ];
}

impl fmt::Display for InkPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

pub const MIN_OPACITY: f32 = 0.6;
pub const MAX_OPACITY: f32 = 1.0;
/// Mask area bounds as a fraction of the tile.
pub const MIN_MASK_FRACTION: f64 = 0.005;
pub const MAX_MASK_FRACTION: f64 = 0.60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InkSpec {
    pub color: InkColor,
    pub pattern: InkPattern,
    pub opacity: f32,
    pub stroke_width: u32,
    pub seed: u64,
}

impl InkSpec {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_OPACITY..=MAX_OPACITY).contains(&self.opacity) {
            return Err(Error::InvalidInput(format!(
                "ink opacity {} outside [{MIN_OPACITY}, {MAX_OPACITY}]",
                self.opacity
            )));
        }
        if self.stroke_width == 0 {
            return Err(Error::InvalidInput("stroke width must be positive".into()));
        }
        Ok(())
    }
}

fn seg_dist2(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    (px - qx).powi(2) + (py - qy).powi(2)
}

type Segment = ((f64, f64), (f64, f64));

fn draw_segments(size: u32, segments: &[Segment], radius: f64) -> Mask {
    let r2 = radius * radius;
    Mask::from_fn(size, size, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        segments.iter().any(|&(a, b)| seg_dist2(px, py, a, b) <= r2)
    })
}

fn draw_discs(size: u32, centres: &[(f64, f64)], radius: f64) -> Mask {
    let r2 = radius * radius;
    Mask::from_fn(size, size, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        centres.iter().any(|c| (px - c.0).powi(2) + (py - c.1).powi(2) <= r2)
    })
}

/// Rasterizes the marker pattern of `spec` on a `size` × `size` grid. The
/// result is a pure function of the spec; its area always lies within
/// [`MIN_MASK_FRACTION`, `MAX_MASK_FRACTION`] of the tile.
pub fn generate_mask(spec: &InkSpec, size: u32) -> Mask {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = size as f64;
    let width = (spec.stroke_width as f64).clamp(1.0, (s / 8.0).max(1.0));
    let half = width / 2.0;
    let centre = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (rng.random_range(lo..hi) * s, rng.random_range(lo..hi) * s);

    let mut mask = match spec.pattern {
        InkPattern::Line => {
            let (cx, cy) = centre(&mut rng, 0.3, 0.7);
            let len = rng.random_range(0.3..0.8) * s;
            let ang = rng.random_range(0.0..std::f64::consts::PI);
            let (dx, dy) = (ang.cos() * len / 2.0, ang.sin() * len / 2.0);
            draw_segments(size, &[((cx - dx, cy - dy), (cx + dx, cy + dy))], half)
        }
        InkPattern::Circle => {
            let (cx, cy) = centre(&mut rng, 0.35, 0.65);
            let radius = rng.random_range(0.15..0.32) * s;
            Mask::from_fn(size, size, |x, y| {
                let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                (d - radius).abs() <= half
            })
        }
        InkPattern::Arrow => {
            let (cx, cy) = centre(&mut rng, 0.35, 0.65);
            let len = rng.random_range(0.3..0.6) * s;
            let ang = rng.random_range(0.0..std::f64::consts::TAU);
            let (ux, uy) = (ang.cos(), ang.sin());
            let tail = (cx - ux * len / 2.0, cy - uy * len / 2.0);
            let tip = (cx + ux * len / 2.0, cy + uy * len / 2.0);
            let head = len * 0.3;
            let wing = |turn: f64| {
                let a = ang + std::f64::consts::PI + turn;
                (tip, (tip.0 + a.cos() * head, tip.1 + a.sin() * head))
            };
            draw_segments(size, &[(tail, tip), wing(0.5), wing(-0.5)], half)
        }
        InkPattern::Letter => {
            let glyph = rng.random_range(0..font::glyph_count());
            let pitch = rng.random_range(0.04..0.08) * s;
            let radius = half;
            let gw = pitch * (font::GLYPH_WIDTH - 1) as f64;
            let gh = pitch * (font::GLYPH_HEIGHT - 1) as f64;
            let ox = rng.random_range(radius..(s - gw - radius).max(radius + 1.0));
            let oy = rng.random_range(radius..(s - gh - radius).max(radius + 1.0));
            let centres: Vec<(f64, f64)> = font::glyph_cells(glyph)
                .into_iter()
                .map(|(c, r)| (ox + c as f64 * pitch, oy + r as f64 * pitch))
                .collect();
            // neighbouring lit cells are joined so the glyph stays one component
            let mut segs = Vec::new();
            for (i, a) in centres.iter().enumerate() {
                for b in &centres[i + 1..] {
                    if (a.0 - b.0).abs() <= pitch * 1.01 && (a.1 - b.1).abs() <= pitch * 1.01 {
                        segs.push((*a, *b));
                    }
                }
            }
            let mut m = draw_discs(size, &centres, radius);
            let strokes = draw_segments(size, &segs, radius);
            for y in 0..size {
                for x in 0..size {
                    if strokes.get(x, y) {
                        m.set(x, y, true);
                    }
                }
            }
            m
        }
        InkPattern::Dot => {
            let (cx, cy) = centre(&mut rng, 0.2, 0.8);
            let radius = rng.random_range(0.05..0.1) * s;
            draw_discs(size, &[(cx, cy)], radius)
        }
    };

    let total = (size as f64) * (size as f64);
    while (mask.area() as f64) < MIN_MASK_FRACTION * total {
        mask = mask.dilate();
    }
    debug_assert!(mask.fraction() <= MAX_MASK_FRACTION);
    mask
}
