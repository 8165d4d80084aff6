//! Procedural H&E-like tissue tiles: pink stroma with purple nuclei on a
//! near-white slide background. Dense tiles additionally carry compact
//! nuclear clusters, which are returned as cluster-class boxes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mask::Mask;
use crate::detector::{BoundingBox, BoxClass};
use crate::raster::{self, Rgb, RgbImage};
use crate::restorer::Density;

/// Luma below which a pixel counts as tissue rather than slide background.
pub const TISSUE_LUMA_THRESHOLD: f64 = 225.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CleanTile {
    pub id: String,
    pub image: RgbImage,
    /// Known cluster regions; empty for foreign (non-synthetic) tiles.
    pub clusters: Vec<BoundingBox>,
}

impl CleanTile {
    pub fn new(id: impl Into<String>, image: RgbImage) -> Self {
        Self {
            id: id.into(),
            image,
            clusters: Vec::new(),
        }
    }

    pub fn density(&self) -> Density {
        if self.clusters.is_empty() {
            Density::Sparse
        } else {
            Density::Dense
        }
    }
}

/// Pixels darker than the slide background.
pub fn tissue_mask(img: &RgbImage) -> Mask {
    let l = raster::luma(img);
    Mask::from_fn(img.width(), img.height(), |x, y| {
        l.at(x as usize, y as usize) < TISSUE_LUMA_THRESHOLD
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueParams {
    pub size: u32,
    pub density: Density,
    /// Fraction of the tile covered by tissue, 0 for a blank background tile.
    pub coverage: f64,
    pub seed: u64,
}

fn jitter(rng: &mut ChaCha8Rng, v: f64, amp: f64) -> u8 {
    (v + rng.random_range(-amp..=amp)).round().clamp(0.0, 255.0) as u8
}

fn fill_ellipse(
    img: &mut RgbImage,
    (cx, cy): (f64, f64),
    (rx, ry): (f64, f64),
    ang: f64,
    color: [f64; 3],
    rng: &mut ChaCha8Rng,
) {
    let r = rx.max(ry).ceil() as i64 + 1;
    let (sin, cos) = ang.sin_cos();
    let (w, h) = (img.width() as i64, img.height() as i64);
    for y in (cy as i64 - r).max(0)..(cy as i64 + r + 1).min(h) {
        for x in (cx as i64 - r).max(0)..(cx as i64 + r + 1).min(w) {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let u = (dx * cos + dy * sin) / rx;
            let v = (-dx * sin + dy * cos) / ry;
            let d = u * u + v * v;
            if d <= 1.0 {
                // darker chromatin towards the rim
                let shade = 1.0 - 0.15 * d;
                let p = Rgb([
                    jitter(rng, color[0] * shade, 6.0),
                    jitter(rng, color[1] * shade, 6.0),
                    jitter(rng, color[2] * shade, 6.0),
                ]);
                img.put_pixel(x as u32, y as u32, p);
            }
        }
    }
}

pub fn synthesize_tissue(id: impl Into<String>, params: TissueParams) -> CleanTile {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let size = params.size;
    let s = size as f64;
    let scale = s / 256.0;

    // smooth field whose upper quantile defines the tissue region
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let f = rng.random_range(0.5..2.5) * std::f64::consts::TAU / s;
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            (
                f * a.cos(),
                f * a.sin(),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.5..1.0),
            )
        })
        .collect();
    let field = |x: f64, y: f64| -> f64 {
        waves
            .iter()
            .map(|&(fx, fy, ph, amp)| amp * (fx * x + fy * y + ph).sin())
            .sum()
    };
    let coverage = params.coverage.clamp(0.0, 1.0);
    let threshold = if coverage <= 0.0 {
        f64::INFINITY
    } else if coverage >= 1.0 {
        f64::NEG_INFINITY
    } else {
        let mut vals: Vec<f64> = (0..size)
            .step_by(4)
            .flat_map(|y| (0..size).step_by(4).map(move |x| (x, y)))
            .map(|(x, y)| field(x as f64, y as f64))
            .collect();
        vals.sort_by(f64::total_cmp);
        vals[((1.0 - coverage) * (vals.len() - 1) as f64) as usize]
    };
    let in_tissue = |x: f64, y: f64| field(x, y) > threshold;

    let fiber_f = rng.random_range(0.15..0.3) / scale;
    let fiber_a = rng.random_range(0.0..std::f64::consts::PI);
    let (fs, fc) = fiber_a.sin_cos();
    let mut img = RgbImage::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f64, y as f64);
            let p = if in_tissue(xf, yf) {
                let t = 0.5 + 0.5 * ((xf * fc + yf * fs) * fiber_f).sin();
                Rgb([
                    jitter(&mut rng, 232.0 - 22.0 * t, 4.0),
                    jitter(&mut rng, 160.0 - 35.0 * t, 4.0),
                    jitter(&mut rng, 200.0 - 18.0 * t, 4.0),
                ])
            } else {
                Rgb([
                    jitter(&mut rng, 243.0, 3.0),
                    jitter(&mut rng, 241.0, 3.0),
                    jitter(&mut rng, 245.0, 3.0),
                ])
            };
            img.put_pixel(x, y, p);
        }
    }

    let tissue_px = (0..size)
        .step_by(2)
        .flat_map(|y| (0..size).step_by(2).map(move |x| (x, y)))
        .filter(|&(x, y)| in_tissue(x as f64, y as f64))
        .count() as f64
        * 4.0;

    let mut clusters = Vec::new();
    if params.density == Density::Dense && tissue_px > 0.0 {
        let n_clusters = rng.random_range(1..=2);
        let mut tries = 0;
        while clusters.len() < n_clusters && tries < 200 {
            tries += 1;
            let cx = rng.random_range(0.15..0.85) * s;
            let cy = rng.random_range(0.15..0.85) * s;
            if !in_tissue(cx, cy) {
                continue;
            }
            let rx = rng.random_range(0.09..0.16) * s;
            let ry = rng.random_range(0.09..0.16) * s;
            let bb = BoundingBox::new(
                BoxClass::Cluster,
                (cx - rx) as f32,
                (cy - ry) as f32,
                (2.0 * rx) as f32,
                (2.0 * ry) as f32,
                1.0,
            )
            .clipped(size, size)
            .expect("cluster centre lies inside the tile");
            if clusters.iter().any(|c: &BoundingBox| c.iou(&bb) > 0.0) {
                continue;
            }
            // darker, denser cytoplasm under the cluster
            for y in bb.y as u32..bb.bottom() as u32 {
                for x in bb.x as u32..bb.right() as u32 {
                    let (dx, dy) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
                    if dx * dx + dy * dy <= 1.0 {
                        let p = Rgb([
                            jitter(&mut rng, 196.0, 5.0),
                            jitter(&mut rng, 118.0, 5.0),
                            jitter(&mut rng, 176.0, 5.0),
                        ]);
                        img.put_pixel(x, y, p);
                    }
                }
            }
            let count = (std::f64::consts::PI * rx * ry / (45.0 * scale * scale)) as usize;
            for _ in 0..count {
                let (a, r) = (
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.0f64..1.0).sqrt(),
                );
                let (nx, ny) = (cx + a.cos() * r * rx, cy + a.sin() * r * ry);
                let nr = rng.random_range(2.0..3.5) * scale;
                let color = [
                    rng.random_range(70.0..95.0),
                    rng.random_range(40.0..60.0),
                    rng.random_range(120.0..145.0),
                ];
                let ang = rng.random_range(0.0..std::f64::consts::PI);
                let ry = nr * rng.random_range(0.7..1.0);
                fill_ellipse(&mut img, (nx, ny), (nr, ry), ang, color, &mut rng);
            }
            clusters.push(bb);
        }
    }

    let per_nucleus = match params.density {
        Density::Sparse => 700.0,
        Density::Dense => 260.0,
    } * scale
        * scale;
    let n_nuclei = (tissue_px / per_nucleus) as usize;
    let mut placed = 0;
    let mut tries = 0;
    while placed < n_nuclei && tries < n_nuclei * 20 {
        tries += 1;
        let (x, y) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        if !in_tissue(x, y) {
            continue;
        }
        let rx = rng.random_range(2.5..4.5) * scale;
        let ry = rx * rng.random_range(0.6..1.0);
        let color = [
            rng.random_range(95.0..125.0),
            rng.random_range(55.0..80.0),
            rng.random_range(145.0..170.0),
        ];
        let ang = rng.random_range(0.0..std::f64::consts::PI);
        fill_ellipse(&mut img, (x, y), (rx, ry), ang, color, &mut rng);
        placed += 1;
    }

    CleanTile {
        id: id.into(),
        image: img,
        clusters,
    }
}

/// A reproducible mix of blank, sparse and dense tiles (1 : 2 : 2).
pub fn synthesize_clean_tiles(n: usize, size: u32, seed: u64) -> Vec<CleanTile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let kind = rng.random_range(0..5);
            let (density, coverage) = match kind {
                0 => (Density::Sparse, 0.0),
                1 | 2 => (Density::Sparse, rng.random_range(0.4..1.0)),
                _ => (Density::Dense, rng.random_range(0.5..1.0)),
            };
            let params = TissueParams {
                size,
                density,
                coverage,
                seed: rng.random(),
            };
            synthesize_tissue(format!("tile{i:04}"), params)
        })
        .collect()
}
