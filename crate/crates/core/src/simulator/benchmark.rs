use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ink::apply_ink;
use super::mask::{generate_mask, InkColor, InkPattern, InkSpec, Mask, MAX_OPACITY, MIN_OPACITY};
use super::tissue::{tissue_mask, CleanTile};
use crate::detector::{format_annotations, parse_annotations, BoundingBox, BoxClass};
use crate::error::{Error, Result};
use crate::raster::RgbImage;
use crate::restorer::Density;

pub const BENCHMARK_SCHEMA: u32 = 1;
pub const BENCHMARK_INDEX: &str = "pairs.json";
/// Tiles with at least this tissue fraction count as foreground.
pub const FOREGROUND_TISSUE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPair {
    pub id: String,
    pub clean_id: String,
    pub clean: RgbImage,
    pub inked: RgbImage,
    pub mask: Mask,
    /// Ink boxes (one per mask component) followed by known cluster boxes.
    pub boxes: Vec<BoundingBox>,
    pub spec: InkSpec,
    pub density: Density,
    /// Ink lies on a tile that contains tissue (stage-2 positive).
    pub foreground: bool,
}

impl BenchmarkPair {
    pub fn ink_boxes(&self) -> impl Iterator<Item = &BoundingBox> {
        self.boxes.iter().filter(|b| b.cls == BoxClass::Ink)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Benchmark {
    pub seed: u64,
    pub pairs: Vec<BenchmarkPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PairEntry {
    id: String,
    clean_id: String,
    spec: InkSpec,
    density: Density,
    stage2: String,
    clean: String,
    inked: String,
    mask: String,
    annotations: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BenchmarkIndex {
    schema: u32,
    seed: u64,
    pairs: Vec<PairEntry>,
}

pub fn random_spec(rng: &mut ChaCha8Rng, size: u32) -> InkSpec {
    let s = size as f64;
    InkSpec {
        color: InkColor::ALL[rng.random_range(0..InkColor::ALL.len())],
        pattern: InkPattern::ALL[rng.random_range(0..InkPattern::ALL.len())],
        opacity: rng.random_range(MIN_OPACITY..=MAX_OPACITY),
        stroke_width: (rng.random_range(0.02..0.05) * s).round().max(1.0) as u32,
        seed: rng.random(),
    }
}

/// Composites one random marker pattern onto each of `n_pairs` clean tiles
/// (cycling through `clean_tiles`). Fully determined by the inputs and `seed`.
pub fn build_benchmark(clean_tiles: &[CleanTile], n_pairs: usize, seed: u64) -> Result<Benchmark> {
    if n_pairs > 0 && clean_tiles.is_empty() {
        return Err(Error::InvalidInput("benchmark needs at least one clean tile".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let clean = &clean_tiles[i % clean_tiles.len()];
        let (w, h) = clean.image.dimensions();
        if w != h {
            return Err(Error::InvalidInput(format!("clean tile {} is not square", clean.id)));
        }
        let spec = random_spec(&mut rng, w);
        let mask = generate_mask(&spec, w);
        let inked = apply_ink(&clean.image, &mask, &spec)?;
        let mut boxes = mask.component_boxes();
        boxes.extend(clean.clusters.iter().copied());
        pairs.push(BenchmarkPair {
            id: format!("pair{i:04}"),
            clean_id: clean.id.clone(),
            clean: clean.image.clone(),
            inked,
            mask,
            boxes,
            spec,
            density: clean.density(),
            foreground: tissue_mask(&clean.image).fraction() >= FOREGROUND_TISSUE_FRACTION,
        });
    }
    Ok(Benchmark { seed, pairs })
}

impl Benchmark {
    /// Writes `clean/`, `inked/`, `masks/`, `annotations/` and `pairs.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        for sub in ["clean", "inked", "masks", "annotations"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let mut entries = Vec::with_capacity(self.pairs.len());
        for pair in &self.pairs {
            let entry = PairEntry {
                id: pair.id.clone(),
                clean_id: pair.clean_id.clone(),
                spec: pair.spec,
                density: pair.density,
                stage2: if pair.foreground {
                    "foreground"
                } else {
                    "background_only"
                }
                .into(),
                clean: format!("clean/{}.png", pair.id),
                inked: format!("inked/{}.png", pair.id),
                mask: format!("masks/{}.png", pair.id),
                annotations: format!("annotations/{}.txt", pair.id),
            };
            pair.clean.save(dir.join(&entry.clean))?;
            pair.inked.save(dir.join(&entry.inked))?;
            pair.mask.to_image().save(dir.join(&entry.mask))?;
            let ann = dir.join(&entry.annotations);
            let (w, h) = pair.inked.dimensions();
            fs::write(&ann, format_annotations(&pair.boxes, w, h)).map_err(|e| Error::io(&ann, e))?;
            entries.push(entry);
        }
        let index = BenchmarkIndex {
            schema: BENCHMARK_SCHEMA,
            seed: self.seed,
            pairs: entries,
        };
        let path = dir.join(BENCHMARK_INDEX);
        fs::write(&path, serde_json::to_string_pretty(&index)? + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let path = dir.join(BENCHMARK_INDEX);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: BenchmarkIndex = serde_json::from_str(&text)?;
        if index.schema != BENCHMARK_SCHEMA {
            return Err(Error::InvalidInput(format!(
                "unsupported benchmark schema {}",
                index.schema
            )));
        }
        let mut pairs = Vec::with_capacity(index.pairs.len());
        for e in index.pairs {
            let clean = image::open(dir.join(&e.clean))?.to_rgb8();
            let inked = image::open(dir.join(&e.inked))?.to_rgb8();
            let mask = Mask::from_image(&image::open(dir.join(&e.mask))?.to_luma8());
            let ann_path = dir.join(&e.annotations);
            let ann = fs::read_to_string(&ann_path).map_err(|err| Error::io(&ann_path, err))?;
            let (w, h) = inked.dimensions();
            pairs.push(BenchmarkPair {
                boxes: parse_annotations(&ann, w, h)?,
                foreground: e.stage2 == "foreground",
                id: e.id,
                clean_id: e.clean_id,
                clean,
                inked,
                mask,
                spec: e.spec,
                density: e.density,
            });
        }
        Ok(Benchmark {
            seed: index.seed,
            pairs,
        })
    }
}
