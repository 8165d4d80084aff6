//! End-to-end slide cleaning: classify every tile, white-fill background
//! ink, detect and repaint foreground ink, then reassemble.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use image::Rgb;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{classify, InkClassifier, Stage};
use crate::detector::{detect, BoundingBox, BoxClass, Detector};
use crate::error::{Error, Result};
use crate::raster::RgbImage;
use crate::restorer::{restore_region, select_domain, Density, RestorerWeights};
use crate::tiles::{
    reassemble, slice_slide, SlideManifest, Tile, TileRecord, TileSet, TileStatus, MANIFEST_FILE, NATIVE_TILE_SIZE,
};

pub const CONFIG_SCHEMA: u32 = 1;
pub const SUMMARY_FILE: &str = "run_summary.json";
pub const TILES_DIR: &str = "tiles";

fn default_tile_size() -> u32 {
    NATIVE_TILE_SIZE
}

fn default_fill() -> [u8; 3] {
    [255, 255, 255]
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema: u32,
    pub classifier_stage1: PathBuf,
    pub classifier_stage2: PathBuf,
    pub detector: PathBuf,
    pub restorer_sparse: PathBuf,
    pub restorer_dense: PathBuf,
    #[serde(default = "default_tile_size")]
    pub tile_size: u32,
    #[serde(default = "default_fill")]
    pub background_fill: [u8; 3],
    /// Tile-parallel workers; 0 uses every core.
    #[serde(default = "default_workers")]
    pub worker_count: usize,
    #[serde(default)]
    pub seed: u64,
}

impl PipelineConfig {
    /// Config with the conventional checkpoint file names inside `dir`.
    pub fn with_checkpoint_dir(dir: &Path) -> Self {
        Self {
            schema: CONFIG_SCHEMA,
            classifier_stage1: dir.join(Stage::One.checkpoint_name()),
            classifier_stage2: dir.join(Stage::Two.checkpoint_name()),
            detector: dir.join(crate::detector::CHECKPOINT_NAME),
            restorer_sparse: dir.join(Density::Sparse.checkpoint_name()),
            restorer_dense: dir.join(Density::Dense.checkpoint_name()),
            tile_size: NATIVE_TILE_SIZE,
            background_fill: default_fill(),
            worker_count: default_workers(),
            seed: 0,
        }
    }

    /// Reads a config file; relative checkpoint paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in cfg.checkpoint_paths_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn checkpoint_paths_mut(&mut self) -> [&mut PathBuf; 5] {
        [
            &mut self.classifier_stage1,
            &mut self.classifier_stage2,
            &mut self.detector,
            &mut self.restorer_sparse,
            &mut self.restorer_dense,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!("unsupported config schema {}", self.schema)));
        }
        if self.tile_size < crate::tiles::MIN_TILE_SIZE {
            return Err(Error::Config(format!("tile size {} is too small", self.tile_size)));
        }
        Ok(())
    }
}

/// The five trained networks, immutable and shared by all workers.
#[derive(Debug)]
pub struct Models {
    pub stage1: InkClassifier,
    pub stage2: InkClassifier,
    pub detector: Detector,
    pub sparse: RestorerWeights,
    pub dense: RestorerWeights,
}

impl Models {
    /// Loads and checks every checkpoint; any problem is a config error.
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let wrap = |path: &Path, e: Error| Error::Config(format!("checkpoint {}: {e}", path.display()));
        let classifier = |path: &Path, stage: Stage| -> Result<InkClassifier> {
            let m = InkClassifier::load(path).map_err(|e| wrap(path, e))?;
            if m.stage() != Some(stage) {
                return Err(Error::Config(format!(
                    "checkpoint {} is not a stage-{} classifier",
                    path.display(),
                    stage.number()
                )));
            }
            Ok(m)
        };
        let restorer = |path: &Path, density: Density| -> Result<RestorerWeights> {
            let w = RestorerWeights::load(path).map_err(|e| wrap(path, e))?;
            if w.density() != density {
                return Err(Error::Config(format!(
                    "checkpoint {} is not a {density} restorer",
                    path.display()
                )));
            }
            Ok(w)
        };
        Ok(Self {
            stage1: classifier(&cfg.classifier_stage1, Stage::One)?,
            stage2: classifier(&cfg.classifier_stage2, Stage::Two)?,
            detector: Detector::load(&cfg.detector).map_err(|e| wrap(&cfg.detector, e))?,
            sparse: restorer(&cfg.restorer_sparse, Density::Sparse)?,
            dense: restorer(&cfg.restorer_dense, Density::Dense)?,
        })
    }

    pub fn restorer(&self, density: Density) -> &RestorerWeights {
        match density {
            Density::Sparse => &self.sparse,
            Density::Dense => &self.dense,
        }
    }
}

/// Replaces every pixel of a background-ink tile with `fill`.
pub fn replace_background_tile(mut tile: Tile, fill: [u8; 3]) -> Result<Tile> {
    if tile.status != TileStatus::BackgroundInk {
        return Err(Error::InvalidState(format!(
            "tile r{} c{} is {:?}, only background_ink tiles are filled",
            tile.row, tile.col, tile.status
        )));
    }
    let (w, h) = tile.pixels.dimensions();
    tile.pixels = RgbImage::from_pixel(w, h, Rgb(fill));
    tile.set_status(TileStatus::Restored)?;
    Ok(tile)
}

/// Detects ink on a foreground tile and repaints every ink box with the
/// restorer of the tile's domain. When the detector finds no ink box the
/// whole tile is treated as one box.
fn restore_foreground(models: &Models, tile: &mut Tile, rec: &mut TileRecord, confidence: f32) -> Result<()> {
    let found = detect(&models.detector, tile)?;
    let density = select_domain(&found);
    let mut ink: Vec<BoundingBox> = found.iter().filter(|b| b.cls == BoxClass::Ink).copied().collect();
    if ink.is_empty() {
        let (w, h) = tile.pixels.dimensions();
        ink.push(BoundingBox::new(
            BoxClass::Ink,
            0.0,
            0.0,
            w as f32,
            h as f32,
            confidence,
        ));
    }
    let weights = models.restorer(density);
    let mut pixels = tile.pixels.clone();
    for b in &ink {
        pixels = restore_region(weights, &pixels, b)?;
    }
    tile.pixels = pixels;
    tile.set_status(TileStatus::Restored)?;
    rec.density = Some(density);
    rec.boxes = ink;
    rec.boxes
        .extend(found.into_iter().filter(|b| b.cls == BoxClass::Cluster));
    Ok(())
}

#[derive(Debug, Default)]
struct Counters {
    restorer_calls: AtomicUsize,
}

/// Runs one tile through classify → route → fill or restore.
fn process_tile(models: &Models, mut tile: Tile, fill: [u8; 3], counters: &Counters) -> (Tile, TileRecord) {
    let mut rec = TileRecord::new(tile.row, tile.col);
    let original = tile.pixels.clone();
    let result = (|| -> Result<()> {
        let v1 = classify(&models.stage1, &tile)?;
        if !v1.label.is_positive() {
            tile.set_status(TileStatus::Clean)?;
            return Ok(());
        }
        let v2 = classify(&models.stage2, &tile)?;
        if !v2.label.is_positive() {
            tile.set_status(TileStatus::BackgroundInk)?;
            rec.route = Some(TileStatus::BackgroundInk);
            rec.background_filled = true;
            tile = replace_background_tile(tile.clone(), fill)?;
            return Ok(());
        }
        tile.set_status(TileStatus::ForegroundInk)?;
        rec.route = Some(TileStatus::ForegroundInk);
        counters.restorer_calls.fetch_add(1, Ordering::Relaxed);
        restore_foreground(models, &mut tile, &mut rec, v2.confidence)
    })();
    match result {
        Ok(()) => {
            if tile.status == TileStatus::Clean {
                rec.route = Some(TileStatus::Clean);
            }
        }
        Err(e) => {
            log::warn!("tile r{} c{} failed: {e}", tile.row, tile.col);
            tile.pixels = original;
            tile.status = TileStatus::Failed;
            rec.background_filled = false;
            rec.density = None;
            rec.boxes.clear();
            rec.error = Some(e.to_string());
        }
    }
    rec.status = tile.status;
    (tile, rec)
}

/// What the pipeline is run on.
#[derive(Debug, Clone)]
pub enum SlideInput {
    /// A whole slide raster, sliced with the configured tile size.
    Image { slide_id: String, image: RgbImage },
    /// A slide already sliced into unprocessed tiles.
    Tiles { tiles: TileSet, manifest: SlideManifest },
}

impl SlideInput {
    /// Accepts a directory holding a `manifest.json` and its tiles, or a
    /// single slide image (slide id = file stem).
    pub fn open(path: &Path) -> Result<Self> {
        if path.is_dir() {
            let manifest = SlideManifest::read(&path.join(MANIFEST_FILE))?;
            let tiles = TileSet::read_dir(path, &manifest)?;
            return Ok(SlideInput::Tiles { tiles, manifest });
        }
        let image = image::open(path)?.to_rgb8();
        let slide_id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("slide").to_string();
        Ok(SlideInput::Image { slide_id, image })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub slide_id: String,
    /// Tiles per terminal status (`clean`, `restored`, `failed`).
    pub status_counts: BTreeMap<String, usize>,
    pub background_filled: usize,
    pub restorer_invocations: usize,
    /// Wall time in seconds per stage.
    pub stage_seconds: BTreeMap<String, f64>,
    pub manifest_path: PathBuf,
    pub output_image: PathBuf,
}

impl RunSummary {
    pub fn failed(&self) -> usize {
        self.status_counts.get("failed").copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.status_counts.values().sum()
    }
}

fn status_key(s: TileStatus) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Cleans one slide into `out_dir`: `tiles/`, `manifest.json`, the
/// reassembled `<slide_id>.png` and `run_summary.json`. The manifest holds
/// no timings, so reruns with the same inputs and models are byte-identical.
pub fn run_pipeline(input: SlideInput, models: &Models, cfg: &PipelineConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let mut stage_seconds = BTreeMap::new();
    let clock = Instant::now();
    let (tiles, mut manifest) = match input {
        SlideInput::Image { slide_id, image } => slice_slide(&image, cfg.tile_size, &slide_id)?,
        SlideInput::Tiles { tiles, manifest } => {
            if let Some(t) = tiles.iter().find(|t| t.status != TileStatus::Unprocessed) {
                return Err(Error::InvalidInput(format!(
                    "tile r{} c{} was already processed ({:?})",
                    t.row, t.col, t.status
                )));
            }
            (tiles, manifest)
        }
    };
    stage_seconds.insert("slice".to_string(), clock.elapsed().as_secs_f64());

    let clock = Instant::now();
    let counters = Counters::default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let fill = cfg.background_fill;
    let results: Vec<(Tile, TileRecord)> = pool.install(|| {
        tiles
            .into_tiles()
            .into_par_iter()
            .map(|t| process_tile(models, t, fill, &counters))
            .collect()
    });
    stage_seconds.insert("process".to_string(), clock.elapsed().as_secs_f64());

    // single writer: records are merged in grid order after the parallel map
    let clock = Instant::now();
    let mut done = TileSet::new();
    for (tile, rec) in results {
        let slot = manifest.record_mut(rec.row, rec.col).ok_or(Error::IncompleteManifest {
            row: rec.row,
            col: rec.col,
        })?;
        *slot = rec;
        done.insert(tile);
    }
    let tiles_dir = out_dir.join(TILES_DIR);
    done.write_dir(&tiles_dir)?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    manifest.write(&manifest_path)?;
    manifest.write(&tiles_dir.join(MANIFEST_FILE))?;
    let output_image = out_dir.join(format!("{}.png", manifest.slide_id));
    reassemble(&done, &manifest)?.save(&output_image)?;
    stage_seconds.insert("write".to_string(), clock.elapsed().as_secs_f64());

    let mut status_counts = BTreeMap::new();
    for rec in &manifest.tiles {
        *status_counts.entry(status_key(rec.status)).or_insert(0) += 1;
    }
    let summary = RunSummary {
        slide_id: manifest.slide_id.clone(),
        status_counts,
        background_filled: manifest.tiles.iter().filter(|r| r.background_filled).count(),
        restorer_invocations: counters.restorer_calls.load(Ordering::Relaxed),
        stage_seconds,
        manifest_path,
        output_image,
    };
    let path = out_dir.join(SUMMARY_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}
