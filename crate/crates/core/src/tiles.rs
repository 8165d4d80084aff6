//! Tile store: slicing a slide raster into a fixed grid, the per-slide
//! manifest, rescaling tiles for model input, and lossless reassembly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::BoundingBox;
use crate::error::{Error, Result};
use crate::metrics::QualityRow;
use crate::raster::{self, RgbImage};
use crate::restorer::Density;

/// Tile edge length produced by the slide scanner.
pub const NATIVE_TILE_SIZE: u32 = 1578;
pub const MIN_TILE_SIZE: u32 = 64;
pub const MIN_RESCALE_TARGET: u32 = 32;
pub const MANIFEST_SCHEMA: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TileStatus {
    Unprocessed,
    Clean,
    BackgroundInk,
    ForegroundInk,
    Restored,
    /// A model failed on this tile; the pixels were left untouched.
    Failed,
}

impl TileStatus {
    pub fn can_transition_to(self, next: TileStatus) -> bool {
        use TileStatus::*;
        matches!(
            (self, next),
            (Unprocessed, Clean | BackgroundInk | ForegroundInk)
                | (BackgroundInk | ForegroundInk, Restored)
                | (Unprocessed | BackgroundInk | ForegroundInk, Failed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, TileStatus::Clean | TileStatus::Restored | TileStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub slide_id: String,
    pub row: u32,
    pub col: u32,
    /// Unpadded pixels; edge tiles are smaller than `native_size`.
    pub pixels: RgbImage,
    pub native_size: u32,
    pub status: TileStatus,
}

impl Tile {
    pub fn new(slide_id: impl Into<String>, row: u32, col: u32, pixels: RgbImage) -> Self {
        let native_size = pixels.width().max(pixels.height());
        Self {
            slide_id: slide_id.into(),
            row,
            col,
            pixels,
            native_size,
            status: TileStatus::Unprocessed,
        }
    }

    pub fn set_status(&mut self, next: TileStatus) -> Result<()> {
        if !self.status.can_transition_to(next) {
            return Err(Error::InvalidState(format!(
                "tile r{} c{}: {:?} -> {:?} is not allowed",
                self.row, self.col, self.status, next
            )));
        }
        self.status = next;
        Ok(())
    }

    /// Pixels zero-padded to `native_size` square, as fed to the models.
    pub fn model_input(&self) -> RgbImage {
        if self.pixels.dimensions() == (self.native_size, self.native_size) {
            return self.pixels.clone();
        }
        raster::pad_zero(&self.pixels, self.native_size, self.native_size)
    }

    pub fn file_name(&self) -> String {
        tile_file_name(&self.slide_id, self.row, self.col)
    }
}

pub fn tile_file_name(slide_id: &str, row: u32, col: u32) -> String {
    format!("{slide_id}_r{row}_c{col}.png")
}

/// Tiles of one slide keyed by grid position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TileSet {
    tiles: BTreeMap<(u32, u32), Tile>,
}

impl TileSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tile: Tile) -> Option<Tile> {
        self.tiles.insert((tile.row, tile.col), tile)
    }

    pub fn remove(&mut self, row: u32, col: u32) -> Option<Tile> {
        self.tiles.remove(&(row, col))
    }

    pub fn get(&self, row: u32, col: u32) -> Option<&Tile> {
        self.tiles.get(&(row, col))
    }

    pub fn get_mut(&mut self, row: u32, col: u32) -> Option<&mut Tile> {
        self.tiles.get_mut(&(row, col))
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    /// Row-major iteration.
    pub fn iter(&self) -> impl Iterator<Item = &Tile> {
        self.tiles.values()
    }

    pub fn into_tiles(self) -> Vec<Tile> {
        self.tiles.into_values().collect()
    }

    /// Writes every tile as `{slide_id}_r{row}_c{col}.png` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for tile in self.iter() {
            tile.pixels.save(dir.join(tile.file_name()))?;
        }
        Ok(())
    }

    /// Loads the tiles listed in `manifest` from `dir`, carrying over status.
    pub fn read_dir(dir: &Path, manifest: &SlideManifest) -> Result<Self> {
        let mut set = TileSet::new();
        for rec in &manifest.tiles {
            let path = dir.join(tile_file_name(&manifest.slide_id, rec.row, rec.col));
            if !path.exists() {
                return Err(Error::IncompleteManifest {
                    row: rec.row,
                    col: rec.col,
                });
            }
            let pixels = image::open(&path)?.to_rgb8();
            set.insert(Tile {
                slide_id: manifest.slide_id.clone(),
                row: rec.row,
                col: rec.col,
                pixels,
                native_size: manifest.tile_size,
                status: rec.status,
            });
        }
        Ok(set)
    }
}

impl FromIterator<Tile> for TileSet {
    fn from_iter<I: IntoIterator<Item = Tile>>(iter: I) -> Self {
        let mut set = TileSet::new();
        for t in iter {
            set.insert(t);
        }
        set
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub row: u32,
    pub col: u32,
    pub status: TileStatus,
    /// Classifier routing (`clean`, `background_ink` or `foreground_ink`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<TileStatus>,
    /// Restorer domain used on a foreground tile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Density>,
    #[serde(default)]
    pub boxes: Vec<BoundingBox>,
    /// Set when the tile was replaced by the background fill.
    #[serde(default, skip_serializing_if = "is_false")]
    pub background_filled: bool,
    #[serde(default)]
    pub metrics: Option<QualityRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TileRecord {
    pub fn new(row: u32, col: u32) -> Self {
        Self {
            row,
            col,
            status: TileStatus::Unprocessed,
            route: None,
            density: None,
            boxes: Vec::new(),
            background_filled: false,
            metrics: None,
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideManifest {
    pub schema: u32,
    pub slide_id: String,
    pub tile_size: u32,
    pub grid_rows: u32,
    pub grid_cols: u32,
    pub tiles: Vec<TileRecord>,
}

impl SlideManifest {
    pub fn new(slide_id: impl Into<String>, tile_size: u32, grid_rows: u32, grid_cols: u32) -> Self {
        let tiles = (0..grid_rows)
            .flat_map(|r| (0..grid_cols).map(move |c| TileRecord::new(r, c)))
            .collect();
        Self {
            schema: MANIFEST_SCHEMA,
            slide_id: slide_id.into(),
            tile_size,
            grid_rows,
            grid_cols,
            tiles,
        }
    }

    pub fn record(&self, row: u32, col: u32) -> Option<&TileRecord> {
        self.tiles.iter().find(|r| r.row == row && r.col == col)
    }

    pub fn record_mut(&mut self, row: u32, col: u32) -> Option<&mut TileRecord> {
        self.tiles.iter_mut().find(|r| r.row == row && r.col == col)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != MANIFEST_SCHEMA {
            return Err(Error::InvalidInput(format!(
                "unsupported manifest schema {}",
                self.schema
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for rec in &self.tiles {
            if rec.row >= self.grid_rows || rec.col >= self.grid_cols {
                return Err(Error::InvalidInput(format!(
                    "record r{} c{} outside {}x{} grid",
                    rec.row, rec.col, self.grid_rows, self.grid_cols
                )));
            }
            if !seen.insert((rec.row, rec.col)) {
                return Err(Error::InvalidInput(format!(
                    "duplicate record r{} c{}",
                    rec.row, rec.col
                )));
            }
            if rec.status == TileStatus::Restored && rec.boxes.is_empty() && !rec.background_filled {
                return Err(Error::InvalidInput(format!(
                    "restored tile r{} c{} has neither boxes nor background fill",
                    rec.row, rec.col
                )));
            }
        }
        let expected = (self.grid_rows * self.grid_cols) as usize;
        if self.tiles.len() != expected {
            let missing = (0..self.grid_rows)
                .flat_map(|r| (0..self.grid_cols).map(move |c| (r, c)))
                .find(|k| !seen.contains(k))
                .unwrap_or((0, 0));
            return Err(Error::IncompleteManifest {
                row: missing.0,
                col: missing.1,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn default_path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }
}

/// Cuts `image` into a non-overlapping grid of `tile_size` tiles. Edge tiles
/// keep their true (smaller) extent.
pub fn slice_slide(image: &RgbImage, tile_size: u32, slide_id: &str) -> Result<(TileSet, SlideManifest)> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::InvalidInput("cannot slice an empty image".into()));
    }
    if tile_size < MIN_TILE_SIZE {
        return Err(Error::InvalidConfig(format!(
            "tile size {tile_size} is below the minimum of {MIN_TILE_SIZE}"
        )));
    }
    let grid_rows = h.div_ceil(tile_size);
    let grid_cols = w.div_ceil(tile_size);
    let mut set = TileSet::new();
    for row in 0..grid_rows {
        for col in 0..grid_cols {
            let x = col * tile_size;
            let y = row * tile_size;
            let tw = tile_size.min(w - x);
            let th = tile_size.min(h - y);
            set.insert(Tile {
                slide_id: slide_id.to_string(),
                row,
                col,
                pixels: raster::crop(image, x, y, tw, th),
                native_size: tile_size,
                status: TileStatus::Unprocessed,
            });
        }
    }
    let manifest = SlideManifest::new(slide_id, tile_size, grid_rows, grid_cols);
    Ok((set, manifest))
}

/// Stitches tiles back into the full slide. Output size is recovered from the
/// unpadded edge tiles.
pub fn reassemble(tiles: &TileSet, manifest: &SlideManifest) -> Result<RgbImage> {
    for row in 0..manifest.grid_rows {
        for col in 0..manifest.grid_cols {
            if manifest.record(row, col).is_none() || tiles.get(row, col).is_none() {
                return Err(Error::IncompleteManifest { row, col });
            }
        }
    }
    let size = manifest.tile_size;
    let col_width = |c: u32| tiles.get(0, c).map(|t| t.pixels.width()).unwrap_or(0);
    let row_height = |r: u32| tiles.get(r, 0).map(|t| t.pixels.height()).unwrap_or(0);
    let width: u32 = (0..manifest.grid_cols).map(col_width).sum();
    let height: u32 = (0..manifest.grid_rows).map(row_height).sum();

    let mut out = RgbImage::new(width, height);
    for tile in tiles.iter() {
        if tile.row >= manifest.grid_rows || tile.col >= manifest.grid_cols {
            continue;
        }
        let expected = (col_width(tile.col), row_height(tile.row));
        let interior_ok = (tile.col + 1 == manifest.grid_cols || expected.0 == size)
            && (tile.row + 1 == manifest.grid_rows || expected.1 == size);
        if tile.pixels.dimensions() != expected || !interior_ok {
            return Err(Error::InvalidInput(format!(
                "tile r{} c{} is {:?}, expected {:?}",
                tile.row,
                tile.col,
                tile.pixels.dimensions(),
                expected
            )));
        }
        image::imageops::replace(
            &mut out,
            &tile.pixels,
            (tile.col * size) as i64,
            (tile.row * size) as i64,
        );
    }
    Ok(out)
}

/// Resamples the zero-padded model input of `tile` to `target` × `target`.
pub fn rescale_tile(tile: &Tile, target: u32) -> Result<RgbImage> {
    if target < MIN_RESCALE_TARGET {
        return Err(Error::InvalidConfig(format!(
            "rescale target {target} is below {MIN_RESCALE_TARGET}"
        )));
    }
    Ok(raster::resize_bilinear(&tile.model_input(), target, target))
}
