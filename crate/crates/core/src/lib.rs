//! inkwash: removal of pathologist marker ink from whole-slide histology
//! images.
//!
//! A slide is cut into tiles; a two-stage CNN flags inked tiles and separates
//! background-only ink (replaced by a fill colour) from ink over tissue; a
//! single-shot detector localizes ink and dense cell clusters; a pair of
//! cycle-consistent translators (one for sparse, one for dense tissue)
//! repaints the ink boxes. A CMYK ink simulator provides paired ground truth
//! and the full-reference metrics score the result.

pub mod classifier;
pub mod detector;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod restorer;
pub mod simulator;
pub mod tiles;

pub use detector::{BoundingBox, BoxClass};
pub use error::{Error, Result};
pub use metrics::{QualityReport, QualityRow};
pub use raster::RgbImage;
pub use restorer::Density;
pub use tiles::{SlideManifest, Tile, TileSet, TileStatus};
