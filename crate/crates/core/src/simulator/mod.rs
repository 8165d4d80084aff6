//! Simulated marker-ink contamination of clean tiles, producing paired
//! ground truth for every downstream stage.

mod benchmark;
pub mod font;
mod ink;
mod mask;
mod tissue;

pub use benchmark::{
    build_benchmark, random_spec, Benchmark, BenchmarkPair, BENCHMARK_INDEX, FOREGROUND_TISSUE_FRACTION,
};
pub use ink::{apply_ink, Cmyk};
pub use mask::{
    generate_mask, InkColor, InkPattern, InkSpec, Mask, MAX_MASK_FRACTION, MAX_OPACITY, MIN_MASK_FRACTION, MIN_OPACITY,
};
pub use tissue::{
    synthesize_clean_tiles, synthesize_tissue, tissue_mask, CleanTile, TissueParams, TISSUE_LUMA_THRESHOLD,
};
