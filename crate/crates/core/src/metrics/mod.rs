//! Full-reference quality metrics on the BT.601 luma channel and the
//! inked-vs-restored evaluation report.

mod filter;
mod psnr;
mod report;
mod ssim;
mod vif;

pub use psnr::{mse, psnr, psnr_planes};
pub use report::{evaluate_restoration, MetricConstants, QualityMeans, QualityReport, QualityRow, REPORT_COLUMNS};
pub use ssim::{ssim, ssim_planes, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use vif::{vif, vif_planes, VIF_NOISE_VARIANCE, VIF_SCALES};

use crate::error::{Error, Result};
use crate::raster::{self, Plane, RgbImage};

/// 8-bit dynamic range.
pub const PEAK: f64 = 255.0;

pub(crate) fn luma_pair(reference: &RgbImage, test: &RgbImage) -> Result<(Plane, Plane)> {
    if reference.dimensions() != test.dimensions() {
        return Err(Error::InvalidInput(format!(
            "image dimensions differ: {:?} vs {:?}",
            reference.dimensions(),
            test.dimensions()
        )));
    }
    if reference.width() == 0 || reference.height() == 0 {
        return Err(Error::InvalidInput("empty image".into()));
    }
    Ok((raster::luma(reference), raster::luma(test)))
}
