use rand::Rng;

use super::region::{expanded_bounds, MARGIN};
use super::Density;
use crate::error::{Error, Result};
use crate::nn;
use crate::raster::{self, RgbImage};
use crate::simulator::BenchmarkPair;

/// Unpaired training crops: domain A is inked, domain B is clean.
#[derive(Debug, Clone, Default)]
pub struct DomainData {
    pub inked: Vec<RgbImage>,
    pub clean: Vec<RgbImage>,
}

impl DomainData {
    pub fn check(&self) -> Result<()> {
        if self.inked.is_empty() || self.clean.is_empty() {
            return Err(Error::DegenerateDataset(format!(
                "restorer needs both domains ({} inked, {} clean crops)",
                self.inked.len(),
                self.clean.len()
            )));
        }
        Ok(())
    }
}

/// Builds both domains from the foreground pairs of one density (the
/// restorer never sees background-only tiles). Domain A holds every
/// ink box expanded by the restoration margin and reflection-padded to a
/// square; domain B holds one clean crop of matching size per ink crop,
/// drawn from a random clean tile at a random position.
pub fn domain_crops(pairs: &[BenchmarkPair], density: Density, seed: u64) -> DomainData {
    let mut rng = nn::seeded_rng(seed);
    let pool: Vec<&BenchmarkPair> = pairs.iter().filter(|p| p.density == density && p.foreground).collect();
    let mut data = DomainData::default();
    for pair in &pool {
        let (w, h) = pair.inked.dimensions();
        for b in pair.ink_boxes() {
            let Some((x0, y0, x1, y1)) = expanded_bounds(b, w, h, MARGIN) else {
                continue;
            };
            let crop = raster::crop(&pair.inked, x0, y0, x1 - x0, y1 - y0);
            data.inked.push(raster::reflect_pad_square(&crop).0);

            let donor = pool[rng.random_range(0..pool.len())];
            let (dw, dh) = donor.clean.dimensions();
            let (cw, ch) = ((x1 - x0).min(dw), (y1 - y0).min(dh));
            let cx = rng.random_range(0..=dw - cw);
            let cy = rng.random_range(0..=dh - ch);
            let crop = raster::crop(&donor.clean, cx, cy, cw, ch);
            data.clean.push(raster::reflect_pad_square(&crop).0);
        }
    }
    data
}
