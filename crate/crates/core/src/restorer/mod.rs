//! Unpaired ink-to-clean translation. One cycle-consistent generator pair is
//! trained per tissue density; restoration repaints individual ink boxes and
//! leaves the rest of the tile untouched.

mod data;
mod model;
mod region;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detector::{BoundingBox, BoxClass};
use crate::error::{Error, Result};

pub use data::{domain_crops, DomainData};
pub use model::{train_restorer, EpochLoss, RestorerConfig, RestorerLog, RestorerWeights, CHECKPOINT_KIND};
pub use region::{cycle_consistency, restore_region};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    Sparse,
    Dense,
}

impl Density {
    pub const ALL: [Density; 2] = [Density::Sparse, Density::Dense];

    pub fn name(self) -> &'static str {
        match self {
            Density::Sparse => "sparse",
            Density::Dense => "dense",
        }
    }

    pub fn checkpoint_name(self) -> String {
        format!("restorer_{}.ckpt", self.name())
    }
}

impl fmt::Display for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Density {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(Density::Sparse),
            "dense" => Ok(Density::Dense),
            other => Err(Error::InvalidInput(format!("unknown density {other:?}"))),
        }
    }
}

/// A tile is dense when the detector found at least one cell cluster.
pub fn select_domain(boxes: &[BoundingBox]) -> Density {
    if boxes.iter().any(|b| b.cls == BoxClass::Cluster) {
        Density::Dense
    } else {
        Density::Sparse
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_follows_clusters() {
        let ink = BoundingBox::new(BoxClass::Ink, 0.0, 0.0, 4.0, 4.0, 0.9);
        let cluster = BoundingBox::new(BoxClass::Cluster, 0.0, 0.0, 4.0, 4.0, 0.3);
        assert_eq!(select_domain(&[]), Density::Sparse);
        assert_eq!(select_domain(&[ink]), Density::Sparse);
        assert_eq!(select_domain(&[ink, cluster]), Density::Dense);
        assert_eq!("dense".parse::<Density>().unwrap(), Density::Dense);
        assert_eq!(Density::Sparse.checkpoint_name(), "restorer_sparse.ckpt");
    }
}
