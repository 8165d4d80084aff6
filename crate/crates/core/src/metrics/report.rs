use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{luma_pair, psnr_planes, ssim_planes, vif_planes};
use crate::error::{Error, Result};
use crate::raster::RgbImage;
use crate::simulator::BenchmarkPair;

pub const REPORT_COLUMNS: [&str; 7] = [
    "tile_id",
    "psnr_inked",
    "psnr_restored",
    "ssim_inked",
    "ssim_restored",
    "vif_inked",
    "vif_restored",
];

/// JSON has no infinity; non-finite values are written as strings.
mod lenient_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn to_repr(v: f64) -> String {
        if v.is_nan() {
            "nan".into()
        } else if v == f64::INFINITY {
            "inf".into()
        } else if v == f64::NEG_INFINITY {
            "-inf".into()
        } else {
            v.to_string()
        }
    }

    fn from_repr(r: Repr) -> Result<f64, String> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => other.parse().map_err(|_| format!("bad number {other:?}")),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Num(*v).serialize(s)
        } else {
            Repr::Text(to_repr(*v)).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?).map_err(serde::de::Error::custom)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(v) => super::serialize(v, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<Repr>::deserialize(d)?
                .map(|r| from_repr(r).map_err(serde::de::Error::custom))
                .transpose()
        }
    }
}

/// Metrics of one tile; restored columns are absent when the tile was not
/// restored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub tile_id: String,
    #[serde(with = "lenient_f64")]
    pub psnr_inked: f64,
    #[serde(with = "lenient_f64::option")]
    pub psnr_restored: Option<f64>,
    #[serde(with = "lenient_f64")]
    pub ssim_inked: f64,
    #[serde(with = "lenient_f64::option")]
    pub ssim_restored: Option<f64>,
    #[serde(with = "lenient_f64")]
    pub vif_inked: f64,
    #[serde(with = "lenient_f64::option")]
    pub vif_restored: Option<f64>,
}

impl QualityRow {
    pub fn score(
        tile_id: impl Into<String>,
        clean: &RgbImage,
        inked: &RgbImage,
        restored: Option<&RgbImage>,
    ) -> Result<Self> {
        let (c, i) = luma_pair(clean, inked)?;
        let r = restored.map(|r| luma_pair(clean, r).map(|(_, r)| r)).transpose()?;
        Ok(QualityRow {
            tile_id: tile_id.into(),
            psnr_inked: psnr_planes(&c, &i)?,
            psnr_restored: r.as_ref().map(|r| psnr_planes(&c, r)).transpose()?,
            ssim_inked: ssim_planes(&c, &i)?,
            ssim_restored: r.as_ref().map(|r| ssim_planes(&c, r)).transpose()?,
            vif_inked: vif_planes(&c, &i)?,
            vif_restored: r.as_ref().map(|r| vif_planes(&c, r)).transpose()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityMeans {
    /// Number of rows averaged (rows carrying restored columns).
    pub tiles: usize,
    #[serde(with = "lenient_f64")]
    pub psnr_inked: f64,
    #[serde(with = "lenient_f64")]
    pub psnr_restored: f64,
    #[serde(with = "lenient_f64")]
    pub ssim_inked: f64,
    #[serde(with = "lenient_f64")]
    pub ssim_restored: f64,
    #[serde(with = "lenient_f64")]
    pub vif_inked: f64,
    #[serde(with = "lenient_f64")]
    pub vif_restored: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConstants {
    pub channel: String,
    pub peak: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    pub vif_domain: String,
    pub vif_scales: usize,
    pub vif_noise_variance: f64,
}

impl Default for MetricConstants {
    fn default() -> Self {
        Self {
            channel: "luma (ITU-R BT.601)".into(),
            peak: super::PEAK,
            ssim_window: super::SSIM_WINDOW,
            ssim_sigma: super::SSIM_SIGMA,
            ssim_k1: super::SSIM_K1,
            ssim_k2: super::SSIM_K2,
            vif_domain: "pixel".into(),
            vif_scales: super::VIF_SCALES,
            vif_noise_variance: super::VIF_NOISE_VARIANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub constants: MetricConstants,
    pub rows: Vec<QualityRow>,
    /// `None` when no row carries restored columns.
    pub means: Option<QualityMeans>,
}

impl QualityReport {
    pub fn from_rows(rows: Vec<QualityRow>) -> Self {
        let done: Vec<&QualityRow> = rows.iter().filter(|r| r.psnr_restored.is_some()).collect();
        let means = (!done.is_empty()).then(|| {
            let n = done.len() as f64;
            let mean = |f: &dyn Fn(&QualityRow) -> f64| done.iter().map(|r| f(r)).sum::<f64>() / n;
            QualityMeans {
                tiles: done.len(),
                psnr_inked: mean(&|r| r.psnr_inked),
                psnr_restored: mean(&|r| r.psnr_restored.unwrap_or(f64::NAN)),
                ssim_inked: mean(&|r| r.ssim_inked),
                ssim_restored: mean(&|r| r.ssim_restored.unwrap_or(f64::NAN)),
                vif_inked: mean(&|r| r.vif_inked),
                vif_restored: mean(&|r| r.vif_restored.unwrap_or(f64::NAN)),
            }
        });
        Self {
            constants: MetricConstants::default(),
            rows,
            means,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = REPORT_COLUMNS.join(",");
        out.push('\n');
        let opt = |v: Option<f64>| v.map(lenient_f64::to_repr).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.tile_id,
                lenient_f64::to_repr(r.psnr_inked),
                opt(r.psnr_restored),
                lenient_f64::to_repr(r.ssim_inked),
                opt(r.ssim_restored),
                lenient_f64::to_repr(r.vif_inked),
                opt(r.vif_restored),
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Human-readable table: one row per tile, inked/restored pairs per metric.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} | {:>7} {:>8} | {:>6} {:>8} | {:>6} {:>8}",
            "Tile", "PSNR", "", "SSIM", "", "VIF", ""
        );
        let _ = writeln!(
            out,
            "{:<16} | {:>7} {:>8} | {:>6} {:>8} | {:>6} {:>8}",
            "", "Inked", "Restored", "Inked", "Restored", "Inked", "Restored"
        );
        let cell = |v: Option<f64>, w: usize| match v {
            Some(v) => format!("{v:>w$.2}"),
            None => format!("{:>w$}", "-"),
        };
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<16} | {} {} | {} {} | {} {}",
                r.tile_id,
                cell(Some(r.psnr_inked), 7),
                cell(r.psnr_restored, 8),
                cell(Some(r.ssim_inked), 6),
                cell(r.ssim_restored, 8),
                cell(Some(r.vif_inked), 6),
                cell(r.vif_restored, 8),
            );
        }
        if let Some(m) = &self.means {
            let _ = writeln!(
                out,
                "{:<16} | {} {} | {} {} | {} {}",
                format!("mean (n={})", m.tiles),
                cell(Some(m.psnr_inked), 7),
                cell(Some(m.psnr_restored), 8),
                cell(Some(m.ssim_inked), 6),
                cell(Some(m.ssim_restored), 8),
                cell(Some(m.vif_inked), 6),
                cell(Some(m.vif_restored), 8),
            );
        }
        out
    }
}

/// Scores each benchmark pair against its clean ground truth; `restored[i]`
/// is `None` for tiles that were not restored.
pub fn evaluate_restoration(benchmark: &[BenchmarkPair], restored: &[Option<RgbImage>]) -> Result<QualityReport> {
    if benchmark.len() != restored.len() {
        return Err(Error::InvalidInput(format!(
            "{} benchmark pairs but {} restored entries",
            benchmark.len(),
            restored.len()
        )));
    }
    let rows = benchmark
        .par_iter()
        .zip(restored.par_iter())
        .map(|(pair, rest)| QualityRow::score(pair.id.clone(), &pair.clean, &pair.inked, rest.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(QualityReport::from_rows(rows))
}
