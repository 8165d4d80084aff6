use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxClass {
    Ink,
    Cluster,
}

impl BoxClass {
    pub const ALL: [BoxClass; 2] = [BoxClass::Ink, BoxClass::Cluster];

    pub fn index(self) -> usize {
        match self {
            BoxClass::Ink => 0,
            BoxClass::Cluster => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BoxClass::Ink => "ink",
            BoxClass::Cluster => "cluster",
        }
    }
}

impl fmt::Display for BoxClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoxClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ink" | "0" => Ok(BoxClass::Ink),
            "cluster" | "1" => Ok(BoxClass::Cluster),
            other => Err(Error::InvalidInput(format!("unknown box class {other:?}"))),
        }
    }
}

/// Axis-aligned box in tile pixel space (origin top-left, y downward).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cls: BoxClass,
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
    pub conf: f32,
}

impl BoundingBox {
    pub fn new(cls: BoxClass, x: f32, y: f32, w: f32, h: f32, conf: f32) -> Self {
        Self { cls, x, y, w, h, conf }
    }

    pub fn area(&self) -> f32 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn right(&self) -> f32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f32 {
        self.y + self.h
    }

    pub fn iou(&self, other: &BoundingBox) -> f32 {
        let ix = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let iy = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn is_within(&self, width: u32, height: u32) -> bool {
        self.x >= 0.0
            && self.y >= 0.0
            && self.w > 0.0
            && self.h > 0.0
            && self.right() <= width as f32
            && self.bottom() <= height as f32
    }

    /// Clips to `[0, width] × [0, height]`; `None` when nothing remains.
    pub fn clipped(&self, width: u32, height: u32) -> Option<BoundingBox> {
        let x0 = self.x.clamp(0.0, width as f32);
        let y0 = self.y.clamp(0.0, height as f32);
        let x1 = self.right().clamp(0.0, width as f32);
        let y1 = self.bottom().clamp(0.0, height as f32);
        (x1 > x0 && y1 > y0).then_some(BoundingBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
            ..*self
        })
    }

    /// Smallest integer pixel rectangle `(x0, y0, x1, y1)` (exclusive end)
    /// containing the box.
    pub fn pixel_bounds(&self) -> (i64, i64, i64, i64) {
        (
            self.x.floor() as i64,
            self.y.floor() as i64,
            self.right().ceil() as i64,
            self.bottom().ceil() as i64,
        )
    }
}

/// Greedy non-maximum suppression by descending confidence. Assumes a single
/// class; survivors have pairwise IoU strictly below `iou_threshold`.
pub fn nms(boxes: &[BoundingBox], iou_threshold: f32) -> Vec<BoundingBox> {
    let mut order: Vec<&BoundingBox> = boxes.iter().collect();
    order.sort_by(|a, b| b.conf.total_cmp(&a.conf));
    let mut keep: Vec<BoundingBox> = Vec::new();
    for b in order {
        if keep.iter().all(|k| k.iou(b) < iou_threshold) {
            keep.push(*b);
        }
    }
    keep
}

/// Runs [`nms`] independently per class; output is grouped by class.
pub fn nms_per_class(boxes: &[BoundingBox], iou_threshold: f32) -> Vec<BoundingBox> {
    BoxClass::ALL
        .iter()
        .flat_map(|&cls| {
            let of_class: Vec<_> = boxes.iter().filter(|b| b.cls == cls).copied().collect();
            nms(&of_class, iou_threshold)
        })
        .collect()
}

/// Serializes boxes as `cls cx cy w h` lines normalized by the tile size.
pub fn format_annotations(boxes: &[BoundingBox], width: u32, height: u32) -> String {
    let (w, h) = (width as f64, height as f64);
    let mut out = String::new();
    for b in boxes {
        let cx = (b.x as f64 + b.w as f64 / 2.0) / w;
        let cy = (b.y as f64 + b.h as f64 / 2.0) / h;
        out.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6}\n",
            b.cls.index(),
            cx,
            cy,
            b.w as f64 / w,
            b.h as f64 / h
        ));
    }
    out
}

pub fn parse_annotations(text: &str, width: u32, height: u32) -> Result<Vec<BoundingBox>> {
    let (w, h) = (width as f32, height as f32);
    let mut boxes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::InvalidInput(format!("annotation line {}: {line:?}", lineno + 1));
        if fields.len() != 5 {
            return Err(bad());
        }
        let cls: BoxClass = fields[0].parse()?;
        let nums: Vec<f32> = fields[1..]
            .iter()
            .map(|f| f.parse::<f32>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if nums.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(bad());
        }
        let (bw, bh) = (nums[2] * w, nums[3] * h);
        boxes.push(BoundingBox::new(
            cls,
            nums[0] * w - bw / 2.0,
            nums[1] * h - bh / 2.0,
            bw,
            bh,
            1.0,
        ));
    }
    Ok(boxes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ink(x: f32, y: f32, w: f32, h: f32, conf: f32) -> BoundingBox {
        BoundingBox::new(BoxClass::Ink, x, y, w, h, conf)
    }

    #[test]
    fn nms_cases() {
        assert!(nms(&[], 0.45).is_empty());
        let same = nms(&[ink(0., 0., 10., 10., 0.7), ink(0., 0., 10., 10., 0.9)], 0.45);
        assert_eq!(same, vec![ink(0., 0., 10., 10., 0.9)]);
        let disjoint = nms(&[ink(0., 0., 10., 10., 0.7), ink(50., 50., 10., 10., 0.9)], 0.45);
        assert_eq!(disjoint.len(), 2);
    }

    #[test]
    fn nms_heavy_overlap() {
        // 100x100 vs 100x100 shifted so IoU = 0.9: overlap w such that w/(200-w)=0.9
        let shift = 100.0 - 0.9 * 200.0 / 1.9;
        let a = ink(0., 0., 100., 100., 0.9);
        let b = ink(shift, 0., 100., 100., 0.8);
        assert!((a.iou(&b) - 0.9).abs() < 1e-4);
        assert_eq!(nms(&[a, b], 0.45), vec![a]);
    }

    #[test]
    fn clipping() {
        let b = ink(-5., 10., 20., 200., 0.5).clipped(100, 100).unwrap();
        assert_eq!((b.x, b.y, b.w, b.h), (0., 10., 15., 90.));
        assert!(ink(150., 0., 10., 10., 1.).clipped(100, 100).is_none());
    }

    #[test]
    fn annotation_text_round_trip() {
        let boxes = vec![
            ink(10., 20., 30., 40., 1.0),
            BoundingBox::new(BoxClass::Cluster, 0., 0., 256., 128., 1.0),
        ];
        let text = format_annotations(&boxes, 256, 256);
        assert!(text.starts_with("0 0.097656 0.156250 0.117188 0.156250"));
        let back = parse_annotations(&text, 256, 256).unwrap();
        for (a, b) in boxes.iter().zip(&back) {
            assert_eq!(a.cls, b.cls);
            assert!((a.x - b.x).abs() < 1e-3 && (a.w - b.w).abs() < 1e-3);
        }
        assert!(parse_annotations("0 0.5 0.5 0.1", 10, 10).is_err());
        assert!(parse_annotations("2 0.5 0.5 0.1 0.1", 10, 10).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0f32..200., 0f32..200., 1f32..80., 1f32..80., 0f32..1.).prop_map(|(x, y, w, h, c)| ink(x, y, w, h, c))
    }

    proptest! {
        #[test]
        fn nms_is_idempotent(boxes in prop::collection::vec(arb_box(), 0..30), thr in 0.1f32..0.9) {
            let once = nms(&boxes, thr);
            prop_assert_eq!(nms(&once, thr), once.clone());
            for (i, a) in once.iter().enumerate() {
                for b in &once[i + 1..] {
                    prop_assert!(a.iou(b) < thr);
                }
            }
        }
    }
}
