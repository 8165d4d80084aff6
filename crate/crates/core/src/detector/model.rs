use std::collections::BTreeMap;
use std::path::Path;

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::boxes::{nms_per_class, BoundingBox, BoxClass};
use crate::error::{Error, Result};
use crate::nn::{self, Conv2d, Init, ParamStore};
use crate::raster::{self, RgbImage};
use crate::simulator::BenchmarkPair;
use crate::tiles::Tile;

pub const CHECKPOINT_KIND: &str = "detector";
pub const CHECKPOINT_NAME: &str = "detector.ckpt";
/// Output strides of the three prediction levels.
pub const STRIDES: [usize; 3] = [8, 16, 32];
/// Reference box side of a level, in multiples of its stride.
const ANCHOR_SCALE: f32 = 4.0;
/// Per cell: objectness, one logit per class, four box terms.
const OUTPUTS: usize = 1 + 2 + 4;
/// Positive cells lie within this many strides of a box centre.
const CENTRE_RADIUS: f32 = 1.5;
const MAX_LOG_SIZE: f32 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub input_size: u32,
    pub conf_threshold: f32,
    pub nms_iou: f32,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Random horizontal and vertical flips during training.
    pub augment: bool,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            input_size: 512,
            conf_threshold: 0.25,
            nms_iou: 0.45,
            iterations: 6000,
            batch_size: 8,
            learning_rate: 1e-3,
            augment: true,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let coarsest = *STRIDES.last().unwrap() as u32;
        if self.input_size < coarsest || !self.input_size.is_multiple_of(coarsest) {
            return Err(Error::InvalidConfig(format!(
                "detector input size {} must be a positive multiple of {coarsest}",
                self.input_size
            )));
        }
        if !(0.0..=1.0).contains(&self.conf_threshold) || !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::InvalidConfig("thresholds must lie in [0, 1]".into()));
        }
        if self.iterations == 0 || self.batch_size == 0 || !(self.learning_rate.is_finite() && self.learning_rate > 0.0)
        {
            return Err(Error::InvalidConfig(
                "iterations, batch size and learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A training image with its ground-truth boxes in the image's pixel space.
#[derive(Debug, Clone)]
pub struct DetectionSample {
    pub image: RgbImage,
    pub boxes: Vec<BoundingBox>,
}

impl From<&BenchmarkPair> for DetectionSample {
    fn from(pair: &BenchmarkPair) -> Self {
        Self {
            image: pair.inked.clone(),
            boxes: pair.boxes.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorLog {
    /// `(iteration, mean loss over the preceding window)`.
    pub losses: Vec<(usize, f64)>,
}

impl DetectorLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for (i, l) in &self.losses {
            out.push_str(&format!("{i},{l:.6}\n"));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Detector {
    cfg: DetectorConfig,
    store: ParamStore,
    stem: Vec<Conv2d>,
    levels: Vec<(Conv2d, Conv2d)>,
    heads: Vec<Conv2d>,
    trained: bool,
}

pub fn build_detector(cfg: &DetectorConfig) -> Result<Detector> {
    cfg.validate()?;
    let mut rng = nn::seeded_rng(cfg.seed);
    let mut store = ParamStore::new();
    let stem = vec![
        Conv2d::new(&mut store, "stem1", 3, 16, 3, 2, 1, Init::He, &mut rng)?,
        Conv2d::new(&mut store, "stem2", 16, 32, 3, 2, 1, Init::He, &mut rng)?,
    ];
    let mut levels = Vec::new();
    let mut heads = Vec::new();
    let mut in_ch = 32;
    for (i, _) in STRIDES.iter().enumerate() {
        let down = Conv2d::new(
            &mut store,
            &format!("level{i}.down"),
            in_ch,
            64,
            3,
            2,
            1,
            Init::He,
            &mut rng,
        )?;
        let body = Conv2d::new(
            &mut store,
            &format!("level{i}.body"),
            64,
            64,
            3,
            1,
            1,
            Init::He,
            &mut rng,
        )?;
        levels.push((down, body));
        heads.push(Conv2d::new(
            &mut store,
            &format!("head{i}"),
            64,
            OUTPUTS,
            1,
            1,
            0,
            Init::Normal(0.01),
            &mut rng,
        )?);
        in_ch = 64;
    }
    Ok(Detector {
        cfg: cfg.clone(),
        store,
        stem,
        levels,
        heads,
        trained: false,
    })
}

/// One grid cell of one level, in model-input pixels.
#[derive(Debug, Clone, Copy)]
struct Cell {
    cx: f32,
    cy: f32,
    stride: f32,
    level: usize,
}

fn cells(input: usize) -> Vec<Cell> {
    let mut out = Vec::new();
    for (level, &s) in STRIDES.iter().enumerate() {
        let n = input / s;
        for gy in 0..n {
            for gx in 0..n {
                out.push(Cell {
                    cx: (gx as f32 + 0.5) * s as f32,
                    cy: (gy as f32 + 0.5) * s as f32,
                    stride: s as f32,
                    level,
                });
            }
        }
    }
    out
}

fn level_for(b: &BoundingBox) -> usize {
    let side = b.w.max(b.h).max(1.0);
    (0..STRIDES.len())
        .min_by(|&a, &c| {
            let da = (side / (ANCHOR_SCALE * STRIDES[a] as f32)).ln().abs();
            let dc = (side / (ANCHOR_SCALE * STRIDES[c] as f32)).ln().abs();
            da.total_cmp(&dc)
        })
        .unwrap()
}

/// Per-cell targets for one image: `Some((class, [tx, ty, tw, th]))` for
/// positive cells.
fn assign(cells: &[Cell], boxes: &[BoundingBox]) -> Vec<Option<(u32, [f32; 4])>> {
    let mut owner: Vec<Option<(f32, usize)>> = vec![None; cells.len()];
    for (bi, b) in boxes.iter().enumerate() {
        let level = level_for(b);
        let (bcx, bcy) = (b.x + b.w / 2.0, b.y + b.h / 2.0);
        let mut nearest: Option<(f32, usize)> = None;
        let mut any = false;
        for (ci, c) in cells.iter().enumerate().filter(|(_, c)| c.level == level) {
            let d = ((c.cx - bcx) / c.stride).abs().max(((c.cy - bcy) / c.stride).abs());
            if nearest.is_none_or(|(nd, _)| d < nd) {
                nearest = Some((d, ci));
            }
            let inside = c.cx >= b.x && c.cx <= b.right() && c.cy >= b.y && c.cy <= b.bottom();
            if d <= CENTRE_RADIUS && inside {
                any = true;
                claim(&mut owner[ci], b.area(), bi);
            }
        }
        if !any {
            if let Some((_, ci)) = nearest {
                claim(&mut owner[ci], b.area(), bi);
            }
        }
    }
    owner
        .iter()
        .zip(cells)
        .map(|(o, c)| {
            o.map(|(_, bi)| {
                let b = &boxes[bi];
                let anchor = ANCHOR_SCALE * c.stride;
                let t = [
                    (b.x + b.w / 2.0 - c.cx) / c.stride,
                    (b.y + b.h / 2.0 - c.cy) / c.stride,
                    (b.w.max(1.0) / anchor).ln(),
                    (b.h.max(1.0) / anchor).ln(),
                ];
                (b.cls.index() as u32, t)
            })
        })
        .collect()
}

/// Overlapping assignments go to the smaller box.
fn claim(slot: &mut Option<(f32, usize)>, area: f32, bi: usize) {
    if slot.is_none_or(|(a, _)| area < a) {
        *slot = Some((area, bi));
    }
}

fn flip_image(img: &RgbImage, horizontal: bool) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w, h, |x, y| {
        if horizontal {
            *img.get_pixel(w - 1 - x, y)
        } else {
            *img.get_pixel(x, h - 1 - y)
        }
    })
}

fn flip_box(b: &BoundingBox, size: f32, horizontal: bool) -> BoundingBox {
    let mut out = *b;
    if horizontal {
        out.x = size - b.right();
    } else {
        out.y = size - b.bottom();
    }
    out
}

/// Logistic loss on logits, elementwise.
fn bce_with_logits(x: &Tensor, target: &Tensor) -> Result<Tensor> {
    let softplus = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok(((x.relu()? - (x * target)?)? + softplus)?)
}

impl Detector {
    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    pub fn classes(&self) -> [BoxClass; 2] {
        BoxClass::ALL
    }

    /// Raw predictions `(N, cells, 7)` over all levels, coarse cells last.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for conv in &self.stem {
            h = nn::leaky_relu(&conv.forward(&h)?, 0.1)?;
        }
        let mut outs = Vec::new();
        for ((down, body), head) in self.levels.iter().zip(&self.heads) {
            h = nn::leaky_relu(&down.forward(&h)?, 0.1)?;
            h = nn::leaky_relu(&body.forward(&h)?, 0.1)?;
            let p = head.forward(&h)?;
            let (n, c, gh, gw) = p.dims4()?;
            outs.push(p.reshape((n, c, gh * gw))?.transpose(1, 2)?);
        }
        Ok(Tensor::cat(&outs, 1)?)
    }

    /// Square model input and the factor mapping model pixels back to the
    /// original image.
    fn prepare(&self, img: &RgbImage) -> (RgbImage, f32) {
        let side = img.width().max(img.height());
        let sq = if img.width() == img.height() {
            img.clone()
        } else {
            raster::pad_zero(img, side, side)
        };
        let s = self.cfg.input_size;
        (raster::resize_bilinear(&sq, s, s), side as f32 / s as f32)
    }

    fn decode(&self, pred: &[Vec<f32>], scale: f32) -> Vec<BoundingBox> {
        let cells = cells(self.cfg.input_size as usize);
        let sigmoid = |v: f32| 1.0 / (1.0 + (-v).exp());
        let mut out = Vec::new();
        for (c, p) in cells.iter().zip(pred) {
            let obj = sigmoid(p[0]);
            let (l0, l1) = (p[1], p[2]);
            let m = l0.max(l1);
            let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
            let (cls, pc) = if e1 > e0 {
                (BoxClass::Cluster, e1 / (e0 + e1))
            } else {
                (BoxClass::Ink, e0 / (e0 + e1))
            };
            let conf = obj * pc;
            if conf < self.cfg.conf_threshold {
                continue;
            }
            let anchor = ANCHOR_SCALE * c.stride;
            let cx = c.cx + p[3] * c.stride;
            let cy = c.cy + p[4] * c.stride;
            let w = anchor * p[5].clamp(-MAX_LOG_SIZE, MAX_LOG_SIZE).exp();
            let h = anchor * p[6].clamp(-MAX_LOG_SIZE, MAX_LOG_SIZE).exp();
            out.push(BoundingBox::new(
                cls,
                (cx - w / 2.0) * scale,
                (cy - h / 2.0) * scale,
                w * scale,
                h * scale,
                conf,
            ));
        }
        out
    }

    /// Boxes in `img` pixel space, clipped, thresholded and suppressed per
    /// class, highest confidence first.
    pub fn detect_image(&self, img: &RgbImage) -> Result<Vec<BoundingBox>> {
        if !self.trained {
            return Err(Error::ModelNotReady("detector has not been trained".into()));
        }
        let (input, scale) = self.prepare(img);
        let x = nn::images_to_tensor(&[&input], 0.0, 1.0)?;
        let pred = self.forward(&x)?.squeeze(0)?.to_vec2::<f32>()?;
        let (w, h) = img.dimensions();
        let raw: Vec<BoundingBox> = self
            .decode(&pred, scale)
            .into_iter()
            .filter_map(|b| b.clipped(w, h))
            .collect();
        Ok(nms_per_class(&raw, self.cfg.nms_iou))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if !self.trained {
            return Err(Error::ModelNotReady(
                "refusing to checkpoint an untrained detector".into(),
            ));
        }
        let classes: Vec<&str> = BoxClass::ALL.iter().map(|c| c.name()).collect();
        let meta = BTreeMap::from([
            ("config".to_string(), serde_json::to_string(&self.cfg)?),
            ("classes".to_string(), serde_json::to_string(&classes)?),
        ]);
        nn::save_checkpoint(path, CHECKPOINT_KIND, self.store.named_tensors(), meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = nn::load_checkpoint(path, CHECKPOINT_KIND)?;
        let cfg: DetectorConfig = serde_json::from_str(ck.meta("config", path)?)?;
        let classes: Vec<String> = serde_json::from_str(ck.meta("classes", path)?)?;
        let expected: Vec<&str> = BoxClass::ALL.iter().map(|c| c.name()).collect();
        if classes != expected {
            return Err(Error::ArchitectureMismatch(format!(
                "checkpoint classes {classes:?}, expected {expected:?}"
            )));
        }
        let mut det = build_detector(&cfg)?;
        det.store.load(&ck.tensors, "")?;
        det.trained = true;
        Ok(det)
    }
}

/// Detects ink and cluster boxes on one tile, in the tile's native pixel
/// space.
pub fn detect(model: &Detector, tile: &Tile) -> Result<Vec<BoundingBox>> {
    model.detect_image(&tile.pixels)
}

/// Trains a fresh detector on annotated images. Requires at least two
/// annotated images for each class.
pub fn train_detector(dataset: &[DetectionSample], cfg: &DetectorConfig) -> Result<(Detector, DetectorLog)> {
    cfg.validate()?;
    for cls in BoxClass::ALL {
        let n = dataset.iter().filter(|s| s.boxes.iter().any(|b| b.cls == cls)).count();
        if n < 2 {
            return Err(Error::DegenerateDataset(format!(
                "class {cls} is annotated on {n} images, need at least 2"
            )));
        }
    }
    let mut det = build_detector(cfg)?;
    let s = cfg.input_size as usize;
    let cells = cells(s);
    let n_cells = cells.len();
    let prepared: Vec<(RgbImage, Vec<BoundingBox>)> = dataset
        .iter()
        .map(|sample| {
            let (img, scale) = det.prepare(&sample.image);
            let boxes = sample
                .boxes
                .iter()
                .map(|b| BoundingBox::new(b.cls, b.x / scale, b.y / scale, b.w / scale, b.h / scale, 1.0))
                .collect();
            (img, boxes)
        })
        .collect();

    let mut opt = AdamW::new(
        det.store.vars(),
        ParamsAdamW {
            lr: cfg.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut rng = nn::seeded_rng(cfg.seed ^ 0xde7);
    let mut order: Vec<usize> = Vec::new();
    let mut log = DetectorLog::default();
    let window = (cfg.iterations / 50).max(1);
    let mut running = 0.0;
    let dev = nn::device();
    for iter in 1..=cfg.iterations {
        let mut imgs = Vec::with_capacity(cfg.batch_size);
        let mut obj_t = vec![0f32; cfg.batch_size * n_cells];
        let mut obj_w = vec![0f32; cfg.batch_size * n_cells];
        let mut pos_idx = Vec::new();
        let mut pos_cls = Vec::new();
        let mut pos_box = Vec::new();
        for bi in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..prepared.len()).collect();
                order.shuffle(&mut rng);
            }
            let (img, boxes) = &prepared[order.pop().unwrap()];
            let (mut img, mut boxes) = (img.clone(), boxes.clone());
            if cfg.augment {
                for horizontal in [true, false] {
                    if rng.random_bool(0.5) {
                        img = flip_image(&img, horizontal);
                        boxes = boxes.iter().map(|b| flip_box(b, s as f32, horizontal)).collect();
                    }
                }
            }
            let targets = assign(&cells, &boxes);
            let n_pos = targets.iter().filter(|t| t.is_some()).count();
            let (wp, wn) = (1.0 / n_pos.max(1) as f32, 1.0 / (n_cells - n_pos).max(1) as f32);
            for (ci, t) in targets.iter().enumerate() {
                let k = bi * n_cells + ci;
                match t {
                    Some((cls, tb)) => {
                        obj_t[k] = 1.0;
                        obj_w[k] = wp;
                        pos_idx.push(k as u32);
                        pos_cls.push(*cls);
                        pos_box.extend_from_slice(tb);
                    }
                    None => obj_w[k] = wn,
                }
            }
            imgs.push(img);
        }
        let refs: Vec<&RgbImage> = imgs.iter().collect();
        let x = nn::images_to_tensor(&refs, 0.0, 1.0)?;
        let pred = det.forward(&x)?.reshape((cfg.batch_size * n_cells, OUTPUTS))?;
        let obj = pred.narrow(1, 0, 1)?.squeeze(1)?;
        let obj_t = Tensor::new(obj_t, &dev)?;
        let obj_w = Tensor::new(obj_w, &dev)?;
        let mut loss = (bce_with_logits(&obj, &obj_t)? * obj_w)?.sum_all()?;
        if !pos_idx.is_empty() {
            let n_pos = pos_idx.len();
            let pos = pred.index_select(&Tensor::new(pos_idx, &dev)?, 0)?;
            let cls_loss = candle_nn::loss::cross_entropy(&pos.narrow(1, 1, 2)?, &Tensor::new(pos_cls, &dev)?)?;
            let box_t = Tensor::from_vec(pos_box, (n_pos, 4), &dev)?;
            let box_loss = (pos.narrow(1, 3, 4)? - box_t)?.abs()?.sum(1)?.mean_all()?;
            loss = ((loss + cls_loss)? + box_loss)?;
        }
        loss = (loss / cfg.batch_size as f64)?;
        opt.backward_step(&loss)?;
        running += loss.to_scalar::<f32>()? as f64;
        if iter % window == 0 {
            log::debug!("detector iteration {iter}: loss {:.4}", running / window as f64);
            log.losses.push((iter, running / window as f64));
            running = 0.0;
        }
    }
    det.trained = true;
    Ok((det, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_covers_all_levels() {
        let cfg = DetectorConfig {
            input_size: 64,
            ..Default::default()
        };
        let det = build_detector(&cfg).unwrap();
        let x = Tensor::zeros((2, 3, 64, 64), candle_core::DType::F32, &nn::device()).unwrap();
        let out = det.forward(&x).unwrap();
        assert_eq!(out.dims(), &[2, 64 + 16 + 4, OUTPUTS]);
        assert_eq!(cells(64).len(), 84);
    }

    #[test]
    fn boxes_go_to_size_matched_levels() {
        let b = |side: f32| BoundingBox::new(BoxClass::Ink, 0.0, 0.0, side, side, 1.0);
        assert_eq!(level_for(&b(20.0)), 0);
        assert_eq!(level_for(&b(64.0)), 1);
        assert_eq!(level_for(&b(300.0)), 2);
    }

    #[test]
    fn assigned_targets_decode_back_to_the_box() {
        let cells = cells(128);
        let gt = BoundingBox::new(BoxClass::Cluster, 30.0, 40.0, 50.0, 36.0, 1.0);
        let targets = assign(&cells, &[gt]);
        let positives: Vec<_> = targets
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.map(|t| (i, t)))
            .collect();
        assert!(!positives.is_empty());
        let det = Detector {
            trained: true,
            cfg: DetectorConfig {
                input_size: 128,
                conf_threshold: 0.0,
                ..Default::default()
            },
            ..build_detector(&DetectorConfig {
                input_size: 128,
                ..Default::default()
            })
            .unwrap()
        };
        for (ci, (cls, t)) in positives {
            assert_eq!(cls, 1);
            let mut pred = vec![vec![-20.0f32; OUTPUTS]; cells.len()];
            pred[ci] = vec![20.0, -5.0, 5.0, t[0], t[1], t[2], t[3]];
            let boxes = det.decode(&pred, 1.0);
            let hit = boxes.iter().find(|b| b.conf > 0.9).unwrap();
            assert_eq!(hit.cls, BoxClass::Cluster);
            assert!(hit.iou(&gt) > 0.999);
        }
    }

    #[test]
    fn tiny_box_still_gets_a_cell() {
        let cells = cells(64);
        let gt = BoundingBox::new(BoxClass::Ink, 10.2, 10.2, 1.0, 1.0, 1.0);
        assert_eq!(assign(&cells, &[gt]).iter().filter(|t| t.is_some()).count(), 1);
    }

    #[test]
    fn flips_are_involutions() {
        let b = BoundingBox::new(BoxClass::Ink, 5.0, 7.0, 10.0, 3.0, 1.0);
        for h in [true, false] {
            assert_eq!(flip_box(&flip_box(&b, 64.0, h), 64.0, h), b);
        }
        let img = RgbImage::from_fn(5, 4, |x, y| image::Rgb([x as u8, y as u8, 0]));
        assert_eq!(flip_image(&flip_image(&img, true), true), img);
        assert_eq!(*flip_image(&img, false).get_pixel(0, 0), image::Rgb([0, 3, 0]));
    }

    #[test]
    fn missing_class_is_degenerate() {
        let data = vec![
            DetectionSample {
                image: RgbImage::new(64, 64),
                boxes: vec![BoundingBox::new(BoxClass::Ink, 1.0, 1.0, 5.0, 5.0, 1.0)],
            };
            4
        ];
        let cfg = DetectorConfig {
            input_size: 64,
            ..Default::default()
        };
        assert!(matches!(train_detector(&data, &cfg), Err(Error::DegenerateDataset(_))));
    }

    #[test]
    fn untrained_detector_refuses() {
        let det = build_detector(&DetectorConfig {
            input_size: 64,
            ..Default::default()
        })
        .unwrap();
        assert!(matches!(
            det.detect_image(&RgbImage::new(64, 64)),
            Err(Error::ModelNotReady(_))
        ));
    }
}
