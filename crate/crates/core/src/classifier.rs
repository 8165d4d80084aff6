//! Two-stage binary tile classifier. Stage one separates inked from clean
//! tiles; stage two separates ink confined to empty slide background from ink
//! on tissue. Both stages share one compact CNN architecture.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use candle_core::{Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Conv2d, Init, Linear, ParamStore};
use crate::raster::{self, RgbImage};
use crate::simulator::Benchmark;
use crate::tiles::{rescale_tile, Tile};

pub const CHECKPOINT_KIND: &str = "classifier";
const CHANNELS: [usize; 4] = [16, 32, 64, 64];
const HIDDEN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub input_size: u32,
    pub learning_rate: f64,
    pub loss: Loss,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub target_param_count: usize,
    pub param_tolerance: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            input_size: 128,
            learning_rate: 1e-5,
            loss: Loss::CrossEntropy,
            optimizer: OptimizerKind::Adam,
            epochs: 500,
            target_param_count: 433_000,
            param_tolerance: 0.10,
            batch_size: 4,
            validation_fraction: 0.4,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch size must be at least 1".into()));
        }
        // four halvings must leave at least one cell
        if self.input_size < 16 || !self.input_size.is_multiple_of(16) {
            return Err(Error::InvalidConfig(format!(
                "input size {} must be a positive multiple of 16",
                self.input_size
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) || self.validation_fraction == 0.0 {
            return Err(Error::InvalidConfig("validation fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    /// ink vs. no ink
    One,
    /// ink on tissue vs. ink on background only
    Two,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            _ => Err(Error::InvalidConfig(format!("unknown classifier stage {n}"))),
        }
    }

    pub fn checkpoint_name(self) -> String {
        format!("classifier_stage{}.ckpt", self.number())
    }

    pub fn label(self, positive: bool) -> Label {
        match (self, positive) {
            (Stage::One, false) => Label::NoInk,
            (Stage::One, true) => Label::Ink,
            (Stage::Two, false) => Label::BackgroundOnly,
            (Stage::Two, true) => Label::Foreground,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    NoInk,
    Ink,
    BackgroundOnly,
    Foreground,
}

impl Label {
    /// Class index 1 is the positive class of either stage.
    pub fn is_positive(self) -> bool {
        matches!(self, Label::Ink | Label::Foreground)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileVerdict {
    pub label: Label,
    /// Softmax score of the chosen class, in [0.5, 1].
    pub confidence: f32,
}

/// A training example: any RGB image and whether it belongs to the positive
/// class of the stage being trained.
#[derive(Debug, Clone)]
pub struct LabelledTile {
    pub image: RgbImage,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainingLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6}",
                e.epoch, e.train_loss, e.val_loss, e.val_acc
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct InkClassifier {
    cfg: ClassifierConfig,
    store: ParamStore,
    convs: Vec<Conv2d>,
    hidden: Linear,
    head: Linear,
    /// Set once trained (or loaded from a trained checkpoint).
    stage: Option<Stage>,
}

/// Builds a freshly initialized classifier; weights depend only on `cfg.seed`.
pub fn build_model(cfg: &ClassifierConfig) -> Result<InkClassifier> {
    cfg.validate()?;
    let mut rng = nn::seeded_rng(cfg.seed);
    let mut store = ParamStore::new();
    let mut convs = Vec::new();
    let mut in_ch = 3;
    for (i, &out_ch) in CHANNELS.iter().enumerate() {
        // the first block downsamples by striding, the rest by max pooling
        let stride = if i == 0 { 2 } else { 1 };
        convs.push(Conv2d::new(
            &mut store,
            &format!("conv{}", i + 1),
            in_ch,
            out_ch,
            3,
            stride,
            1,
            Init::He,
            &mut rng,
        )?);
        in_ch = out_ch;
    }
    let cells = (cfg.input_size / 16) as usize;
    let flat = in_ch * cells * cells;
    let hidden = Linear::new(&mut store, "fc1", flat, HIDDEN, Init::He, &mut rng)?;
    let head = Linear::new(&mut store, "fc2", HIDDEN, 2, Init::He, &mut rng)?;
    let model = InkClassifier {
        cfg: cfg.clone(),
        store,
        convs,
        hidden,
        head,
        stage: None,
    };
    let params = model.param_count() as f64;
    let target = cfg.target_param_count as f64;
    if ((params - target) / target).abs() > cfg.param_tolerance {
        return Err(Error::ArchitectureMismatch(format!(
            "{params} trainable parameters, expected {target} ± {:.0}%",
            cfg.param_tolerance * 100.0
        )));
    }
    Ok(model)
}

impl InkClassifier {
    pub fn config(&self) -> &ClassifierConfig {
        &self.cfg
    }

    pub fn stage(&self) -> Option<Stage> {
        self.stage
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// Input tensor shape `(channels, height, width)`.
    pub fn input_shape(&self) -> (usize, usize, usize) {
        let s = self.cfg.input_size as usize;
        (3, s, s)
    }

    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        self.store.named_tensors()
    }

    /// Logits `(N, 2)` for an `(N, 3, S, S)` batch in `[-1, 1]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?.relu()?;
            if i > 0 {
                h = h.max_pool2d(2)?;
            }
        }
        let h = self.hidden.forward(&h.flatten_from(1)?)?.relu()?;
        self.head.forward(&h)
    }

    /// Square model input: zero-padded to a square, then bilinearly resized.
    pub fn prepare(&self, img: &RgbImage) -> RgbImage {
        let side = img.width().max(img.height());
        let sq = if img.width() == img.height() {
            img.clone()
        } else {
            raster::pad_zero(img, side, side)
        };
        raster::resize_bilinear(&sq, self.cfg.input_size, self.cfg.input_size)
    }

    fn batch_tensor(&self, imgs: &[RgbImage]) -> Result<Tensor> {
        let refs: Vec<&RgbImage> = imgs.iter().collect();
        nn::images_to_tensor(&refs, -1.0, 1.0)
    }

    fn verdict(&self, stage: Stage, logits: &Tensor) -> Result<Vec<TileVerdict>> {
        let probs = candle_nn::ops::softmax(logits, D::Minus1)?.to_vec2::<f32>()?;
        Ok(probs
            .into_iter()
            .map(|p| {
                // ties go to the positive class
                let positive = p[1] >= p[0];
                TileVerdict {
                    label: stage.label(positive),
                    confidence: if positive { p[1] } else { p[0] },
                }
            })
            .collect())
    }

    pub fn classify_image(&self, img: &RgbImage) -> Result<TileVerdict> {
        let stage = self
            .stage
            .ok_or_else(|| Error::ModelNotReady("classifier has not been trained".into()))?;
        let x = self.batch_tensor(&[self.prepare(img)])?;
        Ok(self.verdict(stage, &self.forward(&x)?)?[0])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let stage = self
            .stage
            .ok_or_else(|| Error::ModelNotReady("refusing to checkpoint an untrained classifier".into()))?;
        let meta = BTreeMap::from([
            ("config".to_string(), serde_json::to_string(&self.cfg)?),
            ("stage".to_string(), stage.number().to_string()),
            ("param_count".to_string(), self.param_count().to_string()),
        ]);
        nn::save_checkpoint(path, CHECKPOINT_KIND, self.parameters(), meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = nn::load_checkpoint(path, CHECKPOINT_KIND)?;
        let cfg: ClassifierConfig = serde_json::from_str(ck.meta("config", path)?)?;
        let stage_num: u8 = ck.meta("stage", path)?.parse().map_err(|_| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: "bad stage field".into(),
        })?;
        let mut model = build_model(&cfg)?;
        model.store.load(&ck.tensors, "")?;
        model.stage = Some(Stage::from_number(stage_num)?);
        Ok(model)
    }
}

/// Labelled tiles for one stage from a simulated benchmark. Stage one takes
/// every inked tile as positive and each distinct clean tile as negative;
/// stage two labels inked tiles by whether the ink lies over tissue.
pub fn benchmark_dataset(bench: &Benchmark, stage: Stage) -> Vec<LabelledTile> {
    match stage {
        Stage::One => {
            let mut seen = std::collections::BTreeSet::new();
            let mut out: Vec<LabelledTile> = bench
                .pairs
                .iter()
                .filter(|p| seen.insert(p.clean_id.as_str()))
                .map(|p| LabelledTile {
                    image: p.clean.clone(),
                    positive: false,
                })
                .collect();
            out.extend(bench.pairs.iter().map(|p| LabelledTile {
                image: p.inked.clone(),
                positive: true,
            }));
            out
        }
        Stage::Two => bench
            .pairs
            .iter()
            .map(|p| LabelledTile {
                image: p.inked.clone(),
                positive: p.foreground,
            })
            .collect(),
    }
}

/// Classifies one tile (zero-padded and rescaled to the model input size).
pub fn classify(model: &InkClassifier, tile: &Tile) -> Result<TileVerdict> {
    let stage = model
        .stage
        .ok_or_else(|| Error::ModelNotReady("classifier has not been trained".into()))?;
    let img = rescale_tile(tile, model.cfg.input_size)?;
    let x = model.batch_tensor(&[img])?;
    Ok(model.verdict(stage, &model.forward(&x)?)?[0])
}

/// Per-class deterministic split: the first `1 - validation_fraction` of each
/// shuffled class goes to training.
pub fn stratified_split(labels: &[bool], validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = nn::seeded_rng(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_val = ((idx.len() as f64) * validation_fraction).round() as usize;
        let n_val = n_val.clamp(usize::from(idx.len() > 1), idx.len().saturating_sub(1));
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn evaluate(model: &InkClassifier, x: &Tensor, y: &Tensor, batch: usize) -> Result<(f64, f64)> {
    let n = x.dim(0)?;
    let (mut loss, mut correct) = (0.0f64, 0usize);
    let mut start = 0;
    while start < n {
        let len = batch.min(n - start);
        let xb = x.narrow(0, start, len)?;
        let yb = y.narrow(0, start, len)?;
        let logits = model.forward(&xb)?;
        loss += candle_nn::loss::cross_entropy(&logits, &yb)?.to_scalar::<f32>()? as f64 * len as f64;
        let probs = candle_nn::ops::softmax(&logits, D::Minus1)?.to_vec2::<f32>()?;
        let truth = yb.to_vec1::<u32>()?;
        correct += probs
            .iter()
            .zip(&truth)
            .filter(|(p, &t)| u32::from(p[1] >= p[0]) == t)
            .count();
        start += len;
    }
    Ok((loss / n as f64, correct as f64 / n as f64))
}

/// Trains `model` for one stage with Adam on cross-entropy, keeping the
/// weights of the epoch with the best validation accuracy.
pub fn train_stage(
    mut model: InkClassifier,
    dataset: &[LabelledTile],
    stage: Stage,
    cfg: &ClassifierConfig,
) -> Result<(InkClassifier, TrainingLog)> {
    cfg.validate()?;
    let labels: Vec<bool> = dataset.iter().map(|t| t.positive).collect();
    let positives = labels.iter().filter(|&&p| p).count();
    if positives < 2 || labels.len() - positives < 2 {
        return Err(Error::DegenerateDataset(format!(
            "stage {} needs at least two examples of each class ({positives} positive of {})",
            stage.number(),
            labels.len()
        )));
    }
    let (train_idx, val_idx) = stratified_split(&labels, cfg.validation_fraction, cfg.seed);

    let prepared: Vec<RgbImage> = dataset.iter().map(|t| model.prepare(&t.image)).collect();
    let gather = |idx: &[usize]| -> Result<(Tensor, Tensor)> {
        let imgs: Vec<&RgbImage> = idx.iter().map(|&i| &prepared[i]).collect();
        let x = nn::images_to_tensor(&imgs, -1.0, 1.0)?;
        let y: Vec<u32> = idx.iter().map(|&i| u32::from(labels[i])).collect();
        Ok((x, Tensor::new(y, &nn::device())?))
    };
    let (x_train, y_train) = gather(&train_idx)?;
    let (x_val, y_val) = gather(&val_idx)?;
    drop(prepared);

    let mut opt = AdamW::new(
        model.store.vars(),
        ParamsAdamW {
            lr: cfg.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut rng = nn::seeded_rng(cfg.seed ^ 0x5eed);
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let n = train_idx.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let ids = Tensor::new(chunk, &nn::device())?;
            let xb = x_train.index_select(&ids, 0)?;
            let yb = y_train.index_select(&ids, 0)?;
            let loss = candle_nn::loss::cross_entropy(&model.forward(&xb)?, &yb)?;
            opt.backward_step(&loss)?;
            total += loss.to_scalar::<f32>()? as f64 * chunk.len() as f64;
        }
        let (val_loss, val_acc) = evaluate(&model, &x_val, &y_val, cfg.batch_size.max(32))?;
        log::debug!(
            "stage {} epoch {epoch}: train {:.4} val {val_loss:.4} acc {val_acc:.3}",
            stage.number(),
            total / n as f64
        );
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: total / n as f64,
            val_loss,
            val_acc,
        });
        if best.as_ref().is_none_or(|(acc, _)| val_acc > *acc) {
            best = Some((val_acc, model.store.snapshot()?));
            log.best_epoch = epoch;
        }
    }
    if let Some((_, weights)) = best {
        model.store.restore(&weights)?;
    }
    model.cfg = cfg.clone();
    model.stage = Some(stage);
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Rgb;

    #[test]
    fn default_model_meets_parameter_budget() {
        let m = build_model(&ClassifierConfig::default()).unwrap();
        let p = m.param_count();
        assert_eq!(p, 470_414);
        assert!((389_700..=476_300).contains(&p));
        assert_eq!(m.input_shape(), (3, 128, 128));
        let out = m
            .forward(&Tensor::zeros((2, 3, 128, 128), candle_core::DType::F32, &nn::device()).unwrap())
            .unwrap();
        assert_eq!(out.dims(), &[2, 2]);
    }

    #[test]
    fn budget_violation_is_rejected() {
        let cfg = ClassifierConfig {
            input_size: 256,
            ..Default::default()
        };
        assert!(matches!(build_model(&cfg), Err(Error::ArchitectureMismatch(_))));
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = ClassifierConfig::default();
        let a = build_model(&cfg).unwrap().parameters();
        let b = build_model(&cfg).unwrap().parameters();
        for ((na, ta), (nb, tb)) in a.iter().zip(&b) {
            assert_eq!(na, nb);
            let va: Vec<f32> = ta.flatten_all().unwrap().to_vec1().unwrap();
            let vb: Vec<f32> = tb.flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(va, vb);
        }
    }

    #[test]
    fn untrained_model_is_not_ready() {
        let m = build_model(&ClassifierConfig::default()).unwrap();
        let tile = Tile::new("s", 0, 0, RgbImage::new(128, 128));
        assert!(matches!(classify(&m, &tile), Err(Error::ModelNotReady(_))));
    }

    #[test]
    fn single_class_dataset_is_degenerate() {
        let m = build_model(&ClassifierConfig::default()).unwrap();
        let data: Vec<LabelledTile> = (0..6)
            .map(|_| LabelledTile {
                image: RgbImage::new(32, 32),
                positive: true,
            })
            .collect();
        assert!(matches!(
            train_stage(m, &data, Stage::One, &ClassifierConfig::default()),
            Err(Error::DegenerateDataset(_))
        ));
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<bool> = (0..100).map(|i| i % 4 == 0).collect();
        let (train, val) = stratified_split(&labels, 0.4, 3);
        assert_eq!(train.len() + val.len(), 100);
        assert_eq!(val.iter().filter(|&&i| labels[i]).count(), 10);
        assert_eq!(val.len(), 40);
    }

    #[test]
    fn separable_white_black_learns_quickly() {
        let cfg = ClassifierConfig {
            epochs: 5,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let data: Vec<LabelledTile> = (0..20)
            .map(|i| LabelledTile {
                image: RgbImage::from_pixel(64, 64, if i % 2 == 0 { Rgb([255; 3]) } else { Rgb([0; 3]) }),
                positive: i % 2 == 1,
            })
            .collect();
        let (m, log) = train_stage(build_model(&cfg).unwrap(), &data, Stage::One, &cfg).unwrap();
        assert_eq!(log.best().unwrap().val_acc, 1.0);
        let csv = log.to_csv();
        assert!(csv.starts_with("epoch,train_loss,val_loss,val_acc\n"));
        assert_eq!(csv.lines().count(), 6);
        let v = m.classify_image(&RgbImage::from_pixel(64, 64, Rgb([0; 3]))).unwrap();
        assert_eq!(v.label, Label::Ink);
        assert!((0.5..=1.0).contains(&v.confidence));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(Stage::One.checkpoint_name());
        m.save(&path).unwrap();
        let back = InkClassifier::load(&path).unwrap();
        let w = back
            .classify_image(&RgbImage::from_pixel(64, 64, Rgb([255; 3])))
            .unwrap();
        assert_eq!(w.label, Label::NoInk);
        assert_eq!(back.stage(), Some(Stage::One));
    }
}
