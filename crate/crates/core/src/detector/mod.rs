//! Single-shot localization of ink marks and dense cell clusters.

mod boxes;
mod eval;
mod model;

pub use boxes::{format_annotations, nms, nms_per_class, parse_annotations, BoundingBox, BoxClass};
pub use eval::{average_precision, evaluate_map};
pub use model::{
    build_detector, detect, train_detector, DetectionSample, Detector, DetectorConfig, DetectorLog, CHECKPOINT_KIND,
    CHECKPOINT_NAME, STRIDES,
};
