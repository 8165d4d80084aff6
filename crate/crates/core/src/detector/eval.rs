use crate::detector::boxes::{BoundingBox, BoxClass};
use crate::error::{Error, Result};

/// Average precision with all-point interpolation of the precision envelope.
/// `hits` are true/false-positive flags in descending-confidence order.
pub fn average_precision(hits: &[bool], n_ground_truth: usize) -> f64 {
    if n_ground_truth == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(hits.len());
    for (i, &hit) in hits.iter().enumerate() {
        if hit {
            tp += 1;
        }
        points.push((tp as f64 / n_ground_truth as f64, tp as f64 / (i + 1) as f64));
    }
    // envelope: precision at recall r is the max precision at any recall >= r
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..points.len() {
        let (recall, _) = points[i];
        if recall > prev_recall {
            let p = points[i..].iter().map(|&(_, p)| p).fold(0.0, f64::max);
            ap += (recall - prev_recall) * p;
            prev_recall = recall;
        }
    }
    ap
}

/// Mean over classes (with at least one ground-truth box) of average
/// precision. Predictions are greedily matched one-to-one, by descending
/// confidence, to the highest-IoU unmatched ground-truth box of the same class
/// on the same tile.
pub fn evaluate_map(
    predictions: &[Vec<BoundingBox>],
    ground_truth: &[Vec<BoundingBox>],
    iou_threshold: f32,
) -> Result<f64> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} prediction sets for {} ground-truth tiles",
            predictions.len(),
            ground_truth.len()
        )));
    }
    let mut aps = Vec::new();
    for cls in BoxClass::ALL {
        let n_gt: usize = ground_truth
            .iter()
            .map(|g| g.iter().filter(|b| b.cls == cls).count())
            .sum();
        if n_gt == 0 {
            continue;
        }
        let mut preds: Vec<(usize, &BoundingBox)> = predictions
            .iter()
            .enumerate()
            .flat_map(|(t, ps)| ps.iter().filter(|b| b.cls == cls).map(move |b| (t, b)))
            .collect();
        preds.sort_by(|a, b| b.1.conf.total_cmp(&a.1.conf));

        let mut matched: Vec<Vec<bool>> = ground_truth.iter().map(|g| vec![false; g.len()]).collect();
        let hits: Vec<bool> = preds
            .iter()
            .map(|&(t, p)| {
                let best = ground_truth[t]
                    .iter()
                    .enumerate()
                    .filter(|(j, g)| g.cls == cls && !matched[t][*j])
                    .map(|(j, g)| (j, p.iou(g)))
                    .max_by(|a, b| a.1.total_cmp(&b.1));
                match best {
                    Some((j, iou)) if iou >= iou_threshold => {
                        matched[t][j] = true;
                        true
                    }
                    _ => false,
                }
            })
            .collect();
        aps.push(average_precision(&hits, n_gt));
    }
    if aps.is_empty() {
        return Err(Error::Undefined("mAP over empty ground truth".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}
