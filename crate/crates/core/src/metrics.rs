//! Overall IoU and mask thresholding.

use crate::error::{Error, Result};
use crate::types::{Mask, PredictionMap};

/// Cumulative intersection over cumulative union across all pairs.
///
/// Returns 1.0 when every mask is empty (total union zero).
pub fn overall_iou(predictions: &[Mask], ground_truths: &[Mask]) -> Result<f64> {
    if predictions.len() != ground_truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} ground truths",
            predictions.len(),
            ground_truths.len()
        )));
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (i, (p, g)) in predictions.iter().zip(ground_truths).enumerate() {
        let (pi, pu) = intersection_union(p, g).map_err(|e| match e {
            Error::Shape(m) => Error::Shape(format!("pair {i}: {m}")),
            other => other,
        })?;
        inter += pi;
        union += pu;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Intersection and union pixel counts of one pair.
pub fn intersection_union(prediction: &Mask, ground_truth: &Mask) -> Result<(u64, u64)> {
    if prediction.dims() != ground_truth.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs ground truth {:?}",
            prediction.dims(),
            ground_truth.dims()
        )));
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (a, b) in prediction.values().iter().zip(ground_truth.values()) {
        inter += u64::from(a & b);
        union += u64::from(a | b);
    }
    Ok((inter, union))
}

/// Per-pair IoU, 1.0 for an empty union.
pub fn iou(prediction: &Mask, ground_truth: &Mask) -> Result<f64> {
    let (i, u) = intersection_union(prediction, ground_truth)?;
    Ok(if u == 0 { 1.0 } else { i as f64 / u as f64 })
}

/// Foreground wherever `p_fg > p_bg`; exact ties go to background.
pub fn binarize(prediction: &PredictionMap) -> Mask {
    let values = prediction.probs().iter().map(|[fg, bg]| u8::from(fg > bg)).collect();
    Mask::new(prediction.height(), prediction.width(), values).expect("binarized values are 0/1 with matching length")
}
