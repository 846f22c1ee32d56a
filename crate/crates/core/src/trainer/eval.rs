use serde::Serialize;

use crate::augment_image::{resize, resize_mask};
use crate::error::{Error, Result};
use crate::metrics::{binarize, intersection_union};
use crate::model::{Mode, ResModel};
use crate::types::Sample;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(rename = "oIoU")]
    pub oiou: f64,
    /// `(sample id, IoU)` in input order; an empty union counts as 1.
    pub per_sample: Vec<(String, f64)>,
    pub count: usize,
}

/// Resizes a labeled sample to the square evaluation resolution (bilinear image, nearest mask).
pub fn prepare_eval_sample(sample: &Sample, image_size: usize) -> Result<Sample> {
    let mask = sample.mask.as_ref().ok_or_else(|| Error::Record {
        id: sample.id.clone(),
        message: "evaluation sample has no mask".into(),
    })?;
    if sample.image.dims() == (image_size, image_size) {
        return Ok(sample.clone());
    }
    Ok(Sample {
        id: sample.id.clone(),
        image: resize(&sample.image, image_size, image_size),
        expression: sample.expression.clone(),
        mask: Some(resize_mask(mask, image_size, image_size)),
    })
}

/// Overall IoU of binarized predictions at `image_size`. The model runs in
/// eval mode and gets its previous mode back afterwards.
pub fn evaluate<M: ResModel>(model: &mut M, samples: &[Sample], image_size: usize) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    let previous = model.mode();
    model.set_mode(Mode::Eval);
    let result = run(model, samples, image_size);
    model.set_mode(previous);
    result
}

fn run<M: ResModel>(model: &M, samples: &[Sample], image_size: usize) -> Result<EvalReport> {
    let (mut inter, mut union) = (0u64, 0u64);
    let mut per_sample = Vec::with_capacity(samples.len());
    for sample in samples {
        let s = prepare_eval_sample(sample, image_size)?;
        let pred = binarize(&model.forward(&s.image, &s.expression));
        let (i, u) = intersection_union(&pred, s.mask.as_ref().expect("prepared samples carry masks"))?;
        inter += i;
        union += u;
        per_sample.push((s.id, if u == 0 { 1.0 } else { i as f64 / u as f64 }));
    }
    Ok(EvalReport {
        oiou: if union == 0 { 1.0 } else { inter as f64 / union as f64 },
        per_sample,
        count: samples.len(),
    })
}
