//! Pseudo-labels, mask-aware confidence scoring and the training objectives.
//!
//! Shapes: a prediction map is `H x W` pixels of `(p_fg, p_bg)`. For each
//! unlabeled sample the weak-branch map yields
//!
//! * a validity grid, `1` where `max(p_fg, p_bg) >= tau`;
//! * hard pseudo-labels, `argmax` with ties to background;
//! * the score `s = mean of max-confidence over valid pixels` (0 when none are valid).
//!
//! The self-adaptive unsupervised loss for a batch of `B` samples is
//! `1/B * sum_i s_i / (H W) * sum_{valid px} CE(p^s, pseudo-label)`.
//! The FixMatch-style variant drops `s_i` and averages over valid pixels instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::binarize;
use crate::types::{Mask, PredictionMap, ProbGrad};

/// Probability clamp applied before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_x: f64,
    pub lambda_u: f64,
    /// Per-pixel confidence threshold (also called gamma).
    pub tau: f64,
    pub lambda_t: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_x: 5.0,
            lambda_u: 2.0,
            tau: 0.7,
            lambda_t: 0.8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_x < 0.0 || self.lambda_u < 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be nonnegative (lambda_x = {}, lambda_u = {})",
                self.lambda_x, self.lambda_u
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda_t) {
            return Err(Error::Config(format!("lambda_t = {} outside [0, 1]", self.lambda_t)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau = {} outside [0, 1]", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelBundle {
    pub weak_prediction: PredictionMap,
    pub pseudo_labels: Mask,
    pub validity: Mask,
    pub score: f64,
}

impl PseudoLabelBundle {
    pub fn valid_count(&self) -> usize {
        self.validity.area()
    }
}

fn max_confidence([fg, bg]: [f64; 2]) -> f64 {
    fg.max(bg)
}

/// Mean max-confidence over pixels clearing `tau`; 0 when none do.
pub fn mask_confidence_score(weak_prediction: &PredictionMap, tau: f64) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut lowest = f64::INFINITY;
    for p in weak_prediction.probs() {
        let conf = max_confidence(*p);
        if conf >= tau {
            sum += conf;
            count += 1;
            lowest = lowest.min(conf);
        }
    }
    if count == 0 {
        return 0.0;
    }
    // the mean of values in [lowest, 1] is in that range; clamp away rounding
    (sum / count as f64).clamp(lowest, 1.0)
}

pub fn make_pseudo_labels(weak_prediction: &PredictionMap, tau: f64) -> PseudoLabelBundle {
    let (h, w) = weak_prediction.dims();
    let validity = Mask::new(
        h,
        w,
        weak_prediction
            .probs()
            .iter()
            .map(|p| u8::from(max_confidence(*p) >= tau))
            .collect(),
    )
    .expect("validity grid matches prediction dims");
    PseudoLabelBundle {
        pseudo_labels: binarize(weak_prediction),
        validity,
        score: mask_confidence_score(weak_prediction, tau),
        weak_prediction: weak_prediction.clone(),
    }
}

fn clamped_nll(p: f64) -> (f64, f64) {
    let loss = -p.clamp(PROB_EPS, 1.0 - PROB_EPS).ln();
    let grad = if p > PROB_EPS && p < 1.0 - PROB_EPS {
        -1.0 / p
    } else {
        0.0
    };
    (loss, grad)
}

fn check_dims(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Mean per-pixel cross-entropy against a hard mask.
pub fn supervised_loss(prediction: &PredictionMap, ground_truth: &Mask) -> Result<f64> {
    supervised_loss_with_grad(prediction, ground_truth).map(|(l, _)| l)
}

pub fn supervised_loss_with_grad(prediction: &PredictionMap, ground_truth: &Mask) -> Result<(f64, ProbGrad)> {
    check_dims(prediction.dims(), ground_truth.dims(), "prediction vs ground truth")?;
    let (h, w) = prediction.dims();
    let n = (h * w) as f64;
    let mut grad = ProbGrad::zeros(h, w);
    let mut total = 0.0;
    for (i, (p, label)) in prediction.probs().iter().zip(ground_truth.values()).enumerate() {
        let class = if *label == 1 { 0 } else { 1 };
        let (l, g) = clamped_nll(p[class]);
        total += l;
        grad.values[i][class] = g / n;
    }
    Ok((total / n, grad))
}

fn check_batch(strong: &[PredictionMap], bundles: &[PseudoLabelBundle]) -> Result<()> {
    if strong.len() != bundles.len() {
        return Err(Error::Shape(format!(
            "{} strong predictions vs {} pseudo-label bundles",
            strong.len(),
            bundles.len()
        )));
    }
    for (i, (s, b)) in strong.iter().zip(bundles).enumerate() {
        check_dims(s.dims(), b.pseudo_labels.dims(), &format!("sample {i}"))?;
    }
    Ok(())
}

/// Sum of clamped CE over valid pixels plus its gradient scaled by `scale`.
fn masked_ce(strong: &PredictionMap, bundle: &PseudoLabelBundle, scale: f64) -> (f64, ProbGrad) {
    let (h, w) = strong.dims();
    let mut grad = ProbGrad::zeros(h, w);
    let mut sum = 0.0;
    for (i, p) in strong.probs().iter().enumerate() {
        if bundle.validity.values()[i] == 0 {
            continue;
        }
        let class = if bundle.pseudo_labels.values()[i] == 1 { 0 } else { 1 };
        let (l, g) = clamped_nll(p[class]);
        sum += l;
        grad.values[i][class] = scale * g;
    }
    (sum, grad)
}

/// Score-weighted unsupervised loss, normalised by `H x W` and batch size.
pub fn unsupervised_loss(strong: &[PredictionMap], bundles: &[PseudoLabelBundle]) -> Result<f64> {
    unsupervised_loss_with_grad(strong, bundles).map(|(l, _)| l)
}

pub fn unsupervised_loss_with_grad(
    strong: &[PredictionMap],
    bundles: &[PseudoLabelBundle],
) -> Result<(f64, Vec<ProbGrad>)> {
    check_batch(strong, bundles)?;
    if strong.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let b = strong.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(strong.len());
    for (s, bundle) in strong.iter().zip(bundles) {
        let weight = bundle.score / s.len() as f64 / b;
        let (sum, grad) = masked_ce(s, bundle, weight);
        total += weight * sum;
        grads.push(grad);
    }
    Ok((total, grads))
}

/// Unweighted variant: per-sample mean CE over valid pixels (0 if none), averaged over the batch.
pub fn fixmatch_unsupervised_loss(strong: &[PredictionMap], bundles: &[PseudoLabelBundle]) -> Result<f64> {
    fixmatch_unsupervised_loss_with_grad(strong, bundles).map(|(l, _)| l)
}

pub fn fixmatch_unsupervised_loss_with_grad(
    strong: &[PredictionMap],
    bundles: &[PseudoLabelBundle],
) -> Result<(f64, Vec<ProbGrad>)> {
    check_batch(strong, bundles)?;
    if strong.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let b = strong.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(strong.len());
    for (s, bundle) in strong.iter().zip(bundles) {
        let valid = bundle.valid_count();
        let weight = if valid == 0 { 0.0 } else { 1.0 / valid as f64 / b };
        let (sum, grad) = masked_ce(s, bundle, weight);
        total += weight * sum;
        grads.push(grad);
    }
    Ok((total, grads))
}

pub fn total_loss(sup: f64, unsup: f64, weights: &LossWeights) -> f64 {
    weights.lambda_x * sup + weights.lambda_u * unsup
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use proptest::prelude::*;
    use rand::Rng;

    fn fg_map(h: usize, w: usize, fg: &[f64]) -> PredictionMap {
        PredictionMap::from_foreground(h, w, fg).unwrap()
    }

    #[test]
    fn confident_map_scores_one() {
        let b = make_pseudo_labels(&PredictionMap::uniform(3, 3, 1.0), 0.7);
        assert_eq!(b.validity, Mask::ones(3, 3));
        assert_eq!(b.pseudo_labels, Mask::ones(3, 3));
        assert_eq!(b.score, 1.0);
    }

    #[test]
    fn uniform_half_map_scores_zero() {
        let b = make_pseudo_labels(&PredictionMap::uniform(3, 3, 0.5), 0.7);
        assert_eq!(b.valid_count(), 0);
        assert_eq!(b.score, 0.0);
    }

    #[test]
    fn two_by_two_worked_example() {
        let b = make_pseudo_labels(&fg_map(2, 2, &[0.9, 0.8, 0.3, 0.95]), 0.7);
        assert_eq!(b.validity.values(), &[1, 1, 1, 1]);
        assert_eq!(b.pseudo_labels.values(), &[1, 1, 0, 1]);
    }

    #[test]
    fn score_worked_example() {
        let s = mask_confidence_score(&fg_map(1, 4, &[0.9, 0.8, 0.95, 0.6]), 0.7);
        assert!((s - 2.65 / 3.0).abs() < 1e-12);
        assert!((s - 0.88333).abs() < 1e-5);
    }

    #[test]
    fn supervised_reference_values() {
        let gt = Mask::from_fn(2, 2, |y, _| y == 0);
        let perfect = PredictionMap::new(
            2,
            2,
            gt.values()
                .iter()
                .map(|v| {
                    if *v == 1 {
                        [1.0 - PROB_EPS, PROB_EPS]
                    } else {
                        [PROB_EPS, 1.0 - PROB_EPS]
                    }
                })
                .collect(),
        )
        .unwrap();
        assert!((supervised_loss(&perfect, &gt).unwrap() - 1e-7).abs() < 1e-12);
        let half = PredictionMap::uniform(2, 2, 0.5);
        assert!((supervised_loss(&half, &gt).unwrap() - 2f64.ln()).abs() < 1e-12);
        let quarter = fg_map(1, 1, &[0.25]);
        assert!((supervised_loss(&quarter, &Mask::ones(1, 1)).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(
            supervised_loss(&half, &Mask::ones(1, 2)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn unsupervised_worked_example() {
        let bundle = make_pseudo_labels(&fg_map(1, 2, &[0.9, 0.6]), 0.7);
        assert_eq!(bundle.validity.values(), &[1, 0]);
        assert_eq!(bundle.score, 0.9);
        let strong = fg_map(1, 2, &[0.5, 0.3]);
        let l = unsupervised_loss(&[strong], &[bundle]).unwrap();
        assert!((l - 0.45 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 0.3119).abs() < 1e-4);
    }

    #[test]
    fn zero_score_zeroes_loss() {
        let mut bundle = make_pseudo_labels(&fg_map(1, 2, &[0.9, 0.1]), 0.7);
        bundle.score = 0.0;
        let l = unsupervised_loss(&[fg_map(1, 2, &[0.01, 0.99])], &[bundle]).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn consistent_strong_prediction_has_near_zero_loss() {
        let weak = fg_map(2, 2, &[0.95, 0.05, 0.9, 0.1]);
        let bundle = make_pseudo_labels(&weak, 0.7);
        let strong = PredictionMap::from_mask(&bundle.pseudo_labels);
        let l = unsupervised_loss(&[strong], &[bundle]).unwrap();
        assert!(l < 1e-6);
    }

    #[test]
    fn batch_mismatch_is_structural() {
        let b = make_pseudo_labels(&PredictionMap::uniform(2, 2, 0.9), 0.7);
        assert!(matches!(
            unsupervised_loss(&[], std::slice::from_ref(&b)),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            unsupervised_loss(&[PredictionMap::uniform(2, 3, 0.5)], &[b]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn total_loss_values() {
        let w = LossWeights::default();
        assert_eq!(total_loss(1.0, 0.0, &w), 5.0);
        assert_eq!(total_loss(0.0, 0.0, &w), 0.0);
        assert_eq!(total_loss(1.0, 1.0, &w), 7.0);
    }

    #[test]
    fn fixmatch_variant_relates_by_valid_fraction() {
        let weak = fg_map(2, 2, &[0.9, 0.6, 0.2, 0.75]);
        let mut bundle = make_pseudo_labels(&weak, 0.7);
        bundle.score = 1.0;
        let strong = fg_map(2, 2, &[0.6, 0.5, 0.4, 0.3]);
        let weighted = unsupervised_loss(std::slice::from_ref(&strong), std::slice::from_ref(&bundle)).unwrap();
        let plain = fixmatch_unsupervised_loss(&[strong], &[bundle.clone()]).unwrap();
        let ratio = bundle.valid_count() as f64 / 4.0;
        assert!((weighted - plain * ratio).abs() < 1e-12);
    }

    fn random_map(rng: &mut impl Rng, h: usize, w: usize) -> PredictionMap {
        let fg: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        fg_map(h, w, &fg)
    }

    proptest! {
        #[test]
        fn score_is_zero_or_at_least_tau(seed in any::<u64>(), tau in 0.5f64..=1.0) {
            let mut rng = SeedTree::new(seed).rng();
            let s = mask_confidence_score(&random_map(&mut rng, 5, 5), tau);
            prop_assert!(s == 0.0 || (tau..=1.0).contains(&s));
        }

        #[test]
        fn total_loss_is_linear(a in 0.0f64..10.0, b in 0.0f64..10.0, c in 0.0f64..10.0, k in 0.0f64..4.0) {
            let w = LossWeights::default();
            let lhs = total_loss(a + k * b, c, &w);
            let rhs = total_loss(a, c, &w) + k * total_loss(b, 0.0, &w);
            prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn raising_label_mass_never_raises_loss(seed in any::<u64>(), delta in 0.0f64..0.2) {
            let mut rng = SeedTree::new(seed).rng();
            let weak = random_map(&mut rng, 4, 4);
            let bundle = make_pseudo_labels(&weak, 0.7);
            let strong = random_map(&mut rng, 4, 4);
            let pushed: Vec<f64> = strong
                .probs()
                .iter()
                .zip(bundle.pseudo_labels.values())
                .map(|(p, l)| if *l == 1 { (p[0] + delta).min(1.0) } else { (p[0] - delta).max(0.0) })
                .collect();
            let before = unsupervised_loss(&[strong], std::slice::from_ref(&bundle)).unwrap();
            let after = unsupervised_loss(&[fg_map(4, 4, &pushed)], &[bundle]).unwrap();
            prop_assert!(after <= before + 1e-12);
        }
    }
}
