use crate::augment_image::{mag_blend, strong_augment, weak_augment, AugmentationProfile, AugmentationRecord};
use crate::augment_text::{
    generate_candidates, pick_training_text, semantic_filter, weak_text_adapt, PositionLexicon, TextCandidateSet,
    TextResources,
};
use crate::config::{TrainMode, TrainerConfig};
use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::model::{AdamW, ResModel};
use crate::rng::SeedTree;
use crate::ssl::{
    fixmatch_unsupervised_loss_with_grad, make_pseudo_labels, supervised_loss_with_grad, total_loss,
    unsupervised_loss_with_grad, LossWeights, PseudoLabelBundle,
};
use crate::types::{Expression, Image, PredictionMap, ProbGrad, Sample};

/// Everything a training step needs besides the model, the optimizer and the batch.
pub struct StepContext {
    config: TrainerConfig,
    weights: LossWeights,
    profile: AugmentationProfile,
    embedder: Box<dyn Embedder>,
    text: TextResources,
    lexicon: PositionLexicon,
    seeds: SeedTree,
}

impl StepContext {
    pub fn new(config: &TrainerConfig) -> Result<Self> {
        Self::with_embedder(config, config.embedder.build()?)
    }

    pub fn with_embedder(config: &TrainerConfig, embedder: Box<dyn Embedder>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            weights: config.loss_weights(),
            profile: config.profile(),
            config: config.clone(),
            embedder,
            text: TextResources::bundled(),
            lexicon: PositionLexicon::default(),
            seeds: SeedTree::new(config.seed),
        })
    }

    pub fn with_text_resources(mut self, text: TextResources, lexicon: PositionLexicon) -> Self {
        self.text = text;
        self.lexicon = lexicon;
        self
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn profile(&self) -> &AugmentationProfile {
        &self.profile
    }

    pub fn seeds(&self) -> SeedTree {
        self.seeds
    }

    pub fn text_resources(&self) -> &TextResources {
        &self.text
    }

    pub fn lexicon(&self) -> &PositionLexicon {
        &self.lexicon
    }
}

/// Whether the weak-branch forward records a tape. The tape is never
/// differentiated; retaining it exists to show that it does not matter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum WeakGraph {
    #[default]
    Discard,
    Retain,
}

/// Intermediate results for one unlabeled sample.
#[derive(Debug, Clone)]
pub struct UnlabeledView {
    pub id: String,
    pub weak_image: Image,
    pub weak_record: AugmentationRecord,
    pub weak_text: Expression,
    pub bundle: PseudoLabelBundle,
    pub strong_image: Image,
    pub strong_record: AugmentationRecord,
    /// Input of the strong forward: the MAG blend in resmatch mode, the strong image otherwise.
    pub blended_image: Image,
    pub text_set: Option<TextCandidateSet>,
    pub strong_text: Expression,
    pub strong_prediction: PredictionMap,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub step: u64,
    pub l_sup: f64,
    pub l_unsup: f64,
    pub l_total: f64,
    /// Mask-aware scores of the unlabeled samples, in batch order.
    pub scores: Vec<f64>,
    pub unlabeled: Vec<UnlabeledView>,
}

impl StepReport {
    pub fn mean_score(&self) -> Option<f64> {
        if self.scores.is_empty() {
            None
        } else {
            Some(self.scores.iter().sum::<f64>() / self.scores.len() as f64)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_sup.is_finite() && self.l_unsup.is_finite() && self.l_total.is_finite()
    }
}

fn scaled(mut grad: ProbGrad, k: f64) -> ProbGrad {
    for v in &mut grad.values {
        v[0] *= k;
        v[1] *= k;
    }
    grad
}

fn is_zero(grad: &ProbGrad) -> bool {
    grad.values.iter().all(|[a, b]| *a == 0.0 && *b == 0.0)
}

/// Losses and parameter gradients for one step, without touching the model.
pub fn compute_step<M: ResModel>(
    ctx: &StepContext,
    model: &M,
    labeled: &[&Sample],
    unlabeled: &[&Sample],
    step: u64,
    weak_graph: WeakGraph,
) -> Result<(StepReport, Vec<f64>)> {
    let mode = ctx.config.mode;
    let image_seeds = ctx.seeds.child("image-aug").index(step);
    let text_seeds = ctx.seeds.child("text-aug").index(step);

    let mut l_sup = 0.0;
    let mut sup_terms = Vec::with_capacity(labeled.len());
    for (i, sample) in labeled.iter().enumerate() {
        let mask = sample.mask.as_ref().ok_or_else(|| Error::Record {
            id: sample.id.clone(),
            message: "labeled sample has no mask".into(),
        })?;
        let mut rng = image_seeds.child("labeled").index(i as u64).rng();
        let (image, mask, record) = weak_augment(&sample.image, Some(mask), &ctx.profile, &mut rng)?;
        let text = weak_text_adapt(&sample.expression, &record, &ctx.lexicon);
        let (pred, tape) = model.forward_with_tape(&image, &text);
        let (loss, grad) = supervised_loss_with_grad(&pred, &mask.expect("mask follows image"))?;
        l_sup += loss / labeled.len() as f64;
        sup_terms.push((tape, grad));
    }

    let mut views = Vec::new();
    let mut strong_tapes = Vec::new();
    let mut retained_weak = Vec::new();
    if mode != TrainMode::Supervised {
        for (i, sample) in unlabeled.iter().enumerate() {
            let seeds = image_seeds.child("unlabeled").index(i as u64);
            let (weak_image, _, weak_record) =
                weak_augment(&sample.image, None, &ctx.profile, &mut seeds.child("weak").rng())?;
            let weak_text = match mode {
                TrainMode::Fixmatch => sample.expression.clone(),
                _ => weak_text_adapt(&sample.expression, &weak_record, &ctx.lexicon),
            };
            let weak_pred = match weak_graph {
                WeakGraph::Discard => model.forward(&weak_image, &weak_text),
                WeakGraph::Retain => {
                    let (p, tape) = model.forward_with_tape(&weak_image, &weak_text);
                    retained_weak.push(tape);
                    p
                }
            };
            let bundle = make_pseudo_labels(&weak_pred, ctx.weights.tau);
            let (strong_image, strong_record) =
                strong_augment(&weak_image, &ctx.profile, &mut seeds.child("strong").rng());
            let (blended_image, text_set, strong_text) = if mode == TrainMode::Resmatch {
                let blended = mag_blend(&strong_image, &weak_image, bundle.score)?;
                let tseed = text_seeds.index(i as u64);
                let candidates = generate_candidates(
                    &weak_text,
                    ctx.config.text_candidate_count,
                    tseed.child("candidates"),
                    &ctx.config.text,
                    &ctx.text,
                );
                let set = semantic_filter(&weak_text, &candidates, ctx.embedder.as_ref(), ctx.weights.lambda_t)?;
                let text = pick_training_text(&set, &mut tseed.child("pick").rng());
                (blended, Some(set), text)
            } else {
                (strong_image.clone(), None, weak_text.clone())
            };
            let (strong_prediction, tape) = model.forward_with_tape(&blended_image, &strong_text);
            strong_tapes.push(tape);
            views.push(UnlabeledView {
                id: sample.id.clone(),
                weak_image,
                weak_record,
                weak_text,
                bundle,
                strong_image,
                strong_record,
                blended_image,
                text_set,
                strong_text,
                strong_prediction,
            });
        }
    }
    drop(retained_weak);

    let strong: Vec<PredictionMap> = views.iter().map(|v| v.strong_prediction.clone()).collect();
    let bundles: Vec<PseudoLabelBundle> = views.iter().map(|v| v.bundle.clone()).collect();
    let (l_unsup, unsup_grads) = match mode {
        TrainMode::Supervised => (0.0, Vec::new()),
        TrainMode::Fixmatch => fixmatch_unsupervised_loss_with_grad(&strong, &bundles)?,
        TrainMode::Resmatch => unsupervised_loss_with_grad(&strong, &bundles)?,
    };
    let l_total = match mode {
        TrainMode::Supervised => ctx.weights.lambda_x * l_sup,
        _ => total_loss(l_sup, l_unsup, &ctx.weights),
    };

    let mut grads = vec![0.0; model.num_parameters()];
    let report = StepReport {
        step,
        l_sup,
        l_unsup,
        l_total,
        scores: views.iter().map(|v| v.bundle.score).collect(),
        unlabeled: views,
    };
    if !report.is_finite() {
        return Ok((report, grads));
    }
    if ctx.weights.lambda_x != 0.0 {
        let k = ctx.weights.lambda_x / labeled.len() as f64;
        for (tape, grad) in sup_terms {
            model.backward(&tape, &scaled(grad, k), &mut grads);
        }
    }
    if ctx.weights.lambda_u != 0.0 {
        for (tape, grad) in strong_tapes.iter().zip(unsup_grads) {
            if !is_zero(&grad) {
                model.backward(tape, &scaled(grad, ctx.weights.lambda_u), &mut grads);
            }
        }
    }
    Ok((report, grads))
}

/// One optimizer step. A non-finite loss or gradient aborts the step with
/// [`Error::NonFiniteLoss`] and leaves model and optimizer untouched.
pub fn train_step<M: ResModel>(
    ctx: &StepContext,
    model: &mut M,
    optimizer: &mut AdamW,
    labeled: &[&Sample],
    unlabeled: &[&Sample],
    step: u64,
) -> Result<StepReport> {
    let (report, grads) = compute_step(ctx, model, labeled, unlabeled, step, WeakGraph::Discard)?;
    let flagged = || Error::NonFiniteLoss {
        step,
        sample_ids: labeled
            .iter()
            .chain(if ctx.config.mode == TrainMode::Supervised {
                &[][..]
            } else {
                unlabeled
            })
            .map(|s| s.id.clone())
            .collect(),
    };
    if !report.is_finite() {
        return Err(flagged());
    }
    optimizer
        .step(model.parameters_mut(), &grads, ctx.config.learning_rate)
        .map_err(|e| match e {
            Error::InvalidValue(_) => flagged(),
            other => other,
        })?;
    Ok(report)
}
