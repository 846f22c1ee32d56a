use std::collections::HashMap;
use std::fs;
use std::path::Path;

use proptest::prelude::*;
use resmatch::config::{TrainMode, TrainerConfig};
use resmatch::data::{make_split, make_synthetic, DatasetManifest, SplitTag, SyntheticSpec};
use resmatch::model::{AdamW, Mode, ResModel, ToyModelConfig, ToyResModel, Vocabulary};
use resmatch::rng::SeedTree;
use resmatch::ssl::{make_pseudo_labels, unsupervised_loss};
use resmatch::trainer::{
    compute_step, evaluate, prepare_eval_sample, run_experiment, run_sweep, train_step, StepContext, Trainer,
    WeakGraph, RESULTS_FILE,
};
use resmatch::types::{Expression, Image, Mask, PredictionMap, ProbGrad, Sample};
use resmatch::Error;

fn dataset(dir: &Path, train: usize, val: usize) -> DatasetManifest {
    make_synthetic(
        dir,
        &SyntheticSpec {
            train,
            val,
            image_size: 16,
            seed: 3,
        },
    )
    .unwrap()
}

fn config(mode: TrainMode) -> TrainerConfig {
    TrainerConfig {
        mode,
        image_size: 16,
        learning_rate: 1e-3,
        epochs: 1,
        text_candidate_count: 4,
        model: ToyModelConfig {
            stem_channels: 4,
            channels: 6,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn toy(cfg: &TrainerConfig, samples: &[Sample]) -> ToyResModel {
    let vocab = Vocabulary::build(samples.iter().map(|s| &s.expression));
    ToyResModel::new(cfg.model.clone(), vocab, SeedTree::new(cfg.seed).child("model-init")).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    manifest: DatasetManifest,
    samples: Vec<Sample>,
}

fn fixture(train: usize, val: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), train, val);
    let samples = manifest.load_split(SplitTag::Train).unwrap();
    Fixture {
        _dir: dir,
        manifest,
        samples,
    }
}

fn refs(samples: &[Sample]) -> Vec<&Sample> {
    samples.iter().collect()
}

#[test]
fn zero_unsupervised_weight_gives_supervised_gradients() {
    let fx = fixture(8, 0);
    let (labeled, unlabeled) = fx.samples.split_at(2);
    let unlabeled: Vec<Sample> = unlabeled.iter().map(Sample::unlabeled).collect();
    for mode in [TrainMode::Resmatch, TrainMode::Fixmatch] {
        let cfg = TrainerConfig {
            lambda_u: 0.0,
            ..config(mode)
        };
        let mut sup_cfg = config(TrainMode::Supervised);
        sup_cfg.augmentation.profile = Some(cfg.profile_name());
        let model = toy(&cfg, &fx.samples);
        let ctx = StepContext::new(&cfg).unwrap();
        let sup_ctx = StepContext::new(&sup_cfg).unwrap();
        for step in 0..3 {
            let (_, g) = compute_step(
                &ctx,
                &model,
                &refs(labeled),
                &refs(&unlabeled[..2]),
                step,
                WeakGraph::Discard,
            )
            .unwrap();
            let (_, g_sup) = compute_step(&sup_ctx, &model, &refs(labeled), &[], step, WeakGraph::Discard).unwrap();
            assert_eq!(g, g_sup, "{mode} step {step}");
        }
    }
}

#[test]
fn weak_forward_contributes_no_gradient() {
    let fx = fixture(8, 0);
    let cfg = config(TrainMode::Resmatch);
    let model = toy(&cfg, &fx.samples);
    let ctx = StepContext::new(&cfg).unwrap();
    let (labeled, unlabeled) = fx.samples.split_at(2);
    for step in 0..3 {
        let (a, ga) = compute_step(
            &ctx,
            &model,
            &refs(labeled),
            &refs(&unlabeled[..2]),
            step,
            WeakGraph::Discard,
        )
        .unwrap();
        let (b, gb) = compute_step(
            &ctx,
            &model,
            &refs(labeled),
            &refs(&unlabeled[..2]),
            step,
            WeakGraph::Retain,
        )
        .unwrap();
        assert_eq!(ga, gb);
        assert_eq!(a.l_total, b.l_total);
    }
}

#[test]
fn resmatch_without_unlabeled_data_equals_supervised() {
    let fx = fixture(6, 0);
    let run = |mode| {
        let cfg = config(mode);
        let model = toy(&cfg, &fx.samples);
        let mut trainer = Trainer::new(StepContext::new(&cfg).unwrap(), model, fx.samples.clone(), Vec::new()).unwrap();
        trainer.run_epoch(|o| assert!(o.is_ok())).unwrap();
        trainer.run_epoch(|o| assert!(o.is_ok())).unwrap();
        trainer.into_model().parameters().to_vec()
    };
    let sup = run(TrainMode::Supervised);
    assert_eq!(run(TrainMode::Resmatch), sup);
}

fn trajectory(fx: &Fixture, cfg: &TrainerConfig, steps: usize) -> Vec<(f64, f64, f64)> {
    let (labeled, unlabeled) = fx.samples.split_at(3);
    let model = toy(cfg, &fx.samples);
    let mut trainer = Trainer::new(
        StepContext::new(cfg).unwrap(),
        model,
        labeled.to_vec(),
        unlabeled.to_vec(),
    )
    .unwrap();
    (0..steps)
        .map(|_| {
            let r = trainer.run_step().unwrap();
            (r.l_sup, r.l_unsup, r.l_total)
        })
        .collect()
}

#[test]
fn identical_seeds_reproduce_ten_steps() {
    let fx = fixture(12, 0);
    for mode in TrainMode::ALL {
        let cfg = config(mode);
        let a = trajectory(&fx, &cfg, 10);
        assert_eq!(a, trajectory(&fx, &cfg, 10), "{mode}");
        let other = TrainerConfig { seed: 1, ..cfg };
        assert_ne!(a, trajectory(&fx, &other, 10), "{mode}: seed ignored");
    }
}

fn body(dir: &Path) -> Vec<String> {
    fs::read_to_string(dir.join(RESULTS_FILE))
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let fx = fixture(12, 4);
    let split = make_split(&fx.manifest, 0.25, 2).unwrap();
    let out = tempfile::tempdir().unwrap();
    let full_dir = out.path().join("full");
    let part_dir = out.path().join("part");
    let two = TrainerConfig {
        epochs: 2,
        ..config(TrainMode::Resmatch)
    };
    let one = TrainerConfig {
        epochs: 1,
        ..two.clone()
    };
    let full = run_experiment(&two, &fx.manifest, &split, &full_dir, false).unwrap();
    run_experiment(&one, &fx.manifest, &split, &part_dir, false).unwrap();
    // a stray line past the checkpoint, as left by a crash mid-epoch
    let mut text = fs::read_to_string(part_dir.join(RESULTS_FILE)).unwrap();
    text.push_str("{\"step\":999,\"epoch\":1,\"L_sup\":1.0,\"L_unsup\":0.0,\"L_total\":5.0,\"mean_s\":null}\n");
    fs::write(part_dir.join(RESULTS_FILE), text).unwrap();
    let resumed = run_experiment(&two, &fx.manifest, &split, &part_dir, true).unwrap();

    assert_eq!(resumed.records, full.records);
    assert_eq!(resumed.final_oiou, full.final_oiou);
    assert_eq!(body(&part_dir), body(&full_dir));
    assert_eq!(
        fs::read(part_dir.join("last.ckpt")).unwrap(),
        fs::read(full_dir.join("last.ckpt")).unwrap()
    );

    let other = TrainerConfig { lambda_u: 1.0, ..two };
    let err = run_experiment(&other, &fx.manifest, &split, &part_dir, true).unwrap_err();
    assert!(matches!(err, Error::Checkpoint { .. }), "{err}");
}

#[test]
fn zero_epochs_only_evaluates() {
    let fx = fixture(8, 3);
    let split = make_split(&fx.manifest, 0.25, 0).unwrap();
    let out = tempfile::tempdir().unwrap();
    let cfg = TrainerConfig {
        epochs: 0,
        ..config(TrainMode::Resmatch)
    };
    let result = run_experiment(&cfg, &fx.manifest, &split, out.path(), false).unwrap();
    assert_eq!(result.steps, 0);
    assert_eq!(result.epochs_completed, 0);
    let lines = body(out.path());
    assert_eq!(lines.len(), 2);
    let record: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
    assert_eq!(record["step"], 0);
    assert!(record["L_total"].is_null());
    assert_eq!(record["oIoU"].as_f64(), result.val_oiou());
    assert!(!out.path().join("last.ckpt").exists());
}

#[test]
fn sweeps_emit_one_row_per_run() {
    let fx = fixture(20, 4);
    let out = tempfile::tempdir().unwrap();
    let cfg = config(TrainMode::Supervised);
    let rows = run_sweep(&cfg, &fx.manifest, &[0.05, 0.10, 1.0], &[1], out.path()).unwrap();
    assert_eq!(rows.iter().map(|r| r.ratio).collect::<Vec<_>>(), [0.05, 0.10, 1.0]);
    let rows = run_sweep(&cfg, &fx.manifest, &[0.1], &[1, 2, 3], out.path()).unwrap();
    assert_eq!(rows.len(), 3);
    let table = fs::read_to_string(out.path().join("summary.tsv")).unwrap();
    assert_eq!(table.lines().next(), Some("ratio\tseed\tmode\toIoU"));
    assert_eq!(table.lines().count(), 4);
    assert!(matches!(
        run_sweep(&cfg, &fx.manifest, &[], &[1], out.path()),
        Err(Error::Config(_))
    ));
}

/// Test double: a fixed output per expression, no parameters.
struct Oracle {
    answers: HashMap<String, Mask>,
    background: bool,
    mode: Mode,
}

impl ResModel for Oracle {
    type Tape = ();

    fn forward(&self, image: &Image, expression: &Expression) -> PredictionMap {
        let (h, w) = image.dims();
        if self.background {
            return PredictionMap::uniform(h, w, 0.0);
        }
        PredictionMap::from_mask(&self.answers[expression.raw()])
    }

    fn forward_with_tape(&self, image: &Image, expression: &Expression) -> (PredictionMap, ()) {
        (self.forward(image, expression), ())
    }

    fn backward(&self, _: &(), _: &ProbGrad, _: &mut [f64]) {}

    fn parameters(&self) -> &[f64] {
        &[]
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        &mut []
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }
}

#[test]
fn evaluation_against_test_doubles() {
    let fx = fixture(0, 6);
    let samples: Vec<Sample> = fx
        .manifest
        .load_split(SplitTag::Val)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut s = prepare_eval_sample(s, 16).unwrap();
            s.expression = Expression::new(format!("target {i}")).unwrap();
            s
        })
        .collect();
    let answers = samples
        .iter()
        .map(|s| (s.expression.raw().to_string(), s.mask.clone().unwrap()))
        .collect();
    let mut perfect = Oracle {
        answers,
        background: false,
        mode: Mode::Train,
    };
    let report = evaluate(&mut perfect, &samples, 16).unwrap();
    assert_eq!(report.oiou, 1.0);
    assert_eq!(report.count, 6);
    assert_eq!(perfect.mode(), Mode::Train);

    let mut blank = Oracle {
        background: true,
        ..perfect
    };
    assert_eq!(evaluate(&mut blank, &samples, 16).unwrap().oiou, 0.0);
    assert!(matches!(evaluate(&mut blank, &[], 16), Err(Error::Config(_))));
}

#[test]
fn evaluation_is_bit_exact_across_calls() {
    let fx = fixture(4, 4);
    let cfg = config(TrainMode::Resmatch);
    let mut model = toy(&cfg, &fx.samples);
    let val: Vec<Sample> = fx
        .manifest
        .load_split(SplitTag::Val)
        .unwrap()
        .iter()
        .map(|s| prepare_eval_sample(s, 16).unwrap())
        .collect();
    let a = evaluate(&mut model, &val, 16).unwrap();
    let b = evaluate(&mut model, &val, 16).unwrap();
    assert_eq!(a.oiou.to_bits(), b.oiou.to_bits());
    assert_eq!(a.per_sample, b.per_sample);
}

#[test]
fn fixmatch_loss_is_a_renormalised_resmatch_loss() {
    let fx = fixture(8, 0);
    let cfg = TrainerConfig {
        tau: 0.55,
        ..config(TrainMode::Fixmatch)
    };
    // an untrained model is rarely confident anywhere; train a little first
    let mut model = toy(&cfg, &fx.samples);
    let ctx = StepContext::new(&cfg).unwrap();
    let mut opt = AdamW::new(model.num_parameters(), cfg.weight_decay);
    let (labeled, unlabeled) = fx.samples.split_at(2);
    for step in 0..20 {
        train_step(&ctx, &mut model, &mut opt, &refs(labeled), &[], step).unwrap();
    }
    let (report, _) = compute_step(
        &ctx,
        &model,
        &refs(labeled),
        &refs(&unlabeled[..4]),
        20,
        WeakGraph::Discard,
    )
    .unwrap();
    assert!(report
        .unlabeled
        .iter()
        .all(|v| v.text_set.is_none() && v.strong_text == v.weak_text));
    assert!(report.unlabeled.iter().any(|v| v.bundle.valid_count() > 0));

    let b = report.unlabeled.len() as f64;
    let mut renormalised = 0.0;
    for v in &report.unlabeled {
        let mut bundle = v.bundle.clone();
        bundle.score = 1.0;
        let per_sample = unsupervised_loss(std::slice::from_ref(&v.strong_prediction), &[bundle.clone()]).unwrap();
        let valid = bundle.valid_count();
        if valid > 0 {
            renormalised += per_sample * v.strong_prediction.len() as f64 / valid as f64 / b;
        }
    }
    assert!(
        (renormalised - report.l_unsup).abs() < 1e-12,
        "{renormalised} vs {}",
        report.l_unsup
    );
}

#[test]
fn threshold_above_every_probability_silences_the_unlabeled_loss() {
    let fx = fixture(6, 0);
    let (labeled, unlabeled) = fx.samples.split_at(2);
    let model = toy(&config(TrainMode::Fixmatch), &fx.samples);
    for mode in [TrainMode::Fixmatch, TrainMode::Resmatch] {
        let cfg = TrainerConfig {
            tau: 1.0,
            ..config(mode)
        };
        let ctx = StepContext::new(&cfg).unwrap();
        let (report, _) = compute_step(
            &ctx,
            &model,
            &refs(labeled),
            &refs(&unlabeled[..2]),
            0,
            WeakGraph::Discard,
        )
        .unwrap();
        assert_eq!(report.l_unsup, 0.0, "{mode}");
        assert!(report.scores.iter().all(|&s| s == 0.0));
    }
    let p = PredictionMap::uniform(2, 2, 1.0);
    let bundle = make_pseudo_labels(&p, 1.0 + 1e-9);
    assert_eq!(bundle.valid_count(), 0);
    assert_eq!(unsupervised_loss(&[p], &[bundle]).unwrap(), 0.0);
}

/// One parameter, constant output, NaN gradient.
struct Poisoned {
    params: Vec<f64>,
}

impl ResModel for Poisoned {
    type Tape = ();

    fn forward(&self, image: &Image, _: &Expression) -> PredictionMap {
        let (h, w) = image.dims();
        PredictionMap::uniform(h, w, 0.3)
    }

    fn forward_with_tape(&self, image: &Image, e: &Expression) -> (PredictionMap, ()) {
        (self.forward(image, e), ())
    }

    fn backward(&self, _: &(), _: &ProbGrad, grads: &mut [f64]) {
        grads[0] = f64::NAN;
    }

    fn parameters(&self) -> &[f64] {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn mode(&self) -> Mode {
        Mode::Train
    }

    fn set_mode(&mut self, _: Mode) {}
}

#[test]
fn non_finite_steps_are_flagged_and_skipped() {
    let fx = fixture(6, 0);
    let cfg = config(TrainMode::Supervised);
    let (labeled, unlabeled) = fx.samples.split_at(2);
    let model = Poisoned { params: vec![0.25] };
    let mut trainer = Trainer::new(
        StepContext::new(&cfg).unwrap(),
        model,
        labeled.to_vec(),
        unlabeled.to_vec(),
    )
    .unwrap();
    let mut flagged = Vec::new();
    trainer
        .run_epoch(|o| match o {
            Err(Error::NonFiniteLoss { step, sample_ids }) => {
                assert_eq!(sample_ids.len(), 2);
                flagged.push(*step);
            }
            other => panic!("unexpected {other:?}"),
        })
        .unwrap();
    assert_eq!(flagged, [0, 1]);
    assert_eq!(trainer.epoch(), 1);
    assert_eq!(trainer.model().parameters(), &[0.25]);
    assert_eq!(trainer.optimizer().steps(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn logged_scores_are_zero_or_above_tau(seed in 0u64..1000, tau in 0.5f64..0.95) {
        let fx = fixture(6, 0);
        let cfg = TrainerConfig { seed, tau, ..config(TrainMode::Resmatch) };
        let (labeled, unlabeled) = fx.samples.split_at(2);
        let model = toy(&cfg, &fx.samples);
        let mut trainer = Trainer::new(StepContext::new(&cfg).unwrap(), model, labeled.to_vec(), unlabeled.to_vec()).unwrap();
        for _ in 0..4 {
            let report = trainer.run_step().unwrap();
            prop_assert!(report.is_finite());
            for s in report.scores {
                prop_assert!(s == 0.0 || (tau..=1.0).contains(&s), "score {s} with tau {tau}");
            }
        }
    }
}
