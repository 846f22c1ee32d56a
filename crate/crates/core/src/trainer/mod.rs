//! Training loop: per-mode steps, batching, evaluation and experiment runs.

mod eval;
mod experiment;
mod step;

pub use eval::{evaluate, prepare_eval_sample, EvalReport};
pub use experiment::{
    build_vocabulary, run_experiment, run_sweep, ExperimentResult, ResultsHeader, StepRecord, SweepRow,
    BEST_CHECKPOINT, LAST_CHECKPOINT, RESULTS_FILE, SUMMARY_FILE, SWEEP_SUMMARY_FILE,
};
pub use step::{compute_step, train_step, StepContext, StepReport, UnlabeledView, WeakGraph};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::{AdamW, ResModel};
use crate::rng::SeedTree;
use crate::types::Sample;

/// Outcome of one attempted step inside [`Trainer::run_epoch`].
pub type StepOutcome = Result<StepReport>;

/// Owns the model, optimizer and data of one run and walks through epochs.
///
/// An epoch is `ceil(|U| / B_u)` steps, or `ceil(|L| / B_l)` without unlabeled
/// data, in every mode. Labeled batches come from an endless chain of seeded
/// permutations; unlabeled batches from one seeded permutation per epoch.
pub struct Trainer<M: ResModel> {
    ctx: StepContext,
    model: M,
    optimizer: AdamW,
    labeled: Vec<Sample>,
    unlabeled: Vec<Sample>,
    step: u64,
    epoch: usize,
}

impl<M: ResModel> Trainer<M> {
    /// Masks on `unlabeled` samples are dropped.
    pub fn new(ctx: StepContext, model: M, labeled: Vec<Sample>, unlabeled: Vec<Sample>) -> Result<Self> {
        if labeled.is_empty() {
            return Err(Error::Config("training needs at least one labeled sample".into()));
        }
        if let Some(s) = labeled.iter().find(|s| s.mask.is_none()) {
            return Err(Error::Record {
                id: s.id.clone(),
                message: "labeled sample has no mask".into(),
            });
        }
        let optimizer = AdamW::new(model.num_parameters(), ctx.config().weight_decay);
        Ok(Self {
            ctx,
            model,
            optimizer,
            labeled,
            unlabeled: unlabeled.iter().map(Sample::unlabeled).collect(),
            step: 0,
            epoch: 0,
        })
    }

    pub fn context(&self) -> &StepContext {
        &self.ctx
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut M {
        &mut self.model
    }

    pub fn optimizer(&self) -> &AdamW {
        &self.optimizer
    }

    pub fn into_model(self) -> M {
        self.model
    }

    /// Steps attempted so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Resets the loop position and optimizer state, e.g. from a checkpoint.
    pub fn restore(&mut self, optimizer: AdamW, step: u64, epoch: usize) -> Result<()> {
        if optimizer.m.len() != self.model.num_parameters() {
            return Err(Error::Shape(format!(
                "optimizer state for {} parameters, model has {}",
                optimizer.m.len(),
                self.model.num_parameters()
            )));
        }
        self.optimizer = optimizer;
        self.step = step;
        self.epoch = epoch;
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        let cfg = self.ctx.config();
        if self.unlabeled.is_empty() {
            self.labeled.len().div_ceil(cfg.batch_size_labeled)
        } else {
            self.unlabeled.len().div_ceil(cfg.batch_size_unlabeled)
        }
    }

    fn permutation(&self, stream: &str, index: u64, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let seed: SeedTree = self.ctx.seeds().child("data").child(stream).index(index);
        order.shuffle(&mut seed.rng());
        order
    }

    /// Labeled and unlabeled sample indices for global step `step`.
    pub fn batch_indices(&self, step: u64) -> (Vec<usize>, Vec<usize>) {
        let cfg = self.ctx.config();
        let n = self.labeled.len();
        let bl = cfg.batch_size_labeled;
        let mut labeled = Vec::with_capacity(bl);
        let mut cached: Option<(usize, Vec<usize>)> = None;
        for j in 0..bl {
            let pos = step as usize * bl + j;
            let k = pos / n;
            if cached.as_ref().map(|c| c.0) != Some(k) {
                cached = Some((k, self.permutation("labeled", k as u64, n)));
            }
            labeled.push(cached.as_ref().expect("just filled").1[pos % n]);
        }
        let mut unlabeled = Vec::new();
        if !self.unlabeled.is_empty() {
            let bu = cfg.batch_size_unlabeled;
            let spe = self.steps_per_epoch() as u64;
            let b = (step % spe) as usize;
            let perm = self.permutation("unlabeled", step / spe, self.unlabeled.len());
            unlabeled = perm[b * bu..((b + 1) * bu).min(perm.len())].to_vec();
        }
        (labeled, unlabeled)
    }

    /// Runs the next step. The step counter advances even when the step is
    /// flagged as non-finite, so the following batch is unchanged; finishing
    /// the last step of an epoch advances the epoch counter.
    pub fn run_step(&mut self) -> StepOutcome {
        let (li, ui) = self.batch_indices(self.step);
        let labeled: Vec<&Sample> = li.iter().map(|&i| &self.labeled[i]).collect();
        let unlabeled: Vec<&Sample> = ui.iter().map(|&i| &self.unlabeled[i]).collect();
        let outcome = train_step(
            &self.ctx,
            &mut self.model,
            &mut self.optimizer,
            &labeled,
            &unlabeled,
            self.step,
        );
        self.step += 1;
        if self.step.is_multiple_of(self.steps_per_epoch() as u64) {
            self.epoch += 1;
        }
        outcome
    }

    /// Runs the remaining steps of the current epoch, reporting each outcome.
    /// Flagged steps are reported and skipped; other errors stop the epoch.
    pub fn run_epoch(&mut self, mut on_step: impl FnMut(&StepOutcome)) -> Result<()> {
        let end = (self.step / self.steps_per_epoch() as u64 + 1) * self.steps_per_epoch() as u64;
        while self.step < end {
            let outcome = self.run_step();
            on_step(&outcome);
            match outcome {
                Ok(_) | Err(Error::NonFiniteLoss { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }
}
