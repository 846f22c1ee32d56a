use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, prepare_eval_sample};
use super::{StepContext, Trainer};
use crate::augment_text::{PositionLexicon, TextResources};
use crate::checkpoint::Checkpoint;
use crate::config::{TrainMode, TrainerConfig};
use crate::data::{make_split, DatasetManifest, DatasetSource, SemiSplit, SplitTag};
use crate::error::{Error, Result};
use crate::model::{ToyResModel, Vocabulary};
use crate::types::{Expression, Sample};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const SWEEP_SUMMARY_FILE: &str = "summary.tsv";

/// First line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsHeader {
    pub config: TrainerConfig,
    pub dataset: PathBuf,
    pub source: DatasetSource,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub labeled: usize,
    pub unlabeled: usize,
}

/// One line of `results.jsonl` after the header. Losses are `null` for
/// flagged (non-finite) steps and for the evaluation-only record of a
/// zero-epoch run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    #[serde(rename = "L_sup")]
    pub l_sup: Option<f64>,
    #[serde(rename = "L_unsup")]
    pub l_unsup: Option<f64>,
    #[serde(rename = "L_total")]
    pub l_total: Option<f64>,
    pub mean_s: Option<f64>,
    #[serde(rename = "oIoU", default, skip_serializing_if = "Option::is_none")]
    pub oiou: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub nonfinite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    /// Final overall IoU per evaluation split present in the manifest.
    pub final_oiou: BTreeMap<String, f64>,
    pub best_oiou: Option<f64>,
    pub epochs_completed: usize,
    pub steps: u64,
    pub flagged_steps: usize,
    pub out_dir: PathBuf,
    #[serde(skip)]
    pub records: Vec<StepRecord>,
}

impl ExperimentResult {
    pub fn val_oiou(&self) -> Option<f64> {
        self.final_oiou.get(SplitTag::Val.as_str()).copied()
    }
}

/// Tokens of the training expressions plus every word the text augmentation
/// can produce from them.
pub fn build_vocabulary<'a>(
    expressions: impl IntoIterator<Item = &'a Expression>,
    text: &TextResources,
    lexicon: &PositionLexicon,
) -> Vocabulary {
    let mut words = BTreeSet::new();
    for e in expressions {
        for t in e.tokens() {
            words.insert(t.clone());
            words.extend(
                text.synonyms
                    .synonyms(t)
                    .iter()
                    .flat_map(|s| s.split_whitespace().map(str::to_string)),
            );
            if let Some(m) = lexicon.mirror(t) {
                words.insert(m.to_string());
            }
        }
    }
    Vocabulary::from(
        std::iter::once(Vocabulary::UNKNOWN.to_string())
            .chain(words)
            .collect::<Vec<_>>(),
    )
}

fn load_ids(manifest: &DatasetManifest, ids: &[String], keep_masks: bool) -> Result<Vec<Sample>> {
    ids.iter()
        .map(|id| {
            let record = manifest
                .get(id)
                .ok_or_else(|| Error::Config(format!("split id {id} not in manifest")))?;
            let s = manifest.load_sample(record)?;
            Ok(if keep_masks { s } else { s.unlabeled() })
        })
        .collect()
}

struct ResultsWriter {
    path: PathBuf,
    file: File,
}

impl ResultsWriter {
    fn create(path: &Path, header: &ResultsHeader) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{}", serde_json::to_string(header)?).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Rewrites the header and keeps the records before `step`, dropping the rest.
    fn reopen(path: &Path, header: &ResultsHeader, step: u64) -> Result<(Self, Vec<StepRecord>)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        if lines.next().transpose().map_err(|e| Error::io(path, e))?.is_none() {
            return Err(Error::Config(format!("{} has no header", path.display())));
        }
        let mut kept = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            let Ok(record) = serde_json::from_str::<StepRecord>(&line) else {
                break;
            };
            if record.step >= step {
                break;
            }
            kept.push(record);
        }
        let mut writer = Self::create(path, header)?;
        writer.write(&kept)?;
        Ok((writer, kept))
    }

    fn write(&mut self, records: &[StepRecord]) -> Result<()> {
        for r in records {
            writeln!(self.file, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(&self.path, e))?;
        }
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn record_of(outcome: &super::StepOutcome, step: u64, epoch: usize) -> StepRecord {
    match outcome {
        Ok(r) => StepRecord {
            step,
            epoch,
            l_sup: Some(r.l_sup),
            l_unsup: Some(r.l_unsup),
            l_total: Some(r.l_total),
            mean_s: r.mean_score(),
            oiou: None,
            nonfinite: false,
        },
        Err(_) => StepRecord {
            step,
            epoch,
            l_sup: None,
            l_unsup: None,
            l_total: None,
            mean_s: None,
            oiou: None,
            nonfinite: true,
        },
    }
}

/// Trains one configuration on one split, writing `results.jsonl`,
/// `last.ckpt`, `best.ckpt` and `summary.json` under `out_dir`.
///
/// With `resume`, an existing `last.ckpt` in `out_dir` is picked up and the
/// run continues from the end of its last completed epoch.
pub fn run_experiment(
    config: &TrainerConfig,
    manifest: &DatasetManifest,
    split: &SemiSplit,
    out_dir: &Path,
    resume: bool,
) -> Result<ExperimentResult> {
    config.validate()?;
    split.validate(manifest)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ctx = StepContext::new(config)?;

    let labeled = load_ids(manifest, &split.labeled, true)?;
    let unlabeled = load_ids(manifest, &split.unlabeled, false)?;
    let mut eval_sets = Vec::new();
    for tag in [SplitTag::Val, SplitTag::TestA, SplitTag::TestB] {
        let samples = manifest.load_split(tag)?;
        if !samples.is_empty() {
            let prepared = samples
                .iter()
                .map(|s| prepare_eval_sample(s, config.image_size))
                .collect::<Result<Vec<_>>>()?;
            eval_sets.push((tag, prepared));
        }
    }

    let last_path = out_dir.join(LAST_CHECKPOINT);
    let best_path = out_dir.join(BEST_CHECKPOINT);
    let results_path = out_dir.join(RESULTS_FILE);
    let fingerprint = config.fingerprint();

    let resumed = if resume && last_path.exists() {
        let ckpt = Checkpoint::load(&last_path)?;
        if ckpt.header.config_fingerprint != fingerprint {
            return Err(Error::Checkpoint {
                path: last_path,
                message: "checkpoint was written under a different configuration".into(),
            });
        }
        Some(ckpt)
    } else {
        None
    };

    let model = match &resumed {
        Some(ckpt) => ckpt.model()?,
        None => {
            let vocab = build_vocabulary(
                labeled.iter().chain(&unlabeled).map(|s| &s.expression),
                ctx.text_resources(),
                ctx.lexicon(),
            );
            ToyResModel::new(config.model.clone(), vocab, ctx.seeds().child("model-init"))?
        }
    };
    let mut trainer = Trainer::new(ctx, model, labeled, unlabeled)?;
    let mut best = None;
    let header = ResultsHeader {
        config: config.clone(),
        dataset: manifest.root().to_path_buf(),
        source: manifest.source(),
        split_ratio: split.ratio,
        split_seed: split.seed,
        labeled: split.labeled.len(),
        unlabeled: split.unlabeled.len(),
    };
    let (mut writer, mut records) = match &resumed {
        Some(ckpt) => {
            trainer.restore(ckpt.optimizer(), ckpt.header.step, ckpt.header.epoch)?;
            best = ckpt.header.best_oiou;
            info!("resuming from epoch {} (step {})", ckpt.header.epoch, ckpt.header.step);
            ResultsWriter::reopen(&results_path, &header, ckpt.header.step)?
        }
        None => (ResultsWriter::create(&results_path, &header)?, Vec::new()),
    };

    let val_index = eval_sets.iter().position(|(t, _)| *t == SplitTag::Val);
    let mut last_val = None;
    let mut flagged = records.iter().filter(|r| r.nonfinite).count();

    if config.epochs == 0 && resumed.is_none() {
        if let Some(vi) = val_index {
            let report = evaluate(trainer.model_mut(), &eval_sets[vi].1, config.image_size)?;
            last_val = Some((0, report.oiou));
            let record = StepRecord {
                step: 0,
                epoch: 0,
                l_sup: None,
                l_unsup: None,
                l_total: None,
                mean_s: None,
                oiou: Some(report.oiou),
                nonfinite: false,
            };
            writer.write(std::slice::from_ref(&record))?;
            records.push(record);
        }
    }

    while trainer.epoch() < config.epochs {
        let epoch = trainer.epoch();
        let mut epoch_records = Vec::with_capacity(trainer.steps_per_epoch());
        let mut step = trainer.step();
        trainer.run_epoch(|outcome| {
            if let Err(e) = outcome {
                warn!("{e}");
            }
            epoch_records.push(record_of(outcome, step, epoch));
            step += 1;
        })?;
        flagged += epoch_records.iter().filter(|r| r.nonfinite).count();
        let completed = trainer.epoch();
        let due = config.eval_every > 0 && completed % config.eval_every == 0;
        let mut improved = false;
        if let (Some(vi), true) = (val_index, due || completed == config.epochs) {
            let report = evaluate(trainer.model_mut(), &eval_sets[vi].1, config.image_size)?;
            info!("epoch {completed}: val oIoU {:.4}", report.oiou);
            last_val = Some((completed, report.oiou));
            if let Some(r) = epoch_records.last_mut() {
                r.oiou = Some(report.oiou);
            }
            if best.is_none_or(|b| report.oiou > b) {
                best = Some(report.oiou);
                improved = true;
            }
        }
        writer.write(&epoch_records)?;
        records.extend(epoch_records);
        let ckpt = Checkpoint::capture(
            trainer.model(),
            trainer.optimizer(),
            fingerprint,
            completed,
            trainer.step(),
            best,
        );
        ckpt.save(&last_path)?;
        if improved {
            ckpt.save(&best_path)?;
        }
    }

    let mut final_oiou = BTreeMap::new();
    for (i, (tag, samples)) in eval_sets.iter().enumerate() {
        let value = match last_val {
            Some((epoch, v)) if Some(i) == val_index && epoch == trainer.epoch() => v,
            _ => evaluate(trainer.model_mut(), samples, config.image_size)?.oiou,
        };
        final_oiou.insert(tag.as_str().to_string(), value);
    }
    let result = ExperimentResult {
        final_oiou,
        best_oiou: best,
        epochs_completed: trainer.epoch(),
        steps: trainer.step(),
        flagged_steps: flagged,
        out_dir: out_dir.to_path_buf(),
        records,
    };
    let summary_path = out_dir.join(SUMMARY_FILE);
    fs::write(&summary_path, serde_json::to_string_pretty(&result)?).map_err(|e| Error::io(&summary_path, e))?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub oiou: f64,
}

/// One run per `(ratio, seed)`; the seed drives both the split and the run.
/// Writes `summary.tsv` with columns `ratio, seed, mode, oIoU` under `out_dir`.
pub fn run_sweep(
    config: &TrainerConfig,
    manifest: &DatasetManifest,
    ratios: &[f64],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Vec<SweepRow>> {
    if ratios.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one ratio and one seed".into()));
    }
    if manifest.split(SplitTag::Val).next().is_none() {
        return Err(Error::Config("sweep needs a val split to report".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let summary_path = out_dir.join(SWEEP_SUMMARY_FILE);
    let mut summary = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(&summary_path)
        .map_err(|e| Error::io(&summary_path, e))?;
    writeln!(summary, "ratio\tseed\tmode\toIoU").map_err(|e| Error::io(&summary_path, e))?;
    let mut rows = Vec::new();
    for &ratio in ratios {
        for &seed in seeds {
            let split = make_split(manifest, ratio, seed)?;
            let run_config = TrainerConfig { seed, ..config.clone() };
            let run_dir = out_dir.join(format!("ratio-{ratio}-seed-{seed}"));
            let result = run_experiment(&run_config, manifest, &split, &run_dir, false)?;
            let row = SweepRow {
                ratio,
                seed,
                mode: config.mode,
                oiou: result.val_oiou().expect("val split checked above"),
            };
            writeln!(summary, "{}\t{}\t{}\t{:.6}", row.ratio, row.seed, row.mode, row.oiou)
                .map_err(|e| Error::io(&summary_path, e))?;
            rows.push(row);
        }
    }
    Ok(rows)
}
