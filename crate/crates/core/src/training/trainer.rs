use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, Task};
use super::model::{batch_loss_and_grad, predict, Model, PreparedTree, Target};
use super::params::{ParameterStore, StoreShape};
use super::radam::Optimizer;
use crate::ast::{AstTree, ProgramRecord, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::heads::{subword_metrics, Prediction};

/// Canonical string form of a name: lowercase sub-words joined by `_`.
pub fn join_subwords(words: &[String]) -> String {
    words.join("_")
}

fn in_split(records: &[ProgramRecord], split: Split) -> Vec<&ProgramRecord> {
    records.iter().filter(|r| r.split == Some(split)).collect()
}

/// Class names (classification) or the closed name list built from the
/// training split (naming).
pub fn output_names(records: &[ProgramRecord], task: Task) -> Result<Vec<String>> {
    match task {
        Task::Classify => {
            let mut names: Vec<Option<String>> = Vec::new();
            for r in records {
                let label = r
                    .label
                    .ok_or_else(|| Error::Schema(format!("record `{}` has no class label", r.id)))?;
                if names.len() <= label {
                    names.resize(label + 1, None);
                }
                if names[label].is_none() {
                    names[label] = r.class_name.clone();
                }
            }
            Ok(names
                .into_iter()
                .enumerate()
                .map(|(k, n)| n.unwrap_or_else(|| format!("class_{k}")))
                .collect())
        }
        Task::Name => {
            let mut names = BTreeSet::new();
            for r in in_split(records, Split::Train) {
                let words = r
                    .name_subwords
                    .as_ref()
                    .ok_or_else(|| Error::Schema(format!("record `{}` has no name sub-words", r.id)))?;
                names.insert(join_subwords(words));
            }
            if names.is_empty() {
                return Err(Error::EmptyDataset);
            }
            Ok(names.into_iter().collect())
        }
    }
}

impl Model<f32> {
    /// Fresh model: vocabulary and output list from the data, parameters
    /// drawn from the configured seed.
    pub fn from_records(records: &[ProgramRecord], cfg: &ModelConfig) -> Result<Self> {
        let train = in_split(records, Split::Train);
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let vocab = Vocabulary::from_trees(train.iter().map(|r| &r.ast), cfg.min_count)?;
        let outputs = output_names(records, cfg.task)?;
        let mut config = cfg.clone();
        config.num_code = match cfg.task {
            Task::Classify => outputs.len(),
            Task::Name => 1,
        };
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let store = ParameterStore::init(&config, StoreShape::new(&vocab, outputs.len()), &mut rng);
        Ok(Model {
            config,
            vocab,
            outputs,
            store,
        })
    }
}

impl<T: crate::real::Real> Model<T> {
    pub fn prepare(&self, tree: &AstTree) -> PreparedTree {
        let mask = self.config.mask_function_name && self.config.task == Task::Classify;
        PreparedTree::new(tree, &self.vocab, mask)
    }

    pub fn predict_tree(&self, tree: &AstTree) -> Result<Prediction> {
        predict(&self.store, &self.config, &self.prepare(tree))
    }

    /// Predictions for many trees, evaluated in parallel, in input order.
    pub fn predict_many(&self, trees: &[&AstTree]) -> Result<Vec<Prediction>> {
        trees.par_iter().map(|t| self.predict_tree(t)).collect()
    }

    /// Training target of a record; `None` for names outside the model's
    /// closed name list.
    pub fn target_of(&self, record: &ProgramRecord) -> Result<Option<Target>> {
        match self.config.task {
            Task::Classify => {
                let label = record
                    .label
                    .ok_or_else(|| Error::Schema(format!("record `{}` has no class label", record.id)))?;
                if label >= self.outputs.len() {
                    return Err(Error::Schema(format!(
                        "record `{}` has label {label} but the model knows {} classes",
                        record.id,
                        self.outputs.len()
                    )));
                }
                Ok(Some(Target::Class(label)))
            }
            Task::Name => {
                let words = record
                    .name_subwords
                    .as_ref()
                    .ok_or_else(|| Error::Schema(format!("record `{}` has no name sub-words", record.id)))?;
                let name = join_subwords(words);
                Ok(self.outputs.iter().position(|o| *o == name).map(Target::Name))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub task: Task,
    pub examples: usize,
    /// Classification accuracy, or exact-match rate for names.
    pub accuracy: f64,
    /// Macro-averaged over classes, or averaged per example over
    /// sub-words for names.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EvalMetrics {
    /// Headline number used for model selection.
    pub fn primary(&self) -> f64 {
        match self.task {
            Task::Classify => self.accuracy,
            Task::Name => self.f1,
        }
    }
}

pub fn evaluate<T: crate::real::Real>(model: &Model<T>, records: &[&ProgramRecord]) -> Result<EvalMetrics> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let trees: Vec<&AstTree> = records.iter().map(|r| &r.ast).collect();
    let preds = model.predict_many(&trees)?;
    let n = records.len() as f64;
    match model.config.task {
        Task::Classify => {
            let k = model.outputs.len();
            let mut tp = vec![0usize; k];
            let mut predicted = vec![0usize; k];
            let mut actual = vec![0usize; k];
            for (r, p) in records.iter().zip(&preds) {
                let gold = match model.target_of(r)? {
                    Some(Target::Class(g)) => g,
                    _ => unreachable!("classification targets always exist"),
                };
                actual[gold] += 1;
                predicted[p.index] += 1;
                if p.index == gold {
                    tp[gold] += 1;
                }
            }
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let classes: Vec<usize> = (0..k).filter(|&c| actual[c] > 0 || predicted[c] > 0).collect();
            let m = classes.len().max(1) as f64;
            let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
            for &c in &classes {
                let p = ratio(tp[c], predicted[c]);
                let r = ratio(tp[c], actual[c]);
                p_sum += p;
                r_sum += r;
                f_sum += if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            }
            Ok(EvalMetrics {
                task: Task::Classify,
                examples: records.len(),
                accuracy: tp.iter().sum::<usize>() as f64 / n,
                precision: p_sum / m,
                recall: r_sum / m,
                f1: f_sum / m,
            })
        }
        Task::Name => {
            let (mut exact, mut p_sum, mut r_sum, mut f_sum) = (0usize, 0.0, 0.0, 0.0);
            for (r, p) in records.iter().zip(&preds) {
                let gold = join_subwords(
                    r.name_subwords
                        .as_ref()
                        .ok_or_else(|| Error::Schema(format!("record `{}` has no name sub-words", r.id)))?,
                );
                let guess = &model.outputs[p.index];
                let s = subword_metrics(guess, &gold);
                if s.precision == 1.0 && s.recall == 1.0 {
                    exact += 1;
                }
                p_sum += s.precision;
                r_sum += s.recall;
                f_sum += s.f1;
            }
            Ok(EvalMetrics {
                task: Task::Name,
                examples: records.len(),
                accuracy: exact as f64 / n,
                precision: p_sum / n,
                recall: r_sum / n,
                f1: f_sum / n,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub wall_time: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Parameters from the epoch with the best validation metric.
    pub model: Model<f32>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub steps: u64,
}

/// Trains on the `train` split, selecting on `val`. When `log_path` is
/// given, one JSON line per epoch is written there as training proceeds.
pub fn train(records: &[ProgramRecord], cfg: &ModelConfig, log_path: Option<&Path>) -> Result<TrainReport> {
    let mut model = Model::from_records(records, cfg)?;
    let val = in_split(records, Split::Val);
    if val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut train_set: Vec<(PreparedTree, Target)> = Vec::new();
    for r in in_split(records, Split::Train) {
        if let Some(t) = model.target_of(r)? {
            train_set.push((model.prepare(&r.ast), t));
        }
    }
    let mut log_file = match log_path {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| Error::file(p, e))?)),
        None => None,
    };

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut optimizer = Optimizer::new(cfg.optimizer, &model.store);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = (f64::NEG_INFINITY, 0usize, model.store.clone());
    let mut stale = 0usize;
    let mut log = Vec::new();
    let mut out_of_time = false;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&PreparedTree, Target)> = chunk.iter().map(|&i| (&train_set[i].0, train_set[i].1)).collect();
            let (loss, grads) = batch_loss_and_grad(&model.store, &model.config, &batch)?;
            optimizer.step(&mut model.store, &grads, lr)?;
            loss_sum += f64::from(loss) * batch.len() as f64;
            seen += batch.len();
            if cfg.time_budget_secs.is_some_and(|b| start.elapsed().as_secs_f64() > b) {
                out_of_time = true;
                break;
            }
        }
        let metrics = evaluate(&model, &val)?;
        let entry = EpochLog {
            epoch: epoch + 1,
            train_loss: loss_sum / seen.max(1) as f64,
            val_metric: metrics.primary(),
            wall_time: start.elapsed().as_secs_f64(),
            lr,
        };
        if let Some(f) = log_file.as_mut() {
            serde_json::to_writer(&mut *f, &entry)?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        if entry.val_metric > best.0 {
            best = (entry.val_metric, entry.epoch, model.store.clone());
            stale = 0;
        } else {
            stale += 1;
        }
        let reached = cfg.target_metric.is_some_and(|t| entry.val_metric >= t);
        log.push(entry);
        if out_of_time || reached || stale >= cfg.patience.max(1) {
            break;
        }
    }
    model.store = best.2;
    Ok(TrainReport {
        model,
        log,
        best_epoch: best.1,
        best_val: best.0,
        steps: optimizer.step,
    })
}

/// Records of one split, for evaluation helpers.
pub fn split_records(records: &[ProgramRecord], split: Split) -> Vec<&ProgramRecord> {
    in_split(records, split)
}
