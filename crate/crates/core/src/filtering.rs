//! Moving-average prediction buffer, the top-k agreement filter and the outer
//! iterative filtering loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-6;

/// Per-sample exponential moving average of predicted class probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBuffer {
    alpha: f64,
    classes: usize,
    entries: BTreeMap<u64, Vec<f64>>,
}

impl PredictionBuffer {
    pub fn new(alpha: f64, classes: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::key("mva-alpha", "must lie in [0, 1)"));
        }
        if classes == 0 {
            return Err(Error::Config("buffer needs at least one class".into()));
        }
        Ok(PredictionBuffer {
            alpha,
            classes,
            entries: BTreeMap::new(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&[f64]> {
        self.entries.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[f64])> {
        self.entries.iter().map(|(id, v)| (*id, v.as_slice()))
    }

    /// First write stores `probs` verbatim; later writes blend
    /// `alpha * stored + (1 - alpha) * probs`.
    pub fn update(&mut self, id: u64, probs: &[f64]) -> Result<()> {
        if probs.len() != self.classes {
            return Err(Error::Input(format!(
                "prediction of width {} for a {}-class buffer",
                probs.len(),
                self.classes
            )));
        }
        let on_simplex = probs.iter().all(|p| p.is_finite() && *p >= -SIMPLEX_TOL)
            && (probs.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL;
        if !on_simplex {
            return Err(Error::Input(format!("prediction for id {id} is not a distribution")));
        }
        let alpha = self.alpha;
        self.entries
            .entry(id)
            .and_modify(|stored| {
                for (s, p) in stored.iter_mut().zip(probs) {
                    *s = alpha * *s + (1.0 - alpha) * p;
                }
            })
            .or_insert_with(|| probs.to_vec());
        Ok(())
    }
}

/// Free-function form of [`PredictionBuffer::update`].
pub fn mva_update(buffer: &mut PredictionBuffer, id: u64, probs: &[f64]) -> Result<()> {
    buffer.update(id, probs)
}

/// Whether `label` ranks within the top `topk` of `scores`; ties count as inside.
pub fn within_topk(scores: &[f64], label: usize, topk: usize) -> bool {
    let own = scores[label];
    scores.iter().filter(|&&s| s > own).count() < topk
}

/// Masks every label of `source` that the buffer does not rank within the top-k.
/// Features, ids and true labels are untouched; labels are never rewritten.
pub fn filter_labels(source: &Dataset, buffer: &PredictionBuffer, topk: usize) -> Result<Dataset> {
    if topk == 0 || topk > source.classes() {
        return Err(Error::key("topk", format!("must lie in 1..={}", source.classes())));
    }
    if buffer.classes() != source.classes() {
        return Err(Error::Internal("buffer and dataset class counts differ".into()));
    }
    let mut missing = None;
    let out = source.map_labels(|s| {
        let label = s.given_label?;
        match buffer.get(s.id) {
            Some(scores) => within_topk(scores, label, topk).then_some(label),
            None => {
                missing.get_or_insert(s.id);
                None
            }
        }
    })?;
    if let Some(id) = missing {
        return Err(Error::Internal(format!("no buffered prediction for sample {id}")));
    }
    Ok(out)
}

/// Filter-quality measures against hidden true labels. `None` marks a ratio
/// whose denominator is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseMetrics {
    pub noise_ratio_retained: Option<f64>,
    pub clean_label_recall: Option<f64>,
    pub noisy_label_removal_recall: Option<f64>,
}

/// Compares the labels retained in `current` against the original label set.
/// Samples missing from `current` count as removed.
pub fn noise_metrics(current: &Dataset, original: &Dataset) -> NoiseMetrics {
    let index = current.index_map();
    let (mut retained, mut retained_wrong) = (0usize, 0usize);
    let (mut clean, mut clean_kept) = (0usize, 0usize);
    let (mut noisy, mut noisy_removed) = (0usize, 0usize);
    for s in original.samples() {
        let Some(label) = s.given_label else { continue };
        let kept = index
            .get(&s.id)
            .is_some_and(|&i| current.samples()[i].given_label.is_some());
        let wrong = label != s.true_label;
        if kept {
            retained += 1;
            retained_wrong += usize::from(wrong);
        }
        if wrong {
            noisy += 1;
            noisy_removed += usize::from(!kept);
        } else {
            clean += 1;
            clean_kept += usize::from(kept);
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    NoiseMetrics {
        noise_ratio_retained: ratio(retained_wrong, retained),
        clean_label_recall: ratio(clean_kept, clean),
        noisy_label_removal_recall: ratio(noisy_removed, noisy),
    }
}

/// How later iterations derive their label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterStrategy {
    /// Mask labels of the original set; masked samples stay unsupervised.
    FromOriginal,
    /// Delete filtered samples from the current set; removals are final.
    CompleteRemoval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub n_max_iterations: usize,
    pub topk: usize,
    pub strategy: FilterStrategy,
}

/// What one training run hands back to the loop.
#[derive(Debug, Clone)]
pub struct TrainedIteration<M> {
    pub model: M,
    pub valid_acc: f64,
    pub buffer: PredictionBuffer,
}

/// One training run of the loop: trains on `labels`, optionally continuing from
/// `init`, and returns its best model together with the updated buffer.
pub trait IterationTrainer {
    type Model: Clone;

    fn train(
        &mut self,
        iteration: usize,
        labels: &Dataset,
        valid: &Dataset,
        init: Option<&Self::Model>,
        buffer: PredictionBuffer,
    ) -> Result<TrainedIteration<Self::Model>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub valid_acc: f64,
    pub accepted: bool,
    /// Samples present in the iteration's training set.
    pub sample_count: usize,
    pub retained_count: usize,
    /// Ids whose original label was masked or deleted for this iteration.
    pub masked_ids: Vec<u64>,
    pub metrics: NoiseMetrics,
}

#[derive(Debug, Clone)]
pub struct FilterLoopState<M> {
    /// Index of the last accepted iteration.
    pub iteration: usize,
    pub original: Dataset,
    /// Label set the best model was trained on.
    pub current: Dataset,
    /// Output of the filter applied after the last accepted iteration.
    pub filtered_after_best: Dataset,
    pub best_model: M,
    pub best_valid_acc: f64,
    pub buffer: PredictionBuffer,
    pub n_max_iterations: usize,
    pub history: Vec<IterationRecord>,
}

impl<M> FilterLoopState<M> {
    /// Number of training runs performed.
    pub fn runs(&self) -> usize {
        self.history.len()
    }
}

fn next_labels(
    cfg: &FilterConfig,
    original: &Dataset,
    current: &Dataset,
    buffer: &PredictionBuffer,
) -> Result<Dataset> {
    match cfg.strategy {
        FilterStrategy::FromOriginal => filter_labels(original, buffer, cfg.topk),
        FilterStrategy::CompleteRemoval => {
            Ok(filter_labels(current, buffer, cfg.topk)?.retain(|s| s.given_label.is_some()))
        }
    }
}

fn record(
    iteration: usize,
    valid_acc: f64,
    accepted: bool,
    labels: &Dataset,
    original: &Dataset,
) -> IterationRecord {
    let index = labels.index_map();
    let masked_ids = original
        .samples()
        .iter()
        .filter(|s| s.given_label.is_some())
        .filter(|s| {
            index
                .get(&s.id)
                .is_none_or(|&i| labels.samples()[i].given_label.is_none())
        })
        .map(|s| s.id)
        .collect();
    IterationRecord {
        iteration,
        valid_acc,
        accepted,
        sample_count: labels.len(),
        retained_count: labels.labeled_count(),
        masked_ids,
        metrics: noise_metrics(labels, original),
    }
}

/// Train, filter, retrain from the best snapshot, until a run fails to strictly
/// improve validation accuracy or `n_max_iterations` filtering rounds are spent.
pub fn iterative_filter_loop<T: IterationTrainer>(
    original: &Dataset,
    valid: &Dataset,
    cfg: &FilterConfig,
    trainer: &mut T,
    buffer: PredictionBuffer,
) -> Result<FilterLoopState<T::Model>> {
    if valid.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    if cfg.topk == 0 || cfg.topk > original.classes() {
        return Err(Error::key("topk", format!("must lie in 1..={}", original.classes())));
    }

    let first = trainer.train(0, original, valid, None, buffer)?;
    let mut history = vec![record(0, first.valid_acc, true, original, original)];
    let mut best_model = first.model;
    let mut best_acc = first.valid_acc;
    let mut buffer = first.buffer;
    let mut current = original.clone();
    let mut accepted_iteration = 0;

    for i in 1..=cfg.n_max_iterations {
        let labels = next_labels(cfg, original, &current, &buffer)?;
        let out = trainer.train(i, &labels, valid, Some(&best_model), buffer.clone())?;
        let accepted = out.valid_acc > best_acc;
        history.push(record(i, out.valid_acc, accepted, &labels, original));
        if !accepted {
            break;
        }
        best_model = out.model;
        best_acc = out.valid_acc;
        buffer = out.buffer;
        current = labels;
        accepted_iteration = i;
    }

    let filtered_after_best = next_labels(cfg, original, &current, &buffer)?;
    Ok(FilterLoopState {
        iteration: accepted_iteration,
        original: original.clone(),
        current,
        filtered_after_best,
        best_model,
        best_valid_acc: best_acc,
        buffer,
        n_max_iterations: cfg.n_max_iterations,
        history,
    })
}

/// The loop with final, sample-deleting removals.
pub fn complete_removal_variant<T: IterationTrainer>(
    original: &Dataset,
    valid: &Dataset,
    n_max_iterations: usize,
    topk: usize,
    trainer: &mut T,
    buffer: PredictionBuffer,
) -> Result<FilterLoopState<T::Model>> {
    let cfg = FilterConfig {
        n_max_iterations,
        topk,
        strategy: FilterStrategy::CompleteRemoval,
    };
    iterative_filter_loop(original, valid, &cfg, trainer, buffer)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

/// Writes the loop history as CSV.
pub fn write_history_csv<W: Write>(history: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Internal(format!("csv write: {e}"));
    w.write_record([
        "iteration",
        "valid_acc",
        "accepted",
        "retained_count",
        "noise_ratio_retained",
        "clean_label_recall",
        "noisy_label_removal_recall",
    ])
    .map_err(err)?;
    for r in history {
        w.write_record([
            r.iteration.to_string(),
            format!("{}", r.valid_acc),
            r.accepted.to_string(),
            r.retained_count.to_string(),
            fmt_opt(r.metrics.noise_ratio_retained),
            fmt_opt(r.metrics.clean_label_recall),
            fmt_opt(r.metrics.noisy_label_removal_recall),
        ])
        .map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::Internal(format!("csv flush: {e}")))
}

pub fn save_history_csv(history: &[IterationRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_history_csv(history, std::io::BufWriter::new(file))
}
