//! Student/teacher training with EMA weight averaging and early stopping on
//! teacher validation accuracy.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{BatchPlan, BatchScheduler, Dataset};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::filtering::{IterationTrainer, PredictionBuffer, TrainedIteration};
use crate::losses::{total_batch_loss, BatchTargets, LossWeights, UnsupervisedTerm};
use crate::netcore::{
    argmax, cosine_lr, sgd_nesterov_step, softmax_rows, Activation, Matrix, NetworkParams,
    OptimizerState,
};

/// Two networks of identical shape; the teacher tracks an EMA of the student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherStudentPair {
    pub student: NetworkParams,
    pub teacher: NetworkParams,
}

impl TeacherStudentPair {
    /// Teacher starts as an exact copy of the student.
    pub fn from_student(student: NetworkParams) -> Self {
        TeacherStudentPair {
            teacher: student.clone(),
            student,
        }
    }

    pub fn init(input_dim: usize, classes: usize, cfg: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x1417));
        let student =
            NetworkParams::init(input_dim, &cfg.hidden, classes, cfg.activation, &mut rng)?;
        Ok(Self::from_student(student))
    }
}

/// `teacher <- beta * teacher + (1 - beta) * student` on every tensor.
pub fn ema_update(pair: &mut TeacherStudentPair, beta: f64) -> Result<()> {
    if !pair.student.same_shape(&pair.teacher) {
        return Err(Error::Internal("teacher and student shapes differ".into()));
    }
    let one_minus = 1.0 - beta;
    for (t, s) in pair.teacher.tensors_mut().zip(pair.student.tensors()) {
        for (ti, si) in t.iter_mut().zip(s) {
            *ti = beta * *ti + one_minus * si;
        }
    }
    Ok(())
}

/// Which label an accuracy is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    /// The (possibly noisy) given label; unlabeled samples are skipped.
    Given,
    /// Ground truth, used for clean test sets.
    True,
}

/// Fraction of samples whose argmax prediction equals the reference label.
pub fn evaluate(params: &NetworkParams, dataset: &Dataset, source: LabelSource) -> Result<f64> {
    let logits = params.forward(&dataset.feature_matrix())?;
    accuracy_from_scores(&logits, dataset, source)
}

pub(crate) fn accuracy_from_scores(
    scores: &Matrix,
    dataset: &Dataset,
    source: LabelSource,
) -> Result<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for (row, s) in scores.iter_rows().zip(dataset.samples()) {
        let reference = match source {
            LabelSource::Given => s.given_label,
            LabelSource::True => Some(s.true_label),
        };
        if let Some(label) = reference {
            total += 1;
            if argmax(row) == label {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Undefined(
            "accuracy over a dataset with no labeled samples".into(),
        ));
    }
    Ok(correct as f64 / total as f64)
}

/// Hyperparameters of one `train_and_valid` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// EMA decay of the teacher; only used by mean-teacher terms.
    pub beta: f64,
    pub weights: LossWeights,
    pub term: UnsupervisedTerm,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub labeled_per_batch: usize,
    pub unlabeled_per_batch: usize,
    /// Standard deviation of the Gaussian jitter added to student inputs.
    pub jitter: f64,
    pub topk: usize,
    pub mva_alpha: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 100,
            patience: 20,
            base_lr: 0.05,
            momentum: 0.9,
            weight_decay: 2e-4,
            beta: 0.99,
            weights: LossWeights::default(),
            term: UnsupervisedTerm::MeanTeacher(crate::losses::ConsistencyKind::Mse),
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            labeled_per_batch: 32,
            unlabeled_per_batch: 96,
            jitter: 0.1,
            topk: 1,
            mva_alpha: 0.6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::key("max-epochs", "must be positive"));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::key("patience", "must lie in 1..=max-epochs"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::key("beta", "EMA decay must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.mva_alpha) {
            return Err(Error::key("mva-alpha", "must lie in [0, 1)"));
        }
        if self.topk == 0 {
            return Err(Error::key("topk", "must be at least 1"));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::key("jitter", "must be non-negative"));
        }
        if self.labeled_per_batch + self.unlabeled_per_batch == 0 {
            return Err(Error::key("labeled-per-batch", "batch must hold at least one sample"));
        }
        if self.term != UnsupervisedTerm::None && self.unlabeled_per_batch == 0 {
            return Err(Error::key(
                "unlabeled-per-batch",
                "unsupervised terms need a positive unlabeled batch size",
            ));
        }
        self.weights.validate()?;
        // probe the optimizer's own checks
        let probe = NetworkParams::from_layers(
            vec![crate::netcore::DenseLayer::zeros(1, 1)],
            Activation::Linear,
        )?;
        OptimizerState::new(
            &probe,
            self.base_lr,
            self.momentum,
            self.weight_decay,
            self.max_epochs,
        )?;
        Ok(())
    }

    /// EMA decay actually applied: without a mean-teacher term the teacher
    /// simply mirrors the student.
    pub fn effective_beta(&self) -> f64 {
        if self.term.needs_teacher() {
            self.beta
        } else {
            0.0
        }
    }
}

/// Per-epoch training telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub student_valid_acc: f64,
    pub teacher_valid_acc: f64,
    pub lr: f64,
    pub consistency_weight: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot taken at the epoch with the highest teacher validation accuracy.
    pub best: TeacherStudentPair,
    pub best_teacher_valid_acc: f64,
    pub best_epoch: usize,
    pub records: Vec<EpochRecord>,
    /// Prediction buffer after the last completed epoch.
    pub buffer: PredictionBuffer,
}

/// Inputs of one training run besides the configuration.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    /// Current label set; masked samples still feed the unsupervised stream.
    pub train: &'a Dataset,
    pub valid: &'a Dataset,
    /// Original labels, consulted only by the push-away term.
    pub original: Option<&'a Dataset>,
}

/// Trains `init` on `data.train`, early-stopping on teacher validation accuracy.
///
/// Each step jitters the student inputs, runs the teacher on clean inputs,
/// applies one Nesterov step and then the EMA update. After every epoch the
/// teacher's predictions on all training samples are folded into `buffer`.
pub fn train_and_valid(
    data: TrainData<'_>,
    cfg: &TrainConfig,
    init: TeacherStudentPair,
    mut buffer: PredictionBuffer,
    iteration: usize,
    sink: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train = data.train;
    if train.is_empty() || data.valid.is_empty() {
        return Err(Error::Input("training and validation sets must be non-empty".into()));
    }
    if init.student.input_dim() != train.dim() || init.student.classes() != train.classes() {
        return Err(Error::Config("network shape does not fit the dataset".into()));
    }
    let ssl = cfg.term != UnsupervisedTerm::None;
    let labeled_ids = train.labeled_ids();
    if !ssl && labeled_ids.is_empty() {
        return Err(Error::Input("supervised-only training without labeled samples".into()));
    }
    let beta = cfg.effective_beta();

    let index = train.index_map();
    let features = train.feature_matrix();
    let push_targets: HashMap<u64, usize> = match (cfg.term, data.original) {
        (UnsupervisedTerm::PushAway, Some(orig)) => orig
            .samples()
            .iter()
            .filter_map(|s| s.given_label.map(|l| (s.id, l)))
            .filter(|(id, _)| {
                index
                    .get(id)
                    .is_some_and(|&i| train.samples()[i].given_label.is_none())
            })
            .collect(),
        _ => HashMap::new(),
    };

    let run_seed = derive_seed(cfg.seed, 0x7261_696e ^ iteration as u64);
    let mut scheduler = if ssl {
        BatchScheduler::new(
            &labeled_ids,
            &train.ids(),
            BatchPlan {
                labeled_per_batch: cfg.labeled_per_batch,
                unlabeled_per_batch: cfg.unlabeled_per_batch,
                seed: run_seed,
            },
        )?
    } else {
        // without an unsupervised term the whole batch is labeled
        BatchScheduler::new(
            &labeled_ids,
            &labeled_ids,
            BatchPlan {
                labeled_per_batch: 0,
                unlabeled_per_batch: cfg.labeled_per_batch + cfg.unlabeled_per_batch,
                seed: run_seed,
            },
        )?
    };
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(derive_seed(run_seed, 0x6a69));
    let jitter = Normal::new(0.0, cfg.jitter.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::key("jitter", e.to_string()))?;

    let mut pair = init;
    let mut opt = OptimizerState::new(
        &pair.student,
        cfg.base_lr,
        cfg.momentum,
        cfg.weight_decay,
        cfg.max_epochs,
    )?;
    let valid_x = data.valid.feature_matrix();

    let mut records = Vec::new();
    let mut best: Option<(TeacherStudentPair, f64, usize)> = None;
    let mut since_best = 0usize;
    let diverged = |epoch: usize, message: String| Error::Diverged {
        iteration,
        epoch,
        message,
    };

    for epoch in 0..cfg.max_epochs {
        opt.epoch = epoch;
        let lr = cosine_lr(epoch, cfg.base_lr, cfg.max_epochs)?;
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        let mut weight = 0.0;

        for batch in scheduler.next_epoch() {
            let (ids, supervised): (Vec<u64>, Vec<Option<usize>>) = if ssl {
                let sup = batch
                    .labeled
                    .iter()
                    .map(|id| train.samples()[index[id]].given_label)
                    .chain(std::iter::repeat_n(None, batch.unlabeled.len()))
                    .collect();
                let ids = batch.labeled.iter().chain(&batch.unlabeled).copied().collect();
                (ids, sup)
            } else {
                let sup = batch
                    .unlabeled
                    .iter()
                    .map(|id| train.samples()[index[id]].given_label)
                    .collect();
                (batch.unlabeled, sup)
            };
            let push: Vec<Option<usize>> =
                ids.iter().map(|id| push_targets.get(id).copied()).collect();

            let mut clean = Matrix::zeros(ids.len(), train.dim());
            for (r, id) in ids.iter().enumerate() {
                clean.row_mut(r).copy_from_slice(features.row(index[id]));
            }
            let mut noisy = clean.clone();
            if cfg.jitter > 0.0 {
                for v in noisy.as_mut_slice() {
                    *v += jitter.sample(&mut jitter_rng);
                }
            }
            let teacher_probs = if cfg.term.needs_teacher() {
                Some(softmax_rows(&pair.teacher.forward(&clean)?))
            } else {
                None
            };
            let cache = pair.student.forward_cached(&noisy)?;
            let (loss, grad_logits) = total_batch_loss(
                cache.logits(),
                BatchTargets {
                    supervised: &supervised,
                    push_away: &push,
                    teacher_probs: teacher_probs.as_ref(),
                },
                &cfg.weights,
                epoch,
                cfg.term,
            )?;
            if !loss.total.is_finite() {
                return Err(diverged(epoch, format!("loss became {}", loss.total)));
            }
            let grads = pair.student.backward_cached(&cache, &grad_logits)?;
            sgd_nesterov_step(&mut pair.student, &grads, &mut opt, lr).map_err(|e| match e {
                Error::Diverged { message, .. } => diverged(epoch, message),
                other => other,
            })?;
            ema_update(&mut pair, beta)?;
            loss_sum += loss.total;
            weight = loss.unsupervised_weight;
            steps += 1;
        }

        let student_acc = evaluate_matrix(&pair.student, &valid_x, data.valid)?;
        let teacher_acc = evaluate_matrix(&pair.teacher, &valid_x, data.valid)?;
        let train_probs = softmax_rows(&pair.teacher.forward(&features)?);
        for (s, p) in train.samples().iter().zip(train_probs.iter_rows()) {
            buffer.update(s.id, p)?;
        }

        let record = EpochRecord {
            iteration,
            epoch,
            train_loss: loss_sum / steps.max(1) as f64,
            student_valid_acc: student_acc,
            teacher_valid_acc: teacher_acc,
            lr,
            consistency_weight: weight,
        };
        sink(&record);
        records.push(record);

        let improved = best.as_ref().is_none_or(|(_, acc, _)| teacher_acc > *acc);
        if improved {
            best = Some((pair.clone(), teacher_acc, epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let (best, acc, best_epoch) =
        best.ok_or_else(|| Error::Internal("no epoch completed".into()))?;
    Ok(TrainOutcome {
        best,
        best_teacher_valid_acc: acc,
        best_epoch,
        records,
        buffer,
    })
}

fn evaluate_matrix(params: &NetworkParams, x: &Matrix, dataset: &Dataset) -> Result<f64> {
    accuracy_from_scores(&params.forward(x)?, dataset, LabelSource::Given)
}

/// Adapts [`train_and_valid`] to the iterative filter loop. Iteration 0 starts
/// from a freshly initialized pair; later iterations continue from the best
/// snapshot handed in by the loop.
pub struct MeanTeacherTrainer<'a> {
    cfg: &'a TrainConfig,
    original: &'a Dataset,
    sink: &'a mut dyn FnMut(&EpochRecord),
}

impl<'a> MeanTeacherTrainer<'a> {
    pub fn new(
        cfg: &'a TrainConfig,
        original: &'a Dataset,
        sink: &'a mut dyn FnMut(&EpochRecord),
    ) -> Self {
        MeanTeacherTrainer {
            cfg,
            original,
            sink,
        }
    }
}

impl IterationTrainer for MeanTeacherTrainer<'_> {
    type Model = TeacherStudentPair;

    fn train(
        &mut self,
        iteration: usize,
        labels: &Dataset,
        valid: &Dataset,
        init: Option<&TeacherStudentPair>,
        buffer: PredictionBuffer,
    ) -> Result<TrainedIteration<TeacherStudentPair>> {
        let init = match init {
            Some(m) => m.clone(),
            None => TeacherStudentPair::init(labels.dim(), labels.classes(), self.cfg)?,
        };
        let out = train_and_valid(
            TrainData {
                train: labels,
                valid,
                original: Some(self.original),
            },
            self.cfg,
            init,
            buffer,
            iteration,
            &mut *self.sink,
        )?;
        Ok(TrainedIteration {
            model: out.best,
            valid_acc: out.best_teacher_valid_acc,
            buffer: out.buffer,
        })
    }
}
