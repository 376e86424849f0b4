use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DatasetSpec, ExperimentConfig, Mode};
use crate::dataio::{
    load_csv, make_gaussian_clusters, make_rings, prepare_splits, Dataset, FeatureStats, Splits,
};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::filtering::{
    iterative_filter_loop, noise_metrics, save_history_csv, FilterConfig, IterationRecord,
    IterationTrainer, NoiseMetrics, PredictionBuffer,
};
use crate::meanteacher::{evaluate, EpochRecord, LabelSource, MeanTeacherTrainer, TeacherStudentPair};
use crate::snapshot::save_snapshot;

pub const CONFIG_FILE: &str = "config.txt";
pub const EPOCHS_FILE: &str = "epochs.jsonl";
pub const HISTORY_FILE: &str = "filter_history.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MODEL_FILE: &str = "model.bin";

/// Outcome of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub unsupervised: String,
    pub dataset: String,
    pub noise_ratio: f64,
    pub mva_alpha: f64,
    pub seed: u64,
    /// Accuracy of the returned teacher on the clean test split (true labels).
    pub test_acc: Option<f64>,
    pub best_valid_acc: Option<f64>,
    /// Training runs performed, including a rejected final one.
    pub iterations_used: usize,
    /// Index of the iteration whose model was returned.
    pub accepted_iteration: usize,
    pub epochs_total: usize,
    /// Filter quality of the label set produced after the returned model.
    pub final_filter: Option<NoiseMetrics>,
    pub filter_history: String,
    pub diverged: bool,
    pub error: Option<String>,
    /// Not persisted, so that output files stay byte-identical across re-runs.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Everything a run produces, before it is written out.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub epochs: Vec<EpochRecord>,
    pub history: Vec<IterationRecord>,
    pub model: Option<TeacherStudentPair>,
}

/// Generates or loads the configured dataset. Generated data depends on the
/// run seed; CSV data does not.
pub fn load_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    let data_seed = derive_seed(seed, 1);
    match spec {
        DatasetSpec::Gaussian {
            classes,
            n_per_class,
            dim,
            separation,
            sigma,
        } => make_gaussian_clusters(*classes, *n_per_class, *dim, *separation, *sigma, data_seed),
        DatasetSpec::Rings {
            classes,
            n_per_class,
            gap,
            sigma,
        } => make_rings(*classes, *n_per_class, *gap, *sigma, data_seed),
        DatasetSpec::Csv { path } => load_csv(path),
    }
}

/// Noisy train / valid and clean test splits, standardized with train statistics.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<Splits> {
    Ok(prepare_data_with_stats(cfg, seed)?.0)
}

/// Like [`prepare_data`], also returning the statistics needed to standardize
/// new inputs the same way.
pub fn prepare_data_with_stats(cfg: &ExperimentConfig, seed: u64) -> Result<(Splits, FeatureStats)> {
    let data = load_dataset(&cfg.dataset, seed)?;
    if cfg.train.topk > data.classes() {
        return Err(Error::key("topk", "cannot exceed the number of classes"));
    }
    let raw = prepare_splits(&data, &cfg.split, cfg.noise(seed), derive_seed(seed, 3))?;
    let stats = FeatureStats::fit(&raw.train)?;
    let splits = Splits {
        train: stats.apply(&raw.train)?,
        valid: stats.apply(&raw.valid)?,
        test: stats.apply(&raw.test)?,
    };
    Ok((splits, stats))
}

/// Trains the configured mode on prepared splits without touching the disk.
/// Divergence is reported through the summary; other failures are errors.
pub fn execute(cfg: &ExperimentConfig, seed: u64, splits: &Splits) -> Result<RunArtifacts> {
    let start = Instant::now();
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = derive_seed(seed, 4);

    let mut epochs = Vec::new();
    let mut sink = |r: &EpochRecord| epochs.push(r.clone());
    let result = run_mode(cfg, &train_cfg, splits, &mut sink);

    let mut summary = RunSummary {
        mode: cfg.mode,
        unsupervised: term_name(cfg),
        dataset: cfg.dataset.describe(),
        noise_ratio: cfg.noise_ratio,
        mva_alpha: cfg.train.mva_alpha,
        seed,
        test_acc: None,
        best_valid_acc: None,
        iterations_used: 0,
        accepted_iteration: 0,
        epochs_total: 0,
        final_filter: None,
        filter_history: HISTORY_FILE.into(),
        diverged: false,
        error: None,
        wall_clock_secs: 0.0,
    };
    let (history, model) = match result {
        Ok(outcome) => {
            summary.test_acc = Some(outcome.test_acc);
            summary.best_valid_acc = Some(outcome.best_valid_acc);
            summary.iterations_used = outcome.history.len();
            summary.accepted_iteration = outcome.accepted_iteration;
            summary.final_filter = outcome.final_filter;
            (outcome.history, Some(outcome.model))
        }
        Err(e @ Error::Diverged { .. }) => {
            summary.diverged = true;
            summary.error = Some(e.to_string());
            (Vec::new(), None)
        }
        Err(e) => return Err(e),
    };
    summary.epochs_total = epochs.len();
    summary.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(RunArtifacts {
        summary,
        epochs,
        history,
        model,
    })
}

fn term_name(cfg: &ExperimentConfig) -> String {
    use crate::losses::{ConsistencyKind, UnsupervisedTerm};
    match cfg.term() {
        UnsupervisedTerm::None => "none",
        UnsupervisedTerm::MeanTeacher(ConsistencyKind::Mse) => "meanteacher-mse",
        UnsupervisedTerm::MeanTeacher(ConsistencyKind::Kl) => "meanteacher-kl",
        UnsupervisedTerm::Entropy => "entropy",
        UnsupervisedTerm::PushAway => "pushaway",
    }
    .to_string()
}

struct ModeOutcome {
    model: TeacherStudentPair,
    test_acc: f64,
    best_valid_acc: f64,
    accepted_iteration: usize,
    history: Vec<IterationRecord>,
    final_filter: Option<NoiseMetrics>,
}

fn run_mode(
    cfg: &ExperimentConfig,
    train_cfg: &crate::meanteacher::TrainConfig,
    splits: &Splits,
    sink: &mut dyn FnMut(&EpochRecord),
) -> Result<ModeOutcome> {
    let train = &splits.train;
    let buffer = PredictionBuffer::new(train_cfg.mva_alpha, train.classes())?;
    let mut trainer = MeanTeacherTrainer::new(train_cfg, train, sink);
    let (model, valid_acc, accepted, history, final_filter) = match cfg.mode.filter_strategy() {
        None => {
            let out = trainer.train(0, train, &splits.valid, None, buffer)?;
            let record = IterationRecord {
                iteration: 0,
                valid_acc: out.valid_acc,
                accepted: true,
                sample_count: train.len(),
                retained_count: train.labeled_count(),
                masked_ids: Vec::new(),
                metrics: noise_metrics(train, train),
            };
            (out.model, out.valid_acc, 0, vec![record], None)
        }
        Some(strategy) => {
            let fc = FilterConfig {
                n_max_iterations: cfg.n_max_iterations,
                topk: train_cfg.topk,
                strategy,
            };
            let st = iterative_filter_loop(train, &splits.valid, &fc, &mut trainer, buffer)?;
            let fin = noise_metrics(&st.filtered_after_best, train);
            (st.best_model, st.best_valid_acc, st.iteration, st.history, Some(fin))
        }
    };
    let test_acc = evaluate(&model.teacher, &splits.test, LabelSource::True)?;
    Ok(ModeOutcome {
        model,
        test_acc,
        best_valid_acc: valid_acc,
        accepted_iteration: accepted,
        history,
        final_filter,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes the echo, epoch records, filter history, summary and optional model.
pub fn write_artifacts(cfg: &ExperimentConfig, art: &RunArtifacts, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let io = |p: PathBuf| move |e: std::io::Error| Error::io(p, e);

    let p = dir.join(CONFIG_FILE);
    std::fs::write(&p, cfg.echo()).map_err(io(p.clone()))?;

    let p = dir.join(EPOCHS_FILE);
    let mut w = create(&p)?;
    for r in &art.epochs {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(io(p.clone()))?;
    }
    w.flush().map_err(io(p.clone()))?;

    save_history_csv(&art.history, dir.join(HISTORY_FILE))?;

    let p = dir.join(SUMMARY_FILE);
    let mut text = serde_json::to_string_pretty(&art.summary)?;
    text.push('\n');
    std::fs::write(&p, text).map_err(io(p.clone()))?;

    if cfg.save_model {
        if let Some(model) = &art.model {
            save_snapshot(model, dir.join(MODEL_FILE))?;
        }
    }
    Ok(())
}

/// Runs one seed end-to-end and writes its files into `dir`. Divergence is
/// reported through the summary, with the records gathered so far kept.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<RunSummary> {
    let splits = prepare_data(cfg, seed)?;
    let art = execute(cfg, seed, &splits)?;
    write_artifacts(cfg, &art, dir)?;
    Ok(art.summary)
}

pub fn load_summary(path: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
