//! C ABI over `ifssl-core`.
//!
//! Every fallible function returns an [`IfsslStatus`]; on failure a message is
//! available from [`ifssl_last_error`] on the same thread. Handles are opaque,
//! created by `*_new` / `*_load` / `ifssl_run` and released with the matching
//! `*_free`. Passing a handle that was not produced by this library, or one
//! that was already freed, is undefined behavior.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ifssl_core::dataio::{load_csv, save_csv, Dataset, FeatureStats, STD_FLOOR};
use ifssl_core::filtering::NoiseMetrics;
use ifssl_core::harness::{
    execute, key_def, load_dataset, parse_config, prepare_data_with_stats, write_artifacts,
    ExperimentConfig, RunArtifacts,
};
use ifssl_core::netcore::{argmax, Matrix};
use ifssl_core::snapshot::save_snapshot;
use ifssl_core::{Error, ErrorCategory};

/// Result code of every fallible call. Values match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IfsslStatus {
    Ok = 0,
    Config = 2,
    Input = 3,
    Format = 4,
    Diverged = 5,
    Io = 6,
    NullArgument = 64,
    InvalidUtf8 = 65,
    Internal = 70,
    Panic = 71,
}

/// Experiment configuration, starting from the defaults.
pub struct IfsslConfig {
    values: BTreeMap<&'static str, String>,
    cfg: ExperimentConfig,
}

pub struct IfsslDataset {
    inner: Dataset,
}

/// A finished run: summary, returned model and input statistics.
pub struct IfsslRun {
    artifacts: RunArtifacts,
    stats: FeatureStats,
}

/// Plain-data view of a run summary. Undefined metrics are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IfsslRunSummary {
    pub seed: u64,
    pub test_acc: f64,
    pub best_valid_acc: f64,
    pub noise_ratio_retained: f64,
    pub clean_label_recall: f64,
    pub noisy_label_removal_recall: f64,
    pub iterations_used: usize,
    pub accepted_iteration: usize,
    pub epochs_total: usize,
    pub diverged: bool,
}

enum Failure {
    Core(Error),
    Null(&'static str),
    Utf8(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IfsslStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => return IfsslStatus::Ok,
        Ok(Err(Failure::Core(e))) => {
            let status = match e.category() {
                ErrorCategory::Config => IfsslStatus::Config,
                ErrorCategory::Input => IfsslStatus::Input,
                ErrorCategory::Format => IfsslStatus::Format,
                ErrorCategory::Diverged => IfsslStatus::Diverged,
                ErrorCategory::Io => IfsslStatus::Io,
                ErrorCategory::Internal => IfsslStatus::Internal,
            };
            (status, e.to_string())
        }
        Ok(Err(Failure::Null(what))) => (IfsslStatus::NullArgument, format!("{what} is null")),
        Ok(Err(Failure::Utf8(what))) => (IfsslStatus::InvalidUtf8, format!("{what} is not valid UTF-8")),
        Err(_) => (IfsslStatus::Panic, "internal panic".to_string()),
    };
    set_last_error(msg);
    status
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ifssl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn ifssl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

fn new_config(values: BTreeMap<&'static str, String>) -> Result<Box<IfsslConfig>, Failure> {
    let cfg = ExperimentConfig::from_values(&values)?;
    Ok(Box::new(IfsslConfig { values, cfg }))
}

/// Creates a configuration holding the defaults.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn ifssl_config_new(out: *mut *mut IfsslConfig) -> IfsslStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let values = parse_config(None, &BTreeMap::new())?.to_values();
        *out = Box::into_raw(new_config(values)?);
        Ok(())
    })
}

/// Reads a `key = value` configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ifssl_config_load(
    path: *const c_char,
    out: *mut *mut IfsslConfig,
) -> IfsslStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_ptr(out, "out")?;
        let values = parse_config(Some(&path), &BTreeMap::new())?.to_values();
        *out = Box::into_raw(new_config(values)?);
        Ok(())
    })
}

/// Sets one key. The whole configuration is re-validated; on failure the
/// handle keeps its previous value.
///
/// # Safety
/// `config` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ifssl_config_set(
    config: *mut IfsslConfig,
    key: *const c_char,
    value: *const c_char,
) -> IfsslStatus {
    guard(|| {
        let config = out_ptr(config, "config")?;
        let key = str_arg(key, "key")?;
        let value = str_arg(value, "value")?;
        let def = key_def(key).ok_or_else(|| Error::ConfigKey {
            key: key.to_string(),
            message: "unknown key".into(),
        })?;
        let mut values = config.values.clone();
        values.insert(def.name, value.trim().to_string());
        config.cfg = ExperimentConfig::from_values(&values)?;
        config.values = values;
        Ok(())
    })
}

/// # Safety
/// `config` must be NULL or a live handle, which is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ifssl_config_free(config: *mut IfsslConfig) {
    free(config)
}

/// Generates (or, for CSV datasets, loads) the configured dataset for `seed`.
///
/// # Safety
/// `config` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ifssl_dataset_generate(
    config: *const IfsslConfig,
    seed: u64,
    out: *mut *mut IfsslDataset,
) -> IfsslStatus {
    guard(|| {
        let config = handle(config, "config")?;
        let out = out_ptr(out, "out")?;
        let inner = load_dataset(&config.cfg.dataset, seed)?;
        *out = Box::into_raw(Box::new(IfsslDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ifssl_dataset_load_csv(
    path: *const c_char,
    out: *mut *mut IfsslDataset,
) -> IfsslStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_ptr(out, "out")?;
        let inner = load_csv(path)?;
        *out = Box::into_raw(Box::new(IfsslDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ifssl_dataset_save_csv(
    dataset: *const IfsslDataset,
    path: *const c_char,
) -> IfsslStatus {
    guard(|| {
        let dataset = handle(dataset, "dataset")?;
        save_csv(&dataset.inner, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Writes sample count, class count and feature width; any of the outputs
/// may be NULL.
///
/// # Safety
/// `dataset` must be a live handle; non-null outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ifssl_dataset_shape(
    dataset: *const IfsslDataset,
    samples: *mut usize,
    classes: *mut usize,
    dim: *mut usize,
) -> IfsslStatus {
    guard(|| {
        let d = &handle(dataset, "dataset")?.inner;
        for (p, v) in [(samples, d.len()), (classes, d.classes()), (dim, d.dim())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `dataset` must be NULL or a live handle, which is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ifssl_dataset_free(dataset: *mut IfsslDataset) {
    free(dataset)
}

/// Runs the configured mode for one seed. When `out_dir` is not NULL the run
/// files are written there as well. A diverged run still yields a handle; its
/// summary has `diverged` set and prediction fails with `Diverged`.
///
/// # Safety
/// `config` must be a live handle; `out_dir` NULL or a NUL-terminated string;
/// `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ifssl_run(
    config: *const IfsslConfig,
    seed: u64,
    out_dir: *const c_char,
    out: *mut *mut IfsslRun,
) -> IfsslStatus {
    guard(|| {
        let config = handle(config, "config")?;
        let dir = if out_dir.is_null() {
            None
        } else {
            Some(PathBuf::from(str_arg(out_dir, "out_dir")?))
        };
        let out = out_ptr(out, "out")?;
        let (splits, stats) = prepare_data_with_stats(&config.cfg, seed)?;
        let artifacts = execute(&config.cfg, seed, &splits)?;
        if let Some(dir) = dir {
            write_artifacts(&config.cfg, &artifacts, &dir)?;
        }
        *out = Box::into_raw(Box::new(IfsslRun { artifacts, stats }));
        Ok(())
    })
}

/// # Safety
/// `run` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ifssl_run_summary(
    run: *const IfsslRun,
    out: *mut IfsslRunSummary,
) -> IfsslStatus {
    guard(|| {
        let s = &handle(run, "run")?.artifacts.summary;
        let out = out_ptr(out, "out")?;
        let metric = |g: fn(&NoiseMetrics) -> Option<f64>| {
            s.final_filter.as_ref().and_then(g).unwrap_or(f64::NAN)
        };
        *out = IfsslRunSummary {
            seed: s.seed,
            test_acc: s.test_acc.unwrap_or(f64::NAN),
            best_valid_acc: s.best_valid_acc.unwrap_or(f64::NAN),
            noise_ratio_retained: metric(|m| m.noise_ratio_retained),
            clean_label_recall: metric(|m| m.clean_label_recall),
            noisy_label_removal_recall: metric(|m| m.noisy_label_removal_recall),
            iterations_used: s.iterations_used,
            accepted_iteration: s.accepted_iteration,
            epochs_total: s.epochs_total,
            diverged: s.diverged,
        };
        Ok(())
    })
}

/// Predicts class labels with the returned teacher. `features` holds `rows`
/// raw (unstandardized) samples of width `dim`, row-major; `labels` receives
/// `rows` entries.
///
/// # Safety
/// `features` must point to `rows * dim` doubles and `labels` to `rows`
/// writable `size_t` values.
#[no_mangle]
pub unsafe extern "C" fn ifssl_run_predict(
    run: *const IfsslRun,
    features: *const f64,
    rows: usize,
    dim: usize,
    labels: *mut usize,
) -> IfsslStatus {
    guard(|| {
        let run = handle(run, "run")?;
        if rows == 0 {
            return Ok(());
        }
        if features.is_null() {
            return Err(Failure::Null("features"));
        }
        if labels.is_null() {
            return Err(Failure::Null("labels"));
        }
        let model = run.artifacts.model.as_ref().ok_or_else(|| Error::Diverged {
            iteration: 0,
            epoch: run.artifacts.summary.epochs_total,
            message: "run produced no model".into(),
        })?;
        if dim != model.teacher.input_dim() {
            return Err(Error::Input(format!(
                "feature width {dim}, model expects {}",
                model.teacher.input_dim()
            ))
            .into());
        }
        let raw = std::slice::from_raw_parts(features, rows * dim);
        let scaled: Vec<f64> = raw
            .chunks(dim)
            .flat_map(|row| {
                row.iter()
                    .zip(&run.stats.mean)
                    .zip(&run.stats.std)
                    .map(|((x, m), sd)| if *sd < STD_FLOOR { 0.0 } else { (x - m) / sd })
            })
            .collect();
        let logits = model.teacher.forward(&Matrix::from_vec(rows, dim, scaled)?)?;
        let labels = std::slice::from_raw_parts_mut(labels, rows);
        for (l, z) in labels.iter_mut().zip(logits.iter_rows()) {
            *l = argmax(z);
        }
        Ok(())
    })
}

/// Writes the returned teacher/student pair in the binary snapshot format.
///
/// # Safety
/// `run` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ifssl_run_save_model(
    run: *const IfsslRun,
    path: *const c_char,
) -> IfsslStatus {
    guard(|| {
        let run = handle(run, "run")?;
        let path = str_arg(path, "path")?;
        let model = run
            .artifacts
            .model
            .as_ref()
            .ok_or_else(|| Error::Input("run produced no model".into()))?;
        save_snapshot(model, path)?;
        Ok(())
    })
}

/// # Safety
/// `run` must be NULL or a live handle, which is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ifssl_run_free(run: *mut IfsslRun) {
    free(run)
}
