//! Flat `key = value` experiment configuration.
//!
//! One registry of keys drives the file parser, the CLI flags and the echo
//! written into every output directory, so the three can never drift apart.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::{NoiseSpec, SplitSpec, ValidMode};
use crate::error::{Error, Result};
use crate::filtering::FilterStrategy;
use crate::losses::{ConsistencyKind, LossWeights, UnsupervisedTerm};
use crate::meanteacher::TrainConfig;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "IFSSL_OUT";

pub struct KeyDef {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> KeyDef {
    KeyDef {
        name,
        default,
        help,
    }
}

/// Every recognised configuration key with its default, in echo order.
pub const KEYS: &[KeyDef] = &[
    key("dataset", "gaussian", "data source: gaussian | rings | csv"),
    key("data-path", "", "CSV file when dataset = csv"),
    key("classes", "4", "number of classes for generated data"),
    key("n-per-class", "500", "samples per class for generated data"),
    key("dim", "2", "feature dimension of gaussian clusters"),
    key("separation", "6", "distance of gaussian cluster centres from the origin"),
    key("sigma", "1.5", "per-axis standard deviation of generated samples"),
    key("ring-gap", "2", "radius step between consecutive rings"),
    key("noise-ratio", "0.4", "fraction of train (and noisy valid) labels flipped"),
    key("train-frac", "0.8", "training fraction of the data"),
    key("valid-frac", "0.1", "validation fraction of the data"),
    key("valid-mode", "noisy", "validation labels: noisy | clean-small"),
    key("clean-valid-count", "40", "validation size in clean-small mode"),
    key("mode", "if-ssl", "baseline | ssl-only | if | if-ssl | complete-removal"),
    key("unsupervised", "auto", "auto | meanteacher | entropy | pushaway | none"),
    key("consistency", "mse", "mean-teacher consistency: mse | kl"),
    key("hidden", "64,64", "hidden layer widths"),
    key("activation", "tanh", "hidden activation: tanh | relu | linear"),
    key("max-epochs", "100", "epoch cap per training run"),
    key("patience", "20", "epochs without teacher improvement before stopping"),
    key("lr", "0.05", "base learning rate of the cosine schedule"),
    key("momentum", "0.9", "Nesterov momentum"),
    key("weight-decay", "2e-4", "L2 weight decay"),
    key("beta", "0.99", "teacher EMA decay"),
    key("consistency-max", "10", "consistency weight after ramp-up"),
    key("entropy-min-w", "1", "weight of per-sample entropy minimization"),
    key("entropy-balance-w", "1", "weight of the mean-entropy balance term"),
    key("push-away-c", "1", "scale of the push-away loss"),
    key("ramp-epochs", "5", "sigmoid ramp-up length of unsupervised weights"),
    key("labeled-per-batch", "32", "labeled samples per step"),
    key("unlabeled-per-batch", "96", "unsupervised-stream samples per step"),
    key("jitter", "0.1", "std of Gaussian input jitter on the student"),
    key("topk", "1", "a label survives if ranked within this many top predictions"),
    key("mva-alpha", "0.6", "decay of the prediction moving average (0 = last epoch only)"),
    key("n-max-iterations", "10", "filtering rounds after the initial run"),
    key("seeds", "0", "comma-separated run seeds"),
    key("noise-ratios", "0,0.4,0.8", "sweep: noise ratios"),
    key("modes", "baseline,ssl-only,if,if-ssl", "sweep: modes"),
    key("save-model", "false", "write the best teacher/student pair as model.bin"),
    key("out", "", "output directory (default: $IFSSL_OUT or ./runs)"),
];

pub fn key_def(name: &str) -> Option<&'static KeyDef> {
    KEYS.iter().find(|k| k.name == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Baseline,
    SslOnly,
    If,
    IfSsl,
    CompleteRemoval,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Baseline,
        Mode::SslOnly,
        Mode::If,
        Mode::IfSsl,
        Mode::CompleteRemoval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::SslOnly => "ssl-only",
            Mode::If => "if",
            Mode::IfSsl => "if-ssl",
            Mode::CompleteRemoval => "complete-removal",
        }
    }

    pub fn filter_strategy(self) -> Option<FilterStrategy> {
        match self {
            Mode::If | Mode::IfSsl => Some(FilterStrategy::FromOriginal),
            Mode::CompleteRemoval => Some(FilterStrategy::CompleteRemoval),
            Mode::Baseline | Mode::SslOnly => None,
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::key("mode", format!("unknown mode `{s}`")))
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermChoice {
    Auto,
    MeanTeacher,
    Entropy,
    PushAway,
    None,
}

impl TermChoice {
    fn as_str(self) -> &'static str {
        match self {
            TermChoice::Auto => "auto",
            TermChoice::MeanTeacher => "meanteacher",
            TermChoice::Entropy => "entropy",
            TermChoice::PushAway => "pushaway",
            TermChoice::None => "none",
        }
    }
}

impl FromStr for TermChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            TermChoice::Auto,
            TermChoice::MeanTeacher,
            TermChoice::Entropy,
            TermChoice::PushAway,
            TermChoice::None,
        ]
        .into_iter()
        .find(|t| t.as_str() == s)
        .ok_or_else(|| Error::key("unsupervised", format!("unknown term `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSpec {
    Gaussian {
        classes: usize,
        n_per_class: usize,
        dim: usize,
        separation: f64,
        sigma: f64,
    },
    Rings {
        classes: usize,
        n_per_class: usize,
        gap: f64,
        sigma: f64,
    },
    Csv {
        path: PathBuf,
    },
}

impl DatasetSpec {
    /// Canonical one-line description; runs are comparable iff these match.
    pub fn describe(&self) -> String {
        match self {
            DatasetSpec::Gaussian {
                classes,
                n_per_class,
                dim,
                separation,
                sigma,
            } => format!("gaussian(m={classes},n={n_per_class},d={dim},sep={separation},sigma={sigma})"),
            DatasetSpec::Rings {
                classes,
                n_per_class,
                gap,
                sigma,
            } => format!("rings(m={classes},n={n_per_class},gap={gap},sigma={sigma})"),
            DatasetSpec::Csv { path } => format!("csv({})", path.display()),
        }
    }
}

/// A fully validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Raw generator keys, kept so the echo reproduces them even for CSV data.
    raw_dataset: BTreeMap<&'static str, String>,
    pub noise_ratio: f64,
    pub split: SplitSpec,
    pub mode: Mode,
    pub term_choice: TermChoice,
    pub consistency: ConsistencyKind,
    pub train: TrainConfig,
    pub n_max_iterations: usize,
    pub seeds: Vec<u64>,
    pub noise_ratios: Vec<f64>,
    pub modes: Vec<Mode>,
    pub save_model: bool,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::from_values(&BTreeMap::new()).expect("defaults are valid")
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::key(key, format!("cannot parse `{raw}`")))
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::key(key, format!("expected a boolean, got `{other}`"))),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// The unsupervised term actually used by this mode.
    pub fn term(&self) -> UnsupervisedTerm {
        resolve_term(self.mode, self.term_choice, self.consistency)
    }

    /// Output directory: the `out` key, else `$IFSSL_OUT`, else `./runs`.
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn noise(&self, seed: u64) -> NoiseSpec {
        NoiseSpec {
            ratio: self.noise_ratio,
            seed: crate::derive_seed(seed, 2),
        }
    }

    /// Same experiment with a different mode; the term is re-resolved.
    pub fn with_mode(&self, mode: Mode) -> Result<Self> {
        let mut values = self.to_values();
        values.insert("mode", mode.as_str().to_string());
        Self::from_values(&values)
    }

    pub fn with_noise_ratio(&self, ratio: f64) -> Result<Self> {
        let mut values = self.to_values();
        values.insert("noise-ratio", format!("{ratio}"));
        Self::from_values(&values)
    }

    /// Builds a config from raw key/value strings; absent keys take defaults.
    pub fn from_values(values: &BTreeMap<&'static str, String>) -> Result<Self> {
        let get = |k: &'static str| -> &str {
            values
                .get(k)
                .map(String::as_str)
                .unwrap_or_else(|| key_def(k).expect("registered key").default)
        };

        let dataset = match get("dataset") {
            "gaussian" => DatasetSpec::Gaussian {
                classes: parse_value("classes", get("classes"))?,
                n_per_class: parse_value("n-per-class", get("n-per-class"))?,
                dim: parse_value("dim", get("dim"))?,
                separation: parse_value("separation", get("separation"))?,
                sigma: parse_value("sigma", get("sigma"))?,
            },
            "rings" => DatasetSpec::Rings {
                classes: parse_value("classes", get("classes"))?,
                n_per_class: parse_value("n-per-class", get("n-per-class"))?,
                gap: parse_value("ring-gap", get("ring-gap"))?,
                sigma: parse_value("sigma", get("sigma"))?,
            },
            "csv" => {
                let p = get("data-path");
                if p.is_empty() {
                    return Err(Error::key("data-path", "dataset = csv needs a data-path"));
                }
                DatasetSpec::Csv { path: p.into() }
            }
            other => return Err(Error::key("dataset", format!("unknown dataset `{other}`"))),
        };
        let raw_dataset = ["classes", "n-per-class", "dim", "separation", "sigma", "ring-gap"]
            .into_iter()
            .map(|k| (k, get(k).trim().to_string()))
            .collect();

        let noise_ratio: f64 = parse_value("noise-ratio", get("noise-ratio"))?;
        NoiseSpec {
            ratio: noise_ratio,
            seed: 0,
        }
        .validate()
        .map_err(|e| Error::key("noise-ratio", e.to_string()))?;

        let valid_mode = match get("valid-mode") {
            "noisy" => ValidMode::Noisy,
            "clean-small" => ValidMode::CleanSmall {
                count: parse_value("clean-valid-count", get("clean-valid-count"))?,
            },
            other => {
                return Err(Error::key("valid-mode", format!("unknown valid mode `{other}`")))
            }
        };
        let split = SplitSpec {
            train_frac: parse_value("train-frac", get("train-frac"))?,
            valid_frac: parse_value("valid-frac", get("valid-frac"))?,
            valid_mode,
        };
        if !(split.train_frac > 0.0 && split.valid_frac > 0.0)
            || split.train_frac + split.valid_frac >= 1.0
        {
            return Err(Error::key(
                "train-frac",
                "train and valid fractions must be positive and leave room for a test split",
            ));
        }

        let mode: Mode = get("mode").trim().parse()?;
        let term_choice: TermChoice = get("unsupervised").trim().parse()?;
        let consistency = match get("consistency").trim() {
            "mse" => ConsistencyKind::Mse,
            "kl" => ConsistencyKind::Kl,
            other => return Err(Error::key("consistency", format!("unknown kind `{other}`"))),
        };
        validate_combination(mode, term_choice)?;

        let seeds: Vec<u64> = parse_list("seeds", get("seeds"))?;
        if seeds.is_empty() {
            return Err(Error::key("seeds", "at least one seed is required"));
        }
        let noise_ratios: Vec<f64> = parse_list("noise-ratios", get("noise-ratios"))?;
        for r in &noise_ratios {
            if !(0.0..=1.0).contains(r) {
                return Err(Error::key("noise-ratios", format!("{r} is outside [0, 1]")));
            }
        }
        let modes: Vec<Mode> = parse_list("modes", get("modes"))?;

        let hidden: Vec<usize> = parse_list("hidden", get("hidden"))?;
        if hidden.contains(&0) {
            return Err(Error::key("hidden", "layer widths must be positive"));
        }
        let train = TrainConfig {
            max_epochs: parse_value("max-epochs", get("max-epochs"))?,
            patience: parse_value("patience", get("patience"))?,
            base_lr: parse_value("lr", get("lr"))?,
            momentum: parse_value("momentum", get("momentum"))?,
            weight_decay: parse_value("weight-decay", get("weight-decay"))?,
            beta: parse_value("beta", get("beta"))?,
            weights: LossWeights {
                consistency_max: parse_value("consistency-max", get("consistency-max"))?,
                entropy_min_w: parse_value("entropy-min-w", get("entropy-min-w"))?,
                entropy_balance_w: parse_value("entropy-balance-w", get("entropy-balance-w"))?,
                push_away_c: parse_value("push-away-c", get("push-away-c"))?,
                ramp_epochs: parse_value("ramp-epochs", get("ramp-epochs"))?,
            },
            term: resolve_term(mode, term_choice, consistency),
            hidden,
            activation: get("activation").trim().parse()?,
            labeled_per_batch: parse_value("labeled-per-batch", get("labeled-per-batch"))?,
            unlabeled_per_batch: parse_value("unlabeled-per-batch", get("unlabeled-per-batch"))?,
            jitter: parse_value("jitter", get("jitter"))?,
            topk: parse_value("topk", get("topk"))?,
            mva_alpha: parse_value("mva-alpha", get("mva-alpha"))?,
            seed: 0,
        };
        train.validate()?;
        let classes = match &dataset {
            DatasetSpec::Gaussian { classes, .. } | DatasetSpec::Rings { classes, .. } => {
                Some(*classes)
            }
            DatasetSpec::Csv { .. } => None,
        };
        if classes.is_some_and(|m| train.topk > m) {
            return Err(Error::key("topk", "cannot exceed the number of classes"));
        }

        let out = match get("out").trim() {
            "" => None,
            p => Some(PathBuf::from(p)),
        };

        Ok(ExperimentConfig {
            dataset,
            raw_dataset,
            noise_ratio,
            split,
            mode,
            term_choice,
            consistency,
            train,
            n_max_iterations: parse_value("n-max-iterations", get("n-max-iterations"))?,
            seeds,
            noise_ratios,
            modes,
            save_model: parse_bool("save-model", get("save-model"))?,
            out,
        })
    }

    /// Every key with its materialized value.
    pub fn to_values(&self) -> BTreeMap<&'static str, String> {
        let t = &self.train;
        let mut v: BTreeMap<&'static str, String> = self.raw_dataset.clone();
        let (kind, path) = match &self.dataset {
            DatasetSpec::Gaussian { .. } => ("gaussian", String::new()),
            DatasetSpec::Rings { .. } => ("rings", String::new()),
            DatasetSpec::Csv { path } => ("csv", path.display().to_string()),
        };
        v.insert("dataset", kind.into());
        v.insert("data-path", path);
        v.insert("noise-ratio", format!("{}", self.noise_ratio));
        v.insert("train-frac", format!("{}", self.split.train_frac));
        v.insert("valid-frac", format!("{}", self.split.valid_frac));
        match self.split.valid_mode {
            ValidMode::Noisy => {
                v.insert("valid-mode", "noisy".into());
                v.insert("clean-valid-count", key_def("clean-valid-count").unwrap().default.into());
            }
            ValidMode::CleanSmall { count } => {
                v.insert("valid-mode", "clean-small".into());
                v.insert("clean-valid-count", count.to_string());
            }
        }
        v.insert("mode", self.mode.as_str().into());
        v.insert("unsupervised", self.term_choice.as_str().into());
        v.insert(
            "consistency",
            match self.consistency {
                ConsistencyKind::Mse => "mse",
                ConsistencyKind::Kl => "kl",
            }
            .into(),
        );
        v.insert("hidden", join(&t.hidden));
        v.insert("activation", t.activation.as_str().into());
        v.insert("max-epochs", t.max_epochs.to_string());
        v.insert("patience", t.patience.to_string());
        v.insert("lr", format!("{}", t.base_lr));
        v.insert("momentum", format!("{}", t.momentum));
        v.insert("weight-decay", format!("{}", t.weight_decay));
        v.insert("beta", format!("{}", t.beta));
        v.insert("consistency-max", format!("{}", t.weights.consistency_max));
        v.insert("entropy-min-w", format!("{}", t.weights.entropy_min_w));
        v.insert("entropy-balance-w", format!("{}", t.weights.entropy_balance_w));
        v.insert("push-away-c", format!("{}", t.weights.push_away_c));
        v.insert("ramp-epochs", t.weights.ramp_epochs.to_string());
        v.insert("labeled-per-batch", t.labeled_per_batch.to_string());
        v.insert("unlabeled-per-batch", t.unlabeled_per_batch.to_string());
        v.insert("jitter", format!("{}", t.jitter));
        v.insert("topk", t.topk.to_string());
        v.insert("mva-alpha", format!("{}", t.mva_alpha));
        v.insert("n-max-iterations", self.n_max_iterations.to_string());
        v.insert("seeds", join(&self.seeds));
        v.insert("noise-ratios", join(&self.noise_ratios));
        v.insert("modes", join(&self.modes));
        v.insert("save-model", self.save_model.to_string());
        v.insert(
            "out",
            self.out.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        v
    }

    /// `key = value` text listing every key in registry order; parses back
    /// to an equal config.
    pub fn echo(&self) -> String {
        let values = self.to_values();
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{} = {}", k.name, values[k.name]);
        }
        s
    }
}

fn resolve_term(mode: Mode, choice: TermChoice, kind: ConsistencyKind) -> UnsupervisedTerm {
    match choice {
        TermChoice::Auto => match mode {
            Mode::Baseline | Mode::If => UnsupervisedTerm::None,
            _ => UnsupervisedTerm::MeanTeacher(kind),
        },
        TermChoice::MeanTeacher => UnsupervisedTerm::MeanTeacher(kind),
        TermChoice::Entropy => UnsupervisedTerm::Entropy,
        TermChoice::PushAway => UnsupervisedTerm::PushAway,
        TermChoice::None => UnsupervisedTerm::None,
    }
}

fn validate_combination(mode: Mode, choice: TermChoice) -> Result<()> {
    let bad = |msg: &str| Err(Error::key("unsupervised", format!("mode {mode}: {msg}")));
    match (mode, choice) {
        (_, TermChoice::Auto) => Ok(()),
        (Mode::Baseline, TermChoice::None) => Ok(()),
        (Mode::Baseline, _) => bad("baseline forbids unsupervised terms"),
        (Mode::SslOnly, TermChoice::None) => bad("ssl-only needs an unsupervised term"),
        (Mode::SslOnly, TermChoice::PushAway) => {
            bad("push-away acts on filtered labels and needs a filtering mode")
        }
        (Mode::IfSsl | Mode::CompleteRemoval, TermChoice::None) => {
            bad("needs an unsupervised term; use mode = if for filtering alone")
        }
        _ => Ok(()),
    }
}

/// Parses `key = value` lines; `#` starts a comment, `[section]` headers are
/// accepted and ignored. Unknown keys are rejected with their line.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<&'static str, String>> {
    let mut values = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let k = k.trim();
        let def = key_def(k).ok_or_else(|| Error::key(k, format!("unknown key (line {})", i + 1)))?;
        values.insert(def.name, v.trim().to_string());
    }
    Ok(values)
}

/// File values (if any) overlaid by explicit overrides.
pub fn parse_config(
    path: Option<&Path>,
    overrides: &BTreeMap<&'static str, String>,
) -> Result<ExperimentConfig> {
    let mut values = match path {
        Some(p) => parse_config_text(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => BTreeMap::new(),
    };
    values.extend(overrides.iter().map(|(k, v)| (*k, v.clone())));
    ExperimentConfig::from_values(&values)
}
