use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, Mode};
use super::run::{load_summary, run_experiment, RunSummary, SUMMARY_FILE};
use crate::error::{Error, Result};

pub const ACCURACY_FILE: &str = "accuracy_vs_noise.csv";
pub const ACCURACY_SUMMARY_FILE: &str = "accuracy_summary.csv";

/// One grid cell of a sweep; `test_acc` is `None` when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub mode: Mode,
    pub noise_ratio: f64,
    pub seed: u64,
    pub test_acc: Option<f64>,
    pub error: Option<String>,
}

/// Mean and sample standard deviation over the successful seeds of a group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub mode: Mode,
    pub noise_ratio: f64,
    pub runs: usize,
    pub failures: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

pub fn cell_dir(root: &Path, mode: Mode, ratio: f64, seed: u64) -> PathBuf {
    root.join(mode.as_str())
        .join(format!("noise-{ratio}"))
        .join(format!("seed-{seed}"))
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x}"))
}

pub fn aggregate(cells: &[SweepCell]) -> Vec<Aggregate> {
    let mut groups: Vec<((Mode, f64), Vec<&SweepCell>)> = Vec::new();
    for c in cells {
        match groups
            .iter_mut()
            .find(|((m, r), _)| *m == c.mode && *r == c.noise_ratio)
        {
            Some((_, v)) => v.push(c),
            None => groups.push(((c.mode, c.noise_ratio), vec![c])),
        }
    }
    groups
        .into_iter()
        .map(|((mode, noise_ratio), v)| {
            let accs: Vec<f64> = v.iter().filter_map(|c| c.test_acc).collect();
            let (mean, std) = mean_std(&accs);
            Aggregate {
                mode,
                noise_ratio,
                runs: accs.len(),
                failures: v.len() - accs.len(),
                mean,
                std,
            }
        })
        .collect()
}

pub fn cells_csv(cells: &[SweepCell]) -> String {
    let mut s = String::from("mode,noise_ratio,seed,test_acc\n");
    for c in cells {
        let _ = writeln!(s, "{},{},{},{}", c.mode, c.noise_ratio, c.seed, opt(c.test_acc));
    }
    s
}

pub fn aggregate_csv(rows: &[Aggregate]) -> String {
    let mut s = String::from("mode,noise_ratio,runs,failures,mean_test_acc,std_test_acc\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.mode,
            r.noise_ratio,
            r.runs,
            r.failures,
            opt(r.mean),
            opt(r.std)
        );
    }
    s
}

/// Runs every (mode, ratio, seed) cell, in parallel, each into its own
/// subdirectory of `root`, then writes the two CSV tables into `root`.
/// A failing cell is recorded and does not stop the sweep.
pub fn sweep(
    cfg: &ExperimentConfig,
    modes: &[Mode],
    ratios: &[f64],
    seeds: &[u64],
    root: &Path,
) -> Result<Vec<SweepCell>> {
    if modes.is_empty() || ratios.is_empty() || seeds.is_empty() {
        return Err(Error::Config("a sweep needs at least one mode, ratio and seed".into()));
    }
    let grid: Vec<(Mode, f64, u64)> = modes
        .iter()
        .flat_map(|&m| ratios.iter().flat_map(move |&r| seeds.iter().map(move |&s| (m, r, s))))
        .collect();
    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(mode, noise_ratio, seed)| {
            let outcome = cfg
                .with_mode(mode)
                .and_then(|c| c.with_noise_ratio(noise_ratio))
                .and_then(|c| run_experiment(&c, seed, &cell_dir(root, mode, noise_ratio, seed)));
            let (test_acc, error) = match outcome {
                Ok(s) => (s.test_acc, s.error),
                Err(e) => (None, Some(e.to_string())),
            };
            SweepCell {
                mode,
                noise_ratio,
                seed,
                test_acc,
                error,
            }
        })
        .collect();
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let p = root.join(ACCURACY_FILE);
    std::fs::write(&p, cells_csv(&cells)).map_err(|e| Error::io(&p, e))?;
    let p = root.join(ACCURACY_SUMMARY_FILE);
    std::fs::write(&p, aggregate_csv(&aggregate(&cells))).map_err(|e| Error::io(&p, e))?;
    Ok(cells)
}

/// Mode x noise-ratio table aggregated from run summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub dataset: String,
    pub rows: Vec<Aggregate>,
}

impl Report {
    /// One line per mode, one column per noise ratio; cells read `mean ± std (n)`.
    pub fn to_text(&self) -> String {
        let mut ratios: Vec<f64> = self.rows.iter().map(|r| r.noise_ratio).collect();
        ratios.sort_by(f64::total_cmp);
        ratios.dedup();
        let mut modes: Vec<Mode> = self.rows.iter().map(|r| r.mode).collect();
        modes.sort();
        modes.dedup();

        let mut s = format!("dataset: {}\n", self.dataset);
        let _ = write!(s, "{:<18}", "mode");
        for r in &ratios {
            let _ = write!(s, " | {:>22}", format!("noise {r}"));
        }
        s.push('\n');
        for m in &modes {
            let _ = write!(s, "{:<18}", m.as_str());
            for r in &ratios {
                let cell = self
                    .rows
                    .iter()
                    .find(|a| a.mode == *m && a.noise_ratio == *r)
                    .map_or_else(
                        || "-".to_string(),
                        |a| match (a.mean, a.std) {
                            (Some(mean), Some(std)) => {
                                format!("{:.2} ± {:.2} ({})", 100.0 * mean, 100.0 * std, a.runs)
                            }
                            _ => format!("failed ({})", a.failures),
                        },
                    );
                let _ = write!(s, " | {cell:>22}");
            }
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        aggregate_csv(&self.rows)
    }
}

fn collect_summaries(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let direct = dir.join(SUMMARY_FILE);
    if direct.is_file() {
        out.push(direct);
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for e in entries {
        collect_summaries(&e, out)?;
    }
    Ok(())
}

/// Aggregates every `summary.json` found under `dirs`.
pub fn report(dirs: &[PathBuf]) -> Result<Report> {
    let mut paths = Vec::new();
    for d in dirs {
        collect_summaries(d, &mut paths)?;
    }
    if paths.is_empty() {
        return Err(Error::Input("no completed runs found".into()));
    }
    let summaries: Vec<RunSummary> = paths.iter().map(|p| load_summary(p)).collect::<Result<_>>()?;
    report_from(&summaries)
}

pub fn report_from(summaries: &[RunSummary]) -> Result<Report> {
    let dataset = summaries
        .first()
        .ok_or_else(|| Error::Input("no completed runs found".into()))?
        .dataset
        .clone();
    if let Some(other) = summaries.iter().find(|s| s.dataset != dataset) {
        return Err(Error::Input(format!(
            "refusing to aggregate mixed datasets: {dataset} vs {}",
            other.dataset
        )));
    }
    let mut sorted: BTreeMap<(Mode, u64, u64), SweepCell> = BTreeMap::new();
    for s in summaries {
        sorted.insert(
            (s.mode, s.noise_ratio.to_bits(), s.seed),
            SweepCell {
                mode: s.mode,
                noise_ratio: s.noise_ratio,
                seed: s.seed,
                test_acc: s.test_acc,
                error: s.error.clone(),
            },
        );
    }
    let cells: Vec<SweepCell> = sorted.into_values().collect();
    Ok(Report {
        dataset,
        rows: aggregate(&cells),
    })
}
