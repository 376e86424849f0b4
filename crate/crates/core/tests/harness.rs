use std::path::Path;
use std::process::{Command, Output};

use ifssl_core::harness::{
    cell_dir, load_summary, parse_config_text, report, run_experiment, sweep, ExperimentConfig,
    Mode, RunSummary,
    ACCURACY_FILE, ACCURACY_SUMMARY_FILE, EPOCHS_FILE, HISTORY_FILE, SUMMARY_FILE,
};

fn small(extra: &str) -> ExperimentConfig {
    let text = format!("n-per-class = 60\nmax-epochs = 6\npatience = 6\nn-max-iterations = 2\n{extra}");
    ExperimentConfig::from_values(&parse_config_text(&text).unwrap()).unwrap()
}

fn ifssl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifssl"))
        .args(args)
        .env("IFSSL_OUT", out)
        .output()
        .expect("binary runs")
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("mode = if-ssl");
    let s = run_experiment(&cfg, 1, dir.path()).unwrap();
    for f in [EPOCHS_FILE, HISTORY_FILE, SUMMARY_FILE, "config.txt"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let wall = |mut x: RunSummary| {
        x.wall_clock_secs = 0.0;
        x
    };
    assert_eq!(load_summary(&dir.path().join(SUMMARY_FILE)).unwrap(), wall(s.clone()));
    let epochs = std::fs::read_to_string(dir.path().join(EPOCHS_FILE)).unwrap();
    assert_eq!(epochs.lines().count(), s.epochs_total);
    let history = std::fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap();
    assert_eq!(history.lines().count(), s.iterations_used + 1);
    assert!(s.final_filter.is_some());
    // the echoed configuration reproduces the run
    let echo = std::fs::read_to_string(dir.path().join("config.txt")).unwrap();
    let again = ExperimentConfig::from_values(&parse_config_text(&echo).unwrap()).unwrap();
    let other = tempfile::tempdir().unwrap();
    assert_eq!(wall(run_experiment(&again, 1, other.path()).unwrap()), wall(s));
}

#[test]
fn sweep_bookkeeping_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("");
    let modes = [Mode::Baseline, Mode::If];
    let ratios = [0.0, 0.4, 0.8];
    let cells = sweep(&cfg, &modes, &ratios, &[0], dir.path()).unwrap();
    assert_eq!(cells.len(), 6);
    assert!(cells.iter().all(|c| c.test_acc.is_some()));
    let raw = std::fs::read_to_string(dir.path().join(ACCURACY_FILE)).unwrap();
    let mut lines = raw.lines();
    assert_eq!(lines.next(), Some("mode,noise_ratio,seed,test_acc"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    // grouped by mode, ratios ascending within each mode
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], modes[i / 3].as_str());
        assert_eq!(row[1].parse::<f64>().unwrap(), ratios[i % 3]);
    }
    let agg = std::fs::read_to_string(dir.path().join(ACCURACY_SUMMARY_FILE)).unwrap();
    assert_eq!(agg.lines().count(), 7);

    // re-running the same sweep reproduces its tables
    let again = tempfile::tempdir().unwrap();
    sweep(&cfg, &modes, &ratios, &[0], again.path()).unwrap();
    for f in [ACCURACY_FILE, ACCURACY_SUMMARY_FILE] {
        assert_eq!(
            std::fs::read(dir.path().join(f)).unwrap(),
            std::fs::read(again.path().join(f)).unwrap()
        );
    }

    let r = report(&[dir.path().to_path_buf()]).unwrap();
    assert_eq!(r.rows.len(), 6);
    assert!(r.rows.iter().all(|a| a.runs == 1 && a.failures == 0));
    let one = report(&[cell_dir(dir.path(), Mode::If, 0.4, 0)]).unwrap();
    assert_eq!(one.rows.len(), 1);
    assert_eq!(one.rows[0].mean, cells[4].test_acc);
}

#[test]
fn report_averages_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("mode = baseline");
    let accs: Vec<f64> = (0..5)
        .map(|seed| {
            run_experiment(&cfg, seed, &dir.path().join(format!("s{seed}")))
                .unwrap()
                .test_acc
                .unwrap()
        })
        .collect();
    let r = report(&[dir.path().to_path_buf()]).unwrap();
    assert_eq!(r.rows.len(), 1);
    let mean = accs.iter().sum::<f64>() / 5.0;
    let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 4.0;
    assert!((r.rows[0].mean.unwrap() - mean).abs() < 1e-12);
    assert!((r.rows[0].std.unwrap() - var.sqrt()).abs() < 1e-12);
}

#[test]
fn filtering_is_harmless_without_noise() {
    // benchmark defaults, one seed
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_values(&parse_config_text("").unwrap()).unwrap();
    let cells = sweep(&cfg, &[Mode::Baseline, Mode::IfSsl], &[0.0], &[0], dir.path()).unwrap();
    assert_eq!(cells.len(), 2);
    let (base, full) = (cells[0].test_acc.unwrap(), cells[1].test_acc.unwrap());
    assert!((full - base).abs() <= 0.02, "if-ssl {full} vs baseline {base}");
}

#[test]
fn if_mode_uses_no_unsupervised_term() {
    let dir = tempfile::tempdir().unwrap();
    let auto = run_experiment(&small("mode = if\nnoise-ratio = 0.4"), 2, &dir.path().join("a")).unwrap();
    let none = run_experiment(
        &small("mode = if\nunsupervised = none\nnoise-ratio = 0.4"),
        2,
        &dir.path().join("b"),
    )
    .unwrap();
    assert_eq!(auto.unsupervised, "none");
    assert_eq!(auto.test_acc, none.test_acc);
    assert_eq!(
        std::fs::read(dir.path().join("a").join(HISTORY_FILE)).unwrap(),
        std::fs::read(dir.path().join("b").join(HISTORY_FILE)).unwrap()
    );
}

#[test]
fn cli_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let o = ifssl(
        &["run", "--mode", "if", "--n-per-class", "40", "--max-epochs", "4", "--patience", "4", "--seeds", "0,1"],
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("seed-0").join(SUMMARY_FILE).is_file());
    assert!(out.join("seed-1").join(SUMMARY_FILE).is_file());
    let csv = dir.path().join("table.csv");
    let o = ifssl(&["report", out.to_str().unwrap(), "--csv", csv.to_str().unwrap()], &out);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("if"));
    assert!(csv.is_file());
}

#[test]
fn cli_gen_data_round_trips_through_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let o = ifssl(
        &["gen-data", "--dataset", "rings", "--classes", "3", "--n-per-class", "40", "-o", data.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("r");
    let o = ifssl(
        &[
            "run", "--dataset", "csv", "--data-path", data.to_str().unwrap(), "--mode", "baseline",
            "--max-epochs", "3", "--patience", "3", "--out", out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = load_summary(&out.join(SUMMARY_FILE)).unwrap();
    assert!(s.dataset.contains("csv"));
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let code = |args: &[&str]| ifssl(args, p).status.code();

    assert_eq!(code(&["run", "--mode", "sideways"]), Some(2));
    assert_eq!(code(&["run", "--mode", "baseline", "--unsupervised", "entropy"]), Some(2));
    assert_eq!(code(&["run", "--topk", "9", "--max-epochs", "1", "--patience", "1"]), Some(2));

    let cfg = p.join("bad.txt");
    std::fs::write(&cfg, "no-such-key = 1\n").unwrap();
    assert_eq!(code(&["run", "-c", cfg.to_str().unwrap()]), Some(2));
    assert_eq!(code(&["run", "-c", p.join("missing.txt").to_str().unwrap()]), Some(6));

    let csv = p.join("bad.csv");
    std::fs::write(&csv, "this is not,a dataset\n1,2\n").unwrap();
    assert_eq!(
        code(&["run", "--dataset", "csv", "--data-path", csv.to_str().unwrap()]),
        Some(4)
    );
    assert_eq!(code(&["report", p.join("nothing-here").to_str().unwrap()]), Some(6));
    let empty = p.join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(code(&["report", empty.to_str().unwrap()]), Some(3));
}
