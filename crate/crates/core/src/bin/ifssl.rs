use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use rayon::prelude::*;

use ifssl_core::dataio::{inject_uniform_noise, save_csv, to_csv_string};
use ifssl_core::harness::{self, ExperimentConfig, KEYS};
use ifssl_core::{Error, Result};

fn with_config_args(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .short('c')
            .value_name("FILE")
            .help("key = value configuration file"),
    );
    KEYS.iter().fold(cmd, |cmd, k| {
        cmd.arg(
            Arg::new(k.name)
                .long(k.name)
                .value_name("VALUE")
                .help(format!("{} [default: {}]", k.help, k.default)),
        )
    })
}

fn cli() -> Command {
    Command::new("ifssl")
        .about("Iterative label filtering with mean-teacher training on synthetic data")
        .subcommand_required(true)
        .subcommand(
            with_config_args(Command::new("gen-data").about("Write the configured dataset as CSV"))
                .arg(
                    Arg::new("output")
                        .long("output")
                        .short('o')
                        .value_name("FILE")
                        .help("destination (stdout when absent)"),
                )
                .arg(
                    Arg::new("noisy")
                        .long("noisy")
                        .action(ArgAction::SetTrue)
                        .help("flip labels at noise-ratio before writing"),
                ),
        )
        .subcommand(with_config_args(
            Command::new("run").about("Run the configured mode once per seed"),
        ))
        .subcommand(with_config_args(
            Command::new("sweep").about("Run every mode x noise ratio x seed cell"),
        ))
        .subcommand(
            Command::new("report")
                .about("Aggregate finished runs into a mode x noise-ratio table")
                .arg(
                    Arg::new("dirs")
                        .value_name("DIR")
                        .num_args(1..)
                        .required(true)
                        .value_parser(clap::value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("csv")
                        .long("csv")
                        .value_name("FILE")
                        .value_parser(clap::value_parser!(PathBuf))
                        .help("also write the table as CSV"),
                ),
        )
}

fn load_config(m: &ArgMatches) -> Result<ExperimentConfig> {
    let overrides: BTreeMap<&'static str, String> = KEYS
        .iter()
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name, v.clone())))
        .collect();
    let path = m.get_one::<String>("config").map(PathBuf::from);
    harness::parse_config(path.as_deref(), &overrides)
}

fn gen_data(m: &ArgMatches) -> Result<()> {
    let cfg = load_config(m)?;
    let seed = cfg.seeds[0];
    let mut data = harness::load_dataset(&cfg.dataset, seed)?;
    if m.get_flag("noisy") {
        data = inject_uniform_noise(&data, cfg.noise(seed))?;
    }
    match m.get_one::<String>("output") {
        Some(p) => save_csv(&data, p),
        None => {
            print!("{}", to_csv_string(&data)?);
            Ok(())
        }
    }
}

fn run(m: &ArgMatches) -> Result<()> {
    let cfg = load_config(m)?;
    let root = cfg.out_dir();
    let results: Vec<Result<harness::RunSummary>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let dir = if cfg.seeds.len() == 1 {
                root.clone()
            } else {
                root.join(format!("seed-{seed}"))
            };
            harness::run_experiment(&cfg, seed, &dir)
        })
        .collect();
    let mut diverged = None;
    for r in results {
        let s = r?;
        match s.test_acc {
            Some(acc) => println!(
                "{} seed {}: test_acc {:.4}, valid {:.4}, {} training runs, {:.1}s",
                s.mode,
                s.seed,
                acc,
                s.best_valid_acc.unwrap_or(f64::NAN),
                s.iterations_used,
                s.wall_clock_secs
            ),
            None => {
                let msg = s.error.clone().unwrap_or_default();
                eprintln!("{} seed {}: {}", s.mode, s.seed, msg);
                diverged.get_or_insert(Error::Diverged {
                    iteration: 0,
                    epoch: s.epochs_total,
                    message: msg,
                });
            }
        }
    }
    println!("outputs in {}", root.display());
    diverged.map_or(Ok(()), Err)
}

fn sweep(m: &ArgMatches) -> Result<()> {
    let cfg = load_config(m)?;
    let root = cfg.out_dir();
    let cells = harness::sweep(&cfg, &cfg.modes, &cfg.noise_ratios, &cfg.seeds, &root)?;
    print!("{}", harness::aggregate_csv(&harness::aggregate(&cells)));
    for c in cells.iter().filter(|c| c.test_acc.is_none()) {
        eprintln!(
            "{} noise {} seed {} failed: {}",
            c.mode,
            c.noise_ratio,
            c.seed,
            c.error.as_deref().unwrap_or("unknown")
        );
    }
    println!("outputs in {}", root.display());
    Ok(())
}

fn report(m: &ArgMatches) -> Result<()> {
    let dirs: Vec<PathBuf> = m.get_many::<PathBuf>("dirs").unwrap().cloned().collect();
    let r = harness::report(&dirs)?;
    print!("{}", r.to_text());
    if let Some(p) = m.get_one::<PathBuf>("csv") {
        std::fs::write(p, r.to_csv()).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let result = match matches.subcommand() {
        Some(("gen-data", m)) => gen_data(m),
        Some(("run", m)) => run(m),
        Some(("sweep", m)) => sweep(m),
        Some(("report", m)) => report(m),
        _ => unreachable!("subcommand required"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
