//! Command-line entry point: run scenarios, time the association filter and
//! verify stored runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use cpdaf_core::bench::{bench_csv, run_bench, BenchConfig, MIN_TIMED_STEPS, WARMUP_STEPS};
use cpdaf_core::config::parse_config;
use cpdaf_core::runlog::{errors_csv, estimates_csv, replay, truth_csv, RunLog, Summary};
use cpdaf_core::sim::{run_scenario_with, ScenarioConfig};
use cpdaf_core::Error;

#[derive(Parser)]
#[command(name = "cpdaf", version, about = "Anonymous mutual localization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and export errors, estimates, truth and a summary.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Admit every pairing instead of gating.
        #[arg(long)]
        no_gating: bool,
        /// Track the odometry-only baseline.
        #[arg(long)]
        baseline: bool,
        /// Independent runs with seeds seed, seed + 1, ...
        #[arg(long, default_value_t = 1)]
        trials: usize,
        /// Worker threads for trials; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Record wall-clock timings. Outputs are then no longer reproducible.
        #[arg(long)]
        timings: bool,
    },
    /// Time the gated update against full enumeration.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "3,5,7")]
        robots: Vec<usize>,
        #[arg(long, default_value_t = WARMUP_STEPS + MIN_TIMED_STEPS)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Recompute the metrics of a stored run and compare with its summary.
    Replay { runlog: PathBuf },
}

enum Failure {
    Config(String),
    Runtime(String),
    Mismatch(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
            Failure::Mismatch(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) | Failure::Mismatch(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ReplayMismatch(_) => Failure::Mismatch(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn load_config(path: &Path, no_gating: bool, baseline: bool) -> Result<ScenarioConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if let Ok(seed) = std::env::var("SEED") {
        cfg.seed = seed.trim().parse().map_err(|_| Failure::Config(format!("SEED is not an unsigned integer: {seed:?}")))?;
    }
    if no_gating {
        cfg.flags.enable_gating = false;
    }
    if baseline {
        cfg.flags.enable_baseline = true;
    }
    Ok(cfg)
}

fn export(log: &RunLog, dir: &Path) -> Result<Summary, Failure> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let summary = Summary::from_log(log)?;
    write(&dir.join("errors.csv"), &errors_csv(log))?;
    write(&dir.join("estimates.csv"), &estimates_csv(log))?;
    write(&dir.join("truth.csv"), &truth_csv(log))?;
    write(&dir.join("summary.json"), &summary.to_json()?)?;
    write(&dir.join("runlog.json"), &log.to_json()?)?;
    Ok(summary)
}

const TRIALS_COLUMNS: &str = "trial,seed,final_e_abs,final_e_rel,time_to_converge,mean_hypotheses";

fn cmd_run(cfg: ScenarioConfig, out: &Path, trials: usize, jobs: usize, timings: bool) -> Result<(), Failure> {
    if trials == 0 {
        return Err(Failure::Config("--trials must be at least 1".into()));
    }
    if trials == 1 {
        let log = run_scenario_with(&cfg, timings)?;
        let s = export(&log, out)?;
        println!("final e_rel {:.6}, e_abs {:.6}, written to {}", s.final_e_rel, s.final_e_abs, out.display());
        return Ok(());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let summaries: Vec<Summary> = pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|k| {
                let trial = ScenarioConfig { seed: cfg.seed.wrapping_add(k as u64), ..cfg.clone() };
                let log = run_scenario_with(&trial, timings)?;
                log::info!("trial {k} (seed {}) done", trial.seed);
                export(&log, &out.join(format!("trial_{k:03}")))
            })
            .collect::<Result<_, Failure>>()
    })?;
    let mut table = format!("# columns: {TRIALS_COLUMNS}\n{TRIALS_COLUMNS}\n");
    for (k, s) in summaries.iter().enumerate() {
        let converge = s.time_to_converge.map(|t| t.to_string()).unwrap_or_default();
        table.push_str(&format!("{k},{},{},{},{converge},{}\n", s.seed, s.final_e_abs, s.final_e_rel, s.mean_hypotheses));
    }
    write(&out.join("trials.csv"), &table)?;
    println!("{trials} trials written to {}", out.display());
    Ok(())
}

fn cmd_bench(robots: &[usize], steps: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    if robots.is_empty() {
        return Err(Failure::Config("--robots needs at least one size".into()));
    }
    let cfg = BenchConfig { seed, steps, ..Default::default() };
    let results = run_bench(robots, &cfg).map_err(|e| match e {
        Error::InvalidParam(m) => Failure::Config(m),
        e => e.into(),
    })?;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let csv = bench_csv(&results);
    write(&out.join("bench.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_replay(path: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let log = RunLog::from_json(&text)?;
    let summary_path = path.with_file_name("summary.json");
    let stored = match fs::read_to_string(&summary_path) {
        Ok(s) => Some(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(io_error(&summary_path, e)),
    };
    let summary = replay(&log, stored.as_deref())?;
    let against = if stored.is_some() { "metrics and summary match" } else { "metrics match" };
    println!("{against}: {} rows, final e_rel {}", log.rows.len(), summary.final_e_rel);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, no_gating, baseline, trials, jobs, timings } => {
            load_config(&config, no_gating, baseline).and_then(|cfg| cmd_run(cfg, &out, trials, jobs, timings))
        }
        Command::Bench { robots, steps, seed, out } => cmd_bench(&robots, steps, seed, &out),
        Command::Replay { runlog } => cmd_replay(&runlog),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
