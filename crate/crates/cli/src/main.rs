//! `permnet` command line: train seeds from a config file and aggregate the
//! resulting learning curves.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use permnet::experiment::{aggregate_csv, parse_seed_list, run_seed, ExperimentConfig};
use permnet::Error;

#[derive(Parser)]
#[command(name = "permnet", version, about = "Permutation-invariant MARL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write one CSV curve per seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Seed list such as `0,1,2` or `0..5`; overrides PERMNET_SEED and
        /// the config.
        #[arg(long)]
        seeds: Option<String>,
        /// Seeds trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Replace existing output files.
        #[arg(long)]
        overwrite: bool,
    },
    /// Median and interquartile win rate across per-seed CSV files.
    Aggregate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::UnknownName { .. } => 2,
            Error::GridMismatch(_) => 4,
            _ => 1,
        };
        Failure::new(code, e.to_string())
    }
}

fn ensure_writable(dir: &Path) -> Result<(), Failure> {
    let unwritable = |e: std::io::Error| Failure::new(3, format!("output directory {}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(unwritable)?;
    let probe = dir.join(".permnet-write-check");
    fs::write(&probe, b"").map_err(unwritable)?;
    fs::remove_file(&probe).map_err(unwritable)
}

fn run(config: &Path, out: &Path, seeds: Option<&str>, jobs: usize, overwrite: bool) -> Result<(), Failure> {
    let text = fs::read_to_string(config).map_err(|e| Failure::new(1, format!("{}: {e}", config.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(list) = seeds {
        cfg.seeds = parse_seed_list(list)?;
    } else if let Ok(list) = std::env::var("PERMNET_SEED") {
        cfg.seeds = parse_seed_list(&list)?;
    }
    ensure_writable(out)?;
    if !overwrite {
        if let Some(p) = cfg.seeds.iter().map(|&s| cfg.output_path(out, s)).find(|p| p.exists()) {
            return Err(Failure::new(
                1,
                format!("{} exists; pass --overwrite to replace it", p.display()),
            ));
        }
    }

    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&seed) = cfg.seeds.get(i) else { break };
        let result = run_seed(&cfg, seed, out, overwrite, |seed, r| {
            eprintln!(
                "seed {seed} env_steps {} win_rate {:.6} loss {:.6}",
                r.env_steps, r.win_rate, r.loss
            );
        });
        match result {
            Ok(path) => eprintln!("seed {seed} done: {}", path.display()),
            Err(e) => failures.lock().expect("poisoned").push((seed, e)),
        }
    };
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, cfg.seeds.len()) {
            s.spawn(worker);
        }
    });

    let mut failures = failures.into_inner().expect("poisoned");
    failures.sort_by_key(|(seed, _)| *seed);
    match failures.into_iter().next() {
        None => Ok(()),
        Some((seed, e)) => {
            let code = if matches!(e, Error::Io { .. }) { 3 } else { Failure::from(e.clone()).code };
            Err(Failure::new(code, format!("seed {seed}: {e}")))
        }
    }
}

fn aggregate(files: &[PathBuf], out: Option<&Path>) -> Result<(), Failure> {
    let texts = files
        .iter()
        .map(|f| fs::read_to_string(f).map_err(|e| Failure::new(1, format!("{}: {e}", f.display()))))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = aggregate_csv(&texts)?;
    match out {
        Some(path) => fs::write(path, summary).map_err(|e| Failure::new(3, format!("{}: {e}", path.display()))),
        None => {
            print!("{summary}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            config,
            out,
            seeds,
            jobs,
            overwrite,
        } => run(config, out, seeds.as_deref(), *jobs, *overwrite),
        Command::Aggregate { files, out } => aggregate(files, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
