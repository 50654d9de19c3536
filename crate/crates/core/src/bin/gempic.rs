use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gempic::config::{self, Pairs, RunConfig};
use gempic::{driver, Error};

#[derive(Parser)]
#[command(name = "gempic", version, about = "Structure-preserving particle-in-cell runs on mapped domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write diagnostics.csv
    Run {
        /// Config file of `key = value` lines
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory, overrides `output.dir`
        #[arg(long)]
        out: Option<PathBuf>,
        /// Built-in preset applied under the config file
        #[arg(long)]
        preset: Option<String>,
        /// Overrides `particles.seed`
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for the particle loops
        #[arg(long)]
        workers: Option<usize>,
    },
    /// List the built-in presets
    Presets,
    /// Run the invariant self-test suite
    Check,
}

const CONFIG_ERROR: u8 = 2;
const NUMERICAL_ERROR: u8 = 3;

fn load(config: Option<PathBuf>, preset: Option<&str>) -> Result<RunConfig, Error> {
    let pairs = match &config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            config::parse_pairs(&text)?
        }
        None if preset.is_some() => Pairs::new(),
        None => {
            return Err(Error::ConfigValue {
                key: "preset".into(),
                message: "give --config or --preset".into(),
            })
        }
    };
    config::resolve(pairs, preset)
}

fn run(
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    preset: Option<String>,
    seed: Option<u64>,
    workers: Option<usize>,
) -> ExitCode {
    let mut cfg = match load(config, preset.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("gempic: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    if let Some(dir) = out {
        cfg.out_dir = dir;
    }
    if let Some(s) = seed {
        cfg.weibel.seed = s;
    }
    if let Some(n) = workers {
        if n == 0 {
            eprintln!("gempic: --workers must be at least 1");
            return ExitCode::from(CONFIG_ERROR);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("gempic: cannot set up {n} workers: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    }
    eprintln!(
        "gempic: {} steps of {} on {} {}x{}x{} p={}, {} particles -> {}",
        cfg.n_steps(),
        cfg.step.scheme.name(),
        cfg.map.family().name(),
        cfg.cells[0],
        cfg.cells[1],
        cfg.cells[2],
        cfg.degree,
        cfg.weibel.n_particles,
        cfg.out_dir.display()
    );
    match driver::run(&cfg) {
        Ok(summary) => {
            if let (Some(first), Some(last)) = (summary.rows.first(), summary.rows.last()) {
                eprintln!(
                    "gempic: done at t = {}, energy {:.6e} -> {:.6e}",
                    last.t, first.total, last.total
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("gempic: {e}");
            ExitCode::from(if e.is_config() { CONFIG_ERROR } else { NUMERICAL_ERROR })
        }
    }
}

fn check() -> ExitCode {
    match gempic::check::run_checks() {
        Ok(outcomes) => {
            let mut ok = true;
            for c in &outcomes {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(NUMERICAL_ERROR)
            }
        }
        Err(e) => {
            eprintln!("gempic: {e}");
            ExitCode::from(NUMERICAL_ERROR)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            preset,
            seed,
            workers,
        } => run(config, out, preset, seed, workers),
        Command::Presets => {
            for name in config::preset_names() {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::Check => check(),
    }
}
