use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use robust_impulse::config::RunConfig;
use robust_impulse::harness::{self, RunOptions, EXIT_INVALID, EXIT_OK};
use robust_impulse::Result;

#[derive(Parser)]
#[command(name = "robust-impulse", version, about = "Robust impulse control by iterated reflected BSDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve, extract the strategy, run the dual check and write all artifacts.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Omit timestamps and timings from report.json.
        #[arg(long)]
        deterministic: bool,
    },
    /// Print the tree values V(0, x0, r), r = 0..k_max, as CSV.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate an impulse sequence given as JSON.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        strategy: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check the configuration and probe the problem's structural assumptions.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_path(path)?;
    RunOptions { seed, ..Default::default() }.apply(&mut cfg);
    if cfg.monte_carlo.threads > 0 {
        // fails only if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.monte_carlo.threads).build_global();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<i32> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Solve { config, seed, out, deterministic } => {
            let mut cfg = load(&config, None)?;
            RunOptions { seed, out, deterministic }.apply(&mut cfg);
            let r = harness::run_solve(&cfg)?;
            writeln!(stdout, "Y0 = {:.6} (se {:.2e}, k = {})", r.y0, r.se, r.k_effective)?;
            writeln!(
                stdout,
                "J(u*, a*) = {:.6} (se {:.2e}), E[N*] = {:.4}",
                r.strategy.j, r.strategy.j_se, r.strategy.mean_interventions
            )?;
            if let Some(g) = r.dual_gap {
                writeln!(stdout, "dual gap = {g:.6}")?;
            }
            if let Some(o) = &r.oracle {
                writeln!(stdout, "tree V(0, x0, {}) = {:.6}, |Y0 - V| = {:.2e}", r.k_effective, o.target, o.abs_error)?;
            }
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            writeln!(stdout, "artifacts written to {}", cfg.outputs.directory.display())?;
            Ok(EXIT_OK)
        }
        Command::Oracle { config } => {
            let cfg = load(&config, None)?;
            harness::run_oracle(&cfg)?.write_csv(&mut stdout)?;
            Ok(EXIT_OK)
        }
        Command::Evaluate { config, strategy, seed } => {
            let cfg = load(&config, seed)?;
            let ev = harness::run_evaluate(&cfg, &strategy)?;
            serde_json::to_writer_pretty(&mut stdout, &ev)?;
            writeln!(stdout)?;
            Ok(EXIT_OK)
        }
        Command::Validate { config } => {
            let cfg = load(&config, None)?;
            let report = harness::run_validate(&cfg)?;
            serde_json::to_writer_pretty(&mut stdout, &report)?;
            writeln!(stdout)?;
            if report.passed() {
                Ok(EXIT_OK)
            } else {
                for c in report.checks.iter().filter(|c| !c.passed) {
                    eprintln!("check failed: {} {}", c.name, c.witness.as_deref().unwrap_or(""));
                }
                Ok(EXIT_INVALID)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
