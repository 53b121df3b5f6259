//! Configuration-driven runs behind the command-line interface.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluator::{evaluate_open_loop, OpenLoopEvaluation};
use crate::paths::{ImpulseSequence, PathBatch};
use crate::policy::{ImpulsePolicy, NoImpulses, RandomImpulses};
use crate::problem::{validate, ValidationReport};
use crate::report::{
    level_reports, strategy_report, write_diagnostics_csv, write_levels_csv, write_strategy_csv, Diagnostics,
    DualSummary, GridSummary, OracleReport, ProblemSummary, RunInfo, SolverReport, APPROXIMATION_NOTE, SCHEMA_VERSION,
};
use crate::rng;
use crate::simulate::{simulate_controlled, write_paths_csv};
use crate::solver::{dual_check, solve_robust, RobustPolicy};
use crate::tree::{solve_tree, TreeSolution, TreeSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        _ if err.is_numerical() => EXIT_NUMERICAL,
        Error::ConfigInvalid { .. } | Error::InvalidArgument(_) | Error::Unsupported(_) | Error::Json(_) => {
            EXIT_INVALID
        }
        _ => EXIT_OTHER,
    }
}

/// Command-line overrides of a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub deterministic: bool,
}

impl RunOptions {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.monte_carlo.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.outputs.directory = o.clone();
        }
        if self.deterministic {
            cfg.outputs.deterministic = true;
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Tree values `V(0, x0, r)` for the configured problem.
pub fn run_oracle(cfg: &RunConfig) -> Result<TreeSolution> {
    let spec = cfg.spec()?;
    solve_tree(&TreeSpec::from_problem(&spec, cfg.oracle.steps, cfg.solver.k_max)?)
}

/// Random candidates for the dual check: budgets cycle through
/// `1..=max_budget` and intensities through `{0.5, 1, 1.5, 2}` times the
/// configured intensity.
pub fn dual_candidates(cfg: &RunConfig, n_marks: usize, dt: f64) -> Vec<RandomImpulses> {
    let seed = rng::substream(cfg.monte_carlo.seed, "dual");
    (0..cfg.dual.candidates)
        .map(|i| RandomImpulses {
            seed: rng::substream(seed, &format!("candidate-{i}")),
            budget: 1 + i % cfg.dual.max_budget.max(1),
            intensity: cfg.dual.intensity * (0.5 + 0.5 * (i % 4) as f64),
            n_marks,
            dt,
        })
        .collect()
}

/// Solves, extracts and checks the strategy, and writes every artifact to the
/// output directory.
pub fn run_solve(cfg: &RunConfig) -> Result<SolverReport> {
    let started = Instant::now();
    cfg.validate()?;
    let spec = cfg.spec()?;
    let grid = cfg.time_grid(&spec)?;
    let solver_cfg = cfg.solver_config();
    let sol = solve_robust(&spec, &cfg.forward_sim(grid), &solver_cfg)?;

    let policy = RobustPolicy::new(&sol.model);
    let (eval_batch, trace) = simulate_controlled(&spec, &policy, &policy, &cfg.eval_sim(grid))?;
    let strategy = strategy_report(&sol, &trace);

    let dual = if cfg.dual.enabled {
        let random = dual_candidates(cfg, spec.marks.len(), grid.dt());
        let mut candidates: Vec<&dyn ImpulsePolicy> = vec![&policy, &NoImpulses];
        candidates.extend(random.iter().map(|c| c as &dyn ImpulsePolicy));
        let sim = cfg.dual_sim(grid);
        let r = dual_check(&sol, &spec, &candidates, &sim)?;
        Some(DualSummary {
            n_paths: sim.n_paths,
            n_candidates: r.candidates.len(),
            max_j: r.max_j,
            gap: r.gap,
            violations: r.violations,
            candidates: r.candidates,
        })
    } else {
        None
    };

    let oracle = if cfg.oracle.enabled {
        let tree = run_oracle(cfg)?;
        Some(OracleReport::new(cfg.oracle.steps, tree.root_values(), sol.k_effective(), sol.y0()))
    } else {
        None
    };

    let featurizer = sol.featurizer;
    let basis = cfg.basis();
    let mut warnings = sol.warnings.clone();
    if !strategy.within_3se {
        warnings.push(format!(
            "strategy value {:.6} differs from Y0 {:.6} by more than 3 combined standard errors",
            strategy.j,
            sol.y0()
        ));
    }
    if strategy.mean_interventions > strategy.intervention_bound {
        warnings.push("mean intervention count exceeds the crude bound".into());
    }
    let levels = level_reports(&sol);
    let threads = rayon::current_num_threads();
    let mut report = SolverReport {
        schema_version: SCHEMA_VERSION,
        problem: ProblemSummary::new(&spec),
        config: cfg.clone(),
        seed: cfg.monte_carlo.seed,
        grid: GridSummary { steps: grid.steps(), horizon: grid.horizon(), dt: grid.dt() },
        n_paths: cfg.monte_carlo.paths,
        y0: sol.y0(),
        se: sol.se(),
        se_method: sol.se_method.clone(),
        k_max: solver_cfg.k_max,
        k_effective: sol.k_effective(),
        stopped_early: sol.stopped_early,
        levels,
        strategy,
        dual_gap: dual.as_ref().map(|d| d.gap),
        dual,
        oracle,
        diagnostics: Diagnostics {
            hamiltonian_gap: sol.hamiltonian_gap,
            max_abs_y: sol.max_abs_y,
            max_abs_terminal: sol.max_abs_terminal,
            start_spread: sol.start_spread,
            featurizer: featurizer.name(),
            basis_degree: basis.degree,
            basis_bins: basis.bins,
            basis_size: basis.size(featurizer.dim(spec.dim())),
        },
        warnings,
        approximation: APPROXIMATION_NOTE.to_string(),
        run: None,
    };

    let dir = &cfg.outputs.directory;
    fs::create_dir_all(dir)?;
    {
        let mut w = create(dir, "levels.csv")?;
        write_levels_csv(&report.levels, &mut w)?;
        w.flush()?;
        let mut w = create(dir, "strategy.csv")?;
        write_strategy_csv(&trace, &mut w)?;
        w.flush()?;
    }
    if let Some(o) = &report.oracle {
        let mut w = create(dir, "oracle.csv")?;
        writeln!(w, "r,value")?;
        for (r, v) in o.values.iter().enumerate() {
            writeln!(w, "{r},{v}")?;
        }
        w.flush()?;
    }
    if cfg.outputs.diagnostics {
        let mut w = create(dir, "diagnostics.csv")?;
        write_diagnostics_csv(&sol, &mut w)?;
        w.flush()?;
        write_json(dir, "surfaces.json", &sol.model.levels)?;
    }
    if cfg.outputs.paths_csv {
        let mut w = create(dir, "paths.csv")?;
        write_paths_csv(&head(&eval_batch, cfg.outputs.paths_csv_limit), &mut w)?;
        w.flush()?;
    }
    if let Some(p) = trace.paths.iter().find(|p| !p.impulses.is_empty()) {
        write_json(dir, "sample_impulses.json", &p.impulse_sequence())?;
    }
    if !cfg.outputs.deterministic {
        report.run = Some(RunInfo {
            generated_at_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            elapsed_seconds: started.elapsed().as_secs_f64(),
            threads,
        });
    }
    write_json(dir, "report.json", &report)?;
    Ok(report)
}

/// The first `n` paths of a batch.
fn head(batch: &PathBatch, n: usize) -> PathBatch {
    let n = n.min(batch.n_paths);
    let (m, d) = (batch.steps(), batch.dim);
    PathBatch {
        grid: batch.grid,
        n_paths: n,
        dim: d,
        states: batch.states[..n * (m + 1) * d].to_vec(),
        increments: batch.increments[..n * m * d].to_vec(),
        seed: batch.seed,
    }
}

/// Reads an impulse sequence `{"times": [...], "marks": [[...], ...]}`.
pub fn read_impulse_sequence(path: &Path) -> Result<ImpulseSequence> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    let seq: ImpulseSequence = serde_json::from_str(&text)?;
    Ok(seq)
}

/// Robust and constant-adversary values of an open-loop impulse sequence.
pub fn run_evaluate(cfg: &RunConfig, strategy: &Path) -> Result<OpenLoopEvaluation> {
    cfg.validate()?;
    let spec = cfg.spec()?;
    let seq = read_impulse_sequence(strategy)?;
    if seq.marks().iter().any(|b| b.len() != spec.marks.dim()) {
        return Err(Error::InvalidArgument(format!("marks must have dimension {}", spec.marks.dim())));
    }
    let grid = cfg.time_grid(&spec)?;
    evaluate_open_loop(&spec, &seq, &cfg.eval_sim(grid), cfg.engine_config(), cfg.featurizer(&spec))
}

/// Configuration checks followed by probed structural checks of the problem.
pub fn run_validate(cfg: &RunConfig) -> Result<ValidationReport> {
    cfg.validate()?;
    let spec = cfg.spec()?;
    Ok(validate(&spec, 1000, cfg.monte_carlo.seed))
}
