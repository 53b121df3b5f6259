//! `report.json` and the CSV artifacts of a solve run.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;
use crate::policy::StrategyTrace;
use crate::problem::ProblemSpec;
use crate::solver::{CandidateResult, RobustSolution};

pub const SCHEMA_VERSION: u32 = 1;

/// Note carried in every report: the solver indexes values by remaining
/// budget and path features rather than by full impulse histories.
pub const APPROXIMATION_NOTE: &str =
    "values are indexed by the remaining intervention budget and regression features of the \
     current path prefix, not by the full impulse history";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub schema_version: u32,
    pub problem: ProblemSummary,
    pub config: RunConfig,
    pub seed: u64,
    pub grid: GridSummary,
    pub n_paths: usize,
    pub y0: f64,
    pub se: f64,
    pub se_method: String,
    pub k_max: usize,
    pub k_effective: usize,
    pub stopped_early: bool,
    pub levels: Vec<LevelReport>,
    pub strategy: StrategyReport,
    /// `Y0 - max_u J(u, alpha*)` over the dual candidates; null when the dual
    /// check is disabled.
    pub dual_gap: Option<f64>,
    pub dual: Option<DualSummary>,
    pub oracle: Option<OracleReport>,
    pub diagnostics: Diagnostics,
    pub warnings: Vec<String>,
    pub approximation: String,
    /// Wall-clock data; omitted in deterministic mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSummary {
    pub name: String,
    pub dim: usize,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub actions: Vec<Vec<f64>>,
    pub marks: Vec<Vec<f64>>,
    pub cost_floor: f64,
    pub markovian: bool,
}

impl ProblemSummary {
    pub fn new(spec: &ProblemSpec) -> Self {
        Self {
            name: spec.name.clone(),
            dim: spec.dim(),
            x0: spec.x0.clone(),
            horizon: spec.horizon,
            actions: spec.actions.iter().map(<[f64]>::to_vec).collect(),
            marks: spec.marks.iter().map(<[f64]>::to_vec).collect(),
            cost_floor: spec.cost_floor,
            markovian: spec.markovian,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub steps: usize,
    pub horizon: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub k: usize,
    pub y0: f64,
    pub se: f64,
    pub sup_increment: Option<f64>,
    pub mean_increment: Option<f64>,
    pub min_increment: Option<f64>,
    pub mean_k: f64,
    pub mean_binding_fraction: f64,
    pub barrier_binding: Vec<f64>,
    pub skorokhod_sum: f64,
    pub skorokhod_violations: usize,
    pub driver_clamps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub n_paths: usize,
    /// `J(u*, alpha*)` on fresh paths.
    pub j: f64,
    pub j_se: f64,
    /// `sqrt(se_Y0^2 + se_J^2)`.
    pub combined_se: f64,
    /// `Y0 - J`.
    pub gap: f64,
    pub within_3se: bool,
    pub mean_interventions: f64,
    pub interventions_se: f64,
    pub max_interventions: usize,
    /// `(max |Y| + max |xi|) / delta`.
    pub intervention_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSummary {
    pub n_paths: usize,
    pub n_candidates: usize,
    pub max_j: f64,
    pub gap: f64,
    pub violations: usize,
    pub candidates: Vec<CandidateResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub steps: usize,
    /// `V(0, x0, r)` for `r = 0..=k_max`.
    pub values: Vec<f64>,
    /// Tree value at the effective budget.
    pub target: f64,
    pub abs_error: f64,
    /// `max(0.05 |target|, 0.02)`.
    pub tolerance: f64,
    pub within_tolerance: bool,
}

impl OracleReport {
    pub fn new(steps: usize, values: Vec<f64>, k: usize, y0: f64) -> Self {
        let target = values[k.min(values.len() - 1)];
        let tolerance = (0.05 * target.abs()).max(0.02);
        let abs_error = (y0 - target).abs();
        Self { steps, values, target, abs_error, tolerance, within_tolerance: abs_error <= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub hamiltonian_gap: f64,
    pub max_abs_y: f64,
    pub max_abs_terminal: f64,
    pub start_spread: f64,
    pub featurizer: String,
    pub basis_degree: usize,
    pub basis_bins: usize,
    pub basis_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub generated_at_unix: u64,
    pub elapsed_seconds: f64,
    pub threads: usize,
}

pub fn level_reports(sol: &RobustSolution) -> Vec<LevelReport> {
    sol.levels
        .iter()
        .map(|l| LevelReport {
            k: l.k,
            y0: l.y0,
            se: l.se,
            sup_increment: l.sup_increment,
            mean_increment: l.mean_increment,
            min_increment: l.min_increment,
            mean_k: l.mean_k,
            mean_binding_fraction: l.barrier_binding.iter().sum::<f64>() / l.barrier_binding.len().max(1) as f64,
            barrier_binding: l.barrier_binding.clone(),
            skorokhod_sum: l.skorokhod_sum,
            skorokhod_violations: l.skorokhod_violations,
            driver_clamps: l.driver_clamps,
        })
        .collect()
}

pub fn strategy_report(sol: &RobustSolution, trace: &StrategyTrace) -> StrategyReport {
    let j = trace.reward_estimate();
    let n = trace.count_estimate();
    let combined_se = (sol.se().powi(2) + j.se.powi(2)).sqrt();
    StrategyReport {
        n_paths: j.n,
        j: j.mean,
        j_se: j.se,
        combined_se,
        gap: sol.y0() - j.mean,
        within_3se: (sol.y0() - j.mean).abs() <= 3.0 * combined_se,
        mean_interventions: n.mean,
        interventions_se: n.se,
        max_interventions: trace.intervention_counts().into_iter().max().unwrap_or(0),
        intervention_bound: sol.intervention_bound(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Columns `k,Y0,SE,sup_increment,mean_increment,min_increment,mean_k,mean_binding_fraction`.
pub fn write_levels_csv<W: Write>(levels: &[LevelReport], mut w: W) -> Result<()> {
    writeln!(w, "k,Y0,SE,sup_increment,mean_increment,min_increment,mean_k,mean_binding_fraction")?;
    for l in levels {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            l.k,
            l.y0,
            l.se,
            opt(l.sup_increment),
            opt(l.mean_increment),
            opt(l.min_increment),
            l.mean_k,
            l.mean_binding_fraction
        )?;
    }
    Ok(())
}

/// One row per evaluation path: `path_id,n_impulses,running,terminal,costs,reward,impulse_times,impulse_marks`.
/// The two list columns are `;`-separated; marks are written as mark indices.
pub fn write_strategy_csv<W: Write>(trace: &StrategyTrace, mut w: W) -> Result<()> {
    writeln!(w, "path_id,n_impulses,running,terminal,costs,reward,impulse_times,impulse_marks")?;
    for (p, t) in trace.paths.iter().enumerate() {
        let times: Vec<String> = t.impulses.iter().map(|r| r.time.to_string()).collect();
        let marks: Vec<String> = t.impulses.iter().map(|r| r.mark.to_string()).collect();
        writeln!(
            w,
            "{p},{},{},{},{},{},{},{}",
            t.impulses.len(),
            t.running,
            t.terminal,
            t.costs,
            t.reward(),
            times.join(";"),
            marks.join(";")
        )?;
    }
    Ok(())
}

/// Per level and step: `k,step,condition,mean_abs_z,max_abs_z,clamp_count,mean_k,binding_fraction`.
pub fn write_diagnostics_csv<W: Write>(sol: &RobustSolution, mut w: W) -> Result<()> {
    writeln!(w, "k,step,condition,mean_abs_z,max_abs_z,clamp_count,mean_k,binding_fraction")?;
    for l in &sol.levels {
        for d in &l.state.diagnostics {
            let binding = l.barrier_binding.get(d.step).copied().unwrap_or(0.0);
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                l.k, d.step, d.condition, d.mean_abs_z, d.max_abs_z, d.clamp_count, d.mean_k, binding
            )?;
        }
    }
    Ok(())
}
