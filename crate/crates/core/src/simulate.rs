//! Euler–Maruyama simulation of the impulsively controlled SDE.
//!
//! Two dynamics are provided:
//!
//! - [`simulate_driftless`]: drift `(a_1, 0)`, i.e. the controlled block is
//!   simulated without its drift; the backward solver works under this
//!   measure and carries the controlled drift inside its driver.
//! - [`simulate_controlled`]: full drift `a(t, x, alpha)` with feedback
//!   policies for impulses and adversary actions, used for evaluation.
//!
//! At a grid index carrying impulses the state is first replaced by
//! `Gamma(t_i, pre-impulse prefix, b)` (in list order for simultaneous
//! impulses) and the diffusion step is taken from the post-impulse state.
//! Coefficients see the prefix with the post-impulse value at the current
//! index.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::paths::{ImpulseSequence, PathBatch, PathPrefix};
use crate::policy::{AdversaryPolicy, DecisionContext, ImpulsePolicy, ImpulseRecord, PathTrace, StrategyTrace};
use crate::problem::ProblemSpec;
use crate::rng;

/// Law of the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialLaw {
    /// Every path starts at `x0`.
    #[default]
    Point,
    /// `x0 + U[-h, h]^d`, independent per path. Used to spread regression
    /// samples over states reachable by impulses.
    UniformBox { halfwidth: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    #[serde(default)]
    pub initial: InitialLaw,
}

impl SimConfig {
    pub fn new(grid: TimeGrid, n_paths: usize, seed: u64) -> Self {
        Self { grid, n_paths, seed, antithetic: false, initial: InitialLaw::Point }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidArgument("n_paths must be positive".into()));
        }
        if self.antithetic && !self.n_paths.is_multiple_of(2) {
            return Err(Error::InvalidArgument("antithetic sampling needs an even number of paths".into()));
        }
        if let InitialLaw::UniformBox { halfwidth } = self.initial {
            if !(halfwidth >= 0.0 && halfwidth.is_finite()) {
                return Err(Error::InvalidArgument(format!("initial halfwidth must be nonnegative, got {halfwidth}")));
            }
        }
        Ok(())
    }
}

/// Fills `out` (`M x d`) with the Brownian increments of path `p`.
fn draw_increments(cfg: &SimConfig, p: usize, out: &mut [f64]) {
    let sdt = cfg.grid.dt().sqrt();
    let (stream, sign) = if cfg.antithetic { (p / 2, if p % 2 == 1 { -1.0 } else { 1.0 }) } else { (p, 1.0) };
    let mut r = rng::stream(cfg.seed, stream as u64);
    for v in out.iter_mut() {
        let z: f64 = r.sample(StandardNormal);
        *v = sign * sdt * z;
    }
}

fn initial_state(spec: &ProblemSpec, cfg: &SimConfig, p: usize, out: &mut [f64]) {
    out.copy_from_slice(&spec.x0);
    if let InitialLaw::UniformBox { halfwidth } = cfg.initial {
        if halfwidth > 0.0 {
            let mut r = rng::stream(rng::substream(cfg.seed, "initial"), p as u64);
            for (o, x) in out.iter_mut().zip(&spec.x0) {
                *o = x + halfwidth * (2.0 * r.random::<f64>() - 1.0);
            }
        }
    }
}

/// One Euler step from row `i` of `rows` into row `i + 1`.
fn euler_step(rows: &mut [f64], d: usize, i: usize, drift: &[f64], sigma: &[f64], dw: &[f64], dt: f64) {
    let (head, tail) = rows.split_at_mut((i + 1) * d);
    let x = &head[i * d..];
    let next = &mut tail[..d];
    for r in 0..d {
        let diffusion: f64 = (0..d).map(|c| sigma[r * d + c] * dw[c]).sum();
        next[r] = x[r] + drift[r] * dt + diffusion;
    }
}

/// Applies `Gamma` to row `i` of `rows` in place and returns the new state.
fn apply_impulse_in_place(spec: &ProblemSpec, rows: &mut [f64], d: usize, i: usize, t: f64, mark: &[f64]) -> Vec<f64> {
    let post = {
        let prefix = PathPrefix::new(i, d, &rows[..i * d], &rows[i * d..(i + 1) * d]);
        spec.apply_impulse(t, &prefix, mark)
    };
    rows[i * d..(i + 1) * d].copy_from_slice(&post);
    post
}

/// Simulates the driftless dynamics under the fixed impulse control `u`.
pub fn simulate_driftless(spec: &ProblemSpec, u: &ImpulseSequence, cfg: &SimConfig) -> Result<PathBatch> {
    Ok(simulate_driftless_costed(spec, u, cfg)?.0)
}

/// [`simulate_driftless`] together with the per-path sum of intervention
/// costs `l(tau_j, X_{tau_j-}, beta_j)`.
pub fn simulate_driftless_costed(
    spec: &ProblemSpec,
    u: &ImpulseSequence,
    cfg: &SimConfig,
) -> Result<(PathBatch, Vec<f64>)> {
    cfg.validate()?;
    u.check_within(cfg.grid.horizon())?;
    let d = spec.dim();
    let m = cfg.grid.steps();
    let dt = cfg.grid.dt();
    let schedule: Vec<(usize, &[f64])> =
        u.times().iter().zip(u.marks()).map(|(&t, b)| (cfg.grid.nearest_index(t), b.as_slice())).collect();

    let mut states = vec![0.0; cfg.n_paths * (m + 1) * d];
    let mut increments = vec![0.0; cfg.n_paths * m * d];
    let mut costs = vec![0.0; cfg.n_paths];

    states
        .par_chunks_mut((m + 1) * d)
        .zip(increments.par_chunks_mut(m * d))
        .zip(costs.par_iter_mut())
        .enumerate()
        .try_for_each(|(p, ((rows, incs), cost))| -> Result<()> {
            draw_increments(cfg, p, incs);
            initial_state(spec, cfg, p, &mut rows[..d]);
            let mut drift = vec![0.0; d];
            let mut sigma = vec![0.0; d * d];
            let mut next_impulse = 0;
            for i in 0..=m {
                let t = cfg.grid.time(i);
                while next_impulse < schedule.len() && schedule[next_impulse].0 == i {
                    *cost += (spec.intervention_cost)(t, &rows[i * d..(i + 1) * d], schedule[next_impulse].1);
                    apply_impulse_in_place(spec, rows, d, i, t, schedule[next_impulse].1);
                    next_impulse += 1;
                }
                if i == m {
                    break;
                }
                {
                    let prefix = PathPrefix::new(i, d, &rows[..i * d], &rows[i * d..(i + 1) * d]);
                    spec.driftless_drift(t, &prefix, &mut drift);
                    (spec.sigma)(t, &prefix, &mut sigma);
                }
                euler_step(rows, d, i, &drift, &sigma, &incs[i * d..(i + 1) * d], dt);
            }
            Ok(())
        })?;

    Ok((PathBatch { grid: cfg.grid, n_paths: cfg.n_paths, dim: d, states, increments, seed: cfg.seed }, costs))
}

/// Simulates the full controlled dynamics under feedback policies.
///
/// Impulses are only taken at indices `0..M`; the terminal index is never an
/// intervention time. The running reward is accumulated by the left
/// rectangle rule at the post-impulse state.
pub fn simulate_controlled(
    spec: &ProblemSpec,
    impulse_policy: &dyn ImpulsePolicy,
    adversary: &dyn AdversaryPolicy,
    cfg: &SimConfig,
) -> Result<(PathBatch, StrategyTrace)> {
    cfg.validate()?;
    let d = spec.dim();
    let m = cfg.grid.steps();
    let dt = cfg.grid.dt();
    let budget = impulse_policy.budget();
    let n_actions = spec.actions.len();
    let n_marks = spec.marks.len();

    let results: Vec<(Vec<f64>, Vec<f64>, PathTrace)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| -> Result<(Vec<f64>, Vec<f64>, PathTrace)> {
            let mut rows = vec![0.0; (m + 1) * d];
            let mut incs = vec![0.0; m * d];
            draw_increments(cfg, p, &mut incs);
            initial_state(spec, cfg, p, &mut rows[..d]);
            let mut trace = PathTrace { actions: Vec::with_capacity(m), ..Default::default() };
            let mut drift = vec![0.0; d];
            let mut sigma = vec![0.0; d * d];
            let mut used = 0;
            for i in 0..m {
                let t = cfg.grid.time(i);
                let mut pass = 0;
                while used < budget {
                    let decision = {
                        let ctx = DecisionContext {
                            step: i,
                            time: t,
                            path: p,
                            remaining: budget - used,
                            pass,
                            prefix: PathPrefix::new(i, d, &rows[..i * d], &rows[i * d..(i + 1) * d]),
                        };
                        impulse_policy.decide(&ctx)?
                    };
                    let Some(decision) = decision else { break };
                    if decision.mark >= n_marks {
                        return Err(Error::PolicyRange {
                            kind: "mark",
                            index: decision.mark,
                            size: n_marks,
                            step: i,
                            path: p,
                        });
                    }
                    let b = spec.marks.point(decision.mark);
                    let pre = rows[i * d..(i + 1) * d].to_vec();
                    let cost = (spec.intervention_cost)(t, &pre, b);
                    let post = apply_impulse_in_place(spec, &mut rows, d, i, t, b);
                    trace.costs += cost;
                    trace.impulses.push(ImpulseRecord {
                        step: i,
                        time: t,
                        mark: decision.mark,
                        mark_value: b.to_vec(),
                        cost,
                        pre_state: pre,
                        post_state: post,
                        attainment: decision.attainment,
                    });
                    used += 1;
                    pass += 1;
                }
                let prefix = PathPrefix::new(i, d, &rows[..i * d], &rows[i * d..(i + 1) * d]);
                let ctx = DecisionContext { step: i, time: t, path: p, remaining: budget - used, pass, prefix };
                let a = adversary.action(&ctx)?;
                if a >= n_actions {
                    return Err(Error::PolicyRange { kind: "action", index: a, size: n_actions, step: i, path: p });
                }
                let alpha = spec.actions.point(a);
                trace.actions.push(a as u16);
                trace.running += (spec.running_reward)(t, &prefix, alpha) * dt;
                spec.drift(t, &prefix, alpha, &mut drift);
                (spec.sigma)(t, &prefix, &mut sigma);
                euler_step(&mut rows, d, i, &drift, &sigma, &incs[i * d..(i + 1) * d], dt);
            }
            trace.terminal = (spec.terminal_reward)(&rows[m * d..]);
            Ok((rows, incs, trace))
        })
        .collect::<Result<_>>()?;

    let mut states = Vec::with_capacity(cfg.n_paths * (m + 1) * d);
    let mut increments = Vec::with_capacity(cfg.n_paths * m * d);
    let mut paths = Vec::with_capacity(cfg.n_paths);
    for (r, inc, tr) in results {
        states.extend(r);
        increments.extend(inc);
        paths.push(tr);
    }
    let batch = PathBatch { grid: cfg.grid, n_paths: cfg.n_paths, dim: d, states, increments, seed: cfg.seed };
    Ok((batch, StrategyTrace { grid: cfg.grid, paths }))
}

/// CSV dump with columns `step,time,path_id,x_0..x_{d-1}`.
pub fn write_paths_csv<W: Write>(batch: &PathBatch, mut w: W) -> Result<()> {
    let header: Vec<String> = (0..batch.dim).map(|k| format!("x_{k}")).collect();
    writeln!(w, "step,time,path_id,{}", header.join(","))?;
    for i in 0..=batch.steps() {
        let t = batch.grid.time(i);
        for p in 0..batch.n_paths {
            let xs: Vec<String> = batch.state(p, i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{i},{t},{p},{}", xs.join(","))?;
        }
    }
    Ok(())
}
