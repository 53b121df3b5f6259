//! Regression Monte Carlo for (reflected) BSDEs on a fixed path batch.
//!
//! Backward recursion on the grid, with `C_i = E[Y_{i+1} | F_i]` and
//! `Z_i = E[(Y_{i+1} - C_i) dW_i | F_i] / dt`:
//!
//! ```text
//! Y_M = xi
//! Y_i = max(C_i + f(i, C_i, Z_i) dt, S_i),   dK_i = (S_i - C_i - f dt)^+
//! ```
//!
//! `S = -inf` gives the unreflected scheme. When `dK_i > 0` the assignment
//! `Y_i = S_i` is a copy, so `(Y_i - S_i) dK_i = 0` holds exactly.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::PathBatch;
use crate::regression::{BasisSpec, Featurizer, RegressionPlan, StepSurface, ValueSurface};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub basis: BasisSpec,
    /// Ridge penalty relative to the mean squared singular value of each design block.
    pub ridge: f64,
    /// Clamp `|f| <= cap` with an activation counter.
    pub driver_cap: Option<f64>,
    /// Relative tolerance of the hitting rule, `Y <= S + tol (1 + |Y|)`.
    pub tol_hit: f64,
    /// Re-evaluate the driver once at the updated `y`.
    pub refine: bool,
    /// Subtract `C_i` from `Y_{i+1}` before regressing for `Z`.
    pub z_control_variate: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            basis: BasisSpec::default(),
            ridge: 1e-8,
            driver_cap: None,
            tol_hit: 1e-9,
            refine: false,
            z_control_variate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub condition: f64,
    pub mean_abs_z: f64,
    pub max_abs_z: f64,
    pub clamp_count: usize,
    pub mean_k: f64,
}

/// Continuation and `Z` regression surfaces of one backward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSurfaces {
    pub continuation: ValueSurface,
    /// One surface per Brownian component.
    pub z: Vec<ValueSurface>,
}

/// Output of one backward pass. Arrays are step-major: entry `(p, i)` of a
/// per-step array lives at `i * P + p`.
#[derive(Debug, Clone)]
pub struct BackwardState {
    pub n_paths: usize,
    pub steps: usize,
    pub dim: usize,
    pub dt: f64,
    /// `(M + 1) x P`.
    pub y: Vec<f64>,
    /// `M x P x d`.
    pub z: Vec<f64>,
    /// `M x P`, nonnegative.
    pub k_increments: Vec<f64>,
    /// `(M + 1) x P`; `-inf` where there is no barrier.
    pub barrier: Vec<f64>,
    /// `M x P` driver values used in the update.
    pub driver: Vec<f64>,
    /// `M x P` fitted continuation values `C_i`.
    pub continuation: Vec<f64>,
    pub surfaces: LevelSurfaces,
    pub diagnostics: Vec<StepDiagnostics>,
    pub tol_hit: f64,
}

impl BackwardState {
    pub fn y(&self, p: usize, i: usize) -> f64 {
        self.y[i * self.n_paths + p]
    }

    pub fn z(&self, p: usize, i: usize) -> &[f64] {
        let o = (i * self.n_paths + p) * self.dim;
        &self.z[o..o + self.dim]
    }

    pub fn k_increment(&self, p: usize, i: usize) -> f64 {
        self.k_increments[i * self.n_paths + p]
    }

    pub fn barrier(&self, p: usize, i: usize) -> f64 {
        self.barrier[i * self.n_paths + p]
    }

    pub fn step_values(&self, i: usize) -> &[f64] {
        &self.y[i * self.n_paths..(i + 1) * self.n_paths]
    }

    /// `Y` along one path.
    pub fn path_values(&self, p: usize) -> Vec<f64> {
        (0..=self.steps).map(|i| self.y(p, i)).collect()
    }

    pub fn path_barrier(&self, p: usize) -> Vec<f64> {
        (0..=self.steps).map(|i| self.barrier(p, i)).collect()
    }

    /// First index `>= from` where `Y` touches the barrier; `M` if none.
    pub fn first_hit(&self, from: usize, p: usize) -> usize {
        first_hit_in(&self.path_values(p), &self.path_barrier(p), from, self.tol_hit)
    }

    /// Running reward up to the first hit after `from` plus the stopped value:
    /// the pathwise Snell representation of `Y_from`.
    pub fn pathwise_value(&self, from: usize, p: usize) -> f64 {
        let d = self.first_hit(from, p);
        let running: f64 = (from..d).map(|i| self.driver[i * self.n_paths + p] * self.dt).sum();
        running + self.y(p, d)
    }

    /// `sum (Y - S) dK` over all paths and steps, skipping `dK = 0` terms.
    pub fn skorokhod_sum(&self) -> f64 {
        let n = self.n_paths;
        let mut total = 0.0;
        for i in 0..self.steps {
            for p in 0..n {
                let k = self.k_increments[i * n + p];
                if k != 0.0 {
                    total += (self.y[i * n + p] - self.barrier[i * n + p]) * k;
                }
            }
        }
        total
    }

    /// Number of `(p, i)` with `dK > 0` and `Y != S`; zero by construction.
    pub fn skorokhod_violations(&self) -> usize {
        let n = self.n_paths;
        (0..self.steps * n).filter(|&j| self.k_increments[j] > 0.0 && self.y[j] != self.barrier[j]).count()
    }

    /// Fraction of paths at the barrier per step `0..M`.
    pub fn binding_fractions(&self) -> Vec<f64> {
        let n = self.n_paths;
        (0..self.steps)
            .map(|i| {
                let hits = (0..n)
                    .filter(|&p| {
                        let y = self.y(p, i);
                        y <= self.barrier(p, i) + self.tol_hit * (1.0 + y.abs())
                    })
                    .count();
                hits as f64 / n as f64
            })
            .collect()
    }

    pub fn total_clamps(&self) -> usize {
        self.diagnostics.iter().map(|d| d.clamp_count).sum()
    }

    /// CSV with columns `step,condition,mean_abs_z,max_abs_z,clamp_count,mean_k`.
    pub fn write_diagnostics_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,condition,mean_abs_z,max_abs_z,clamp_count,mean_k")?;
        for d in &self.diagnostics {
            writeln!(w, "{},{},{},{},{},{}", d.step, d.condition, d.mean_abs_z, d.max_abs_z, d.clamp_count, d.mean_k)?;
        }
        Ok(())
    }
}

/// Smallest `i >= from` with `y[i] <= s[i] + tol (1 + |y[i]|)`, or the last index.
pub fn first_hit_in(y: &[f64], s: &[f64], from: usize, tol: f64) -> usize {
    let last = y.len() - 1;
    (from..=last).find(|&i| y[i] <= s[i] + tol * (1.0 + y[i].abs())).unwrap_or(last)
}

/// Backward solver bound to one path batch and its regression plan.
pub struct Engine<'a> {
    batch: &'a PathBatch,
    plan: RegressionPlan,
    cfg: EngineConfig,
}

impl<'a> Engine<'a> {
    pub fn new(batch: &'a PathBatch, featurizer: Featurizer, cfg: EngineConfig) -> Result<Self> {
        let plan = RegressionPlan::new(batch, featurizer, cfg.basis, cfg.ridge)?;
        Ok(Self { batch, plan, cfg })
    }

    pub fn batch(&self) -> &PathBatch {
        self.batch
    }

    pub fn plan(&self) -> &RegressionPlan {
        &self.plan
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    /// Evaluates `barrier(i, p)` on the whole batch into a step-major array.
    pub fn tabulate<F>(&self, f: F) -> Result<Vec<f64>>
    where
        F: Fn(usize, usize) -> Result<f64> + Sync,
    {
        let n = self.batch.n_paths;
        (0..(self.batch.steps() + 1) * n).into_par_iter().map(|j| f(j / n, j % n)).collect()
    }

    pub fn solve_bsde<D>(&self, driver: &D, terminal: &[f64]) -> Result<BackwardState>
    where
        D: Fn(usize, usize, f64, &[f64]) -> f64 + Sync,
    {
        let barrier = vec![f64::NEG_INFINITY; (self.batch.steps() + 1) * self.batch.n_paths];
        self.run(driver, terminal, barrier)
    }

    /// `barrier` is step-major `(M + 1) x P`.
    pub fn solve_reflected<D>(&self, driver: &D, terminal: &[f64], barrier: Vec<f64>) -> Result<BackwardState>
    where
        D: Fn(usize, usize, f64, &[f64]) -> f64 + Sync,
    {
        let n = self.batch.n_paths;
        let m = self.batch.steps();
        if barrier.len() != (m + 1) * n {
            return Err(Error::InvalidArgument("barrier array has the wrong size".into()));
        }
        for p in 0..n {
            let s = barrier[m * n + p];
            if s > terminal[p] {
                return Err(Error::BarrierAboveTerminal { path: p, barrier: s, terminal: terminal[p] });
            }
        }
        self.run(driver, terminal, barrier)
    }

    fn run<D>(&self, driver: &D, terminal: &[f64], barrier: Vec<f64>) -> Result<BackwardState>
    where
        D: Fn(usize, usize, f64, &[f64]) -> f64 + Sync,
    {
        let b = self.batch;
        let (n, m, d) = (b.n_paths, b.steps(), b.dim);
        let dt = b.grid.dt();
        if terminal.len() != n {
            return Err(Error::InvalidArgument("terminal has the wrong length".into()));
        }
        if let Some(p) = terminal.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("terminal value on path {p} is not finite")));
        }

        let mut y = vec![0.0; (m + 1) * n];
        let mut z = vec![0.0; m * n * d];
        let mut k_increments = vec![0.0; m * n];
        let mut drv = vec![0.0; m * n];
        let mut continuation = vec![0.0; m * n];
        let mut c_steps: Vec<StepSurface> = Vec::with_capacity(m);
        let mut z_steps: Vec<Vec<StepSurface>> = vec![Vec::with_capacity(m); d];
        let mut diagnostics = Vec::with_capacity(m);
        y[m * n..].copy_from_slice(terminal);

        for i in (0..m).rev() {
            let reg = &self.plan.steps[i];
            let (head, tail) = y.split_at_mut((i + 1) * n);
            let next = &tail[..n];
            let cur = &mut head[i * n..];

            let c_fit = reg.regress(next);
            let mut zi = vec![0.0; n * d];
            for c in 0..d {
                let targets: Vec<f64> = (0..n)
                    .map(|p| {
                        let base = if self.cfg.z_control_variate { c_fit.fitted[p] } else { 0.0 };
                        (next[p] - base) * b.increment(p, i)[c] / dt
                    })
                    .collect();
                let z_fit = reg.regress(&targets);
                for p in 0..n {
                    zi[p * d + c] = z_fit.fitted[p];
                }
                z_steps[c].push(StepSurface { basis: reg.basis.clone(), coeffs: z_fit.coeffs });
            }

            let cap = self.cfg.driver_cap;
            let refine = self.cfg.refine;
            let out: Vec<(f64, f64, f64, bool)> = (0..n)
                .into_par_iter()
                .map(|p| {
                    let cp = c_fit.fitted[p];
                    let zp = &zi[p * d..(p + 1) * d];
                    let mut f = driver(i, p, cp, zp);
                    if refine && f.is_finite() {
                        f = driver(i, p, cp + f * dt, zp);
                    }
                    if !f.is_finite() {
                        return Err(Error::DriverNonFinite { step: i, path: p });
                    }
                    let mut clamped = false;
                    if let Some(cap) = cap {
                        if f.abs() > cap {
                            f = f.clamp(-cap, cap);
                            clamped = true;
                        }
                    }
                    let cand = cp + f * dt;
                    let s = barrier[i * n + p];
                    let (yv, kv) = if s > cand { (s, s - cand) } else { (cand, 0.0) };
                    Ok((yv, kv, f, clamped))
                })
                .collect::<Result<_>>()?;

            let mut clamp_count = 0;
            for (p, (yv, kv, f, clamped)) in out.into_iter().enumerate() {
                cur[p] = yv;
                k_increments[i * n + p] = kv;
                drv[i * n + p] = f;
                clamp_count += clamped as usize;
            }
            continuation[i * n..(i + 1) * n].copy_from_slice(&c_fit.fitted);
            z[i * n * d..(i + 1) * n * d].copy_from_slice(&zi);

            let abs_z: Vec<f64> = zi.chunks(d).map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
            diagnostics.push(StepDiagnostics {
                step: i,
                condition: reg.condition(),
                mean_abs_z: abs_z.iter().sum::<f64>() / n as f64,
                max_abs_z: abs_z.iter().copied().fold(0.0, f64::max),
                clamp_count,
                mean_k: k_increments[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64,
            });
            c_steps.push(StepSurface { basis: reg.basis.clone(), coeffs: c_fit.coeffs });
        }

        c_steps.reverse();
        z_steps.iter_mut().for_each(|s| s.reverse());
        diagnostics.reverse();
        let surface =
            |steps| ValueSurface { grid: b.grid, featurizer: self.plan.featurizer, basis: self.plan.basis, steps };
        Ok(BackwardState {
            n_paths: n,
            steps: m,
            dim: d,
            dt,
            y,
            z,
            k_increments,
            barrier,
            driver: drv,
            continuation,
            surfaces: LevelSurfaces { continuation: surface(c_steps), z: z_steps.into_iter().map(surface).collect() },
            diagnostics,
            tol_hit: self.cfg.tol_hit,
        })
    }
}

/// One-shot unreflected solve.
pub fn solve_bsde<D>(
    batch: &PathBatch,
    featurizer: Featurizer,
    driver: &D,
    terminal: &[f64],
    cfg: EngineConfig,
) -> Result<BackwardState>
where
    D: Fn(usize, usize, f64, &[f64]) -> f64 + Sync,
{
    Engine::new(batch, featurizer, cfg)?.solve_bsde(driver, terminal)
}

/// One-shot reflected solve with barrier `S(i, p)`.
pub fn solve_reflected<D, S>(
    batch: &PathBatch,
    featurizer: Featurizer,
    driver: &D,
    terminal: &[f64],
    barrier: S,
    cfg: EngineConfig,
) -> Result<BackwardState>
where
    D: Fn(usize, usize, f64, &[f64]) -> f64 + Sync,
    S: Fn(usize, usize) -> f64 + Sync,
{
    let engine = Engine::new(batch, featurizer, cfg)?;
    let s = engine.tabulate(|i, p| Ok(barrier(i, p)))?;
    engine.solve_reflected(driver, terminal, s)
}
