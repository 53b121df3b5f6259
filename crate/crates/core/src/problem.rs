//! Problem instances: coefficients of the controlled SDE, reward data and
//! the finite action and impulse grids.
//!
//! Coefficient closures must be pure and reentrant; the solver evaluates them
//! concurrently from many threads.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::{norm, PathPrefix};
use crate::rng;

/// `(t, prefix, out)` for the uncontrolled drift block `a_1` (length `d_1`).
pub type DriftFn = Arc<dyn Fn(f64, &PathPrefix<'_>, &mut [f64]) + Send + Sync>;
/// `(t, prefix, alpha, out)` for the controlled drift block `a_2` (length `d_2`).
pub type ControlledDriftFn = Arc<dyn Fn(f64, &PathPrefix<'_>, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, prefix, out)` writing the row-major `d x d` diffusion matrix.
pub type SigmaFn = Arc<dyn Fn(f64, &PathPrefix<'_>, &mut [f64]) + Send + Sync>;
/// `(t, prefix, mark, out)` writing the post-impulse state.
pub type ImpulseMapFn = Arc<dyn Fn(f64, &PathPrefix<'_>, &[f64], &mut [f64]) + Send + Sync>;
pub type RunningRewardFn = Arc<dyn Fn(f64, &PathPrefix<'_>, &[f64]) -> f64 + Send + Sync>;
pub type TerminalRewardFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// `(t, x, mark)` intervention cost.
pub type CostFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;

/// A finite set of points in `R^dim`, stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "{} coordinates do not form points of dimension {dim}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("point coordinates must be finite".into()));
        }
        Ok(Self { dim, coords })
    }

    pub fn scalar(values: &[f64]) -> Self {
        Self { dim: 1, coords: values.to_vec() }
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, coords: Vec::new() }
    }

    /// Tensor grid with `n[k]` equally spaced points on `[lo[k], hi[k]]`.
    pub fn box_grid(lo: &[f64], hi: &[f64], n: &[usize]) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != n.len() || lo.is_empty() {
            return Err(Error::InvalidArgument("box grid bounds have mismatched dimensions".into()));
        }
        let axes: Vec<Vec<f64>> = lo
            .iter()
            .zip(hi)
            .zip(n)
            .map(|((&a, &b), &k)| match k {
                0 => Vec::new(),
                1 => vec![0.5 * (a + b)],
                _ => (0..k).map(|j| a + (b - a) * j as f64 / (k - 1) as f64).collect(),
            })
            .collect();
        let total: usize = axes.iter().map(Vec::len).product();
        let mut coords = Vec::with_capacity(total * lo.len());
        for flat in 0..total {
            let mut rem = flat;
            let mut point = vec![0.0; lo.len()];
            for (k, axis) in axes.iter().enumerate().rev() {
                point[k] = axis[rem % axis.len()];
                rem /= axis.len();
            }
            coords.extend(point);
        }
        Self::new(lo.len(), coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    /// Index of the point equal to `x` (exact comparison).
    pub fn position(&self, x: &[f64]) -> Option<usize> {
        self.iter().position(|p| p == x)
    }

    /// Largest Euclidean norm among the points (0 for the empty set).
    pub fn max_norm(&self) -> f64 {
        self.iter().map(norm).fold(0.0, f64::max)
    }
}

/// Complete description of a robust impulse control problem.
///
/// The state splits as `d = d1 + d2`; only the second block carries the
/// controlled drift, and the diffusion matrix is lower block triangular with
/// an invertible `sigma_22` block.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub d1: usize,
    pub d2: usize,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub drift_a1: DriftFn,
    pub drift_a2: ControlledDriftFn,
    pub sigma: SigmaFn,
    pub impulse_map: ImpulseMapFn,
    pub gamma_bound: f64,
    pub running_reward: RunningRewardFn,
    pub terminal_reward: TerminalRewardFn,
    pub intervention_cost: CostFn,
    pub cost_floor: f64,
    pub actions: PointSet,
    pub marks: PointSet,
    pub growth_exponent: f64,
    /// Declared bound on the operator norm of `sigma_22^{-1}`.
    pub sigma22_inverse_bound: f64,
    /// Condition-number ceiling beyond which `sigma_22` is treated as singular.
    pub max_condition: f64,
    /// True when every coefficient depends on the prefix only through its
    /// current state.
    pub markovian: bool,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("d1", &self.d1)
            .field("d2", &self.d2)
            .field("x0", &self.x0)
            .field("horizon", &self.horizon)
            .field("actions", &self.actions)
            .field("marks", &self.marks)
            .field("cost_floor", &self.cost_floor)
            .field("markovian", &self.markovian)
            .finish_non_exhaustive()
    }
}

/// Inverse of the `sigma_22` block at one `(t, prefix)`.
#[derive(Debug, Clone)]
pub enum Sigma22Inverse {
    Scalar(f64),
    Matrix(DMatrix<f64>),
}

impl Sigma22Inverse {
    /// Writes `sigma_22^{-1} a2` into `out`.
    pub fn apply(&self, a2: &[f64], out: &mut [f64]) {
        match self {
            Sigma22Inverse::Scalar(inv) => out[0] = inv * a2[0],
            Sigma22Inverse::Matrix(m) => {
                for (r, o) in out.iter_mut().enumerate() {
                    *o = (0..a2.len()).map(|c| m[(r, c)] * a2[c]).sum();
                }
            }
        }
    }

    pub fn operator_norm(&self) -> f64 {
        match self {
            Sigma22Inverse::Scalar(inv) => inv.abs(),
            Sigma22Inverse::Matrix(m) => m.clone().svd(false, false).singular_values.max(),
        }
    }
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.d1 + self.d2
    }

    pub fn sigma_matrix(&self, t: f64, prefix: &PathPrefix<'_>) -> Vec<f64> {
        let d = self.dim();
        let mut s = vec![0.0; d * d];
        (self.sigma)(t, prefix, &mut s);
        s
    }

    /// Inverts the `sigma_22` block, failing when its condition estimate
    /// exceeds `max_condition`.
    pub fn sigma22_inverse(&self, t: f64, prefix: &PathPrefix<'_>) -> Result<Sigma22Inverse> {
        let d = self.dim();
        let s = self.sigma_matrix(t, prefix);
        if self.d2 == 1 {
            let v = s[(d - 1) * d + d - 1];
            if v == 0.0 || !v.is_finite() {
                return Err(Error::SingularDiffusion { t, condition: f64::INFINITY, bound: self.max_condition });
            }
            return Ok(Sigma22Inverse::Scalar(1.0 / v));
        }
        let block = DMatrix::from_fn(self.d2, self.d2, |r, c| s[(self.d1 + r) * d + self.d1 + c]);
        let sv = block.clone().svd(false, false).singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition <= self.max_condition) {
            return Err(Error::SingularDiffusion { t, condition, bound: self.max_condition });
        }
        match block.try_inverse() {
            Some(inv) => Ok(Sigma22Inverse::Matrix(inv)),
            None => Err(Error::SingularDiffusion { t, condition: f64::INFINITY, bound: self.max_condition }),
        }
    }

    /// `(0, sigma_22^{-1} a_2(t, prefix, alpha))`, using a precomputed inverse.
    pub fn breve_a_with(&self, inv: &Sigma22Inverse, t: f64, prefix: &PathPrefix<'_>, alpha: &[f64], out: &mut [f64]) {
        let mut stack = [0.0; 8];
        let mut heap = Vec::new();
        let a2: &mut [f64] = if self.d2 <= stack.len() {
            &mut stack[..self.d2]
        } else {
            heap.resize(self.d2, 0.0);
            &mut heap
        };
        (self.drift_a2)(t, prefix, alpha, a2);
        out[..self.d1].iter_mut().for_each(|v| *v = 0.0);
        inv.apply(a2, &mut out[self.d1..]);
    }

    /// Girsanov drift `ă = (0, sigma_22^{-1} a_2)`.
    pub fn breve_a(&self, t: f64, prefix: &PathPrefix<'_>, alpha: &[f64]) -> Result<Vec<f64>> {
        let inv = self.sigma22_inverse(t, prefix)?;
        let mut out = vec![0.0; self.dim()];
        self.breve_a_with(&inv, t, prefix, alpha, &mut out);
        Ok(out)
    }

    /// Full drift `(a_1, a_2(alpha))`.
    pub fn drift(&self, t: f64, prefix: &PathPrefix<'_>, alpha: &[f64], out: &mut [f64]) {
        (self.drift_a1)(t, prefix, &mut out[..self.d1]);
        (self.drift_a2)(t, prefix, alpha, &mut out[self.d1..]);
    }

    /// Drift of the driftless dynamics, `(a_1, 0)`.
    pub fn driftless_drift(&self, t: f64, prefix: &PathPrefix<'_>, out: &mut [f64]) {
        (self.drift_a1)(t, prefix, &mut out[..self.d1]);
        out[self.d1..].iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn apply_impulse(&self, t: f64, prefix: &PathPrefix<'_>, mark: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        (self.impulse_map)(t, prefix, mark, &mut out);
        out
    }

    /// Structural checks that do not need probing.
    pub fn check_structure(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("problem `{}`: {m}", self.name)));
        if self.d2 == 0 {
            return bad("the controlled block d2 must be nonempty");
        }
        if self.x0.len() != self.dim() {
            return bad("x0 has the wrong dimension");
        }
        if !(self.horizon > 0.0) {
            return bad("horizon must be positive");
        }
        if self.actions.is_empty() {
            return bad("action set A is empty");
        }
        if !(self.cost_floor > 0.0) {
            return bad("cost floor must be positive");
        }
        Ok(())
    }
}

/// Parameter overrides accepted for the built-in problems.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemOverrides {
    pub sigma: Option<f64>,
    pub x0: Option<f64>,
    pub horizon: Option<f64>,
    pub actions: Option<Vec<f64>>,
    pub marks: Option<Vec<f64>>,
    pub cost_base: Option<f64>,
    pub cost_slope: Option<f64>,
    pub cost_cap: Option<f64>,
    pub cost_scale: Option<f64>,
    pub gamma_bound: Option<f64>,
    pub drawdown_weight: Option<f64>,
}

pub const BUILTINS: [&str; 3] = ["mart1d", "cash1d", "pathdep1d"];

/// Builds a built-in problem with parameter overrides applied.
///
/// - `mart1d`: `d = 1`, no drift, constant `sigma`, `psi(x) = x`, `phi = 0`,
///   `A = {0}`, no impulses.
/// - `cash1d`: `a_2 = alpha`, `A = {-0.1, 0, 0.1}`, `Gamma = clamp(x + b, ±5)`,
///   `U = {-0.5, 0.5}`, `phi = psi = -x^2`, `l = 0.1 + 0.05 min(|x|, 5)`.
/// - `pathdep1d`: `cash1d` with a drawdown penalty
///   `phi = -x^2 - w (max_{s<=t} x_s - x_t)` in the running reward.
pub fn builtin(name: &str, ov: &ProblemOverrides) -> Result<ProblemSpec> {
    let (default_actions, default_marks, markovian): (Vec<f64>, Vec<f64>, bool) = match name {
        "mart1d" => (vec![0.0], vec![], true),
        "cash1d" => (vec![-0.1, 0.0, 0.1], vec![-0.5, 0.5], true),
        "pathdep1d" => (vec![-0.1, 0.0, 0.1], vec![-0.5, 0.5], false),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown problem `{other}` (built-ins: {})",
                BUILTINS.join(", ")
            )))
        }
    };
    let sigma = ov.sigma.unwrap_or(0.2);
    let x0 = ov.x0.unwrap_or(1.0);
    let horizon = ov.horizon.unwrap_or(1.0);
    let gamma_bound = ov.gamma_bound.unwrap_or(5.0);
    let cost_base = ov.cost_base.unwrap_or(0.1);
    let cost_slope = ov.cost_slope.unwrap_or(0.05);
    let cost_cap = ov.cost_cap.unwrap_or(5.0);
    let cost_scale = ov.cost_scale.unwrap_or(1.0);
    let drawdown = ov.drawdown_weight.unwrap_or(0.5);
    let actions = PointSet::scalar(ov.actions.as_deref().unwrap_or(&default_actions));
    let marks = PointSet::scalar(ov.marks.as_deref().unwrap_or(&default_marks));

    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if !(cost_base > 0.0) || cost_slope < 0.0 || !(cost_scale > 0.0) {
        return Err(Error::InvalidArgument("intervention cost must be bounded below by a positive constant".into()));
    }

    let running_reward: RunningRewardFn = match name {
        "mart1d" => Arc::new(|_, _, _| 0.0),
        "cash1d" => Arc::new(|_, p, _| -p.current[0] * p.current[0]),
        _ => Arc::new(move |_, p, _| {
            let x = p.current[0];
            -x * x - drawdown * (p.running_max(0) - x)
        }),
    };
    let terminal_reward: TerminalRewardFn = match name {
        "mart1d" => Arc::new(|x| x[0]),
        _ => Arc::new(|x| -x[0] * x[0]),
    };
    let drift_a2: ControlledDriftFn = Arc::new(|_, _, alpha, out| out[0] = alpha[0]);

    Ok(ProblemSpec {
        name: name.to_string(),
        d1: 0,
        d2: 1,
        x0: vec![x0],
        horizon,
        drift_a1: Arc::new(|_, _, _| {}),
        drift_a2,
        sigma: Arc::new(move |_, _, out| out[0] = sigma),
        impulse_map: Arc::new(move |_, p, b, out| out[0] = (p.current[0] + b[0]).clamp(-gamma_bound, gamma_bound)),
        gamma_bound,
        running_reward,
        terminal_reward,
        intervention_cost: Arc::new(move |_, x, _| cost_scale * (cost_base + cost_slope * x[0].abs().min(cost_cap))),
        cost_floor: cost_scale * cost_base,
        actions,
        marks,
        growth_exponent: if name == "mart1d" { 1.0 } else { 2.0 },
        sigma22_inverse_bound: 1.0 / sigma,
        max_condition: 1e12,
        markovian,
    })
}

/// Outcome of one structural or probed check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub witness: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub problem: String,
    pub n_probe: usize,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    /// Observed `max |ă| / (1 + sup_s |x_s|)` over the probes: an empirical
    /// linear-growth constant for the stochastic Lipschitz coefficient.
    pub breve_a_growth_constant: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Probe {
    t: f64,
    index: usize,
    rows: Vec<f64>,
}

impl Probe {
    fn prefix(&self, d: usize) -> PathPrefix<'_> {
        let n = self.rows.len();
        PathPrefix::new(self.index, d, &self.rows[..n - d], &self.rows[n - d..])
    }
}

fn fmt_point(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Monte Carlo spot check of the standing assumptions on a problem.
///
/// Random states are drawn around `x0` with a spread of a few units, each with
/// a short random history so that path-dependent coefficients are exercised.
pub fn validate(spec: &ProblemSpec, n_probe: usize, seed: u64) -> ValidationReport {
    let d = spec.dim();
    let scale = 2.0 * (1.0 + spec.x0.iter().map(|v| v.abs()).fold(0.0, f64::max));
    let base = rng::substream(seed, "validate");
    let probes: Vec<Probe> = (0..n_probe.max(1) as u64)
        .map(|q| {
            let mut r = rng::stream(base, q);
            let t = r.random::<f64>() * spec.horizon;
            let index = r.random_range(0..8usize);
            let mut rows = Vec::with_capacity((index + 1) * d);
            for _ in 0..=index {
                for k in 0..d {
                    let z: f64 = r.sample(StandardNormal);
                    rows.push(spec.x0[k] + scale * z);
                }
            }
            Probe { t, index, rows }
        })
        .collect();

    let mut checks = Vec::new();
    let mut record = |name: &str, witness: Option<String>| {
        checks.push(CheckResult { name: name.to_string(), passed: witness.is_none(), witness });
    };

    record("structure", spec.check_structure().err().map(|e| e.to_string()));

    // cost floor
    let mut witness = if spec.cost_floor > 0.0 { None } else { Some(format!("delta = {}", spec.cost_floor)) };
    if witness.is_none() {
        'outer: for pr in &probes {
            let p = pr.prefix(d);
            for b in spec.marks.iter() {
                let c = (spec.intervention_cost)(pr.t, p.current, b);
                if !(c >= spec.cost_floor) {
                    witness = Some(format!(
                        "l(t={:.6}, x={}, b={}) = {c} < delta = {}",
                        pr.t,
                        fmt_point(p.current),
                        fmt_point(b),
                        spec.cost_floor
                    ));
                    break 'outer;
                }
            }
        }
    }
    record("cost_floor", witness);

    // impulse growth |Gamma| <= K_Gamma v |x_t|
    let mut witness = None;
    'outer: for pr in &probes {
        let p = pr.prefix(d);
        for b in spec.marks.iter() {
            let g = spec.apply_impulse(pr.t, &p, b);
            let bound = spec.gamma_bound.max(norm(p.current));
            if !(norm(&g) <= bound * (1.0 + 1e-12)) {
                witness = Some(format!(
                    "|Gamma(t={:.6}, x={}, b={})| = {} > {}",
                    pr.t,
                    fmt_point(p.current),
                    fmt_point(b),
                    norm(&g),
                    bound
                ));
                break 'outer;
            }
        }
    }
    record("impulse_growth", witness);

    // lower block triangular sigma
    let mut witness = None;
    for pr in &probes {
        let p = pr.prefix(d);
        let s = spec.sigma_matrix(pr.t, &p);
        let offending =
            (0..spec.d1).flat_map(|r| (spec.d1..d).map(move |c| (r, c))).find(|&(r, c)| s[r * d + c] != 0.0);
        if let Some((r, c)) = offending {
            witness = Some(format!("sigma[{r}][{c}] = {} at t={:.6}, x={}", s[r * d + c], pr.t, fmt_point(p.current)));
            break;
        }
    }
    record("sigma_block_structure", witness);

    // invertible sigma_22 with bounded inverse; also collects the growth constant of ă
    let mut witness = None;
    let mut growth: f64 = 0.0;
    let mut breve = vec![0.0; d];
    for pr in &probes {
        let p = pr.prefix(d);
        match spec.sigma22_inverse(pr.t, &p) {
            Ok(inv) => {
                let n = inv.operator_norm();
                if witness.is_none() && !(n <= spec.sigma22_inverse_bound * (1.0 + 1e-9)) {
                    witness = Some(format!(
                        "|sigma22^-1| = {n} > {} at t={:.6}, x={}",
                        spec.sigma22_inverse_bound,
                        pr.t,
                        fmt_point(p.current)
                    ));
                }
                for a in spec.actions.iter() {
                    spec.breve_a_with(&inv, pr.t, &p, a, &mut breve);
                    growth = growth.max(norm(&breve) / (1.0 + p.sup_norm()));
                }
            }
            Err(e) => {
                if witness.is_none() {
                    witness = Some(format!("{e} at x={}", fmt_point(p.current)));
                }
            }
        }
    }
    record("sigma22_invertible", witness);

    // finiteness of rewards and costs
    let mut witness = None;
    'outer: for pr in &probes {
        let p = pr.prefix(d);
        if !(spec.terminal_reward)(p.current).is_finite() {
            witness = Some(format!("psi({}) not finite", fmt_point(p.current)));
            break;
        }
        for a in spec.actions.iter() {
            if !(spec.running_reward)(pr.t, &p, a).is_finite() {
                witness =
                    Some(format!("phi(t={:.6}, x={}, a={}) not finite", pr.t, fmt_point(p.current), fmt_point(a)));
                break 'outer;
            }
        }
    }
    record("finite_rewards", witness);

    ValidationReport { problem: spec.name.clone(), n_probe, seed, checks, breve_a_growth_constant: growth }
}
