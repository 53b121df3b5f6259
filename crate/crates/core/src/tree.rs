//! Robust impulse dynamic programming on a recombining binomial lattice.
//!
//! Node `(i, m)` carries the state `x0 + m h` with `h = sigma sqrt(dt)`. The
//! adversary tilts the up-probability to `(1 + ă(alpha) sqrt(dt)) / 2`, so the
//! lattice is driftless under the base measure. Impulse targets are snapped
//! to the nearest node.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::paths::PathPrefix;
use crate::problem::ProblemSpec;

type ScalarActionFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Scalar Markovian problem data on the lattice. Every closure takes
/// `(t, x, alpha_or_b)`.
#[derive(Clone)]
pub struct TreeSpec {
    pub steps: usize,
    pub horizon: f64,
    pub x0: f64,
    pub sigma: f64,
    pub k_max: usize,
    pub actions: Vec<f64>,
    pub marks: Vec<f64>,
    pub running: ScalarActionFn,
    /// `ă(t, x, alpha)`, the drift in units of `sigma`.
    pub tilt: ScalarActionFn,
    pub terminal: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub cost: ScalarActionFn,
    pub impulse: ScalarActionFn,
}

impl std::fmt::Debug for TreeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TreeSpec")
            .field("steps", &self.steps)
            .field("horizon", &self.horizon)
            .field("x0", &self.x0)
            .field("sigma", &self.sigma)
            .field("k_max", &self.k_max)
            .field("actions", &self.actions)
            .field("marks", &self.marks)
            .finish_non_exhaustive()
    }
}

impl TreeSpec {
    /// Lattice version of a one-dimensional Markovian problem with constant
    /// `sigma`.
    pub fn from_problem(spec: &ProblemSpec, steps: usize, k_max: usize) -> Result<Self> {
        if spec.dim() != 1 || spec.d2 != 1 {
            return Err(Error::Unsupported(format!(
                "tree oracle needs a scalar controlled state, got d = {}",
                spec.dim()
            )));
        }
        if !spec.markovian {
            return Err(Error::Unsupported(format!(
                "tree oracle needs a Markovian problem, `{}` is path-dependent",
                spec.name
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("tree needs at least one step".into()));
        }
        let sig = |t: f64, x: f64| {
            let s = [x];
            spec.sigma_matrix(t, &PathPrefix::initial(&s))[0]
        };
        let sigma = sig(0.0, spec.x0[0]);
        for t in [0.0, 0.5 * spec.horizon, spec.horizon] {
            for x in [-3.0, -1.0, 0.0, 0.5, 2.0, 4.0] {
                if sig(t, x) != sigma {
                    return Err(Error::Unsupported("tree oracle needs a constant sigma".into()));
                }
            }
        }
        if !(sigma > 0.0) {
            return Err(Error::SingularDiffusion { t: 0.0, condition: f64::INFINITY, bound: spec.max_condition });
        }
        let (a, b, c, d, e) = (spec.clone(), spec.clone(), spec.clone(), spec.clone(), spec.clone());
        Ok(Self {
            steps,
            horizon: spec.horizon,
            x0: spec.x0[0],
            sigma,
            k_max,
            actions: spec.actions.iter().map(|p| p[0]).collect(),
            marks: spec.marks.iter().map(|p| p[0]).collect(),
            running: Arc::new(move |t, x, al| {
                let s = [x];
                (a.running_reward)(t, &PathPrefix::initial(&s), &[al])
            }),
            tilt: Arc::new(move |t, x, al| {
                let s = [x];
                b.breve_a(t, &PathPrefix::initial(&s), &[al]).map_or(f64::NAN, |v| v[0])
            }),
            terminal: Arc::new(move |x| (c.terminal_reward)(&[x])),
            cost: Arc::new(move |t, x, m| (d.intervention_cost)(t, &[x], &[m])),
            impulse: Arc::new(move |t, x, m| {
                let s = [x];
                e.apply_impulse(t, &PathPrefix::initial(&s), &[m])[0]
            }),
        })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn spacing(&self) -> f64 {
        self.sigma * self.dt().sqrt()
    }
}

/// Value tensor `V(i, m, r)` on the reachable part of the lattice.
#[derive(Debug, Clone)]
pub struct TreeSolution {
    pub steps: usize,
    pub k_max: usize,
    pub x0: f64,
    pub spacing: f64,
    pub dt: f64,
    /// `ranges[r][i]`: reachable node indices `lo..=hi`.
    ranges: Vec<Vec<(i64, i64)>>,
    values: Vec<Vec<Vec<f64>>>,
}

impl TreeSolution {
    /// Reachable node range at step `i` with budget `r` left (the root is
    /// included for every budget).
    pub fn range(&self, i: usize, r: usize) -> (i64, i64) {
        self.ranges[r][i]
    }

    pub fn state(&self, m: i64) -> f64 {
        self.x0 + m as f64 * self.spacing
    }

    /// `V(i, m, r)`; `None` off the reachable region.
    pub fn value(&self, i: usize, m: i64, r: usize) -> Option<f64> {
        if r > self.k_max || i > self.steps {
            return None;
        }
        let (lo, hi) = self.ranges[r][i];
        (lo..=hi).contains(&m).then(|| self.values[r][i][(m - lo) as usize])
    }

    /// `V(0, x0, r)` for `r = 0..=k_max`.
    pub fn root_values(&self) -> Vec<f64> {
        (0..=self.k_max).map(|r| self.value(0, 0, r).expect("root is reachable")).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "r,value")?;
        for (r, v) in self.root_values().iter().enumerate() {
            writeln!(w, "{r},{v}")?;
        }
        Ok(())
    }
}

/// Cap on the number of nodes per lattice row.
const MAX_NODES: i64 = 1 << 22;

fn snap(ts: &TreeSpec, x: f64) -> i64 {
    ((x - ts.x0) / ts.spacing()).round() as i64
}

/// Forward pass over node ranges: diffusion widens a row by one node, an
/// impulse maps the budget-`r + 1` row into the budget-`r` row at the same step.
fn reachable_ranges(ts: &TreeSpec) -> Result<Vec<Vec<(i64, i64)>>> {
    let (m_steps, k) = (ts.steps, ts.k_max);
    let h = ts.spacing();
    let mut ranges = vec![vec![(0i64, 0i64); m_steps + 1]; k + 1];
    for i in 0..=m_steps {
        let t = i as f64 * ts.dt();
        for r in (0..=k).rev() {
            let (mut lo, mut hi) = if i == 0 { (0, 0) } else { (ranges[r][i - 1].0 - 1, ranges[r][i - 1].1 + 1) };
            if r < k && i < m_steps {
                let (plo, phi) = ranges[r + 1][i];
                for m in plo..=phi {
                    let x = ts.x0 + m as f64 * h;
                    for &b in &ts.marks {
                        let target = (ts.impulse)(t, x, b);
                        let mt = snap(ts, target);
                        if !target.is_finite() || mt.abs() > MAX_NODES {
                            return Err(Error::OffTreeImpulse { step: i, state: x, target });
                        }
                        lo = lo.min(mt);
                        hi = hi.max(mt);
                    }
                }
            }
            ranges[r][i] = (lo, hi);
        }
    }
    Ok(ranges)
}

pub fn solve_tree(ts: &TreeSpec) -> Result<TreeSolution> {
    if ts.actions.is_empty() {
        return Err(Error::InvalidArgument("tree needs a nonempty action set".into()));
    }
    let (m_steps, k) = (ts.steps, ts.k_max);
    let dt = ts.dt();
    let sq = dt.sqrt();
    let ranges = reachable_ranges(ts)?;
    let values =
        ranges.iter().map(|row| row.iter().map(|&(lo, hi)| vec![f64::NAN; (hi - lo + 1) as usize]).collect()).collect();
    let mut sol = TreeSolution { steps: m_steps, k_max: k, x0: ts.x0, spacing: ts.spacing(), dt, ranges, values };

    for r in 0..=k {
        let (lo, hi) = sol.range(m_steps, r);
        for m in lo..=hi {
            sol.values[r][m_steps][(m - lo) as usize] = (ts.terminal)(sol.state(m));
        }
    }
    for i in (0..m_steps).rev() {
        let t = i as f64 * dt;
        for r in 0..=k {
            let (lo, hi) = sol.range(i, r);
            for m in lo..=hi {
                let x = sol.state(m);
                let up = sol.value(i + 1, m + 1, r).expect("successor in range");
                let down = sol.value(i + 1, m - 1, r).expect("successor in range");
                let mut cont = f64::INFINITY;
                for &a in &ts.actions {
                    let p = 0.5 * (1.0 + (ts.tilt)(t, x, a) * sq);
                    if !(p > 0.0 && p < 1.0) {
                        return Err(Error::ProbabilityOutOfRange { probability: p, step: i, state: x });
                    }
                    let v = (ts.running)(t, x, a) * dt + p * up + (1.0 - p) * down;
                    if v < cont {
                        cont = v;
                    }
                }
                let mut v = cont;
                if r > 0 {
                    for &b in &ts.marks {
                        let target = (ts.impulse)(t, x, b);
                        let Some(after) = sol.value(i, snap(ts, target), r - 1) else {
                            return Err(Error::OffTreeImpulse { step: i, state: x, target });
                        };
                        let cand = after - (ts.cost)(t, x, b);
                        if cand > v {
                            v = cand;
                        }
                    }
                }
                sol.values[r][i][(m - lo) as usize] = v;
            }
        }
    }
    Ok(sol)
}
