//! Feedback policies for the impulse controller and the adversary, and the
//! per-path record of what they did.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::paths::{ImpulseSequence, PathPrefix};
use crate::problem::ProblemSpec;
use crate::rng;

/// Everything a policy may condition on at one decision point.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub step: usize,
    pub time: f64,
    pub path: usize,
    /// Interventions still available.
    pub remaining: usize,
    /// Interventions already applied at this grid index.
    pub pass: usize,
    pub prefix: PathPrefix<'a>,
}

/// Value and barrier observed when an intervention was triggered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attainment {
    pub value: f64,
    pub barrier: f64,
    pub continuation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intervention {
    /// Index into the impulse set `U`.
    pub mark: usize,
    pub attainment: Option<Attainment>,
}

impl Intervention {
    pub fn mark(mark: usize) -> Self {
        Self { mark, attainment: None }
    }
}

pub trait ImpulsePolicy: Sync {
    fn name(&self) -> String;
    /// Maximum number of interventions per path.
    fn budget(&self) -> usize;
    /// Called repeatedly at each step while it returns `Some` and budget remains.
    fn decide(&self, ctx: &DecisionContext<'_>) -> Result<Option<Intervention>>;
}

pub trait AdversaryPolicy: Sync {
    /// Index into the action set `A`.
    fn action(&self, ctx: &DecisionContext<'_>) -> Result<usize>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoImpulses;

impl ImpulsePolicy for NoImpulses {
    fn name(&self) -> String {
        "no-impulse".into()
    }

    fn budget(&self) -> usize {
        0
    }

    fn decide(&self, _: &DecisionContext<'_>) -> Result<Option<Intervention>> {
        Ok(None)
    }
}

/// Open-loop schedule: a fixed impulse sequence snapped to the grid.
#[derive(Debug, Clone)]
pub struct ScheduledImpulses {
    steps: Vec<usize>,
    marks: Vec<usize>,
}

impl ScheduledImpulses {
    /// Raw schedule of `(grid index, mark index)` pairs, sorted by index.
    pub fn new(mut entries: Vec<(usize, usize)>) -> Self {
        entries.sort_by_key(|e| e.0);
        let (steps, marks) = entries.into_iter().unzip();
        Self { steps, marks }
    }

    /// Snaps the times of `seq` to `grid`; every mark must be a point of `U`.
    /// Interventions that snap to the terminal index are dropped.
    pub fn from_sequence(spec: &ProblemSpec, grid: &TimeGrid, seq: &ImpulseSequence) -> Result<Self> {
        seq.check_within(grid.horizon())?;
        let mut entries = Vec::with_capacity(seq.len());
        for (&t, b) in seq.times().iter().zip(seq.marks()) {
            let mark = spec
                .marks
                .position(b)
                .ok_or_else(|| Error::InvalidArgument(format!("mark {b:?} is not a point of the impulse set")))?;
            let step = grid.nearest_index(t);
            if step < grid.steps() {
                entries.push((step, mark));
            }
        }
        Ok(Self::new(entries))
    }
}

impl ImpulsePolicy for ScheduledImpulses {
    fn name(&self) -> String {
        format!("schedule({} impulses)", self.steps.len())
    }

    fn budget(&self) -> usize {
        self.steps.len()
    }

    fn decide(&self, ctx: &DecisionContext<'_>) -> Result<Option<Intervention>> {
        let start = self.steps.partition_point(|&s| s < ctx.step);
        let end = self.steps.partition_point(|&s| s <= ctx.step);
        Ok((start + ctx.pass < end).then(|| Intervention::mark(self.marks[start + ctx.pass])))
    }
}

/// Intervenes at each step with probability `min(1, intensity * dt)` (at most
/// once per step) with a uniformly drawn mark, until the budget is spent.
#[derive(Debug, Clone)]
pub struct RandomImpulses {
    pub seed: u64,
    pub budget: usize,
    pub intensity: f64,
    pub n_marks: usize,
    pub dt: f64,
}

impl RandomImpulses {
    pub fn step_probability(&self) -> f64 {
        (self.intensity * self.dt).clamp(0.0, 1.0)
    }

    /// `E[min(Bin(steps, q), budget)]`, the exact mean intervention count.
    pub fn expected_count(&self, steps: usize) -> f64 {
        let q = self.step_probability();
        // binomial pmf by recurrence
        let mut pmf = vec![0.0; steps + 1];
        pmf[0] = (1.0 - q).powi(steps as i32);
        for n in 1..=steps {
            pmf[n] = if q == 1.0 {
                if n == steps {
                    1.0
                } else {
                    0.0
                }
            } else {
                pmf[n - 1] * (steps - n + 1) as f64 / n as f64 * q / (1.0 - q)
            };
        }
        pmf.iter().enumerate().map(|(n, p)| n.min(self.budget) as f64 * p).sum()
    }
}

impl ImpulsePolicy for RandomImpulses {
    fn name(&self) -> String {
        format!("random(seed={}, budget={}, intensity={})", self.seed, self.budget, self.intensity)
    }

    fn budget(&self) -> usize {
        self.budget
    }

    fn decide(&self, ctx: &DecisionContext<'_>) -> Result<Option<Intervention>> {
        if ctx.pass > 0 || ctx.remaining == 0 || self.n_marks == 0 {
            return Ok(None);
        }
        let u = rng::uniform_at(self.seed, &[ctx.path as u64, ctx.step as u64, 0]);
        if u >= self.step_probability() {
            return Ok(None);
        }
        let v = rng::uniform_at(self.seed, &[ctx.path as u64, ctx.step as u64, 1]);
        let mark = ((v * self.n_marks as f64) as usize).min(self.n_marks - 1);
        Ok(Some(Intervention::mark(mark)))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantAdversary(pub usize);

impl AdversaryPolicy for ConstantAdversary {
    fn action(&self, _: &DecisionContext<'_>) -> Result<usize> {
        Ok(self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseRecord {
    pub step: usize,
    pub time: f64,
    pub mark: usize,
    pub mark_value: Vec<f64>,
    pub cost: f64,
    pub pre_state: Vec<f64>,
    pub post_state: Vec<f64>,
    pub attainment: Option<Attainment>,
}

/// What happened along one path.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PathTrace {
    pub impulses: Vec<ImpulseRecord>,
    /// Adversary action index per step.
    pub actions: Vec<u16>,
    pub running: f64,
    pub terminal: f64,
    pub costs: f64,
}

impl PathTrace {
    pub fn reward(&self) -> f64 {
        self.running + self.terminal - self.costs
    }

    pub fn impulse_sequence(&self) -> ImpulseSequence {
        ImpulseSequence::new(
            self.impulses.iter().map(|r| r.time).collect(),
            self.impulses.iter().map(|r| r.mark_value.clone()).collect(),
        )
        .expect("recorded impulses are time ordered")
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self { mean, se: (var / n as f64).sqrt(), n }
    }
}

/// Realized impulse strategy and adversary actions for a batch of paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyTrace {
    pub grid: TimeGrid,
    pub paths: Vec<PathTrace>,
}

impl StrategyTrace {
    pub fn rewards(&self) -> Vec<f64> {
        self.paths.iter().map(PathTrace::reward).collect()
    }

    pub fn reward_estimate(&self) -> Estimate {
        Estimate::from_samples(&self.rewards())
    }

    pub fn intervention_counts(&self) -> Vec<usize> {
        self.paths.iter().map(|p| p.impulses.len()).collect()
    }

    pub fn mean_interventions(&self) -> f64 {
        let n = self.paths.len().max(1);
        self.paths.iter().map(|p| p.impulses.len()).sum::<usize>() as f64 / n as f64
    }

    pub fn count_estimate(&self) -> Estimate {
        let c: Vec<f64> = self.paths.iter().map(|p| p.impulses.len() as f64).collect();
        Estimate::from_samples(&c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expected_count_closed_forms() {
        let p = RandomImpulses { seed: 0, budget: 100, intensity: 2.0, n_marks: 2, dt: 0.02 };
        // no cap: mean of Bin(50, 0.04)
        assert!((p.expected_count(50) - 2.0).abs() < 1e-12);
        let capped = RandomImpulses { budget: 0, ..p.clone() };
        assert_eq!(capped.expected_count(50), 0.0);
        let one = RandomImpulses { budget: 1, ..p };
        assert!((one.expected_count(50) - (1.0 - 0.96f64.powi(50))).abs() < 1e-12);
    }

    #[test]
    fn estimate_of_constant_has_zero_error() {
        let e = Estimate::from_samples(&[2.0, 2.0, 2.0]);
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.se, 0.0);
    }
}
