//! Path batches and the impulse-control calculus on finite double sequences
//! `v = (t_1, ..., t_n; b_1, ..., b_n)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// A batch of simulated `d`-dimensional paths with the Brownian increments
/// that drove them.
///
/// `states` is laid out path-major as `P x (M + 1) x d`, `increments` as
/// `P x M x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub dim: usize,
    pub states: Vec<f64>,
    pub increments: Vec<f64>,
    pub seed: u64,
}

impl PathBatch {
    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    fn row_len(&self) -> usize {
        (self.grid.steps() + 1) * self.dim
    }

    /// All states of path `p`, rows `0..=M`.
    pub fn path(&self, p: usize) -> &[f64] {
        let n = self.row_len();
        &self.states[p * n..(p + 1) * n]
    }

    pub fn state(&self, p: usize, i: usize) -> &[f64] {
        let start = p * self.row_len() + i * self.dim;
        &self.states[start..start + self.dim]
    }

    pub fn increment(&self, p: usize, i: usize) -> &[f64] {
        let start = (p * self.grid.steps() + i) * self.dim;
        &self.increments[start..start + self.dim]
    }

    /// Prefix of path `p` up to and including grid index `i`.
    pub fn prefix(&self, p: usize, i: usize) -> PathPrefix<'_> {
        let path = self.path(p);
        let d = self.dim;
        PathPrefix::new(i, d, &path[..i * d], &path[i * d..(i + 1) * d])
    }
}

/// View of a path up to grid index `index`: the rows strictly before it and
/// the current state.
///
/// The current state is held separately so that an impulse-shifted state can
/// be substituted without copying the history.
#[derive(Debug, Clone, Copy)]
pub struct PathPrefix<'a> {
    pub index: usize,
    pub dim: usize,
    pub history: &'a [f64],
    pub current: &'a [f64],
}

impl<'a> PathPrefix<'a> {
    pub fn new(index: usize, dim: usize, history: &'a [f64], current: &'a [f64]) -> Self {
        debug_assert_eq!(history.len(), index * dim);
        debug_assert_eq!(current.len(), dim);
        Self { index, dim, history, current }
    }

    /// Prefix consisting of the single state `x` at index 0.
    pub fn initial(x: &'a [f64]) -> Self {
        Self { index: 0, dim: x.len(), history: &[], current: x }
    }

    /// Same history with the current state replaced.
    pub fn with_current<'b>(&self, current: &'b [f64]) -> PathPrefix<'b>
    where
        'a: 'b,
    {
        PathPrefix { index: self.index, dim: self.dim, history: self.history, current }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        if j == self.index {
            self.current
        } else {
            &self.history[j * self.dim..(j + 1) * self.dim]
        }
    }

    /// Running maximum of component `c` over rows `0..=index`.
    pub fn running_max(&self, c: usize) -> f64 {
        self.history.chunks_exact(self.dim).map(|r| r[c]).fold(self.current[c], f64::max)
    }

    /// Running minimum of component `c` over rows `0..=index`.
    pub fn running_min(&self, c: usize) -> f64 {
        self.history.chunks_exact(self.dim).map(|r| r[c]).fold(self.current[c], f64::min)
    }

    /// Supremum of the Euclidean norm over rows `0..=index`.
    pub fn sup_norm(&self) -> f64 {
        self.history.chunks_exact(self.dim).map(norm).fold(norm(self.current), f64::max)
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// A realized finite impulse control: nondecreasing intervention times
/// paired with marks.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawImpulseSequence")]
pub struct ImpulseSequence {
    times: Vec<f64>,
    marks: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawImpulseSequence {
    times: Vec<f64>,
    marks: Vec<Vec<f64>>,
}

impl TryFrom<RawImpulseSequence> for ImpulseSequence {
    type Error = Error;

    fn try_from(raw: RawImpulseSequence) -> Result<Self> {
        ImpulseSequence::new(raw.times, raw.marks)
    }
}

impl ImpulseSequence {
    pub fn new(times: Vec<f64>, marks: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != marks.len() {
            return Err(Error::InvalidArgument(format!("{} times but {} marks", times.len(), marks.len())));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("impulse times must be finite".into()));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("impulse times must be nondecreasing".into()));
        }
        Ok(Self { times, marks })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Convenience constructor for scalar marks.
    pub fn scalar(times: &[f64], marks: &[f64]) -> Result<Self> {
        Self::new(times.to_vec(), marks.iter().map(|&b| vec![b]).collect())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn marks(&self) -> &[Vec<f64>] {
        &self.marks
    }

    /// Checks that every time lies in `[0, horizon]`.
    pub fn check_within(&self, horizon: f64) -> Result<()> {
        match self.times.iter().find(|&&t| !(0.0..=horizon).contains(&t)) {
            Some(t) => Err(Error::InvalidArgument(format!("impulse time {t} outside [0, {horizon}]"))),
            None => Ok(()),
        }
    }
}

/// `v ∘ w`: the times of `w` are clamped from below by the last time of `v`.
pub fn concat(v: &ImpulseSequence, w: &ImpulseSequence) -> ImpulseSequence {
    let floor = v.times.last().copied();
    let mut times = v.times.clone();
    times.extend(w.times.iter().map(|&t| match floor {
        Some(f) => t.max(f),
        None => t,
    }));
    let mut marks = v.marks.clone();
    marks.extend(w.marks.iter().cloned());
    ImpulseSequence { times, marks }
}

/// `[v]_k`: the first `min(k, n)` interventions.
pub fn truncate(v: &ImpulseSequence, k: usize) -> ImpulseSequence {
    let n = k.min(v.len());
    ImpulseSequence { times: v.times[..n].to_vec(), marks: v.marks[..n].to_vec() }
}

/// Distance between two impulse controls; infinite when the intervention
/// counts differ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlDistance {
    Finite(f64),
    Infinite,
}

impl ControlDistance {
    pub fn finite(self) -> Option<f64> {
        match self {
            ControlDistance::Finite(d) => Some(d),
            ControlDistance::Infinite => None,
        }
    }
}

pub fn control_distance(v: &ImpulseSequence, w: &ImpulseSequence) -> ControlDistance {
    if v.len() != w.len() {
        return ControlDistance::Infinite;
    }
    let total = v
        .times
        .iter()
        .zip(&w.times)
        .zip(v.marks.iter().zip(&w.marks))
        .map(|((t, s), (b, c))| {
            let db: f64 = b.iter().zip(c).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            (t - s).abs() + db
        })
        .sum();
    ControlDistance::Finite(total)
}
