//! Least-squares conditional expectations for the backward pass.
//!
//! Features are computed from a path prefix by a [`Featurizer`]. The basis
//! is a local polynomial one: paths are split into equal-count cells by the
//! quantiles of the first feature, and within each cell a polynomial of
//! total degree `<= degree` in the cell-normalized features is fitted. Outside
//! a cell's observed range the features are clamped, so surfaces extrapolate
//! flat. `bins = 1` gives the usual global polynomial basis.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::paths::{PathBatch, PathPrefix};
use crate::problem::ProblemSpec;

/// Map from a path prefix to regression features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Featurizer {
    /// The current state `x_t`.
    State,
    /// The current state followed by `max_{s<=t} x_s` of one component.
    RunningMax { component: usize },
}

impl Featurizer {
    /// `State` for Markovian problems, running max of the last component otherwise.
    pub fn for_problem(spec: &ProblemSpec) -> Self {
        if spec.markovian {
            Featurizer::State
        } else {
            Featurizer::RunningMax { component: spec.dim() - 1 }
        }
    }

    pub fn name(&self) -> String {
        match self {
            Featurizer::State => "state".into(),
            Featurizer::RunningMax { component } => format!("state+running_max[{component}]"),
        }
    }

    pub fn dim(&self, state_dim: usize) -> usize {
        match self {
            Featurizer::State => state_dim,
            Featurizer::RunningMax { .. } => state_dim + 1,
        }
    }

    pub fn features(&self, prefix: &PathPrefix<'_>, out: &mut [f64]) {
        let d = prefix.dim;
        out[..d].copy_from_slice(prefix.current);
        if let Featurizer::RunningMax { component } = *self {
            out[d] = prefix.running_max(component);
        }
    }

    pub fn check(&self, state_dim: usize) -> Result<()> {
        match *self {
            Featurizer::RunningMax { component } if component >= state_dim => Err(Error::InvalidArgument(format!(
                "running-max component {component} out of range for dimension {state_dim}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub degree: usize,
    pub bins: usize,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self { degree: 2, bins: 16 }
    }
}

impl BasisSpec {
    /// Number of monomials of total degree `<= degree` in `features` variables.
    pub fn terms(&self, features: usize) -> usize {
        binomial(features + self.degree, self.degree)
    }

    /// Total number of coefficients per step.
    pub fn size(&self, features: usize) -> usize {
        self.bins * self.terms(features)
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Monomials of total degree `<= degree` in `u`, in graded order starting
/// with the constant.
pub fn monomials(u: &[f64], degree: usize, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    // (start, end) of the previous degree's terms, and each term's last variable
    let mut last = vec![0usize];
    let (mut start, mut end) = (0, 1);
    for _ in 0..degree {
        for t in start..end {
            for (j, &uj) in u.iter().enumerate().skip(last[t]) {
                out.push(out[t] * uj);
                last.push(j);
            }
        }
        start = end;
        end = out.len();
    }
}

/// One cell of a step's partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Features with nonzero spread in the cell; the others enter only
    /// through the intercept.
    pub active: Vec<usize>,
}

impl Cell {
    fn normalized(&self, feat: &[f64], u: &mut Vec<f64>) {
        u.clear();
        for &j in &self.active {
            let (lo, hi) = (self.lo[j], self.hi[j]);
            let c = 0.5 * (lo + hi);
            let s = 0.5 * (hi - lo);
            u.push((feat[j].clamp(lo, hi) - c) / s);
        }
    }
}

/// Partition of feature space at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepBasis {
    pub degree: usize,
    /// Interior cell boundaries on the first feature.
    pub edges: Vec<f64>,
    pub cells: Vec<Cell>,
}

impl StepBasis {
    /// Equal-count partition of the `n x f` row-major feature matrix.
    pub fn fit(features: &[f64], f: usize, spec: BasisSpec) -> (Self, Vec<u32>) {
        let n = features.len() / f;
        let mut first: Vec<f64> = (0..n).map(|p| features[p * f]).collect();
        first.sort_by(f64::total_cmp);
        let mut edges: Vec<f64> = Vec::new();
        for j in 1..spec.bins.max(1) {
            let e = first[j * n / spec.bins];
            if e > first[0] && edges.last().is_none_or(|&l| e > l) {
                edges.push(e);
            }
        }
        let mut cells: Vec<Cell> = (0..=edges.len())
            .map(|_| Cell { lo: vec![f64::INFINITY; f], hi: vec![f64::NEG_INFINITY; f], active: vec![] })
            .collect();
        let mut cell_of = Vec::with_capacity(n);
        for p in 0..n {
            let row = &features[p * f..(p + 1) * f];
            let c = edges.partition_point(|&e| e <= row[0]);
            cell_of.push(c as u32);
            let cell = &mut cells[c];
            for ((lo, hi), &v) in cell.lo.iter_mut().zip(cell.hi.iter_mut()).zip(row) {
                *lo = lo.min(v);
                *hi = hi.max(v);
            }
        }
        for cell in &mut cells {
            cell.active = (0..f)
                .filter(|&j| {
                    let (lo, hi) = (cell.lo[j], cell.hi[j]);
                    hi - lo > 1e-10 * (1.0 + lo.abs().max(hi.abs()))
                })
                .collect();
        }
        (Self { degree: spec.degree, edges, cells }, cell_of)
    }

    pub fn cell_index(&self, feat: &[f64]) -> usize {
        self.edges.partition_point(|&e| e <= feat[0])
    }

    pub fn cell_terms(&self, cell: usize) -> usize {
        binomial(self.cells[cell].active.len() + self.degree, self.degree)
    }

    /// Basis row of `feat` within `cell`.
    pub fn row(&self, cell: usize, feat: &[f64], scratch: &mut Vec<f64>, out: &mut Vec<f64>) {
        self.cells[cell].normalized(feat, scratch);
        monomials(scratch, self.degree, out);
    }

    pub fn eval(&self, coeffs: &[Vec<f64>], feat: &[f64]) -> f64 {
        let c = self.cell_index(feat);
        let (mut u, mut row) = (Vec::with_capacity(feat.len()), Vec::with_capacity(8));
        self.row(c, feat, &mut u, &mut row);
        row.iter().zip(&coeffs[c]).map(|(a, b)| a * b).sum()
    }
}

/// Ridge solver for a design block whose first column is the constant.
///
/// The intercept is left unpenalized: the other columns and the targets are
/// centered, and the SVD is taken of the centered block.
#[derive(Debug, Clone)]
struct RidgeSolver {
    n: usize,
    /// Means of columns `1..B`.
    means: Vec<f64>,
    /// Thin left singular vectors of the centered block, `n x r`.
    u: DMatrix<f64>,
    /// Right singular vectors as columns, `(B - 1) x r`.
    v: DMatrix<f64>,
    sv: Vec<f64>,
    lambda: f64,
    rank: usize,
    columns: usize,
}

impl RidgeSolver {
    fn new(design: DMatrix<f64>, ridge: f64) -> Result<Self> {
        let (n, b) = design.shape();
        let means: Vec<f64> = (1..b).map(|c| design.column(c).sum() / n as f64).collect();
        let centered = DMatrix::from_fn(n, b - 1, |r, c| design[(r, c + 1)] - means[c]);
        let (u, v, sv) = if b > 1 {
            let svd = centered.svd(true, true);
            let u_full = svd.u.expect("requested U");
            let vt = svd.v_t.expect("requested V^T");
            let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
            let smax = sv.iter().copied().fold(0.0, f64::max);
            let tol = smax * n.max(b) as f64 * f64::EPSILON;
            let keep: Vec<usize> = (0..sv.len()).filter(|&j| sv[j] > tol).collect();
            let u = DMatrix::from_fn(n, keep.len(), |r, c| u_full[(r, keep[c])]);
            let v = DMatrix::from_fn(b - 1, keep.len(), |r, c| vt[(keep[c], r)]);
            (u, v, keep.iter().map(|&j| sv[j]).collect::<Vec<f64>>())
        } else {
            (DMatrix::zeros(n, 0), DMatrix::zeros(0, 0), Vec::new())
        };
        let rank = 1 + sv.len();
        if ridge == 0.0 && rank < b {
            return Err(Error::IllConditioned { rank, columns: b });
        }
        let lambda = if b > 1 { ridge * sv.iter().map(|s| s * s).sum::<f64>() / (b - 1) as f64 } else { 0.0 };
        Ok(Self { n, means, u, v, sv, lambda, rank, columns: b })
    }

    fn condition(&self) -> f64 {
        if self.rank < self.columns {
            return f64::INFINITY;
        }
        if self.sv.is_empty() {
            return 1.0;
        }
        let smax = self.sv.iter().copied().fold(0.0, f64::max);
        let smin = self.sv.iter().copied().fold(f64::INFINITY, f64::min);
        smax / smin
    }

    /// Coefficients and in-sample fitted values for `y`.
    fn solve(&self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let ybar = y.sum() / self.n as f64;
        let yc = y.add_scalar(-ybar);
        let uty = self.u.tr_mul(&yc);
        let mut beta_w = uty.clone();
        let mut fit_w = uty;
        for (j, &s) in self.sv.iter().enumerate() {
            let denom = s * s + self.lambda;
            beta_w[j] *= s / denom;
            fit_w[j] *= s * s / denom;
        }
        let rest = &self.v * beta_w;
        let intercept = ybar - self.means.iter().zip(rest.iter()).map(|(m, b)| m * b).sum::<f64>();
        let beta = DVector::from_iterator(self.columns, std::iter::once(intercept).chain(rest.iter().copied()));
        (beta, (&self.u * fit_w).add_scalar(ybar))
    }

    /// `phi^T Cov(beta) phi / sigma^2` for a basis row `phi`.
    fn leverage(&self, phi: &[f64]) -> f64 {
        let centered = DVector::from_iterator(self.columns - 1, phi[1..].iter().zip(&self.means).map(|(x, m)| x - m));
        let proj = self.v.tr_mul(&centered);
        let spread: f64 = self.sv.iter().enumerate().map(|(j, &s)| (proj[j] * s / (s * s + self.lambda)).powi(2)).sum();
        1.0 / self.n as f64 + spread
    }
}

/// Ridge least squares `min |D beta - y|^2 + lambda |beta|^2` through an SVD
/// of `D` (`n x b`, row-major).
pub fn fit(design: &[f64], columns: usize, targets: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let n = targets.len();
    if design.len() != n * columns {
        return Err(Error::InvalidArgument("design and targets disagree in size".into()));
    }
    let d = DMatrix::from_row_slice(n, columns, design);
    let svd = d.svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let sv = &svd.singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let tol = smax * n.max(columns) as f64 * f64::EPSILON;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if lambda == 0.0 && rank < columns {
        return Err(Error::IllConditioned { rank, columns });
    }
    let uty = u.tr_mul(&DVector::from_column_slice(targets));
    let w =
        DVector::from_fn(sv.len(), |j, _| if sv[j] > tol { uty[j] * sv[j] / (sv[j] * sv[j] + lambda) } else { 0.0 });
    Ok((vt.transpose() * w).iter().copied().collect())
}

/// Precomputed regression operator for one grid index: the partition,
/// each path's cell, and one ridge solver per cell.
#[derive(Debug, Clone)]
pub struct StepRegression {
    pub basis: StepBasis,
    members: Vec<Vec<u32>>,
    solvers: Vec<RidgeSolver>,
    n_paths: usize,
}

/// Fitted coefficients (one vector per cell) and in-sample fitted values.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFit {
    pub coeffs: Vec<Vec<f64>>,
    pub fitted: Vec<f64>,
}

impl StepRegression {
    /// `features` is `n x f` row-major; `ridge` is relative to the mean
    /// squared singular value of each cell's design.
    pub fn new(features: &[f64], f: usize, spec: BasisSpec, ridge: f64) -> Result<Self> {
        let n = features.len() / f;
        let (basis, cell_of) = StepBasis::fit(features, f, spec);
        let mut members = vec![Vec::new(); basis.cells.len()];
        for (p, &c) in cell_of.iter().enumerate() {
            members[c as usize].push(p as u32);
        }
        let mut solvers = Vec::with_capacity(members.len());
        let (mut u, mut row) = (Vec::new(), Vec::new());
        for (c, rows) in members.iter().enumerate() {
            let b = basis.cell_terms(c);
            let mut design = DMatrix::zeros(rows.len(), b);
            for (r, &p) in rows.iter().enumerate() {
                let p = p as usize;
                basis.row(c, &features[p * f..(p + 1) * f], &mut u, &mut row);
                for (k, v) in row.iter().enumerate() {
                    design[(r, k)] = *v;
                }
            }
            solvers.push(RidgeSolver::new(design, ridge)?);
        }
        Ok(Self { basis, members, solvers, n_paths: n })
    }

    /// Largest cell condition number.
    pub fn condition(&self) -> f64 {
        self.solvers.iter().map(RidgeSolver::condition).fold(0.0, f64::max)
    }

    pub fn regress(&self, targets: &[f64]) -> StepFit {
        let mut fitted = vec![0.0; self.n_paths];
        let mut coeffs = Vec::with_capacity(self.solvers.len());
        for (rows, solver) in self.members.iter().zip(&self.solvers) {
            let y = DVector::from_iterator(rows.len(), rows.iter().map(|&p| targets[p as usize]));
            let (beta, fit) = solver.solve(&y);
            for (&p, v) in rows.iter().zip(fit.iter()) {
                fitted[p as usize] = *v;
            }
            coeffs.push(beta.iter().copied().collect());
        }
        StepFit { coeffs, fitted }
    }

    /// Standard error of the regression estimate at `feat`, using the
    /// residual variance of `feat`'s cell.
    pub fn prediction_se(&self, targets: &[f64], fit: &StepFit, feat: &[f64]) -> f64 {
        let c = self.basis.cell_index(feat);
        let rows = &self.members[c];
        let b = self.solvers[c].columns;
        let rss: f64 = rows.iter().map(|&p| (targets[p as usize] - fit.fitted[p as usize]).powi(2)).sum();
        let dof = rows.len().saturating_sub(b).max(1);
        let (mut u, mut row) = (Vec::new(), Vec::new());
        self.basis.row(c, feat, &mut u, &mut row);
        (rss / dof as f64 * self.solvers[c].leverage(&row)).sqrt()
    }
}

/// Features of every path at every step `0..M`, and one regression per step.
#[derive(Debug, Clone)]
pub struct RegressionPlan {
    pub featurizer: Featurizer,
    pub basis: BasisSpec,
    pub ridge: f64,
    pub n_features: usize,
    /// `features[i]` is `P x F` row-major.
    pub features: Vec<Vec<f64>>,
    pub steps: Vec<StepRegression>,
}

/// `P x F` feature matrix of `batch` at index `i`.
pub fn step_features(batch: &PathBatch, featurizer: Featurizer, i: usize) -> Vec<f64> {
    let f = featurizer.dim(batch.dim);
    let mut out = vec![0.0; batch.n_paths * f];
    for (p, row) in out.chunks_mut(f).enumerate() {
        featurizer.features(&batch.prefix(p, i), row);
    }
    out
}

impl RegressionPlan {
    pub fn new(batch: &PathBatch, featurizer: Featurizer, basis: BasisSpec, ridge: f64) -> Result<Self> {
        featurizer.check(batch.dim)?;
        let f = featurizer.dim(batch.dim);
        let m = batch.steps();
        let built: Vec<(Vec<f64>, StepRegression)> = (0..m)
            .into_par_iter()
            .map(|i| {
                let feats = step_features(batch, featurizer, i);
                let reg = StepRegression::new(&feats, f, basis, ridge)?;
                Ok((feats, reg))
            })
            .collect::<Result<_>>()?;
        let (features, steps) = built.into_iter().unzip();
        Ok(Self { featurizer, basis, ridge, n_features: f, features, steps })
    }

    pub fn feature_row(&self, i: usize, p: usize) -> &[f64] {
        &self.features[i][p * self.n_features..(p + 1) * self.n_features]
    }
}

/// Regression of `values_at_next` on the basis at step `i < M`.
pub fn condexp(
    batch: &PathBatch,
    featurizer: Featurizer,
    basis: BasisSpec,
    values_at_next: &[f64],
    i: usize,
    ridge: f64,
) -> Result<(StepSurface, Vec<f64>)> {
    if i >= batch.steps() {
        return Err(Error::InvalidArgument(format!("condexp needs i < M, got {i}")));
    }
    let feats = step_features(batch, featurizer, i);
    let reg = StepRegression::new(&feats, featurizer.dim(batch.dim), basis, ridge)?;
    let fit = reg.regress(values_at_next);
    Ok((StepSurface { basis: reg.basis, coeffs: fit.coeffs }, fit.fitted))
}

/// Basis and coefficients of one step of a surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSurface {
    pub basis: StepBasis,
    pub coeffs: Vec<Vec<f64>>,
}

impl StepSurface {
    pub fn eval(&self, feat: &[f64]) -> f64 {
        self.basis.eval(&self.coeffs, feat)
    }
}

/// Regression surface `i -> (features -> value)` for `i = 0..M-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSurface {
    pub grid: TimeGrid,
    pub featurizer: Featurizer,
    pub basis: BasisSpec,
    pub steps: Vec<StepSurface>,
}

impl ValueSurface {
    pub fn eval(&self, i: usize, feat: &[f64]) -> f64 {
        self.steps[i].eval(feat)
    }

    pub fn eval_prefix(&self, i: usize, prefix: &PathPrefix<'_>) -> f64 {
        let mut feat = vec![0.0; self.featurizer.dim(prefix.dim)];
        self.featurizer.features(prefix, &mut feat);
        self.eval(i, &feat)
    }
}
