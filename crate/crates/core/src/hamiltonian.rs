//! The Hamiltonian `H(t, x, z, alpha) = z · ă(t, x, alpha) + phi(t, x, alpha)`
//! and its minimum over the finite action grid.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::paths::PathPrefix;
use crate::problem::{PointSet, ProblemSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianEval {
    /// `H* = min_alpha H`.
    pub value: f64,
    /// Index of the minimizing action in `A` (smallest index on ties).
    pub minimizer: usize,
    /// `H(alpha)` for every action, in grid order.
    pub per_action: Option<Vec<f64>>,
}

pub fn hamiltonian(spec: &ProblemSpec, t: f64, prefix: &PathPrefix<'_>, z: &[f64], alpha: &[f64]) -> Result<f64> {
    let ba = spec.breve_a(t, prefix, alpha)?;
    Ok(dot(z, &ba) + (spec.running_reward)(t, prefix, alpha))
}

/// `ă` and `phi` for every action at a fixed `(t, prefix)`, so that `H*` can
/// be evaluated for many `z` cheaply.
#[derive(Debug, Clone)]
pub struct ActionTable {
    dim: usize,
    breve: Vec<f64>,
    phi: Vec<f64>,
}

impl ActionTable {
    pub fn new(spec: &ProblemSpec, t: f64, prefix: &PathPrefix<'_>) -> Result<Self> {
        Self::with_actions(spec, &spec.actions, t, prefix)
    }

    pub fn with_actions(spec: &ProblemSpec, actions: &PointSet, t: f64, prefix: &PathPrefix<'_>) -> Result<Self> {
        let d = spec.dim();
        let inv = spec.sigma22_inverse(t, prefix)?;
        let mut breve = vec![0.0; actions.len() * d];
        let mut phi = Vec::with_capacity(actions.len());
        for (a, alpha) in actions.iter().enumerate() {
            spec.breve_a_with(&inv, t, prefix, alpha, &mut breve[a * d..(a + 1) * d]);
            phi.push((spec.running_reward)(t, prefix, alpha));
        }
        Ok(Self { dim: d, breve, phi })
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn value(&self, a: usize, z: &[f64]) -> f64 {
        dot(z, &self.breve[a * self.dim..(a + 1) * self.dim]) + self.phi[a]
    }

    /// `(H*, argmin)`; ties go to the smallest index.
    pub fn minimize(&self, z: &[f64]) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for a in 0..self.len() {
            let h = self.value(a, z);
            if h < best.0 {
                best = (h, a);
            }
        }
        best
    }

    pub fn evaluate(&self, z: &[f64], keep_all: bool) -> HamiltonianEval {
        let (value, minimizer) = self.minimize(z);
        let per_action = keep_all.then(|| (0..self.len()).map(|a| self.value(a, z)).collect());
        HamiltonianEval { value, minimizer, per_action }
    }
}

pub fn minimize_hamiltonian(spec: &ProblemSpec, t: f64, prefix: &PathPrefix<'_>, z: &[f64]) -> Result<HamiltonianEval> {
    Ok(ActionTable::new(spec, t, prefix)?.evaluate(z, true))
}

/// Box grid over the bounding box of `actions` with `factor` times as many
/// intervals per axis.
pub fn refined_actions(actions: &PointSet, factor: usize) -> Result<PointSet> {
    let d = actions.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    let mut n = vec![0usize; d];
    for c in 0..d {
        let mut vals: Vec<f64> = actions.iter().map(|a| a[c]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        lo[c] = vals[0];
        hi[c] = vals[vals.len() - 1];
        n[c] = factor * (vals.len() - 1) + 1;
    }
    PointSet::box_grid(&lo, &hi, &n)
}

/// `H*` on `A` minus `H*` on a refined grid: the discretization error of the
/// inner minimization at one point.
pub fn refinement_gap(
    spec: &ProblemSpec,
    refined: &PointSet,
    t: f64,
    prefix: &PathPrefix<'_>,
    z: &[f64],
) -> Result<f64> {
    let coarse = ActionTable::new(spec, t, prefix)?.minimize(z).0;
    let fine = ActionTable::with_actions(spec, refined, t, prefix)?.minimize(z).0;
    Ok(coarse - fine)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin, ProblemOverrides};
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;
    use std::sync::Arc;

    fn cash() -> ProblemSpec {
        builtin("cash1d", &ProblemOverrides::default()).unwrap()
    }

    #[test]
    fn zero_z_gives_running_reward() {
        let s = cash();
        let x = [1.3];
        let h = hamiltonian(&s, 0.2, &PathPrefix::initial(&x), &[0.0], &[0.1]).unwrap();
        assert_eq!(h, -(1.3f64 * 1.3));
    }

    #[test]
    fn cash_value_at_unit_z() {
        let s = cash();
        let x = [1.0];
        let h = hamiltonian(&s, 0.0, &PathPrefix::initial(&x), &[1.0], &[0.1]).unwrap();
        assert!((h + 0.5).abs() < 1e-15);
        let e = minimize_hamiltonian(&s, 0.0, &PathPrefix::initial(&x), &[1.0]).unwrap();
        assert_eq!(e.minimizer, 0);
        assert!((e.value - (-0.5 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn ties_select_first_action() {
        let s = cash();
        let x = [0.4];
        let e = minimize_hamiltonian(&s, 0.0, &PathPrefix::initial(&x), &[0.0]).unwrap();
        assert_eq!(e.minimizer, 0);
        let per = e.per_action.unwrap();
        assert!(per.iter().all(|&v| v == e.value));
    }

    #[test]
    fn affine_in_alpha() {
        let s = cash();
        let x = [0.7];
        let p = PathPrefix::initial(&x);
        let h: Vec<f64> = [-0.1, 0.0, 0.1].iter().map(|&a| hamiltonian(&s, 0.0, &p, &[0.8], &[a]).unwrap()).collect();
        assert!((h[1] - 0.5 * (h[0] + h[2])).abs() < 1e-14);
    }

    fn two_action_dims() -> ProblemSpec {
        let mut s = crate::problem::tests::two_block([1.0, 0.0, 0.0, 0.2, 0.5, 0.0, 0.0, 0.1, 0.3]);
        s.actions = PointSet::box_grid(&[-1.0, -0.5], &[1.0, 0.5], &[5, 3]).unwrap();
        s.drift_a2 = Arc::new(|_, p, a, out| {
            out[0] = a[0] + 0.1 * p.current[0];
            out[1] = a[0] * a[1];
        });
        s.running_reward = Arc::new(|_, p, a| -p.current[1] * p.current[1] - 0.3 * a[1] * a[1]);
        s
    }

    #[test]
    fn brute_force_on_two_dimensional_actions() {
        let s = two_action_dims();
        let mut r = rng::stream(3, 0);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
            let z: Vec<f64> = (0..3).map(|_| r.random_range(-3.0..3.0)).collect();
            let p = PathPrefix::initial(&x);
            let e = minimize_hamiltonian(&s, 0.3, &p, &z).unwrap();
            // independent enumeration through the public per-point Hamiltonian
            let mut best = (f64::INFINITY, 0);
            for a in 0..s.actions.len() {
                let h = hamiltonian(&s, 0.3, &p, &z, s.actions.point(a)).unwrap();
                if h < best.0 {
                    best = (h, a);
                }
            }
            assert!((e.value - best.0).abs() <= 1e-12 * (1.0 + best.0.abs()));
            assert_eq!(e.minimizer, best.1);
        }
    }

    #[test]
    fn refined_grid_never_raises_minimum() {
        let s = cash();
        let fine = refined_actions(&s.actions, 3).unwrap();
        assert_eq!(fine.len(), 7);
        let x = [0.2];
        for z in [-2.0, -0.1, 0.0, 0.5, 3.0] {
            let gap = refinement_gap(&s, &fine, 0.0, &PathPrefix::initial(&x), &[z]).unwrap();
            // affine in alpha: the endpoints are in both grids
            assert!(gap.abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn closed_form_for_symmetric_grid(z in -50.0f64..50.0, x in -4.0f64..4.0) {
            let s = cash();
            let p = [x];
            let e = minimize_hamiltonian(&s, 0.0, &PathPrefix::initial(&p), &[z]).unwrap();
            let expected = -(0.1 / 0.2) * z.abs() - x * x;
            prop_assert!((e.value - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
            for v in e.per_action.unwrap() {
                prop_assert!(e.value <= v);
            }
        }

        #[test]
        fn argmin_invariant_under_joint_scaling(z in -5.0f64..5.0, x in -3.0f64..3.0, c in 0.1f64..10.0) {
            let s = cash();
            let mut scaled = cash();
            scaled.drift_a2 = Arc::new(move |_, _, a, out| out[0] = c * a[0]);
            scaled.running_reward = Arc::new(move |_, p, _| -c * p.current[0] * p.current[0]);
            let p = [x];
            let a = minimize_hamiltonian(&s, 0.0, &PathPrefix::initial(&p), &[z]).unwrap();
            let b = minimize_hamiltonian(&scaled, 0.0, &PathPrefix::initial(&p), &[z]).unwrap();
            prop_assert_eq!(a.minimizer, b.minimizer);
        }
    }
}
