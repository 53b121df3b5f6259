//! Monte Carlo evaluation of the reward functional
//! `J(u, alpha) = E[ int phi dt + psi(X_T) - sum l ]`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hamiltonian::ActionTable;
use crate::paths::ImpulseSequence;
use crate::policy::{AdversaryPolicy, ConstantAdversary, Estimate, ImpulsePolicy, ScheduledImpulses};
use crate::problem::ProblemSpec;
use crate::rbsde::{Engine, EngineConfig};
use crate::regression::Featurizer;
use crate::simulate::{simulate_controlled, simulate_driftless_costed, SimConfig};

/// Mean and standard error of the realized reward under a policy pair.
pub fn estimate_j(
    spec: &ProblemSpec,
    impulse: &dyn ImpulsePolicy,
    adversary: &dyn AdversaryPolicy,
    cfg: &SimConfig,
) -> Result<Estimate> {
    Ok(simulate_controlled(spec, impulse, adversary, cfg)?.1.reward_estimate())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionValue {
    pub action: Vec<f64>,
    pub j: Estimate,
}

/// Evaluation of a fixed impulse sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopEvaluation {
    pub n_impulses: usize,
    /// `inf_alpha J(u, alpha)` from the BSDE with driver `H*`.
    pub robust_value: f64,
    pub robust_se: f64,
    /// `J(u, alpha)` for each constant adversary action.
    pub constant_actions: Vec<ActionValue>,
}

/// Robust value of the open-loop control `u`: the level-0 BSDE with driver
/// `H*` on paths carrying `u`, with the intervention costs folded into the
/// terminal condition.
pub fn robust_value_open_loop(
    spec: &ProblemSpec,
    u: &ImpulseSequence,
    sim: &SimConfig,
    engine: EngineConfig,
    featurizer: Featurizer,
) -> Result<Estimate> {
    let (batch, costs) = simulate_driftless_costed(spec, u, sim)?;
    let m = batch.steps();
    let terminal: Vec<f64> = (0..batch.n_paths).map(|p| (spec.terminal_reward)(batch.state(p, m)) - costs[p]).collect();
    let engine = Engine::new(&batch, featurizer, engine)?;
    let driver = |i: usize, p: usize, _y: f64, z: &[f64]| -> f64 {
        ActionTable::new(spec, batch.grid.time(i), &batch.prefix(p, i)).map_or(f64::NAN, |t| t.minimize(z).0)
    };
    let state = engine.solve_bsde(&driver, &terminal)?;
    let samples: Vec<f64> = (0..batch.n_paths).map(|p| state.pathwise_value(0, p)).collect();
    let mut est = Estimate::from_samples(&samples);
    est.mean = state.step_values(0).iter().sum::<f64>() / batch.n_paths as f64;
    Ok(est)
}

pub fn evaluate_open_loop(
    spec: &ProblemSpec,
    u: &ImpulseSequence,
    sim: &SimConfig,
    engine: EngineConfig,
    featurizer: Featurizer,
) -> Result<OpenLoopEvaluation> {
    let schedule = ScheduledImpulses::from_sequence(spec, &sim.grid, u)?;
    // impulses snapping to the terminal index are dropped, as in the solver
    let m = sim.grid.steps();
    let (times, marks): (Vec<f64>, Vec<Vec<f64>>) = u
        .times()
        .iter()
        .zip(u.marks())
        .filter(|(&t, _)| sim.grid.nearest_index(t) < m)
        .map(|(&t, b)| (t, b.clone()))
        .unzip();
    let u = ImpulseSequence::new(times, marks)?;
    let robust = robust_value_open_loop(spec, &u, sim, engine, featurizer)?;
    let constant_actions = (0..spec.actions.len())
        .map(|a| {
            Ok(ActionValue {
                action: spec.actions.point(a).to_vec(),
                j: estimate_j(spec, &schedule, &ConstantAdversary(a), sim)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(OpenLoopEvaluation { n_impulses: u.len(), robust_value: robust.mean, robust_se: robust.se, constant_actions })
}
