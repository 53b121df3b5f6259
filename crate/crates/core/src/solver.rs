//! Iterated optimal stopping for the robust impulse problem.
//!
//! Level 0 solves the BSDE with driver `H*(z) = min_alpha z · ă + phi`. Level
//! `k` solves the reflected BSDE with the same driver and barrier
//!
//! ```text
//! S^k_i = max_b [ V^{k-1}(i, Gamma(t_i, x, b)) - l(t_i, x_i, b) ]
//! ```
//!
//! where `V^k(i, x) = max(C^k(i, x) + H*(Z^k(i, x)) dt, S^k_i(x))` is the
//! level-`k` value model built from the regression surfaces. Chained
//! impulses at one grid time are resolved by this recursion. Impulses are
//! never taken at the terminal index.
//!
//! All levels share one batch of driftless paths.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::hamiltonian::{refined_actions, ActionTable};
use crate::paths::{ImpulseSequence, PathBatch, PathPrefix};
use crate::policy::{
    AdversaryPolicy, Attainment, DecisionContext, Estimate, ImpulsePolicy, Intervention, StrategyTrace,
};
use crate::problem::ProblemSpec;
use crate::rbsde::{BackwardState, Engine, EngineConfig, LevelSurfaces};
use crate::regression::Featurizer;
use crate::simulate::{simulate_controlled, simulate_driftless, InitialLaw, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub k_max: usize,
    /// Early-stop threshold on the sup increment; `5e-3 (1 + |Y0|)` when unset.
    pub epsilon_picard: Option<f64>,
    /// Monotonicity tolerance; `1e-3 (1 + |Y0|)` when unset.
    pub tol_mono: Option<f64>,
    pub engine: EngineConfig,
    /// `Featurizer::for_problem` when unset.
    pub featurizer: Option<Featurizer>,
    /// Half-width of the uniform start cloud; automatic when unset.
    pub start_spread: Option<f64>,
    /// Independent sub-batches used for the standard error of `Y0`; below 2
    /// the error comes from regressing pathwise values at step 0.
    pub se_sections: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            k_max: 5,
            epsilon_picard: None,
            tol_mono: None,
            engine: EngineConfig::default(),
            featurizer: None,
            start_spread: None,
            se_sections: 8,
        }
    }
}

impl SolverConfig {
    pub fn epsilon_picard(&self, y0: f64) -> f64 {
        self.epsilon_picard.unwrap_or(5e-3 * (1.0 + y0.abs()))
    }

    pub fn tol_mono(&self, y0: f64) -> f64 {
        self.tol_mono.unwrap_or(1e-3 * (1.0 + y0.abs()))
    }
}

/// `min(k_max, 3) * max |b|`, or zero without impulses.
pub fn auto_spread(spec: &ProblemSpec, k_max: usize) -> f64 {
    if spec.marks.is_empty() || k_max == 0 {
        0.0
    } else {
        k_max.min(3) as f64 * spec.marks.max_norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Continuation {
    /// `C + H*(z) dt`.
    pub value: f64,
    pub z: Vec<f64>,
    /// Minimizing action index.
    pub action: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierEval {
    pub value: f64,
    /// Maximizing mark index (smallest on ties).
    pub mark: usize,
}

/// Value model of every solved level, evaluable at arbitrary prefixes.
#[derive(Debug, Clone)]
pub struct RobustModel {
    pub spec: ProblemSpec,
    pub grid: TimeGrid,
    pub featurizer: Featurizer,
    pub levels: Vec<LevelSurfaces>,
    pub tol_hit: f64,
}

impl RobustModel {
    /// Highest level index (the intervention budget the model covers).
    pub fn budget(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    fn features(&self, prefix: &PathPrefix<'_>) -> Vec<f64> {
        let mut f = vec![0.0; self.featurizer.dim(prefix.dim)];
        self.featurizer.features(prefix, &mut f);
        f
    }

    /// Fitted `Z` of level `k` at `(i, prefix)`, `i < M`.
    pub fn z(&self, k: usize, i: usize, prefix: &PathPrefix<'_>) -> Vec<f64> {
        let f = self.features(prefix);
        self.levels[k].z.iter().map(|s| s.eval(i, &f)).collect()
    }

    pub fn continuation(&self, k: usize, i: usize, prefix: &PathPrefix<'_>) -> Result<Continuation> {
        let f = self.features(prefix);
        let lv = &self.levels[k];
        let c = lv.continuation.eval(i, &f);
        let z: Vec<f64> = lv.z.iter().map(|s| s.eval(i, &f)).collect();
        let (h, action) = ActionTable::new(&self.spec, self.grid.time(i), prefix)?.minimize(&z);
        Ok(Continuation { value: c + h * self.grid.dt(), z, action })
    }

    /// Intervention barrier of level `k`; `None` at `k = 0`, at `i = M` and
    /// without marks.
    pub fn barrier(&self, k: usize, i: usize, prefix: &PathPrefix<'_>) -> Result<Option<BarrierEval>> {
        if k == 0 || i >= self.grid.steps() || self.spec.marks.is_empty() {
            return Ok(None);
        }
        let t = self.grid.time(i);
        let mut best: Option<BarrierEval> = None;
        for (j, b) in self.spec.marks.iter().enumerate() {
            let shifted = self.spec.apply_impulse(t, prefix, b);
            let v = self.value(k - 1, i, &prefix.with_current(&shifted))?
                - (self.spec.intervention_cost)(t, prefix.current, b);
            if best.is_none_or(|bv| v > bv.value) {
                best = Some(BarrierEval { value: v, mark: j });
            }
        }
        Ok(best)
    }

    /// `V^k(i, prefix)`.
    pub fn value(&self, k: usize, i: usize, prefix: &PathPrefix<'_>) -> Result<f64> {
        if i >= self.grid.steps() {
            return Ok((self.spec.terminal_reward)(prefix.current));
        }
        let c = self.continuation(k, i, prefix)?.value;
        Ok(match self.barrier(k, i, prefix)? {
            Some(b) if b.value > c => b.value,
            _ => c,
        })
    }

    pub fn value_at_start(&self, k: usize) -> Result<f64> {
        self.value(k, 0, &PathPrefix::initial(&self.spec.x0))
    }
}

/// Summary and backward state of one Picard level.
#[derive(Debug, Clone)]
pub struct PicardLevel {
    pub k: usize,
    pub y0: f64,
    pub se: f64,
    /// `max |Y^k - Y^{k-1}|` over the batch; `None` at level 0.
    pub sup_increment: Option<f64>,
    pub mean_increment: Option<f64>,
    pub min_increment: Option<f64>,
    /// Fraction of paths at the barrier per step.
    pub barrier_binding: Vec<f64>,
    pub mean_k: f64,
    pub skorokhod_sum: f64,
    pub skorokhod_violations: usize,
    pub driver_clamps: usize,
    pub state: BackwardState,
}

#[derive(Debug, Clone)]
pub struct RobustSolution {
    pub model: RobustModel,
    pub levels: Vec<PicardLevel>,
    pub warnings: Vec<String>,
    /// `"sections"` or `"regression"`.
    pub se_method: String,
    pub featurizer: Featurizer,
    pub start_spread: f64,
    pub stopped_early: bool,
    /// `max |Y|` over all levels, paths and steps.
    pub max_abs_y: f64,
    pub max_abs_terminal: f64,
    /// Largest `H*` gap between `A` and a 3x refined grid on sampled points.
    pub hamiltonian_gap: f64,
}

impl RobustSolution {
    pub fn last(&self) -> &PicardLevel {
        self.levels.last().expect("at least one level")
    }

    pub fn y0(&self) -> f64 {
        self.last().y0
    }

    pub fn se(&self) -> f64 {
        self.last().se
    }

    pub fn k_effective(&self) -> usize {
        self.last().k
    }

    /// `(max |Y| + max |xi|) / delta`, a crude bound on the mean intervention count.
    pub fn intervention_bound(&self) -> f64 {
        (self.max_abs_y + self.max_abs_terminal) / self.model.spec.cost_floor
    }
}

/// Runs levels `0..=k_max` on one batch simulated from `sim` (its initial law
/// is replaced by the start cloud).
pub fn solve_robust(spec: &ProblemSpec, sim: &SimConfig, cfg: &SolverConfig) -> Result<RobustSolution> {
    spec.check_structure()?;
    let featurizer = cfg.featurizer.unwrap_or_else(|| Featurizer::for_problem(spec));
    let spread = cfg.start_spread.unwrap_or_else(|| auto_spread(spec, cfg.k_max));
    let mut sim = *sim;
    sim.initial = if spread > 0.0 { InitialLaw::UniformBox { halfwidth: spread } } else { InitialLaw::Point };
    if sim.grid.horizon() != spec.horizon {
        return Err(Error::InvalidArgument(format!(
            "grid horizon {} differs from the problem horizon {}",
            sim.grid.horizon(),
            spec.horizon
        )));
    }
    let batch = simulate_driftless(spec, &ImpulseSequence::empty(), &sim)?;
    let engine = Engine::new(&batch, featurizer, cfg.engine)?;
    let (n, m) = (batch.n_paths, batch.steps());
    let terminal: Vec<f64> = (0..n).map(|p| (spec.terminal_reward)(batch.state(p, m))).collect();

    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let record = |e: Error| {
        let mut slot = failure.lock().expect("poisoned");
        if slot.is_none() {
            *slot = Some(e);
        }
    };
    let driver = |i: usize, p: usize, _y: f64, z: &[f64]| -> f64 {
        match ActionTable::new(spec, batch.grid.time(i), &batch.prefix(p, i)) {
            Ok(table) => table.minimize(z).0,
            Err(e) => {
                record(e);
                f64::NAN
            }
        }
    };
    let take_failure = |e: Error| failure.lock().expect("poisoned").take().unwrap_or(e);

    let mut model = RobustModel {
        spec: spec.clone(),
        grid: batch.grid,
        featurizer,
        levels: Vec::new(),
        tol_hit: cfg.engine.tol_hit,
    };
    let mut levels: Vec<PicardLevel> = Vec::new();
    let mut warnings = Vec::new();
    let mut quiet_levels = 0;
    let mut stopped_early = false;

    for k in 0..=cfg.k_max {
        let state = if k == 0 {
            engine.solve_bsde(&driver, &terminal).map_err(take_failure)?
        } else {
            let barrier = engine.tabulate(|i, p| {
                Ok(model.barrier(k, i, &batch.prefix(p, i))?.map_or(f64::NEG_INFINITY, |b| b.value))
            })?;
            engine.solve_reflected(&driver, &terminal, barrier).map_err(take_failure)?
        };
        model.levels.push(state.surfaces.clone());
        let y0 = model.value_at_start(k)?;
        let se = start_se(&engine, &state, &model, spec);

        let (sup_inc, mean_inc, min_inc) = match levels.last() {
            Some(prev) => {
                let d: Vec<f64> = state.y.iter().zip(&prev.state.y).map(|(a, b)| a - b).collect();
                let sup = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
                let mean = d.iter().sum::<f64>() / d.len() as f64;
                let min = d.iter().copied().fold(f64::INFINITY, f64::min);
                (Some(sup), Some(mean), Some(min))
            }
            None => (None, None, None),
        };
        if let Some(prev) = levels.last() {
            let tol = cfg.tol_mono(y0);
            if y0 < prev.y0 - tol {
                warnings.push(format!(
                    "MonotonicityViolated: Y0 fell from {:.6} at level {} to {:.6} at level {k} (tol {tol:.2e})",
                    prev.y0, prev.k, y0
                ));
            }
            if let (Some(s), Some(ps)) = (sup_inc, prev.sup_increment) {
                if s > 2.0 * ps {
                    warnings.push(format!("sup increment grew from {ps:.4e} to {s:.4e} at level {k}"));
                }
            }
        }
        let clamps = state.total_clamps();
        if clamps > 0 {
            warnings.push(format!("driver clamp active {clamps} times at level {k}"));
        }
        levels.push(PicardLevel {
            k,
            y0,
            se,
            sup_increment: sup_inc,
            mean_increment: mean_inc,
            min_increment: min_inc,
            barrier_binding: state.binding_fractions(),
            mean_k: state.k_increments.iter().sum::<f64>() / n as f64,
            skorokhod_sum: state.skorokhod_sum(),
            skorokhod_violations: state.skorokhod_violations(),
            driver_clamps: clamps,
            state,
        });

        if let Some(s) = sup_inc {
            quiet_levels = if s <= cfg.epsilon_picard(y0) { quiet_levels + 1 } else { 0 };
            if quiet_levels >= 2 && k < cfg.k_max {
                stopped_early = true;
                break;
            }
        }
        if spec.marks.is_empty() && k == 0 && cfg.k_max > 0 {
            // without impulses every level equals level 0
            break;
        }
    }

    let mut se_method = "regression".to_string();
    if cfg.se_sections >= 2 {
        match section_errors(spec, &sim, cfg, levels.len() - 1) {
            Ok(se) => {
                for (l, e) in levels.iter_mut().zip(se) {
                    l.se = e;
                }
                se_method = "sections".into();
            }
            Err(e) => {
                warnings.push(format!("sectioned standard error unavailable ({e}); using the regression estimate"))
            }
        }
    }

    let max_abs_y = levels.iter().flat_map(|l| l.state.y.iter()).map(|v| v.abs()).fold(0.0, f64::max);
    let max_abs_terminal = terminal.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let hamiltonian_gap = hamiltonian_gap(spec, &batch, &levels.last().expect("one level").state)?;
    Ok(RobustSolution {
        model,
        levels,
        warnings,
        se_method,
        featurizer,
        start_spread: spread,
        stopped_early,
        max_abs_y,
        max_abs_terminal,
        hamiltonian_gap,
    })
}

/// Standard error of `Y_0` at `x0`: regression of the pathwise Snell values
/// on the step-0 basis.
fn start_se(engine: &Engine<'_>, state: &BackwardState, model: &RobustModel, spec: &ProblemSpec) -> f64 {
    let n = state.n_paths;
    let r: Vec<f64> = (0..n).map(|p| state.pathwise_value(0, p)).collect();
    let reg = &engine.plan().steps[0];
    let fit = reg.regress(&r);
    reg.prediction_se(&r, &fit, &model.features(&PathPrefix::initial(&spec.x0)))
}

/// Standard error of `Y0` per level from `G` independent solves on batches
/// of `P / G` paths: `std / sqrt(G)`.
fn section_errors(spec: &ProblemSpec, sim: &SimConfig, cfg: &SolverConfig, k_max: usize) -> Result<Vec<f64>> {
    let g = cfg.se_sections;
    let mut n = sim.n_paths / g;
    if sim.antithetic {
        n -= n % 2;
    }
    let sub_cfg = SolverConfig { k_max, epsilon_picard: Some(-1.0), se_sections: 0, ..*cfg };
    let mut values = vec![Vec::with_capacity(g); k_max + 1];
    for s in 0..g {
        let sub_sim = SimConfig { n_paths: n, seed: crate::rng::substream(sim.seed, &format!("section-{s}")), ..*sim };
        let sol = solve_robust(spec, &sub_sim, &sub_cfg)?;
        for (k, l) in sol.levels.iter().enumerate() {
            values[k].push(l.y0);
        }
    }
    Ok(values
        .iter()
        .map(|v| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (var / v.len() as f64).sqrt()
        })
        .collect())
}

fn hamiltonian_gap(spec: &ProblemSpec, batch: &PathBatch, state: &BackwardState) -> Result<f64> {
    let fine = refined_actions(&spec.actions, 3)?;
    let (n, m) = (batch.n_paths, batch.steps());
    let samples = 256.min(n * m);
    let mut gap: f64 = 0.0;
    for s in 0..samples {
        let j = s * (n * m) / samples;
        let (i, p) = (j / n, j % n);
        let g =
            crate::hamiltonian::refinement_gap(spec, &fine, batch.grid.time(i), &batch.prefix(p, i), state.z(p, i))?;
        gap = gap.max(g);
    }
    Ok(gap)
}

/// Feedback strategy read off the model: intervene with the argmax mark
/// while the level-`r` barrier dominates the continuation value, and let the
/// adversary play the `H*` minimizer at the level-`r` `Z` surface.
#[derive(Debug, Clone, Copy)]
pub struct RobustPolicy<'a> {
    pub model: &'a RobustModel,
    pub budget: usize,
}

impl<'a> RobustPolicy<'a> {
    pub fn new(model: &'a RobustModel) -> Self {
        Self { model, budget: model.budget() }
    }

    fn level(&self, remaining: usize) -> usize {
        remaining.min(self.model.budget())
    }
}

impl ImpulsePolicy for RobustPolicy<'_> {
    fn name(&self) -> String {
        format!("robust(budget={})", self.budget)
    }

    fn budget(&self) -> usize {
        self.budget
    }

    fn decide(&self, ctx: &DecisionContext<'_>) -> Result<Option<Intervention>> {
        let r = self.level(ctx.remaining);
        let Some(bar) = self.model.barrier(r, ctx.step, &ctx.prefix)? else { return Ok(None) };
        let cont = self.model.continuation(r, ctx.step, &ctx.prefix)?.value;
        if bar.value >= cont - self.model.tol_hit * (1.0 + cont.abs()) {
            let attainment = Attainment { value: bar.value.max(cont), barrier: bar.value, continuation: cont };
            return Ok(Some(Intervention { mark: bar.mark, attainment: Some(attainment) }));
        }
        Ok(None)
    }
}

impl AdversaryPolicy for RobustPolicy<'_> {
    fn action(&self, ctx: &DecisionContext<'_>) -> Result<usize> {
        let r = self.level(ctx.remaining);
        let z = self.model.z(r, ctx.step, &ctx.prefix);
        Ok(ActionTable::new(&self.model.spec, ctx.time, &ctx.prefix)?.minimize(&z).1)
    }
}

/// Fresh forward sweep under the extracted pair `(u*, alpha*)`.
pub fn extract_strategy(sol: &RobustSolution, spec: &ProblemSpec, eval: &SimConfig) -> Result<StrategyTrace> {
    let policy = RobustPolicy::new(&sol.model);
    Ok(simulate_controlled(spec, &policy, &policy, eval)?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub name: String,
    pub j: Estimate,
    pub mean_interventions: f64,
    /// `J > Y0 + 3 sqrt(se_Y^2 + se_J^2)`.
    pub exceeds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualReport {
    pub y0: f64,
    pub y0_se: f64,
    pub candidates: Vec<CandidateResult>,
    pub max_j: f64,
    /// `Y0 - max_j`.
    pub gap: f64,
    pub violations: usize,
}

/// Evaluates each candidate impulse policy against the model's adversary
/// response on common random numbers.
pub fn dual_check(
    sol: &RobustSolution,
    spec: &ProblemSpec,
    candidates: &[&dyn ImpulsePolicy],
    eval: &SimConfig,
) -> Result<DualReport> {
    let adversary = RobustPolicy::new(&sol.model);
    let (y0, y0_se) = (sol.y0(), sol.se());
    let mut results = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let (_, trace) = simulate_controlled(spec, *cand, &adversary, eval)?;
        let j = trace.reward_estimate();
        let exceeds = j.mean > y0 + 3.0 * (y0_se * y0_se + j.se * j.se).sqrt();
        results.push(CandidateResult { name: cand.name(), j, mean_interventions: trace.mean_interventions(), exceeds });
    }
    let max_j = results.iter().map(|c| c.j.mean).fold(f64::NEG_INFINITY, f64::max);
    let violations = results.iter().filter(|c| c.exceeds).count();
    Ok(DualReport { y0, y0_se, candidates: results, max_j, gap: y0 - max_j, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::NoImpulses;
    use crate::problem::{builtin, ProblemOverrides};

    fn spec(name: &str, ov: ProblemOverrides) -> ProblemSpec {
        builtin(name, &ov).unwrap()
    }

    fn sim(m: usize, p: usize, seed: u64) -> SimConfig {
        SimConfig::new(TimeGrid::new(1.0, m).unwrap(), p, seed)
    }

    fn small(k_max: usize) -> SolverConfig {
        SolverConfig { k_max, epsilon_picard: Some(0.0), se_sections: 0, ..Default::default() }
    }

    #[test]
    fn auto_spread_rule() {
        let s = spec("cash1d", ProblemOverrides::default());
        assert_eq!(auto_spread(&s, 3), 1.5);
        assert_eq!(auto_spread(&s, 1), 0.5);
        assert_eq!(auto_spread(&s, 0), 0.0);
        assert_eq!(auto_spread(&spec("mart1d", ProblemOverrides::default()), 3), 0.0);
    }

    #[test]
    fn barrier_matches_direct_enumeration() {
        let s = spec("cash1d", ProblemOverrides::default());
        let sol = solve_robust(&s, &sim(20, 4_000, 1), &small(2)).unwrap();
        let m = &sol.model;
        let x = [1.4];
        let p = PathPrefix::initial(&x);
        for i in [0, 7, 19] {
            let got = m.barrier(2, i, &p).unwrap().unwrap();
            let t = m.grid.time(i);
            let mut best = (f64::NEG_INFINITY, 0);
            for (j, b) in [-0.5f64, 0.5].iter().enumerate() {
                let y = [(1.4 + b).clamp(-5.0, 5.0)];
                let v = m.value(1, i, &PathPrefix::initial(&y)).unwrap() - (0.1 + 0.05 * 1.4);
                if v > best.0 {
                    best = (v, j);
                }
            }
            let _ = t;
            assert_eq!(got.value, best.0);
            assert_eq!(got.mark, best.1);
        }
        assert!(m.barrier(2, 20, &p).unwrap().is_none());
        assert!(m.barrier(0, 3, &p).unwrap().is_none());
    }

    #[test]
    fn huge_costs_disable_impulses() {
        let s = spec("cash1d", ProblemOverrides { cost_scale: Some(1e6), ..Default::default() });
        let cfg = SolverConfig { start_spread: Some(1.5), ..small(2) };
        let sol = solve_robust(&s, &sim(20, 4_000, 2), &cfg).unwrap();
        let y: Vec<f64> = sol.levels.iter().map(|l| l.y0).collect();
        assert!(y.iter().all(|&v| v == y[0]), "{y:?}");
        assert!(sol.levels.iter().all(|l| l.mean_k == 0.0));
        let trace = extract_strategy(&sol, &s, &sim(20, 2_000, 3)).unwrap();
        assert_eq!(trace.mean_interventions(), 0.0);
    }

    #[test]
    fn singleton_marks_with_identity_map() {
        // Gamma(x) = x and constant cost: the barrier is the previous level minus delta
        let mut s = spec("cash1d", ProblemOverrides { marks: Some(vec![0.0]), ..Default::default() });
        s.intervention_cost = std::sync::Arc::new(|_, _, _| 0.25);
        s.cost_floor = 0.25;
        let cfg = SolverConfig { start_spread: Some(0.5), ..small(1) };
        let sol = solve_robust(&s, &sim(10, 2_000, 4), &cfg).unwrap();
        let x = [0.3];
        let p = PathPrefix::initial(&x);
        let bar = sol.model.barrier(1, 4, &p).unwrap().unwrap();
        assert!((bar.value - (sol.model.value(0, 4, &p).unwrap() - 0.25)).abs() < 1e-15);
        assert_eq!(sol.levels[1].mean_k, 0.0);
    }

    #[test]
    fn skorokhod_exact_at_every_level() {
        let s = spec("cash1d", ProblemOverrides::default());
        let sol = solve_robust(&s, &sim(20, 4_000, 5), &small(3)).unwrap();
        for l in &sol.levels {
            assert_eq!(l.skorokhod_sum, 0.0);
            assert_eq!(l.skorokhod_violations, 0);
        }
        assert!(sol.levels[1].mean_k > 0.0);
    }

    #[test]
    fn recorded_interventions_attain_the_barrier() {
        let s = spec("cash1d", ProblemOverrides::default());
        let sol = solve_robust(&s, &sim(20, 4_000, 6), &small(3)).unwrap();
        let trace = extract_strategy(&sol, &s, &sim(20, 2_000, 7)).unwrap();
        assert!(trace.mean_interventions() > 0.0);
        for path in &trace.paths {
            let mut last = 0.0;
            for rec in &path.impulses {
                let a = rec.attainment.unwrap();
                assert_eq!(a.value, a.barrier);
                assert!(rec.cost >= s.cost_floor);
                assert!(rec.time >= last);
                last = rec.time;
            }
            assert!(path.impulses.len() <= 3);
        }
        assert!(trace.mean_interventions() <= sol.intervention_bound());
    }

    #[test]
    fn no_impulse_candidate_is_dominated() {
        let s = spec("cash1d", ProblemOverrides::default());
        let sol = solve_robust(&s, &sim(20, 4_000, 8), &small(2)).unwrap();
        let report = dual_check(&sol, &s, &[&NoImpulses], &sim(20, 4_000, 9)).unwrap();
        assert_eq!(report.violations, 0);
        assert!(report.gap > 0.0);
    }

    #[test]
    fn martingale_without_impulses_stops_after_level_zero() {
        let s = spec("mart1d", ProblemOverrides::default());
        let sol = solve_robust(&s, &sim(10, 2_000, 10), &small(3)).unwrap();
        assert_eq!(sol.levels.len(), 1);
        assert_eq!(sol.start_spread, 0.0);
        assert!((sol.y0() - 1.0).abs() < 3.0 * sol.se());
    }
}
