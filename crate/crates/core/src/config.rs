//! Run configuration, read from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::problem::{builtin, ProblemOverrides, ProblemSpec, BUILTINS};
use crate::rbsde::EngineConfig;
use crate::regression::{BasisSpec, Featurizer};
use crate::rng;
use crate::simulate::SimConfig;
use crate::solver::SolverConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub grid: GridSection,
    pub monte_carlo: MonteCarloSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub dual: DualSection,
    #[serde(default)]
    pub outputs: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub name: String,
    #[serde(default)]
    pub overrides: ProblemOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub steps: usize,
    /// Defaults to the problem horizon.
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
    /// Paths of the strategy evaluation sweep; defaults to `paths`.
    pub eval_paths: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub k_max: usize,
    pub epsilon_picard: Option<f64>,
    pub tol_mono: Option<f64>,
    pub basis_degree: usize,
    pub basis_bins: usize,
    pub ridge: f64,
    pub featurizer: Option<Featurizer>,
    pub f_cap: Option<f64>,
    pub tol_hit: f64,
    pub refine: bool,
    pub z_control_variate: bool,
    pub start_spread: Option<f64>,
    pub se_sections: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let e = EngineConfig::default();
        let s = SolverConfig::default();
        Self {
            k_max: s.k_max,
            epsilon_picard: None,
            tol_mono: None,
            basis_degree: e.basis.degree,
            basis_bins: e.basis.bins,
            ridge: e.ridge,
            featurizer: None,
            f_cap: None,
            tol_hit: e.tol_hit,
            refine: e.refine,
            z_control_variate: e.z_control_variate,
            start_spread: None,
            se_sections: s.se_sections,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub enabled: bool,
    pub steps: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { enabled: false, steps: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualSection {
    pub enabled: bool,
    /// Random candidate policies besides the no-impulse policy.
    pub candidates: usize,
    pub max_budget: usize,
    /// Intervention intensity of the random candidates, per unit time.
    pub intensity: f64,
    /// Defaults to `monte_carlo.eval_paths`.
    pub paths: Option<usize>,
}

impl Default for DualSection {
    fn default() -> Self {
        Self { enabled: true, candidates: 100, max_budget: 3, intensity: 3.0, paths: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
    /// Omit timestamps and timings so reruns give identical files.
    pub deterministic: bool,
    pub diagnostics: bool,
    pub paths_csv: bool,
    /// Paths written to `paths.csv`.
    pub paths_csv_limit: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            deterministic: false,
            diagnostics: true,
            paths_csv: false,
            paths_csv_limit: 100,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::ConfigInvalid { field: field.into(), reason: reason.into() }
}

/// Field path of a deserialization error, extended by the missing field's
/// name when serde reports one.
fn field_path(path: String, message: &str) -> String {
    let missing = message.strip_prefix("missing field `").and_then(|rest| rest.split('`').next()).map(str::to_string);
    match (path.as_str(), missing) {
        (".", Some(m)) | ("", Some(m)) => m,
        (_, Some(m)) => format!("{path}.{m}"),
        _ => path,
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| invalid(".", e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let message = e.inner().message().to_string();
            invalid(&field_path(e.path().to_string(), &message), message)
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let message = e.inner().to_string();
            invalid(&field_path(e.path().to_string(), &message), message)
        })
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| invalid(".", format!("cannot read {}: {e}", path.display())))?;
        let cfg = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json_str(&text)?
        } else {
            Self::from_toml_str(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn spec(&self) -> Result<ProblemSpec> {
        if !BUILTINS.contains(&self.problem.name.as_str()) {
            return Err(invalid("problem.name", format!("unknown problem (built-ins: {})", BUILTINS.join(", "))));
        }
        let mut ov = self.problem.overrides.clone();
        if let Some(h) = self.grid.horizon {
            if ov.horizon.is_some_and(|o| o != h) {
                return Err(invalid("grid.horizon", "differs from problem.overrides.horizon"));
            }
            ov.horizon = Some(h);
        }
        builtin(&self.problem.name, &ov).map_err(|e| invalid("problem.overrides", e.to_string()))
    }

    pub fn featurizer(&self, spec: &ProblemSpec) -> Featurizer {
        self.solver.featurizer.unwrap_or_else(|| Featurizer::for_problem(spec))
    }

    pub fn basis(&self) -> BasisSpec {
        BasisSpec { degree: self.solver.basis_degree, bins: self.solver.basis_bins }
    }

    pub fn time_grid(&self, spec: &ProblemSpec) -> Result<TimeGrid> {
        TimeGrid::new(spec.horizon, self.grid.steps).map_err(|e| invalid("grid.steps", e.to_string()))
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            basis: self.basis(),
            ridge: self.solver.ridge,
            driver_cap: self.solver.f_cap,
            tol_hit: self.solver.tol_hit,
            refine: self.solver.refine,
            z_control_variate: self.solver.z_control_variate,
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            k_max: self.solver.k_max,
            epsilon_picard: self.solver.epsilon_picard,
            tol_mono: self.solver.tol_mono,
            engine: self.engine_config(),
            featurizer: self.solver.featurizer,
            start_spread: self.solver.start_spread,
            se_sections: self.solver.se_sections,
        }
    }

    fn sim(&self, grid: TimeGrid, paths: usize, stream: &str) -> SimConfig {
        SimConfig {
            antithetic: self.monte_carlo.antithetic,
            ..SimConfig::new(grid, paths, rng::substream(self.monte_carlo.seed, stream))
        }
    }

    /// Regression batch, on the "forward" substream.
    pub fn forward_sim(&self, grid: TimeGrid) -> SimConfig {
        self.sim(grid, self.monte_carlo.paths, "forward")
    }

    pub fn eval_paths(&self) -> usize {
        self.monte_carlo.eval_paths.unwrap_or(self.monte_carlo.paths)
    }

    /// Strategy evaluation sweep, on the "eval" substream.
    pub fn eval_sim(&self, grid: TimeGrid) -> SimConfig {
        self.sim(grid, self.eval_paths(), "eval")
    }

    /// Dual-check sweep, on the "dual" substream.
    pub fn dual_sim(&self, grid: TimeGrid) -> SimConfig {
        self.sim(grid, self.dual.paths.unwrap_or(self.eval_paths()), "dual")
    }

    /// Checks every field; the error names the first offending field path.
    pub fn validate(&self) -> Result<()> {
        let spec = self.spec()?;
        let g = &self.grid;
        if g.steps == 0 {
            return Err(invalid("grid.steps", "must be at least 1"));
        }
        if let Some(h) = g.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid("grid.horizon", "must be positive"));
            }
        }

        let s = &self.solver;
        let featurizer = self.featurizer(&spec);
        featurizer.check(spec.dim()).map_err(|e| invalid("solver.featurizer", e.to_string()))?;
        if s.basis_bins == 0 {
            return Err(invalid("solver.basis_bins", "must be at least 1"));
        }
        let positive = |field: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(invalid(field, format!("must be positive, got {x}"))),
            _ => Ok(()),
        };
        positive("solver.epsilon_picard", s.epsilon_picard)?;
        positive("solver.tol_mono", s.tol_mono)?;
        positive("solver.tol_hit", Some(s.tol_hit))?;
        positive("solver.f_cap", s.f_cap)?;
        if !(s.ridge >= 0.0 && s.ridge.is_finite()) {
            return Err(invalid("solver.ridge", "must be nonnegative"));
        }
        if let Some(h) = s.start_spread {
            if !(h >= 0.0 && h.is_finite()) {
                return Err(invalid("solver.start_spread", "must be nonnegative"));
            }
        }

        let mc = &self.monte_carlo;
        let size = self.basis().size(featurizer.dim(spec.dim()));
        if mc.paths < size {
            return Err(invalid(
                "monte_carlo.paths",
                format!("{} paths are fewer than the {size} basis coefficients", mc.paths),
            ));
        }
        if mc.antithetic && !mc.paths.is_multiple_of(2) {
            return Err(invalid("monte_carlo.paths", "antithetic sampling needs an even number of paths"));
        }
        if s.se_sections >= 2 && mc.paths / s.se_sections < size {
            return Err(invalid(
                "solver.se_sections",
                format!(
                    "{} sections of {} paths leave fewer paths than the {size} basis coefficients",
                    s.se_sections, mc.paths
                ),
            ));
        }
        if self.eval_paths() < 2 {
            return Err(invalid("monte_carlo.eval_paths", "must be at least 2"));
        }
        if mc.antithetic && !self.eval_paths().is_multiple_of(2) {
            return Err(invalid("monte_carlo.eval_paths", "antithetic sampling needs an even number of paths"));
        }

        if self.oracle.enabled {
            if self.oracle.steps == 0 {
                return Err(invalid("oracle.steps", "must be at least 1"));
            }
            if !spec.markovian || spec.dim() != 1 {
                return Err(invalid("oracle.enabled", "the tree oracle needs a one-dimensional Markovian problem"));
            }
        }

        let d = &self.dual;
        if d.enabled {
            if !(d.intensity > 0.0 && d.intensity.is_finite()) {
                return Err(invalid("dual.intensity", "must be positive"));
            }
            if let Some(p) = d.paths {
                if p < 2 || (mc.antithetic && p % 2 != 0) {
                    return Err(invalid("dual.paths", "must be at least 2 (and even with antithetic sampling)"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [problem]
        name = "cash1d"

        [grid]
        steps = 50

        [monte_carlo]
        paths = 20000
        seed = 7
    "#;

    fn field(err: Error) -> String {
        match err {
            Error::ConfigInvalid { field, .. } => field,
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.solver.k_max, 5);
        assert_eq!(c.basis(), BasisSpec::default());
        assert!(c.dual.enabled);
        assert!(!c.oracle.enabled);
        assert_eq!(c.eval_paths(), 20000);
    }

    #[test]
    fn json_and_toml_agree() {
        let t = RunConfig::from_toml_str(MINIMAL).unwrap();
        let j = RunConfig::from_json_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(t, j);
    }

    #[test]
    fn too_few_paths_names_the_field() {
        let c = RunConfig::from_toml_str(&MINIMAL.replace("paths = 20000", "paths = 10")).unwrap();
        assert_eq!(field(c.validate().unwrap_err()), "monte_carlo.paths");
    }

    #[test]
    fn ill_typed_field_has_a_path() {
        let err = RunConfig::from_toml_str(&MINIMAL.replace("steps = 50", "steps = \"many\"")).unwrap_err();
        assert_eq!(field(err), "grid.steps");
        let err =
            RunConfig::from_json_str(r#"{"problem":{"name":"cash1d"},"grid":{"steps":5},"monte_carlo":{"paths":-3}}"#)
                .unwrap_err();
        assert_eq!(field(err), "monte_carlo.paths");
    }

    #[test]
    fn missing_field_is_named() {
        let err = RunConfig::from_toml_str(&MINIMAL.replace("paths = 20000", "")).unwrap_err();
        assert_eq!(field(err), "monte_carlo.paths");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = RunConfig::from_toml_str(&format!("{MINIMAL}\n[solver]\nkmax = 3\n")).unwrap_err();
        assert!(field(err).starts_with("solver"));
    }

    #[test]
    fn nonpositive_tolerance_is_rejected() {
        let c = RunConfig::from_toml_str(&format!("{MINIMAL}\n[solver]\ntol_mono = 0.0\n")).unwrap();
        assert_eq!(field(c.validate().unwrap_err()), "solver.tol_mono");
    }

    #[test]
    fn unknown_problem_is_rejected() {
        let c = RunConfig::from_toml_str(&MINIMAL.replace("cash1d", "nope")).unwrap();
        assert_eq!(field(c.validate().unwrap_err()), "problem.name");
    }

    #[test]
    fn oracle_needs_markovian_problem() {
        let c = RunConfig::from_toml_str(&format!(
            "{}\n[oracle]\nenabled = true\n",
            MINIMAL.replace("cash1d", "pathdep1d")
        ))
        .unwrap();
        assert_eq!(field(c.validate().unwrap_err()), "oracle.enabled");
    }

    #[test]
    fn substreams_differ() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        let g = c.time_grid(&c.spec().unwrap()).unwrap();
        let seeds = [c.forward_sim(g).seed, c.eval_sim(g).seed, c.dual_sim(g).seed];
        assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2] && seeds[0] != seeds[2]);
    }
}
