//! Declarative experiment configuration, the built-in presets and the run
//! artifacts (history, controls, state norms, manifest).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::combinatorial::{MinMaxOptions, SwitchBudget};
use crate::driver::{
    self, relative_errors, write_history_csv, AlgorithmConfig, EpsSchedule, RoundingMode,
    RunFailure, RunOutcome, RunRecord,
};
use crate::error::{Error, Result};
use crate::evolution::{
    build_heat2d, build_lotka_volterra, build_scalar, state_norms, HeatParams, IntegratorOptions,
    LotkaVolterraParams, ScalarParams, SemilinearModel,
};
use crate::grid::TimeGrid;
use crate::relaxed::{MultiplierForm, RelaxedSolverOptions};
use crate::rounding::ControlTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Heat2d,
    LotkaVolterra,
    /// Scalar affine family from the `[custom]` section.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmSection {
    pub epsilon: f64,
    /// First target accuracy of the schedule `eps0 * ratio^k`.
    pub eps0: f64,
    pub eps_ratio: f64,
    /// Uniform cells of the initial control grid; ignored when `grid` is set.
    pub cells: usize,
    /// Explicit initial grid nodes.
    pub grid: Option<Vec<f64>>,
    pub k_max: usize,
    pub mode: RoundingMode,
    /// `[from, to, max_switches]` with 1-based mode indices.
    pub budgets: Vec<[u32; 3]>,
    pub warm_start: bool,
    pub initial_omega: Option<Vec<f64>>,
}

impl Default for AlgorithmSection {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            eps0: 1e-3,
            eps_ratio: 0.5,
            cells: 8,
            grid: None,
            k_max: 2,
            mode: RoundingMode::Sur,
            budgets: Vec::new(),
            warm_start: true,
            initial_omega: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol_kkt: f64,
    pub max_iters: usize,
    pub armijo_c: f64,
    pub max_backtracks: usize,
    /// Eliminate the last multiplier as `1 - sum` of the others.
    pub eliminate_last: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = RelaxedSolverOptions::default();
        Self {
            tol_kkt: d.tol_kkt,
            max_iters: d.max_iters,
            armijo_c: d.armijo_c,
            max_backtracks: d.max_backtracks,
            eliminate_last: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    pub initial_substeps: usize,
    pub max_substeps: usize,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        let d = IntegratorOptions::default();
        Self {
            initial_substeps: d.initial_substeps,
            max_substeps: d.max_substeps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinMaxSection {
    pub max_nodes: u64,
    /// Wall-clock limit per min-max solve; 0 disables it.
    pub time_limit_secs: f64,
}

impl Default for MinMaxSection {
    fn default() -> Self {
        Self {
            max_nodes: 20_000_000,
            time_limit_secs: 120.0,
        }
    }
}

/// Everything needed to reproduce one run. Parsed from TOML; every section
/// except `[model]` is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub model: ModelSection,
    #[serde(default)]
    pub heat2d: HeatParams,
    #[serde(default)]
    pub lotka_volterra: LotkaVolterraParams,
    #[serde(default)]
    pub custom: ScalarParams,
    #[serde(default)]
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub minmax: MinMaxSection,
}

impl ExperimentConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            seed: 0,
            out: None,
            model: ModelSection { kind },
            heat2d: HeatParams::default(),
            lotka_volterra: LotkaVolterraParams::default(),
            custom: ScalarParams::default(),
            algorithm: AlgorithmSection::default(),
            solver: SolverSection::default(),
            integrator: IntegratorSection::default(),
            minmax: MinMaxSection::default(),
        }
    }

    /// Built-in configurations `heat` and `lotka`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "heat" => {
                let mut c = Self::new(ModelKind::Heat2d);
                c.algorithm.eps0 = 1.0;
                c.algorithm.epsilon = 1.0;
                c.solver.max_iters = 300;
                c.solver.eliminate_last = true;
                Ok(c)
            }
            "lotka" => {
                let mut c = Self::new(ModelKind::LotkaVolterra);
                c.algorithm.eps0 = 1e-2;
                c.algorithm.epsilon = 1e-2;
                Ok(c)
            }
            other => Err(Error::InvalidConfig(format!(
                "unknown preset '{other}' (expected heat or lotka)"
            ))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() as u64 + 1)
                .unwrap_or(0);
            Error::Parse {
                context: "experiment config".into(),
                line,
                message: e.message().to_string(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn t_final(&self) -> f64 {
        match self.model.kind {
            ModelKind::Heat2d => self.heat2d.t_final,
            ModelKind::LotkaVolterra => self.lotka_volterra.t_final,
            ModelKind::Custom => self.custom.t_final,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t_f = self.t_final();
        if !(t_f > 0.0) || !t_f.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "t_final must be positive, got {t_f}"
            )));
        }
        let a = &self.algorithm;
        if !(a.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                a.epsilon
            )));
        }
        if a.grid.is_none() && a.cells == 0 {
            return Err(Error::InvalidConfig(
                "initial grid needs at least one cell".into(),
            ));
        }
        if a.mode == RoundingMode::Minmax && a.budgets.is_empty() {
            return Err(Error::InvalidConfig(
                "mode = minmax needs at least one budget".into(),
            ));
        }
        for b in &a.budgets {
            if b[0] == 0 || b[1] == 0 {
                return Err(Error::InvalidConfig(format!(
                    "budget {b:?}: modes are numbered from 1"
                )));
            }
            if b[0] == b[1] {
                return Err(Error::InvalidConfig(format!(
                    "budget {b:?}: from and to must differ"
                )));
            }
        }
        if self.solver.max_iters == 0 || self.integrator.initial_substeps == 0 {
            return Err(Error::InvalidConfig(
                "max_iters and initial_substeps must be positive".into(),
            ));
        }
        self.algorithm_config().map(|_| ())
    }

    pub fn build_model(&self) -> Result<Box<dyn SemilinearModel>> {
        Ok(match self.model.kind {
            ModelKind::Heat2d => Box::new(build_heat2d(self.heat2d.clone())?),
            ModelKind::LotkaVolterra => {
                Box::new(build_lotka_volterra(self.lotka_volterra.clone())?)
            }
            ModelKind::Custom => Box::new(build_scalar(self.custom.clone())?),
        })
    }

    pub fn budget(&self) -> Result<Option<SwitchBudget>> {
        if self.algorithm.budgets.is_empty() {
            return Ok(None);
        }
        let mut budget = SwitchBudget::new();
        for &[from, to, k] in &self.algorithm.budgets {
            budget.set(from as usize - 1, to as usize - 1, k)?;
        }
        Ok(Some(budget))
    }

    pub fn algorithm_config(&self) -> Result<AlgorithmConfig> {
        let a = &self.algorithm;
        let grid = match &a.grid {
            Some(nodes) => TimeGrid::new(nodes.clone())?,
            None => TimeGrid::uniform(self.t_final(), a.cells)?,
        };
        let mut config = AlgorithmConfig::new(grid, a.epsilon, a.eps0, a.k_max);
        config.eps_schedule = EpsSchedule::Geometric {
            initial: a.eps0,
            ratio: a.eps_ratio,
        };
        config.mode = a.mode;
        config.budgets = self.budget()?;
        config.warm_start = a.warm_start;
        config.initial_omega = a.initial_omega.clone();
        config.solver = RelaxedSolverOptions {
            tol_kkt: self.solver.tol_kkt,
            max_iters: self.solver.max_iters,
            armijo_c: self.solver.armijo_c,
            max_backtracks: self.solver.max_backtracks,
            form: if self.solver.eliminate_last {
                MultiplierForm::Eliminated
            } else {
                MultiplierForm::Simplex
            },
            ..RelaxedSolverOptions::default()
        };
        config.integrator = IntegratorOptions {
            initial_substeps: self.integrator.initial_substeps,
            max_substeps: self.integrator.max_substeps,
        };
        config.minmax = MinMaxOptions {
            max_nodes: self.minmax.max_nodes,
            time_limit: (self.minmax.time_limit_secs > 0.0)
                .then(|| Duration::from_secs_f64(self.minmax.time_limit_secs)),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Files written by [`run_experiment`].
#[derive(Debug, Clone, Serialize)]
pub struct ArtifactPaths {
    pub history: PathBuf,
    pub controls: PathBuf,
    pub relaxed_controls: PathBuf,
    pub state_norm: PathBuf,
    pub manifest: PathBuf,
}

impl ArtifactPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            history: dir.join("history.csv"),
            controls: dir.join("controls.csv"),
            relaxed_controls: dir.join("relaxed_controls.csv"),
            state_norm: dir.join("state_norm.csv"),
            manifest: dir.join("manifest.json"),
        }
    }
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub outcome: RunOutcome,
    pub paths: ArtifactPaths,
    pub elapsed: Duration,
}

/// Runs the configured loop and writes the artifacts into `out_dir`. On a
/// driver failure the partial history and a manifest carrying the error
/// are still written before the error is returned.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    config.validate()?;
    let model = config.build_model()?;
    let algorithm = config.algorithm_config()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let paths = ArtifactPaths::in_dir(out_dir);
    let started = Instant::now();
    match driver::run(model.as_ref(), &algorithm) {
        Ok(outcome) => {
            let elapsed = started.elapsed();
            write_artifacts(config, model.as_ref(), &outcome, &paths, elapsed)?;
            Ok(ExperimentReport {
                outcome,
                paths,
                elapsed,
            })
        }
        Err(RunFailure { source, history }) => {
            write_history(&history, &paths.history)?;
            let manifest = manifest(
                config,
                model.as_ref(),
                &history,
                None,
                started.elapsed(),
                Some(&source),
            );
            write_json(&manifest, &paths.manifest)?;
            Err(source)
        }
    }
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn write_history(history: &[RunRecord], path: &Path) -> Result<()> {
    write_history_csv(history, create(path)?)
}

fn write_json(value: &serde_json::Value, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_artifacts(
    config: &ExperimentConfig,
    model: &dyn SemilinearModel,
    outcome: &RunOutcome,
    paths: &ArtifactPaths,
    elapsed: Duration,
) -> Result<()> {
    let sol = &outcome.solution;
    write_history(&outcome.history, &paths.history)?;
    ControlTable::from_binary(&sol.beta, &sol.omega).write_csv(create(&paths.controls)?)?;
    ControlTable::from_relaxed(&sol.relaxed).write_csv(create(&paths.relaxed_controls)?)?;

    let mut w = csv::Writer::from_writer(create(&paths.state_norm)?);
    w.write_record(["t", "norm"])?;
    for (t, n) in state_norms(model, &sol.trajectory) {
        w.write_record([t.to_string(), n.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&paths.state_norm, e))?;

    let manifest = manifest(
        config,
        model,
        &outcome.history,
        Some(outcome),
        elapsed,
        None,
    );
    write_json(&manifest, &paths.manifest)
}

fn manifest(
    config: &ExperimentConfig,
    model: &dyn SemilinearModel,
    history: &[RunRecord],
    outcome: Option<&RunOutcome>,
    elapsed: Duration,
    error: Option<&Error>,
) -> serde_json::Value {
    serde_json::json!({
        "package": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": config.seed,
        "config": config,
        "model": model.metadata(),
        "state_dim": model.dim(),
        "termination": outcome.map(|o| o.reason.label()),
        "returned_iteration": outcome.map(|o| o.solution.k),
        "returned_cost": outcome.map(|o| o.solution.cost),
        "rel_error": relative_errors(history),
        "history": history,
        "elapsed_secs": elapsed.as_secs_f64(),
        "error": error.map(|e| e.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for name in ["heat", "lotka"] {
            let c = ExperimentConfig::preset(name).unwrap();
            c.validate().unwrap();
            let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
            assert_eq!(back.algorithm, c.algorithm);
            assert_eq!(back.model, c.model);
        }
        assert!(ExperimentConfig::preset("wave").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ExperimentConfig::from_toml_str(
            "[model]\nkind = \"heat2d\"\n[algorithm]\nepsilonn = 1.0\n",
        )
        .unwrap_err();
        assert!(matches!(e, Error::Parse { line: 4, .. }), "{e}");
    }

    #[test]
    fn zero_horizon_is_rejected_at_parse_time() {
        let e = ExperimentConfig::from_toml_str(
            "[model]\nkind = \"lotka_volterra\"\n[lotka_volterra]\nt_final = 0.0\n",
        )
        .unwrap_err();
        assert!(e.is_validation());
    }

    #[test]
    fn budgets_are_one_based() {
        let c = ExperimentConfig::from_toml_str(
            "[model]\nkind = \"lotka_volterra\"\n[algorithm]\nmode = \"minmax\"\nbudgets = [[1, 2, 2], [2, 1, 3]]\n",
        )
        .unwrap();
        let b = c.budget().unwrap().unwrap();
        assert_eq!(b.get(0, 1), Some(2));
        assert_eq!(b.get(1, 0), Some(3));
        assert!(ExperimentConfig::from_toml_str(
            "[model]\nkind = \"lotka_volterra\"\n[algorithm]\nbudgets = [[0, 1, 2]]\n"
        )
        .is_err());
        assert!(ExperimentConfig::from_toml_str(
            "[model]\nkind = \"heat2d\"\n[algorithm]\nmode = \"minmax\"\n"
        )
        .is_err());
    }
}
