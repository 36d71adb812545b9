//! Outer relax-round-refine loops and the a-priori error bound calculators.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::combinatorial::{
    cell_averages, solve_minmax_with, switch_matrix, MinMaxOptions, SwitchBudget,
};
use crate::error::{Error, Result};
use crate::evolution::{
    evaluate_cost, integrate_fixed, integrate_with, IntegratorOptions, SemilinearModel, Trajectory,
};
use crate::grid::TimeGrid;
use crate::relaxed::{solve_relaxed, RelaxedSolverOptions};
use crate::rounding::{
    accumulated_deviation, sur_round, BinaryControl, DeviationReport, RelaxedControl,
};

/// Target accuracies `eps^k`, non-increasing with limit zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum EpsSchedule {
    /// `eps^k = initial * ratio^k`
    Geometric { initial: f64, ratio: f64 },
}

impl EpsSchedule {
    /// `eps^k = initial / 2^k`, matched to bisection of the control grid.
    pub fn halving(initial: f64) -> Self {
        EpsSchedule::Geometric {
            initial,
            ratio: 0.5,
        }
    }

    pub fn at(&self, k: usize) -> f64 {
        match *self {
            EpsSchedule::Geometric { initial, ratio } => initial * ratio.powi(k as i32),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            EpsSchedule::Geometric { initial, ratio } => {
                if !(initial > 0.0) || !initial.is_finite() || !(ratio > 0.0 && ratio < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "schedule needs initial > 0 and ratio in (0, 1), got {initial} and {ratio}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundingMode {
    Sur,
    Minmax,
}

#[derive(Debug, Clone)]
pub struct AlgorithmConfig {
    /// Overall termination tolerance.
    pub epsilon: f64,
    pub eps_schedule: EpsSchedule,
    pub initial_grid: TimeGrid,
    /// Index of the last outer iteration allowed.
    pub k_max: usize,
    pub mode: RoundingMode,
    pub budgets: Option<SwitchBudget>,
    pub solver: RelaxedSolverOptions,
    pub integrator: IntegratorOptions,
    pub minmax: MinMaxOptions,
    /// Start each refinement from the previous relaxed solution.
    pub warm_start: bool,
    /// Ordinary controls of the cold start, clamped into the box.
    pub initial_omega: Option<Vec<f64>>,
}

impl AlgorithmConfig {
    pub fn new(initial_grid: TimeGrid, epsilon: f64, eps0: f64, k_max: usize) -> Self {
        Self {
            epsilon,
            eps_schedule: EpsSchedule::halving(eps0),
            initial_grid,
            k_max,
            mode: RoundingMode::Sur,
            budgets: None,
            solver: RelaxedSolverOptions::default(),
            integrator: IntegratorOptions::default(),
            minmax: MinMaxOptions::default(),
            warm_start: true,
            initial_omega: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        self.eps_schedule.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TermReason {
    /// Relaxed multipliers already binary.
    #[serde(rename = "step4")]
    Step4,
    /// Cost gap and accuracy below tolerance.
    #[serde(rename = "step7")]
    Step7,
    #[serde(rename = "step4'")]
    Step4Prime,
    /// Min-max objective stagnated or iteration limit reached.
    #[serde(rename = "step7'")]
    Step7Prime,
    #[serde(rename = "cap")]
    Cap,
}

impl TermReason {
    pub fn label(&self) -> &'static str {
        match self {
            TermReason::Step4 => "step4",
            TermReason::Step7 => "step7",
            TermReason::Step4Prime => "step4'",
            TermReason::Step7Prime => "step7'",
            TermReason::Cap => "cap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub k: usize,
    pub dt_max: f64,
    /// Scheduled target accuracy.
    pub eps_target: f64,
    /// Achieved accuracy: KKT residual plus trajectory accuracy.
    pub eps_k: f64,
    pub kkt_residual: f64,
    pub relaxed_iterations: usize,
    pub relaxed_stalled: bool,
    pub substeps: usize,
    pub j_rel: f64,
    pub j_int: f64,
    pub deviation: DeviationReport,
    pub switch_counts: Vec<Vec<usize>>,
    pub j_sub: Option<f64>,
    pub minmax_optimal: Option<bool>,
    /// Set on the record of the terminating iteration.
    pub term_reason: Option<TermReason>,
}

#[derive(Debug, Clone)]
pub struct MixedIntegerSolution {
    pub k: usize,
    pub omega: Vec<Vec<f64>>,
    pub beta: BinaryControl,
    pub trajectory: Trajectory,
    pub cost: f64,
    /// Relaxed iterate of the same outer iteration.
    pub relaxed: RelaxedControl,
    pub relaxed_trajectory: Trajectory,
    pub relaxed_cost: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub solution: MixedIntegerSolution,
    pub history: Vec<RunRecord>,
    pub reason: TermReason,
}

/// A failure inside the loop, with the iterations completed before it.
#[derive(Debug, Error)]
#[error("outer iteration {} failed: {source}", history.len())]
pub struct RunFailure {
    #[source]
    pub source: Error,
    pub history: Vec<RunRecord>,
}

impl From<Error> for RunFailure {
    fn from(source: Error) -> Self {
        Self {
            source,
            history: Vec::new(),
        }
    }
}

/// Relax, round by sum-up rounding, integrate, compare, refine by bisection.
pub fn run_algorithm1(
    model: &dyn SemilinearModel,
    config: &AlgorithmConfig,
) -> std::result::Result<RunOutcome, RunFailure> {
    if config.mode != RoundingMode::Sur {
        return Err(Error::InvalidConfig("sum-up rounding loop needs mode = sur".into()).into());
    }
    run_loop(model, config)
}

/// As [`run_algorithm1`] but rounding by the budget-constrained min-max
/// problem on cell averages; stops when the min-max objective stagnates or
/// at `k_max`.
pub fn run_algorithm2(
    model: &dyn SemilinearModel,
    config: &AlgorithmConfig,
) -> std::result::Result<RunOutcome, RunFailure> {
    if config.mode != RoundingMode::Minmax {
        return Err(
            Error::InvalidConfig("min-max rounding loop needs mode = minmax".into()).into(),
        );
    }
    if config.budgets.is_none() {
        return Err(Error::InvalidConfig("min-max rounding needs switch budgets".into()).into());
    }
    run_loop(model, config)
}

/// Dispatches on `config.mode`.
pub fn run(
    model: &dyn SemilinearModel,
    config: &AlgorithmConfig,
) -> std::result::Result<RunOutcome, RunFailure> {
    match config.mode {
        RoundingMode::Sur => run_algorithm1(model, config),
        RoundingMode::Minmax => run_algorithm2(model, config),
    }
}

fn cold_start(
    model: &dyn SemilinearModel,
    grid: &TimeGrid,
    config: &AlgorithmConfig,
) -> Result<RelaxedControl> {
    let bounds = model.control_bounds();
    let omega: Vec<f64> = match &config.initial_omega {
        Some(u) if u.len() == bounds.len() => u.clone(),
        Some(u) => {
            return Err(Error::InvalidConfig(format!(
                "initial_omega has {} entries, model has {} controls",
                u.len(),
                bounds.len()
            )))
        }
        None => vec![0.0; bounds.len()],
    };
    let omega: Vec<f64> = omega
        .iter()
        .zip(bounds)
        .map(|(u, &(lo, hi))| u.clamp(lo, hi))
        .collect();
    RelaxedControl::uniform(grid.clone(), model.n_modes(), &omega)
}

fn run_loop(
    model: &dyn SemilinearModel,
    config: &AlgorithmConfig,
) -> std::result::Result<RunOutcome, RunFailure> {
    config.validate()?;
    if (config.initial_grid.t_final() - model.t_final()).abs() > 1e-12 * model.t_final() {
        return Err(Error::InvalidConfig(format!(
            "grid ends at {} but the model horizon is {}",
            config.initial_grid.t_final(),
            model.t_final()
        ))
        .into());
    }
    let minmax = config.mode == RoundingMode::Minmax;
    let mut history: Vec<RunRecord> = Vec::new();
    let mut best: Option<MixedIntegerSolution> = None;
    let mut grid = config.initial_grid.clone();
    let mut start = cold_start(model, &grid, config)?;
    let mut prev_j_sub: Option<f64> = None;

    let mut k = 0;
    loop {
        let step = (|| -> Result<(RunRecord, MixedIntegerSolution, Option<TermReason>, RelaxedControl)> {
            let target = config.eps_schedule.at(k);
            let probe = integrate_with(
                model,
                start.omega(),
                start.alpha(),
                &grid,
                target,
                &config.integrator,
            )?;
            let solver = RelaxedSolverOptions {
                substeps: probe.substeps,
                ..config.solver.clone()
            };
            let relaxed = solve_relaxed(model, &start, &solver)?;
            let control = relaxed.control.clone();

            let check_opts = IntegratorOptions {
                initial_substeps: (probe.substeps / 2).max(1),
                ..config.integrator.clone()
            };
            let rel_traj = integrate_with(model, control.omega(), control.alpha(), &grid, target, &check_opts)?;
            let rel_accuracy = rel_traj.accuracy;

            let binary = control.is_binary();
            let beta_candidate = if binary {
                Some(BinaryControl::from_one_hot(&grid, control.alpha())?)
            } else {
                None
            };
            let early_ok = |eps_k: f64| match (&beta_candidate, minmax) {
                (Some(b), true) => eps_k <= config.epsilon && config.budgets.as_ref().unwrap().admits(b),
                (Some(_), false) => eps_k <= config.epsilon,
                (None, _) => false,
            };

            let (beta, j_sub, optimal) = if early_ok(relaxed.kkt_residual + rel_accuracy) {
                (beta_candidate.clone().unwrap(), None, None)
            } else if minmax {
                let q = cell_averages(&control);
                let sol = solve_minmax_with(&q, &grid, config.budgets.as_ref().unwrap(), &config.minmax)?;
                (sol.p, Some(sol.objective), Some(sol.optimal))
            } else {
                (sur_round(&control), None, None)
            };
            let early = j_sub.is_none() && beta_candidate.as_ref() == Some(&beta) && early_ok(relaxed.kkt_residual + rel_accuracy);

            let int_opts = IntegratorOptions {
                initial_substeps: (rel_traj.substeps / 2).max(1),
                ..config.integrator.clone()
            };
            let int_traj = if early {
                rel_traj.clone()
            } else {
                integrate_with(model, control.omega(), &beta.rows(), &grid, target, &int_opts)?
            };
            // Report both costs on the finer of the two integration grids.
            let rel_traj = if int_traj.substeps > rel_traj.substeps {
                let mut t = integrate_fixed(model, control.omega(), control.alpha(), &grid, int_traj.substeps)?;
                t.accuracy = rel_accuracy;
                t
            } else {
                rel_traj
            };
            let j_rel = evaluate_cost(model, &rel_traj, control.omega())?;
            let j_int = evaluate_cost(model, &int_traj, control.omega())?;
            let eps_k = relaxed.kkt_residual + rel_accuracy.max(int_traj.accuracy);

            let reason = if early {
                Some(if minmax { TermReason::Step4Prime } else { TermReason::Step4 })
            } else if minmax {
                let stagnated = prev_j_sub.is_some_and(|p| (j_sub.unwrap() - p).abs() < config.epsilon);
                if stagnated {
                    Some(TermReason::Step7Prime)
                } else if k >= config.k_max {
                    Some(TermReason::Cap)
                } else {
                    None
                }
            } else if (j_rel - j_int).abs() <= config.epsilon / 2.0 && eps_k <= config.epsilon / 2.0 {
                Some(TermReason::Step7)
            } else if k >= config.k_max {
                Some(TermReason::Cap)
            } else {
                None
            };

            let record = RunRecord {
                k,
                dt_max: grid.dt_max(),
                eps_target: target,
                eps_k,
                kkt_residual: relaxed.kkt_residual,
                relaxed_iterations: relaxed.iterations,
                relaxed_stalled: relaxed.stalled,
                substeps: int_traj.substeps,
                j_rel,
                j_int,
                deviation: accumulated_deviation(&control, &beta)?,
                switch_counts: switch_matrix(&beta),
                j_sub,
                minmax_optimal: optimal,
                term_reason: reason,
            };
            let solution = MixedIntegerSolution {
                k,
                omega: control.omega().to_vec(),
                beta,
                trajectory: int_traj,
                cost: j_int,
                relaxed: control.clone(),
                relaxed_trajectory: rel_traj,
                relaxed_cost: j_rel,
            };
            Ok((record, solution, reason, control))
        })();

        let (record, solution, reason, control) = match step {
            Ok(v) => v,
            Err(source) => return Err(RunFailure { source, history }),
        };
        prev_j_sub = record.j_sub;
        history.push(record);
        if best.as_ref().is_none_or(|b| solution.cost < b.cost) {
            best = Some(solution.clone());
        }
        if let Some(reason) = reason {
            let solution = if reason == TermReason::Cap {
                best.expect("at least one iteration")
            } else {
                solution
            };
            return Ok(RunOutcome {
                solution,
                history,
                reason,
            });
        }
        let finer = grid.refine_bisect();
        start = if config.warm_start {
            match control.inject(&finer) {
                Ok(c) => c,
                Err(source) => return Err(RunFailure { source, history }),
            }
        } else {
            match cold_start(model, &finer, config) {
                Ok(c) => c,
                Err(source) => return Err(RunFailure { source, history }),
            }
        };
        grid = finer;
        k += 1;
    }
}

/// `|J_rel^K - J^k| / |J_rel^K|` against the last relaxed cost.
pub fn relative_errors(history: &[RunRecord]) -> Vec<f64> {
    let Some(last) = history.last() else {
        return Vec::new();
    };
    let reference = last.j_rel;
    history
        .iter()
        .map(|r| (reference - r.j_int).abs() / reference.abs())
        .collect()
}

/// History table `k,dt_max,eps_k,J_rel,J_int,rel_error,term_reason`.
pub fn write_history_csv<W: Write>(history: &[RunRecord], w: W) -> Result<()> {
    let rel = relative_errors(history);
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "k",
        "dt_max",
        "eps_k",
        "J_rel",
        "J_int",
        "rel_error",
        "term_reason",
    ])?;
    for (r, e) in history.iter().zip(rel) {
        out.write_record([
            r.k.to_string(),
            r.dt_max.to_string(),
            r.eps_k.to_string(),
            r.j_rel.to_string(),
            r.j_int.to_string(),
            e.to_string(),
            r.term_reason.map_or("refine", |t| t.label()).to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<history csv>", e))?;
    Ok(())
}

/// Constants of the a-priori estimates. `m_modes` and `c_modes` hold the
/// per-mode sup-norm and derivative bounds; `m_bar` bounds the semigroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateConstants {
    /// Lipschitz constant of the terminal cost.
    pub eta: f64,
    /// Lipschitz constant of the running cost.
    pub xi: f64,
    /// Lipschitz constant of the mode right-hand sides.
    pub lipschitz: f64,
    pub m_modes: Vec<f64>,
    pub c_modes: Vec<f64>,
    /// Stability constant of the relaxed optimum.
    pub c_j: f64,
    pub m_bar: f64,
    pub t_final: f64,
}

impl EstimateConstants {
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            self.eta,
            self.xi,
            self.lipschitz,
            self.c_j,
            self.m_bar,
            self.t_final,
        ];
        if scalars
            .iter()
            .chain(&self.m_modes)
            .chain(&self.c_modes)
            .any(|&x| !(x >= 0.0) || !x.is_finite())
        {
            return Err(Error::InvalidConfig(
                "estimate constants must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn m_total(&self) -> f64 {
        self.m_modes.iter().sum()
    }

    pub fn c_total(&self) -> f64 {
        self.c_modes.iter().sum()
    }

    fn growth(&self) -> f64 {
        (self.t_final * self.m_bar * self.lipschitz).exp()
    }

    /// `C_J (M + 1)(1 + eta + xi) e^{t_f Mbar L} + 1`
    pub fn c1(&self) -> f64 {
        self.c_j * (self.m_total() + 1.0) * (1.0 + self.eta + self.xi) * self.growth() + 1.0
    }

    /// `(M + t_f C) e^{t_f Mbar L}`
    pub fn c2(&self) -> f64 {
        (self.m_total() + self.t_final * self.c_total()) * self.growth()
    }

    /// `(eta + t_f xi) C1 + t_f xi C_J`
    pub fn c3(&self) -> f64 {
        (self.eta + self.t_final * self.xi) * self.c1() + self.t_final * self.xi * self.c_j
    }

    /// `(eta + t_f xi) C2`
    pub fn c4(&self) -> f64 {
        (self.eta + self.t_final * self.xi) * self.c2()
    }
}

/// `(C1 eps + C2 (N-1) dt, C3 eps + C4 (N-1) dt)`: bounds on the state and
/// cost deviation of the sum-up-rounded solution.
pub fn sur_error_bounds(
    c: &EstimateConstants,
    eps_k: f64,
    dt_k: f64,
    n_modes: usize,
) -> (f64, f64) {
    let r = (n_modes as f64 - 1.0) * dt_k;
    (c.c1() * eps_k + c.c2() * r, c.c3() * eps_k + c.c4() * r)
}

/// Same bounds with `(N-1) dt` replaced by `J_sub + dt_max`; `dt_max`
/// stands in for the unobservable `0 <= delta <= dt_max`.
pub fn minmax_error_bounds(
    c: &EstimateConstants,
    eps_k: f64,
    j_sub: f64,
    dt_max: f64,
) -> (f64, f64) {
    let r = j_sub + dt_max;
    (c.c1() * eps_k + c.c2() * r, c.c3() * eps_k + c.c4() * r)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRegularity {
    pub holds: bool,
    /// `sup ||A_h g_i(t)||` per mode.
    pub l_bar: Vec<f64>,
    /// `sup ||d g_i / dt||` per mode, inside cells.
    pub c_bar: Vec<f64>,
    /// `Mbar (c_bar + l_bar)`, usable as the derivative bounds `C_i`.
    pub c: Vec<f64>,
}

/// For models whose modes are state-independent profiles
/// `g_i(t) = f_i(t, omega(t))`, estimates the derivative constants from the
/// operator applied to the profiles and their time derivative within cells.
pub fn profile_regularity_constants(
    model: &dyn SemilinearModel,
    control: &RelaxedControl,
    m_bar: f64,
) -> Result<ProfileRegularity> {
    if !model.modes_state_independent() {
        return Err(Error::InvalidModel(format!(
            "modes of '{}' depend on the state; profile-based constants do not apply",
            model.name()
        )));
    }
    let dim = model.dim();
    let zero = vec![0.0; dim];
    let grid = control.grid();
    let n_modes = model.n_modes();
    let mut l_bar = vec![0.0f64; n_modes];
    let mut c_bar = vec![0.0f64; n_modes];
    let mut g = vec![0.0; dim];
    let mut g_lo = vec![0.0; dim];
    let mut g_hi = vec![0.0; dim];
    for j in 0..grid.n_cells() {
        let (a, b) = grid.cell(j);
        let mid = 0.5 * (a + b);
        let delta = 1e-3 * (b - a);
        let u = &control.omega()[j];
        for i in 0..n_modes {
            for buf in [&mut g, &mut g_lo, &mut g_hi] {
                buf.iter_mut().for_each(|x| *x = 0.0);
            }
            model.add_mode_rhs(i, mid, &zero, u, 1.0, &mut g);
            model.add_mode_rhs(i, mid - delta, &zero, u, 1.0, &mut g_lo);
            model.add_mode_rhs(i, mid + delta, &zero, u, 1.0, &mut g_hi);
            let ag = model.linear_op().apply(&g);
            l_bar[i] = l_bar[i].max(model.state_norm(&ag));
            let dg: Vec<f64> = g_hi
                .iter()
                .zip(&g_lo)
                .map(|(h, l)| (h - l) / (2.0 * delta))
                .collect();
            c_bar[i] = c_bar[i].max(model.state_norm(&dg));
        }
    }
    let c: Vec<f64> = l_bar
        .iter()
        .zip(&c_bar)
        .map(|(l, d)| m_bar * (l + d))
        .collect();
    let holds = c.iter().all(|x| x.is_finite());
    Ok(ProfileRegularity {
        holds,
        l_bar,
        c_bar,
        c,
    })
}
