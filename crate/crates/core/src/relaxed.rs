//! Direct method for the convexified problem: piecewise constant `(omega,
//! alpha)` on the control grid, exact discrete-adjoint gradients of the
//! time-stepping scheme, and projected gradient descent with Armijo
//! backtracking on the product of boxes and simplices.

use crate::error::{Error, Result};
use crate::evolution::{
    evaluate_cost, run_fixed, validate_inputs, SemilinearModel, Stepper, Trajectory, THETA,
};
use crate::grid::TimeGrid;
use crate::rounding::RelaxedControl;

/// Euclidean projection onto `{x >= 0, sum x = 1}` by sorting.
pub fn simplex_project(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Projection onto `{x >= 0, sum x <= 1}`.
fn solid_simplex_project(v: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    if clamped.iter().sum::<f64>() <= 1.0 {
        clamped
    } else {
        simplex_project(v)
    }
}

/// Derivatives of the discrete objective with respect to every cell value.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGradient {
    pub omega: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
}

impl ControlGradient {
    pub fn flatten(&self) -> Vec<f64> {
        self.omega
            .iter()
            .zip(&self.alpha)
            .flat_map(|(o, a)| o.iter().chain(a.iter()).copied())
            .collect()
    }
}

/// Objective of the fully discretized problem for raw cell values; the
/// multipliers are not checked against the simplex.
pub fn discrete_objective(
    model: &dyn SemilinearModel,
    grid: &TimeGrid,
    omega: &[Vec<f64>],
    alpha: &[Vec<f64>],
    substeps: usize,
) -> Result<f64> {
    let mut stepper = Stepper::new(model);
    let traj = run_fixed(&mut stepper, omega, alpha, grid, substeps)?;
    evaluate_cost(model, &traj, omega)
}

/// Gradient of [`discrete_objective`] by the exact adjoint of the IMEX
/// recursion, swept backward over the stored forward states.
pub fn adjoint_gradient(
    model: &dyn SemilinearModel,
    control: &RelaxedControl,
    substeps: usize,
) -> Result<(f64, ControlGradient, Trajectory)> {
    validate_inputs(model, control.omega(), control.alpha(), control.grid())?;
    let mut stepper = Stepper::new(model);
    let traj = run_fixed(
        &mut stepper,
        control.omega(),
        control.alpha(),
        control.grid(),
        substeps,
    )?;
    let j = evaluate_cost(model, &traj, control.omega())?;
    let grad = adjoint_sweep(&mut stepper, control.omega(), control.alpha(), &traj)?;
    Ok((j, grad, traj))
}

fn adjoint_sweep(
    stepper: &mut Stepper<'_>,
    omega: &[Vec<f64>],
    alpha: &[Vec<f64>],
    traj: &Trajectory,
) -> Result<ControlGradient> {
    let model = stepper.model;
    let dim = model.dim();
    let m = model.n_controls();
    let n_modes = model.n_modes();
    let n_cells = traj.grid.n_cells();
    let mut g_omega = vec![vec![0.0; m]; n_cells];
    let mut g_alpha = vec![vec![0.0; n_modes]; n_cells];

    let steps = traj.n_intervals();
    let h_of = |s: usize| traj.times[s + 1] - traj.times[s];
    let mut sink = vec![0.0; m];
    let mut zsink = vec![0.0; dim];

    // w = dJ/dz_{s+1} collecting every term except the constraint of step s.
    let mut w = vec![0.0; dim];
    let last = steps - 1;
    model.add_terminal_cost_grad(&traj.states[steps], 1.0, &mut w);
    model.add_running_cost_grad(
        &traj.states[steps],
        &omega[traj.cell_of_interval(last)],
        0.5 * h_of(last),
        &mut w,
        &mut sink,
    );
    let mut mu = vec![0.0; dim];
    let mut nu = vec![0.0; dim];
    let mut lam = vec![0.0; dim];
    let mut y = vec![0.0; dim];
    let mut scratch = vec![0.0; dim];
    let mut f_buf = vec![0.0; dim];
    for s in (0..steps).rev() {
        let c = traj.cell_of_interval(s);
        let h = h_of(s);
        let t = traj.times[s];
        let (z, z_next) = (&traj.states[s], &traj.states[s + 1]);
        let u = &omega[c];
        let a = &alpha[c];
        stepper.predict(t, h, z, u, a, &mut y, &mut scratch)?;

        // corrector, then predictor
        mu.copy_from_slice(&w);
        stepper.factor(h)?.solve_transpose(&mut mu);
        let du = &mut g_omega[c];
        nu.iter_mut().for_each(|x| *x = 0.0);
        for (i, &ai) in a.iter().enumerate() {
            if ai != 0.0 {
                model.add_mode_vjp(i, t + h, &y, u, &mu, 0.5 * h * ai, &mut nu, du);
            }
        }
        stepper.factor(h)?.solve_transpose(&mut nu);
        for k in 0..dim {
            lam[k] = 0.5 * h * mu[k] + h * nu[k];
        }

        model.add_running_cost_grad(z, u, 0.5 * h, &mut zsink, du);
        model.add_running_cost_grad(z_next, u, 0.5 * h, &mut zsink, du);
        for i in 0..n_modes {
            f_buf.iter_mut().for_each(|x| *x = 0.0);
            model.add_mode_rhs(i, t, z, u, 1.0, &mut f_buf);
            let mut g = crate::numeric::dot(&lam, &f_buf);
            f_buf.iter_mut().for_each(|x| *x = 0.0);
            model.add_mode_rhs(i, t + h, &y, u, 1.0, &mut f_buf);
            g += 0.5 * h * crate::numeric::dot(&mu, &f_buf);
            g_alpha[c][i] += g;
        }

        // w <- Q^T (mu + nu) + J_F(z)^T lam + psi terms at z_s
        for k in 0..dim {
            nu[k] += mu[k];
        }
        model.linear_op().mul_vec_transpose(&nu, &mut scratch);
        for k in 0..dim {
            w[k] = nu[k] + (1.0 - THETA) * h * scratch[k];
        }
        for (i, &ai) in a.iter().enumerate() {
            if ai != 0.0 {
                model.add_mode_vjp(i, t, z, u, &lam, ai, &mut w, du);
            }
        }
        if s > 0 {
            model.add_running_cost_grad(z, u, 0.5 * h, &mut w, &mut sink);
            let prev = traj.cell_of_interval(s - 1);
            model.add_running_cost_grad(z, &omega[prev], 0.5 * h_of(s - 1), &mut w, &mut sink);
        }
    }
    Ok(ControlGradient {
        omega: g_omega,
        alpha: g_alpha,
    })
}

/// Central differences of [`discrete_objective`] in every cell value.
/// Verification oracle for the adjoint.
pub fn finite_difference_gradient(
    model: &dyn SemilinearModel,
    control: &RelaxedControl,
    substeps: usize,
    step: f64,
) -> Result<ControlGradient> {
    let grid = control.grid();
    let mut omega = control.omega().to_vec();
    let mut alpha = control.alpha().to_vec();
    let mut g_omega = vec![vec![0.0; control.n_controls()]; grid.n_cells()];
    let mut g_alpha = vec![vec![0.0; control.n_modes()]; grid.n_cells()];
    for c in 0..grid.n_cells() {
        for k in 0..control.n_controls() {
            let x = omega[c][k];
            omega[c][k] = x + step;
            let plus = discrete_objective(model, grid, &omega, &alpha, substeps)?;
            omega[c][k] = x - step;
            let minus = discrete_objective(model, grid, &omega, &alpha, substeps)?;
            omega[c][k] = x;
            g_omega[c][k] = (plus - minus) / (2.0 * step);
        }
        for i in 0..control.n_modes() {
            let x = alpha[c][i];
            alpha[c][i] = x + step;
            let plus = discrete_objective(model, grid, &omega, &alpha, substeps)?;
            alpha[c][i] = x - step;
            let minus = discrete_objective(model, grid, &omega, &alpha, substeps)?;
            alpha[c][i] = x;
            g_alpha[c][i] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(ControlGradient {
        omega: g_omega,
        alpha: g_alpha,
    })
}

/// How the simplex constraint on the multipliers is enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MultiplierForm {
    /// Projection onto the unit simplex, all modes treated alike.
    #[default]
    Simplex,
    /// The last multiplier is eliminated as `1 - sum` of the others, which
    /// live in `{x >= 0, sum x <= 1}`.
    Eliminated,
}

#[derive(Debug, Clone)]
pub struct RelaxedSolverOptions {
    pub tol_kkt: f64,
    pub max_iters: usize,
    /// Integration substeps per control cell, fixed for the whole solve.
    pub substeps: usize,
    pub armijo_c: f64,
    pub max_backtracks: usize,
    pub form: MultiplierForm,
}

impl Default for RelaxedSolverOptions {
    fn default() -> Self {
        Self {
            tol_kkt: 1e-6,
            max_iters: 500,
            substeps: 4,
            armijo_c: 1e-4,
            max_backtracks: 60,
            form: MultiplierForm::Simplex,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelaxedSolveResult {
    pub control: RelaxedControl,
    pub trajectory: Trajectory,
    pub objective: f64,
    /// `||x - P(x - grad J)||_inf` at the returned iterate.
    pub kkt_residual: f64,
    /// Accepted steps.
    pub iterations: usize,
    /// Line search failed to find a decrease before the residual tolerance.
    pub stalled: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub objective_history: Vec<f64>,
    /// Forward integrations performed, line-search trials included.
    pub evaluations: usize,
}

/// Flat variable vector: per cell, ordinary controls then multipliers (in
/// the eliminated form the last multiplier is dropped).
struct Layout {
    m: usize,
    n_modes: usize,
    n_cells: usize,
    form: MultiplierForm,
    bounds: Vec<(f64, f64)>,
}

impl Layout {
    fn n_alpha(&self) -> usize {
        match self.form {
            MultiplierForm::Simplex => self.n_modes,
            MultiplierForm::Eliminated => self.n_modes - 1,
        }
    }

    fn stride(&self) -> usize {
        self.m + self.n_alpha()
    }

    fn pack(&self, c: &RelaxedControl) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n_cells * self.stride());
        for (o, a) in c.omega().iter().zip(c.alpha()) {
            x.extend_from_slice(o);
            x.extend_from_slice(&a[..self.n_alpha()]);
        }
        x
    }

    fn unpack(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut omega = Vec::with_capacity(self.n_cells);
        let mut alpha = Vec::with_capacity(self.n_cells);
        for chunk in x.chunks(self.stride()) {
            omega.push(chunk[..self.m].to_vec());
            let mut a = chunk[self.m..].to_vec();
            if self.form == MultiplierForm::Eliminated {
                a.push((1.0 - a.iter().sum::<f64>()).max(0.0));
            }
            alpha.push(a);
        }
        (omega, alpha)
    }

    fn pack_gradient(&self, g: &ControlGradient) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_cells * self.stride());
        for (o, a) in g.omega.iter().zip(&g.alpha) {
            out.extend_from_slice(o);
            match self.form {
                MultiplierForm::Simplex => out.extend_from_slice(a),
                MultiplierForm::Eliminated => {
                    let last = a[self.n_modes - 1];
                    out.extend(a[..self.n_modes - 1].iter().map(|g| g - last));
                }
            }
        }
        out
    }

    fn project(&self, x: &mut [f64]) {
        let (m, stride) = (self.m, self.stride());
        for chunk in x.chunks_mut(stride) {
            for (u, &(lo, hi)) in chunk[..m].iter_mut().zip(&self.bounds) {
                *u = u.clamp(lo, hi);
            }
            let a = &mut chunk[m..];
            let p = match self.form {
                MultiplierForm::Simplex => simplex_project(a),
                MultiplierForm::Eliminated => solid_simplex_project(a),
            };
            a.copy_from_slice(&p);
        }
    }
}

fn kkt_residual(layout: &Layout, x: &[f64], g: &[f64]) -> f64 {
    let mut y: Vec<f64> = x.iter().zip(g).map(|(x, g)| x - g).collect();
    layout.project(&mut y);
    crate::numeric::max_abs_diff(x, &y)
}

/// Projected gradient descent with Armijo backtracking (sufficient decrease
/// `c`, halving) from a feasible start. Trial steps use the Barzilai-Borwein
/// length of the previous iteration.
pub fn solve_relaxed(
    model: &dyn SemilinearModel,
    start: &RelaxedControl,
    opts: &RelaxedSolverOptions,
) -> Result<RelaxedSolveResult> {
    if start.n_modes() != model.n_modes() || start.n_controls() != model.n_controls() {
        return Err(Error::InvalidControl(format!(
            "start has {} modes / {} controls, model has {} / {}",
            start.n_modes(),
            start.n_controls(),
            model.n_modes(),
            model.n_controls()
        )));
    }
    start.check_box(model.control_bounds())?;
    let grid = start.grid().clone();
    let layout = Layout {
        m: model.n_controls(),
        n_modes: model.n_modes(),
        n_cells: grid.n_cells(),
        form: if model.n_modes() == 1 {
            MultiplierForm::Simplex
        } else {
            opts.form
        },
        bounds: model.control_bounds().to_vec(),
    };

    let mut stepper = Stepper::new(model);
    let eval = |stepper: &mut Stepper<'_>,
                x: &[f64],
                with_grad: bool|
     -> Result<(f64, Option<Vec<f64>>, Trajectory)> {
        let (omega, alpha) = layout.unpack(x);
        let traj = run_fixed(stepper, &omega, &alpha, &grid, opts.substeps)?;
        let j = evaluate_cost(model, &traj, &omega)?;
        let g = if with_grad {
            let g = adjoint_sweep(stepper, &omega, &alpha, &traj)?;
            Some(layout.pack_gradient(&g))
        } else {
            None
        };
        Ok((j, g, traj))
    };

    let mut x = layout.pack(start);
    let mut evaluations = 1;
    let (mut j, g, mut traj) = eval(&mut stepper, &x, true)?;
    let mut g = g.unwrap();
    let mut residual = kkt_residual(&layout, &x, &g);
    let mut history = vec![j];
    let mut iterations = 0;
    let mut stalled = false;
    // Separate Barzilai-Borwein lengths for the ordinary controls and the
    // multipliers; the projection is separable across the two blocks.
    let is_u: Vec<bool> = (0..x.len())
        .map(|k| k % layout.stride() < layout.m)
        .collect();
    let block_norm = |v: &[f64], u: bool| {
        v.iter()
            .zip(&is_u)
            .filter(|(_, &b)| b == u)
            .fold(0.0f64, |m, (x, _)| m.max(x.abs()))
    };
    let mut steps = [
        1.0 / block_norm(&g, true).max(1.0),
        1.0 / block_norm(&g, false).max(1.0),
    ];

    while residual > opts.tol_kkt && iterations < opts.max_iters {
        let slope_dir = |s: f64| -> (Vec<f64>, f64) {
            let mut trial: Vec<f64> = x
                .iter()
                .zip(&g)
                .zip(&is_u)
                .map(|((x, g), &u)| x - s * steps[usize::from(!u)] * g)
                .collect();
            layout.project(&mut trial);
            let slope: f64 = trial
                .iter()
                .zip(&x)
                .zip(&g)
                .map(|((t, x), g)| g * (t - x))
                .sum();
            (trial, slope)
        };
        let mut s = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let (trial, slope) = slope_dir(s);
            if slope >= 0.0 {
                break;
            }
            evaluations += 1;
            let (jt, _, tt) = eval(&mut stepper, &trial, false)?;
            if jt.is_finite() && jt <= j + opts.armijo_c * slope {
                accepted = Some((trial, jt, tt));
                break;
            }
            s *= 0.5;
        }
        let Some((x_new, j_new, traj_new)) = accepted else {
            stalled = true;
            break;
        };
        let g_new = {
            let (omega, alpha) = layout.unpack(&x_new);
            layout.pack_gradient(&adjoint_sweep(&mut stepper, &omega, &alpha, &traj_new)?)
        };
        for (b, step) in steps.iter_mut().enumerate() {
            let (mut ss, mut sy) = (0.0, 0.0);
            for k in (0..x.len()).filter(|&k| is_u[k] == (b == 0)) {
                let dx = x_new[k] - x[k];
                ss += dx * dx;
                sy += dx * (g_new[k] - g[k]);
            }
            *step = if sy > 0.0 {
                (ss / sy).clamp(1e-12, 1e12)
            } else if ss > 0.0 {
                (2.0 * s * *step).min(1e12)
            } else {
                *step
            };
        }
        x = x_new;
        j = j_new;
        g = g_new;
        traj = traj_new;
        residual = kkt_residual(&layout, &x, &g);
        iterations += 1;
        history.push(j);
    }

    let (omega, alpha) = layout.unpack(&x);
    let control = RelaxedControl::new(grid, omega, alpha)?;
    Ok(RelaxedSolveResult {
        control,
        trajectory: traj,
        objective: j,
        kkt_residual: residual,
        iterations,
        stalled,
        objective_history: history,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection_examples() {
        let p = simplex_project(&[0.6, 0.6]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert_eq!(simplex_project(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        assert_eq!(simplex_project(&[10.0, 0.0, 0.0]), vec![1.0, 0.0, 0.0]);
        let p = simplex_project(&[-1.0, 0.3, 2.0, 0.9]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn solid_simplex_keeps_interior_points() {
        assert_eq!(solid_simplex_project(&[0.2, -0.1]), vec![0.2, 0.0]);
        let p = solid_simplex_project(&[0.9, 0.9]);
        assert!((p[0] - 0.5).abs() < 1e-15);
    }
}
