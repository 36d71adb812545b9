//! IMEX theta scheme (theta = 1/2): the linear operator is treated by the
//! trapezoidal rule, the mode-weighted nonlinear term explicitly,
//!
//! `(I - h/2 A) z_{s+1} = (I + h/2 A) z_s + h sum_i w_i f_i(t_s, z_s, u)`.

use super::model::{SemilinearModel, Trajectory};
use super::sparse::BandedLu;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::numeric::max_abs_diff;
use crate::rounding::SIMPLEX_TOL;

pub const THETA: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct IntegratorOptions {
    pub initial_substeps: usize,
    /// Refinement gives up once the substep count would exceed this.
    pub max_substeps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            initial_substeps: 4,
            max_substeps: 4096,
        }
    }
}

/// Factorizations of `I - theta h A`, keyed by the step size.
pub(crate) struct Stepper<'m> {
    pub model: &'m dyn SemilinearModel,
    factors: Vec<(u64, BandedLu)>,
    buf: Vec<f64>,
}

impl<'m> Stepper<'m> {
    pub fn new(model: &'m dyn SemilinearModel) -> Self {
        Self {
            model,
            factors: Vec::new(),
            buf: Vec::new(),
        }
    }

    pub fn factor(&mut self, h: f64) -> Result<&BandedLu> {
        let key = h.to_bits();
        let idx = match self.factors.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                let lu = BandedLu::shifted_identity(self.model.linear_op(), THETA * h)?;
                self.factors.push((key, lu));
                self.factors.len() - 1
            }
        };
        Ok(&self.factors[idx].1)
    }

    /// `Q z = z + (1 - theta) h A z` and `F(t, z) = sum_i w_i f_i(t, z, u)`.
    fn explicit_parts(
        &self,
        t: f64,
        h: f64,
        z: &[f64],
        u: &[f64],
        weights: &[f64],
        qz: &mut [f64],
        fz: &mut [f64],
    ) {
        let model = self.model;
        model.linear_op().mul_vec(z, qz);
        for k in 0..z.len() {
            qz[k] = z[k] + (1.0 - THETA) * h * qz[k];
        }
        fz.iter_mut().for_each(|x| *x = 0.0);
        for (i, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                model.add_mode_rhs(i, t, z, u, w, fz);
            }
        }
    }

    /// Predictor `y = P^{-1} (Q z + h F(t, z))` with `P = I - theta h A`.
    pub fn predict(
        &mut self,
        t: f64,
        h: f64,
        z: &[f64],
        u: &[f64],
        weights: &[f64],
        y: &mut [f64],
        fz: &mut [f64],
    ) -> Result<()> {
        self.explicit_parts(t, h, z, u, weights, y, fz);
        for k in 0..z.len() {
            y[k] += h * fz[k];
        }
        self.factor(h)?.solve(y);
        Ok(())
    }

    /// One step from `z` at time `t`:
    /// `z+ = P^{-1} (Q z + h/2 F(t, z) + h/2 F(t + h, y))` with `y` the
    /// predictor. `scratch` must have the state length.
    pub fn step(
        &mut self,
        t: f64,
        h: f64,
        z: &[f64],
        u: &[f64],
        weights: &[f64],
        out: &mut [f64],
        scratch: &mut [f64],
    ) -> Result<()> {
        let model = self.model;
        self.predict(t, h, z, u, weights, scratch, out)?;
        // out holds F(t, z); rebuild Q z + h/2 F(t, z) around it.
        let mut qz = std::mem::take(&mut self.buf);
        qz.resize(z.len(), 0.0);
        model.linear_op().mul_vec(z, &mut qz);
        for k in 0..z.len() {
            out[k] = z[k] + (1.0 - THETA) * h * qz[k] + 0.5 * h * out[k];
        }
        self.buf = qz;
        for (i, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                model.add_mode_rhs(i, t + h, scratch, u, 0.5 * h * w, out);
            }
        }
        self.factor(h)?.solve(out);
        Ok(())
    }
}

pub(crate) fn validate_inputs(
    model: &dyn SemilinearModel,
    omega: &[Vec<f64>],
    mode_weights: &[Vec<f64>],
    grid: &TimeGrid,
) -> Result<()> {
    let n = grid.n_cells();
    if omega.len() != n || mode_weights.len() != n {
        return Err(Error::GridMismatch(format!(
            "{n} cells but {} control rows and {} mode-weight rows",
            omega.len(),
            mode_weights.len()
        )));
    }
    for (j, (u, w)) in omega.iter().zip(mode_weights).enumerate() {
        if u.len() != model.n_controls() {
            return Err(Error::InvalidControl(format!(
                "cell {j}: {} controls, model expects {}",
                u.len(),
                model.n_controls()
            )));
        }
        if w.len() != model.n_modes() {
            return Err(Error::InvalidControl(format!(
                "cell {j}: {} mode weights, model has {} modes",
                w.len(),
                model.n_modes()
            )));
        }
        let sum: f64 = w.iter().sum();
        if w.iter()
            .any(|&x| !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&x))
            || (sum - 1.0).abs() > SIMPLEX_TOL
        {
            return Err(Error::InvalidControl(format!(
                "cell {j}: mode weights {w:?} not in the unit simplex"
            )));
        }
    }
    Ok(())
}

/// Fixed number of substeps in every control cell.
pub fn integrate_fixed(
    model: &dyn SemilinearModel,
    omega: &[Vec<f64>],
    mode_weights: &[Vec<f64>],
    grid: &TimeGrid,
    substeps: usize,
) -> Result<Trajectory> {
    validate_inputs(model, omega, mode_weights, grid)?;
    let mut stepper = Stepper::new(model);
    run_fixed(&mut stepper, omega, mode_weights, grid, substeps)
}

pub(crate) fn run_fixed(
    stepper: &mut Stepper<'_>,
    omega: &[Vec<f64>],
    mode_weights: &[Vec<f64>],
    grid: &TimeGrid,
    substeps: usize,
) -> Result<Trajectory> {
    assert!(substeps > 0);
    let model = stepper.model;
    let dim = model.dim();
    let total = grid.n_cells() * substeps;
    let mut times = Vec::with_capacity(total + 1);
    let mut states = Vec::with_capacity(total + 1);
    times.push(0.0);
    states.push(model.initial_state().to_vec());
    let mut scratch = vec![0.0; dim];
    for j in 0..grid.n_cells() {
        let (a, b) = grid.cell(j);
        let h = (b - a) / substeps as f64;
        for k in 0..substeps {
            let t = a + k as f64 * h;
            let mut next = vec![0.0; dim];
            stepper.step(
                t,
                h,
                states.last().unwrap(),
                &omega[j],
                &mode_weights[j],
                &mut next,
                &mut scratch,
            )?;
            if next.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonConvergence {
                    tol: f64::NAN,
                    max_substeps: substeps,
                    estimate: f64::INFINITY,
                });
            }
            times.push(if k + 1 == substeps {
                b
            } else {
                a + (k + 1) as f64 * h
            });
            states.push(next);
        }
    }
    Ok(Trajectory {
        grid: grid.clone(),
        substeps,
        times,
        states,
        accuracy: 0.0,
    })
}

/// Integrates with the substep count doubled until two consecutive runs
/// agree to `tol` in the sup norm at all shared nodes. Returns the finer
/// run with `accuracy` set to that estimate.
pub fn integrate(
    model: &dyn SemilinearModel,
    omega: &[Vec<f64>],
    mode_weights: &[Vec<f64>],
    grid: &TimeGrid,
    tol: f64,
) -> Result<Trajectory> {
    integrate_with(
        model,
        omega,
        mode_weights,
        grid,
        tol,
        &IntegratorOptions::default(),
    )
}

pub fn integrate_with(
    model: &dyn SemilinearModel,
    omega: &[Vec<f64>],
    mode_weights: &[Vec<f64>],
    grid: &TimeGrid,
    tol: f64,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    validate_inputs(model, omega, mode_weights, grid)?;
    let mut stepper = Stepper::new(model);
    let mut m = opts.initial_substeps.max(1);
    let mut coarse = run_fixed(&mut stepper, omega, mode_weights, grid, m);
    let mut estimate = f64::INFINITY;
    while 2 * m <= opts.max_substeps {
        let fine = run_fixed(&mut stepper, omega, mode_weights, grid, 2 * m);
        if let (Ok(c), Ok(f)) = (&coarse, &fine) {
            estimate = c
                .states
                .iter()
                .zip(f.states.iter().step_by(2))
                .map(|(a, b)| max_abs_diff(a, b))
                .fold(0.0, f64::max);
            if estimate <= tol {
                let mut f = fine?;
                f.accuracy = estimate;
                return Ok(f);
            }
        } else if let Err(e @ Error::SingularPivot(_)) = fine {
            return Err(e);
        }
        coarse = fine;
        m *= 2;
    }
    Err(Error::NonConvergence {
        tol,
        max_substeps: opts.max_substeps,
        estimate,
    })
}

/// `phi(z(t_f))` plus the trapezoidal rule for `psi` over integration nodes,
/// each interval using the control of its cell.
pub fn evaluate_cost(
    model: &dyn SemilinearModel,
    traj: &Trajectory,
    omega: &[Vec<f64>],
) -> Result<f64> {
    if omega.len() != traj.grid.n_cells() {
        return Err(Error::GridMismatch(format!(
            "{} control rows for {} cells",
            omega.len(),
            traj.grid.n_cells()
        )));
    }
    let mut total = crate::numeric::CompensatedSum::new();
    total.add(model.terminal_cost(traj.final_state()));
    for s in 0..traj.n_intervals() {
        let u = &omega[traj.cell_of_interval(s)];
        let h = traj.times[s + 1] - traj.times[s];
        total.add(
            0.5 * h
                * (model.running_cost(&traj.states[s], u)
                    + model.running_cost(&traj.states[s + 1], u)),
        );
    }
    Ok(total.value())
}
