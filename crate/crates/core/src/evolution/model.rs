use serde::{Deserialize, Serialize};

use super::sparse::SparseMatrix;
use crate::grid::TimeGrid;

/// Spatially semidiscretized semilinear evolution equation
/// `z' = A_h z + sum_i w_i(t) f_i(t, z, u(t))` with cost
/// `phi(z(t_f)) + int psi(z, u) dt`.
///
/// Vector products used by the adjoint are plain Euclidean ones on the
/// discrete state; `mass_weights` only enter norms and costs.
pub trait SemilinearModel: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn n_modes(&self) -> usize;

    fn n_controls(&self) -> usize;

    fn linear_op(&self) -> &SparseMatrix;

    fn initial_state(&self) -> &[f64];

    fn mass_weights(&self) -> &[f64];

    /// Box `U_ad` per ordinary control component.
    fn control_bounds(&self) -> &[(f64, f64)];

    fn t_final(&self) -> f64;

    /// `out += weight * f_mode(t, z, u)`
    fn add_mode_rhs(&self, mode: usize, t: f64, z: &[f64], u: &[f64], weight: f64, out: &mut [f64]);

    /// `dz += weight * (df/dz)^T lambda`, `du += weight * (df/du)^T lambda`
    #[allow(clippy::too_many_arguments)]
    fn add_mode_vjp(
        &self,
        mode: usize,
        t: f64,
        z: &[f64],
        u: &[f64],
        lambda: &[f64],
        weight: f64,
        dz: &mut [f64],
        du: &mut [f64],
    );

    /// True when no `f_i` depends on the state.
    fn modes_state_independent(&self) -> bool {
        false
    }

    fn terminal_cost(&self, z: &[f64]) -> f64;

    /// `dz += weight * grad phi(z)`
    fn add_terminal_cost_grad(&self, z: &[f64], weight: f64, dz: &mut [f64]);

    fn running_cost(&self, z: &[f64], u: &[f64]) -> f64;

    /// `dz += weight * d psi / dz`, `du += weight * d psi / du`
    fn add_running_cost_grad(
        &self,
        z: &[f64],
        u: &[f64],
        weight: f64,
        dz: &mut [f64],
        du: &mut [f64],
    );

    /// Parameters and discretization shape for export sidecars.
    fn metadata(&self) -> serde_json::Value;

    /// Discrete `L^2` norm `sqrt(sum w_k z_k^2)`.
    fn state_norm(&self, z: &[f64]) -> f64 {
        crate::numeric::weighted_norm_sq(self.mass_weights(), z).sqrt()
    }
}

/// Numerical trajectory on integration nodes nested in a control grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: TimeGrid,
    /// Equal substeps per control cell.
    pub substeps: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Step-halving estimate of the sup-norm error; 0 for fixed-step runs.
    pub accuracy: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("trajectory has at least the initial state")
    }

    /// Control cell owning the integration interval starting at node `s`.
    pub fn cell_of_interval(&self, s: usize) -> usize {
        s / self.substeps
    }

    pub fn n_intervals(&self) -> usize {
        self.times.len() - 1
    }
}
