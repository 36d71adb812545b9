//! One-dimensional affine test family
//! `z' = a z + sum_i w_i (c_i + d_i z + e_i u)` with quadratic costs.

use serde::{Deserialize, Serialize};

use super::model::SemilinearModel;
use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineMode {
    /// Constant term.
    pub offset: f64,
    /// Coefficient of the state.
    pub state: f64,
    /// Coefficient of the ordinary control (ignored without controls).
    #[serde(default)]
    pub control: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalarParams {
    /// Linear operator coefficient.
    pub a: f64,
    pub z0: f64,
    pub t_final: f64,
    pub modes: Vec<AffineMode>,
    /// Whether the model carries one ordinary control `u`.
    pub with_control: bool,
    pub u_min: f64,
    pub u_max: f64,
    /// `phi(z) = terminal_weight (z - terminal_target)^2`
    pub terminal_weight: f64,
    pub terminal_target: f64,
    /// `psi(z, u) = state_weight (z - state_target)^2 + control_weight u^2`
    pub state_weight: f64,
    pub state_target: f64,
    pub control_weight: f64,
}

impl Default for ScalarParams {
    fn default() -> Self {
        Self {
            a: 0.0,
            z0: 0.0,
            t_final: 1.0,
            modes: vec![AffineMode {
                offset: 0.0,
                state: 0.0,
                control: 0.0,
            }],
            with_control: false,
            u_min: f64::NEG_INFINITY,
            u_max: f64::INFINITY,
            terminal_weight: 0.0,
            terminal_target: 0.0,
            state_weight: 0.0,
            state_target: 0.0,
            control_weight: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScalarModel {
    params: ScalarParams,
    op: SparseMatrix,
    z0: [f64; 1],
    bounds: Vec<(f64, f64)>,
}

pub fn build_scalar(params: ScalarParams) -> Result<ScalarModel> {
    if params.modes.is_empty() {
        return Err(Error::InvalidModel(
            "scalar model needs at least one mode".into(),
        ));
    }
    if !(params.t_final > 0.0) {
        return Err(Error::InvalidModel(format!(
            "t_final must be positive, got {}",
            params.t_final
        )));
    }
    if params.with_control && !(params.u_min <= params.u_max) {
        return Err(Error::InvalidModel("empty control box".into()));
    }
    let bounds = if params.with_control {
        vec![(params.u_min, params.u_max)]
    } else {
        Vec::new()
    };
    Ok(ScalarModel {
        op: SparseMatrix::from_triplets(1, vec![(0, 0, params.a)]),
        z0: [params.z0],
        bounds,
        params,
    })
}

impl ScalarModel {
    pub fn params(&self) -> &ScalarParams {
        &self.params
    }

    fn u(&self, u: &[f64]) -> f64 {
        if self.params.with_control {
            u[0]
        } else {
            0.0
        }
    }
}

impl SemilinearModel for ScalarModel {
    fn name(&self) -> &str {
        "scalar"
    }

    fn dim(&self) -> usize {
        1
    }

    fn n_modes(&self) -> usize {
        self.params.modes.len()
    }

    fn n_controls(&self) -> usize {
        usize::from(self.params.with_control)
    }

    fn linear_op(&self) -> &SparseMatrix {
        &self.op
    }

    fn initial_state(&self) -> &[f64] {
        &self.z0
    }

    fn mass_weights(&self) -> &[f64] {
        &[1.0]
    }

    fn control_bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn t_final(&self) -> f64 {
        self.params.t_final
    }

    fn add_mode_rhs(
        &self,
        mode: usize,
        _t: f64,
        z: &[f64],
        u: &[f64],
        weight: f64,
        out: &mut [f64],
    ) {
        let m = &self.params.modes[mode];
        out[0] += weight * (m.offset + m.state * z[0] + m.control * self.u(u));
    }

    fn add_mode_vjp(
        &self,
        mode: usize,
        _t: f64,
        _z: &[f64],
        _u: &[f64],
        lambda: &[f64],
        weight: f64,
        dz: &mut [f64],
        du: &mut [f64],
    ) {
        let m = &self.params.modes[mode];
        dz[0] += weight * m.state * lambda[0];
        if self.params.with_control {
            du[0] += weight * m.control * lambda[0];
        }
    }

    fn modes_state_independent(&self) -> bool {
        self.params.modes.iter().all(|m| m.state == 0.0)
    }

    fn terminal_cost(&self, z: &[f64]) -> f64 {
        self.params.terminal_weight * (z[0] - self.params.terminal_target).powi(2)
    }

    fn add_terminal_cost_grad(&self, z: &[f64], weight: f64, dz: &mut [f64]) {
        dz[0] += weight * 2.0 * self.params.terminal_weight * (z[0] - self.params.terminal_target);
    }

    fn running_cost(&self, z: &[f64], u: &[f64]) -> f64 {
        let p = &self.params;
        p.state_weight * (z[0] - p.state_target).powi(2) + p.control_weight * self.u(u).powi(2)
    }

    fn add_running_cost_grad(
        &self,
        z: &[f64],
        u: &[f64],
        weight: f64,
        dz: &mut [f64],
        du: &mut [f64],
    ) {
        let p = &self.params;
        dz[0] += weight * 2.0 * p.state_weight * (z[0] - p.state_target);
        if p.with_control {
            du[0] += weight * 2.0 * p.control_weight * u[0];
        }
    }

    fn metadata(&self) -> serde_json::Value {
        serde_json::json!({ "model": "scalar", "params": self.params })
    }
}
