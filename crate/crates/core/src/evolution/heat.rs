//! Internally controlled heat equation on a rectangle with homogeneous
//! Dirichlet data and nine switchable Gaussian actuators.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::model::SemilinearModel;
use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatParams {
    /// Diffusivity.
    pub rho: f64,
    pub l_xi: f64,
    pub l_zeta: f64,
    pub t_final: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Variance of the Gaussian actuator profiles.
    pub actuator_width: f64,
    /// Grid intervals along each side; interior nodes are unknowns.
    pub n_xi: usize,
    pub n_zeta: usize,
    pub u_min: f64,
    pub u_max: f64,
}

impl Default for HeatParams {
    fn default() -> Self {
        Self {
            rho: 0.01,
            l_xi: 1.0,
            l_zeta: 2.0,
            t_final: 15.0,
            lambda1: 2.0,
            lambda2: 1.0 / 500.0,
            actuator_width: 1e-3,
            n_xi: 20,
            n_zeta: 40,
            u_min: f64::NEG_INFINITY,
            u_max: f64::INFINITY,
        }
    }
}

/// Actuator centers `(xi_j, zeta_k)`, `j, k = 1..3`, with
/// `xi_j = (j + 0.005 L_xi) / 4` and `zeta_k = (k + 0.005 L_zeta) / 4`.
/// Mode `3 (j-1) + (k-1)` sits at `(xi_j, zeta_k)`.
pub fn actuator_positions(l_xi: f64, l_zeta: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(9);
    for j in 1..=3 {
        for k in 1..=3 {
            out.push((
                (j as f64 + 0.005 * l_xi) / 4.0,
                (k as f64 + 0.005 * l_zeta) / 4.0,
            ));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct HeatModel {
    params: HeatParams,
    /// Interior nodes per row (xi direction) and number of rows.
    nx: usize,
    nz: usize,
    h_xi: f64,
    h_zeta: f64,
    laplacian: SparseMatrix,
    z0: Vec<f64>,
    weights: Vec<f64>,
    profiles: Vec<Vec<f64>>,
    bounds: Vec<(f64, f64)>,
}

pub fn build_heat2d(params: HeatParams) -> Result<HeatModel> {
    let p = &params;
    if !(p.rho > 0.0 && p.l_xi > 0.0 && p.l_zeta > 0.0 && p.actuator_width > 0.0) {
        return Err(Error::InvalidModel(
            "rho, domain lengths and actuator width must be positive".into(),
        ));
    }
    if !(p.t_final > 0.0) {
        return Err(Error::InvalidModel(format!(
            "t_final must be positive, got {}",
            p.t_final
        )));
    }
    if p.lambda1 < 0.0 || p.lambda2 < 0.0 {
        return Err(Error::InvalidModel(
            "cost weights must be non-negative".into(),
        ));
    }
    if !(p.u_min <= p.u_max) || p.u_min.is_nan() {
        return Err(Error::InvalidModel("empty control box".into()));
    }
    let h_xi = p.l_xi / p.n_xi as f64;
    let h_zeta = p.l_zeta / p.n_zeta as f64;
    // Actuators are 1/4 apart; demand at least two grid intervals between
    // neighbours so each one owns distinct nodes.
    if p.n_xi < 2 || p.n_zeta < 2 || h_xi > 0.125 || h_zeta > 0.125 {
        return Err(Error::InvalidModel(format!(
            "grid {}x{} too coarse to separate actuators (spacing must be <= 0.125)",
            p.n_xi, p.n_zeta
        )));
    }
    let nx = p.n_xi - 1;
    let nz = p.n_zeta - 1;
    let n = nx * nz;
    let idx = |i: usize, k: usize| k * nx + i;
    let cx = p.rho / (h_xi * h_xi);
    let cz = p.rho / (h_zeta * h_zeta);
    let mut triplets = Vec::with_capacity(5 * n);
    for k in 0..nz {
        for i in 0..nx {
            let r = idx(i, k);
            triplets.push((r, r, -2.0 * cx - 2.0 * cz));
            if i > 0 {
                triplets.push((r, idx(i - 1, k), cx));
            }
            if i + 1 < nx {
                triplets.push((r, idx(i + 1, k), cx));
            }
            if k > 0 {
                triplets.push((r, idx(i, k - 1), cz));
            }
            if k + 1 < nz {
                triplets.push((r, idx(i, k + 1), cz));
            }
        }
    }
    let laplacian = SparseMatrix::from_triplets(n, triplets);

    let node = |r: usize| -> (f64, f64) {
        let (i, k) = (r % nx, r / nx);
        ((i + 1) as f64 * h_xi, (k + 1) as f64 * h_zeta)
    };
    let z0 = (0..n)
        .map(|r| {
            let (x, y) = node(r);
            10.0 * (PI * x).sin() * 10.0 * (PI * y).sin()
        })
        .collect();
    let eps = p.actuator_width;
    let profiles = actuator_positions(p.l_xi, p.l_zeta)
        .into_iter()
        .map(|(ax, az)| {
            (0..n)
                .map(|r| {
                    let (x, y) = node(r);
                    let d2 = (x - ax).powi(2) + (y - az).powi(2);
                    (-d2 / (2.0 * eps)).exp() / (2.0 * PI * eps)
                })
                .collect()
        })
        .collect();
    Ok(HeatModel {
        nx,
        nz,
        h_xi,
        h_zeta,
        laplacian,
        z0,
        weights: vec![h_xi * h_zeta; n],
        profiles,
        bounds: vec![(p.u_min, p.u_max)],
        params,
    })
}

impl HeatModel {
    pub fn params(&self) -> &HeatParams {
        &self.params
    }

    /// Actuator profile `B_i` sampled at the interior nodes.
    pub fn profile(&self, mode: usize) -> &[f64] {
        &self.profiles[mode]
    }

    /// Interior node coordinates in state order.
    pub fn node_coordinates(&self) -> Vec<(f64, f64)> {
        (0..self.nx * self.nz)
            .map(|r| {
                (
                    ((r % self.nx) + 1) as f64 * self.h_xi,
                    ((r / self.nx) + 1) as f64 * self.h_zeta,
                )
            })
            .collect()
    }
}

impl SemilinearModel for HeatModel {
    fn name(&self) -> &str {
        "heat2d"
    }

    fn dim(&self) -> usize {
        self.nx * self.nz
    }

    fn n_modes(&self) -> usize {
        self.profiles.len()
    }

    fn n_controls(&self) -> usize {
        1
    }

    fn linear_op(&self) -> &SparseMatrix {
        &self.laplacian
    }

    fn initial_state(&self) -> &[f64] {
        &self.z0
    }

    fn mass_weights(&self) -> &[f64] {
        &self.weights
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
        _z: &[f64],
        u: &[f64],
        weight: f64,
        out: &mut [f64],
    ) {
        let s = weight * u[0];
        for (o, b) in out.iter_mut().zip(&self.profiles[mode]) {
            *o += s * b;
        }
    }

    fn add_mode_vjp(
        &self,
        mode: usize,
        _t: f64,
        _z: &[f64],
        _u: &[f64],
        lambda: &[f64],
        weight: f64,
        _dz: &mut [f64],
        du: &mut [f64],
    ) {
        du[0] += weight * crate::numeric::dot(&self.profiles[mode], lambda);
    }

    fn modes_state_independent(&self) -> bool {
        true
    }

    fn terminal_cost(&self, z: &[f64]) -> f64 {
        crate::numeric::weighted_norm_sq(&self.weights, z)
    }

    fn add_terminal_cost_grad(&self, z: &[f64], weight: f64, dz: &mut [f64]) {
        for ((d, w), z) in dz.iter_mut().zip(&self.weights).zip(z) {
            *d += weight * 2.0 * w * z;
        }
    }

    fn running_cost(&self, z: &[f64], u: &[f64]) -> f64 {
        self.params.lambda1 * crate::numeric::weighted_norm_sq(&self.weights, z)
            + self.params.lambda2 * u[0] * u[0]
    }

    fn add_running_cost_grad(
        &self,
        z: &[f64],
        u: &[f64],
        weight: f64,
        dz: &mut [f64],
        du: &mut [f64],
    ) {
        let l1 = self.params.lambda1;
        for ((d, w), z) in dz.iter_mut().zip(&self.weights).zip(z) {
            *d += weight * 2.0 * l1 * w * z;
        }
        du[0] += weight * 2.0 * self.params.lambda2 * u[0];
    }

    fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "model": "heat2d",
            "params": self.params,
            "interior_nodes": [self.nx, self.nz],
            "spacing": [self.h_xi, self.h_zeta],
            "state_layout": "row-major over zeta rows, xi fastest",
            "actuators": actuator_positions(self.params.l_xi, self.params.l_zeta),
        })
    }
}
