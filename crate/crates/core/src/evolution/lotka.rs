//! Diffusive predator-prey system on a disc with homogeneous Neumann
//! boundary and a binary control `v` reducing both growth rates.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::model::SemilinearModel;
use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LotkaVolterraParams {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
    pub d1: f64,
    pub d2: f64,
    pub t_final: f64,
    pub center: (f64, f64),
    pub radius: f64,
    /// Cells across the bounding square of the disc.
    pub n_side: usize,
    /// Initial densities are `amp_k * g(x - center)` with `g` a Gaussian of
    /// variance `init_width`.
    pub init_amp1: f64,
    pub init_amp2: f64,
    pub init_width: f64,
}

impl Default for LotkaVolterraParams {
    fn default() -> Self {
        Self {
            a1: 1.0,
            a2: 1.0,
            b1: 0.7,
            b2: 0.5,
            c1: 1.0,
            c2: 1.0,
            d1: 0.05,
            d2: 0.01,
            t_final: 15.0,
            center: (1.0, 1.0),
            radius: 1.0,
            n_side: 24,
            init_amp1: 0.5,
            init_amp2: 0.7,
            init_width: 0.5,
        }
    }
}

/// State layout: species 1 on all active cells, then species 2.
#[derive(Debug, Clone)]
pub struct LotkaVolterraModel {
    params: LotkaVolterraParams,
    cells: Vec<(f64, f64)>,
    h: f64,
    op: SparseMatrix,
    z0: Vec<f64>,
    weights: Vec<f64>,
    steady: (f64, f64),
}

/// Graph Laplacian of the masked Cartesian grid. Missing neighbours are
/// reflected ghost nodes equal to the centre value, so they contribute
/// nothing: zero normal flux.
fn masked_laplacian(
    mask: &[Option<usize>],
    n_side: usize,
    n_active: usize,
    h: f64,
) -> Vec<(usize, usize, f64)> {
    let mut trip = Vec::new();
    let inv = 1.0 / (h * h);
    for iy in 0..n_side {
        for ix in 0..n_side {
            let Some(r) = mask[iy * n_side + ix] else {
                continue;
            };
            let mut neighbours = Vec::with_capacity(4);
            if ix > 0 {
                neighbours.push(mask[iy * n_side + ix - 1]);
            }
            if ix + 1 < n_side {
                neighbours.push(mask[iy * n_side + ix + 1]);
            }
            if iy > 0 {
                neighbours.push(mask[(iy - 1) * n_side + ix]);
            }
            if iy + 1 < n_side {
                neighbours.push(mask[(iy + 1) * n_side + ix]);
            }
            let mut diag = 0.0;
            for c in neighbours.into_iter().flatten() {
                trip.push((r, c, inv));
                diag -= inv;
            }
            trip.push((r, r, diag));
        }
    }
    debug_assert!(trip.iter().all(|&(r, c, _)| r < n_active && c < n_active));
    trip
}

pub fn build_lotka_volterra(params: LotkaVolterraParams) -> Result<LotkaVolterraModel> {
    let p = &params;
    if !(p.t_final > 0.0) {
        return Err(Error::InvalidModel(format!(
            "t_final must be positive, got {}",
            p.t_final
        )));
    }
    if !(p.radius > 0.0) || p.n_side == 0 || !(p.init_width > 0.0) {
        return Err(Error::InvalidModel(
            "radius, resolution and initial width must be positive".into(),
        ));
    }
    if p.d1 < 0.0 || p.d2 < 0.0 {
        return Err(Error::InvalidModel(
            "diffusion coefficients must be non-negative".into(),
        ));
    }
    let h = 2.0 * p.radius / p.n_side as f64;
    let x0 = p.center.0 - p.radius;
    let y0 = p.center.1 - p.radius;
    let mut mask = vec![None; p.n_side * p.n_side];
    let mut cells = Vec::new();
    for iy in 0..p.n_side {
        for ix in 0..p.n_side {
            let x = x0 + (ix as f64 + 0.5) * h;
            let y = y0 + (iy as f64 + 0.5) * h;
            if (x - p.center.0).powi(2) + (y - p.center.1).powi(2) <= p.radius * p.radius {
                mask[iy * p.n_side + ix] = Some(cells.len());
                cells.push((x, y));
            }
        }
    }
    let m = cells.len();
    if m == 0 {
        return Err(Error::InvalidModel("disc mask contains no cells".into()));
    }
    let lap = masked_laplacian(&mask, p.n_side, m, h);
    let mut trip = Vec::with_capacity(2 * lap.len());
    for &(r, c, v) in &lap {
        trip.push((r, c, p.d1 * v));
        trip.push((m + r, m + c, p.d2 * v));
    }
    let op = SparseMatrix::from_triplets(2 * m, trip);

    let gauss = |(x, y): (f64, f64)| {
        let d2 = (x - p.center.0).powi(2) + (y - p.center.1).powi(2);
        (-d2 / (2.0 * p.init_width)).exp() / (2.0 * PI * p.init_width).sqrt()
    };
    let mut z0 = Vec::with_capacity(2 * m);
    z0.extend(cells.iter().map(|&c| p.init_amp1 * gauss(c)));
    z0.extend(cells.iter().map(|&c| p.init_amp2 * gauss(c)));
    // Uncontrolled steady state (a2/c2, a1/c1); undefined without coupling.
    let steady = (
        if p.c2 != 0.0 { p.a2 / p.c2 } else { 0.0 },
        if p.c1 != 0.0 { p.a1 / p.c1 } else { 0.0 },
    );
    Ok(LotkaVolterraModel {
        cells,
        h,
        op,
        z0,
        weights: vec![h * h; 2 * m],
        steady,
        params,
    })
}

impl LotkaVolterraModel {
    pub fn params(&self) -> &LotkaVolterraParams {
        &self.params
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_centers(&self) -> &[(f64, f64)] {
        &self.cells
    }

    pub fn steady_state(&self) -> (f64, f64) {
        self.steady
    }

    /// Discrete integral of each species.
    pub fn species_mass(&self, z: &[f64]) -> (f64, f64) {
        let m = self.n_cells();
        let a = self.h * self.h;
        (
            z[..m].iter().sum::<f64>() * a,
            z[m..].iter().sum::<f64>() * a,
        )
    }

    /// Mode 0 is `v = 0`, mode 1 is `v = 1`.
    fn v_of(mode: usize) -> f64 {
        mode as f64
    }
}

impl SemilinearModel for LotkaVolterraModel {
    fn name(&self) -> &str {
        "lotka_volterra"
    }

    fn dim(&self) -> usize {
        2 * self.cells.len()
    }

    fn n_modes(&self) -> usize {
        2
    }

    fn n_controls(&self) -> usize {
        0
    }

    fn linear_op(&self) -> &SparseMatrix {
        &self.op
    }

    fn initial_state(&self) -> &[f64] {
        &self.z0
    }

    fn mass_weights(&self) -> &[f64] {
        &self.weights
    }

    fn control_bounds(&self) -> &[(f64, f64)] {
        &[]
    }

    fn t_final(&self) -> f64 {
        self.params.t_final
    }

    fn add_mode_rhs(
        &self,
        mode: usize,
        _t: f64,
        z: &[f64],
        _u: &[f64],
        weight: f64,
        out: &mut [f64],
    ) {
        let p = &self.params;
        let v = Self::v_of(mode);
        let m = self.cells.len();
        let (z1, z2) = z.split_at(m);
        let (o1, o2) = out.split_at_mut(m);
        for k in 0..m {
            o1[k] += weight * z1[k] * (p.a1 - p.b1 * v - p.c1 * z2[k]);
            o2[k] += weight * z2[k] * (-p.a2 - p.b2 * v + p.c2 * z1[k]);
        }
    }

    fn add_mode_vjp(
        &self,
        mode: usize,
        _t: f64,
        z: &[f64],
        _u: &[f64],
        lambda: &[f64],
        weight: f64,
        dz: &mut [f64],
        _du: &mut [f64],
    ) {
        let p = &self.params;
        let v = Self::v_of(mode);
        let m = self.cells.len();
        let (z1, z2) = z.split_at(m);
        let (l1, l2) = lambda.split_at(m);
        let (d1, d2) = dz.split_at_mut(m);
        for k in 0..m {
            let df1_dz1 = p.a1 - p.b1 * v - p.c1 * z2[k];
            let df1_dz2 = -p.c1 * z1[k];
            let df2_dz2 = -p.a2 - p.b2 * v + p.c2 * z1[k];
            let df2_dz1 = p.c2 * z2[k];
            d1[k] += weight * (df1_dz1 * l1[k] + df2_dz1 * l2[k]);
            d2[k] += weight * (df1_dz2 * l1[k] + df2_dz2 * l2[k]);
        }
    }

    fn terminal_cost(&self, _z: &[f64]) -> f64 {
        0.0
    }

    fn add_terminal_cost_grad(&self, _z: &[f64], _weight: f64, _dz: &mut [f64]) {}

    fn running_cost(&self, z: &[f64], _u: &[f64]) -> f64 {
        let m = self.cells.len();
        let a = self.h * self.h;
        let (s1, s2) = self.steady;
        let mut acc = 0.0;
        for k in 0..m {
            acc += (z[k] - s1).powi(2) + (z[m + k] - s2).powi(2);
        }
        a * acc
    }

    fn add_running_cost_grad(
        &self,
        z: &[f64],
        _u: &[f64],
        weight: f64,
        dz: &mut [f64],
        _du: &mut [f64],
    ) {
        let m = self.cells.len();
        let a = self.h * self.h;
        let (s1, s2) = self.steady;
        for k in 0..m {
            dz[k] += weight * 2.0 * a * (z[k] - s1);
            dz[m + k] += weight * 2.0 * a * (z[m + k] - s2);
        }
    }

    fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "model": "lotka_volterra",
            "params": self.params,
            "active_cells": self.cells.len(),
            "spacing": self.h,
            "state_layout": "species 1 on active cells (row-major mask order), then species 2",
            "steady_state": [self.steady.0, self.steady.1],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_mask_fits_the_budget() {
        let m = build_lotka_volterra(LotkaVolterraParams::default()).unwrap();
        assert!(m.n_cells() <= 500 && m.n_cells() > 400, "{}", m.n_cells());
        assert_eq!(m.dim(), 2 * m.n_cells());
    }

    #[test]
    fn rejects_empty_mask() {
        let r = build_lotka_volterra(LotkaVolterraParams {
            n_side: 0,
            ..Default::default()
        });
        assert!(matches!(r, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn steady_state_is_rest_point_without_control() {
        let m = build_lotka_volterra(LotkaVolterraParams {
            n_side: 10,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(m.steady_state(), (1.0, 1.0));
        let z = vec![1.0; m.dim()];
        let mut f = vec![0.0; m.dim()];
        m.add_mode_rhs(0, 0.0, &z, &[], 1.0, &mut f);
        assert!(f.iter().all(|&x| x == 0.0));
        assert_eq!(m.running_cost(&z, &[]), 0.0);
        assert!(m.linear_op().apply(&z).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn laplacian_columns_sum_to_zero() {
        let m = build_lotka_volterra(LotkaVolterraParams {
            n_side: 12,
            ..Default::default()
        })
        .unwrap();
        let ones = vec![1.0; m.dim()];
        let mut col = vec![0.0; m.dim()];
        m.linear_op().mul_vec_transpose(&ones, &mut col);
        assert!(col.iter().all(|x| x.abs() < 1e-10));
    }
}
