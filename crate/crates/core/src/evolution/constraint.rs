use serde::Serialize;

use super::model::Trajectory;

/// Pointwise state constraint `g(z(t), t) >= 0` with Lipschitz modulus
/// `zeta(t)` in the state.
pub struct StateConstraint {
    pub g: Box<dyn Fn(&[f64], f64) -> f64 + Send + Sync>,
    pub zeta: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

/// Ingredients of the deviation bound
/// `zeta(t) (C1 eps_k + C2 (N - 1) dt_k)`.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintBoundInputs {
    pub c1: f64,
    pub c2: f64,
    pub eps_k: f64,
    pub n_modes: usize,
    pub dt_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintReport {
    pub min_value: f64,
    pub argmin_time: f64,
    pub violated: bool,
    /// Largest value of the bound over the trajectory nodes.
    pub deviation_bound: Option<f64>,
}

pub fn check_state_constraint(
    traj: &Trajectory,
    c: &StateConstraint,
    bound: Option<ConstraintBoundInputs>,
) -> ConstraintReport {
    let mut min_value = f64::INFINITY;
    let mut argmin_time = 0.0;
    for (t, z) in traj.times.iter().zip(&traj.states) {
        let g = (c.g)(z, *t);
        if g < min_value {
            min_value = g;
            argmin_time = *t;
        }
    }
    let deviation_bound = bound.map(|b| {
        let per_unit = b.c1 * b.eps_k + b.c2 * (b.n_modes as f64 - 1.0) * b.dt_k;
        traj.times
            .iter()
            .map(|&t| (c.zeta)(t).max(0.0) * per_unit)
            .fold(0.0, f64::max)
    });
    ConstraintReport {
        min_value,
        argmin_time,
        violated: min_value < 0.0,
        deviation_bound,
    }
}
