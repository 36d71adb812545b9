//! Semidiscretized models, time integration and trajectory export.

mod constraint;
mod heat;
mod integrate;
mod lotka;
mod model;
mod scalar;
mod sparse;

use std::io::Write;

pub use constraint::{
    check_state_constraint, ConstraintBoundInputs, ConstraintReport, StateConstraint,
};
pub use heat::{actuator_positions, build_heat2d, HeatModel, HeatParams};
pub use integrate::{
    evaluate_cost, integrate, integrate_fixed, integrate_with, IntegratorOptions, THETA,
};
pub(crate) use integrate::{run_fixed, validate_inputs, Stepper};
pub use lotka::{build_lotka_volterra, LotkaVolterraModel, LotkaVolterraParams};
pub use model::{SemilinearModel, Trajectory};
pub use scalar::{build_scalar, AffineMode, ScalarModel, ScalarParams};
pub use sparse::{BandedLu, SparseMatrix};

use crate::error::{Error, Result};

/// One row per integration node: `t,z_0,...,z_{d-1}`.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let dim = traj.states.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((0..dim).map(|k| format!("z_{k}")));
    out.write_record(&header)?;
    for (t, z) in traj.times.iter().zip(&traj.states) {
        let mut rec = vec![t.to_string()];
        rec.extend(z.iter().map(f64::to_string));
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
    Ok(())
}

/// JSON sidecar describing a trajectory export.
pub fn trajectory_metadata(model: &dyn SemilinearModel, traj: &Trajectory) -> serde_json::Value {
    serde_json::json!({
        "model": model.metadata(),
        "dim": model.dim(),
        "control_grid": traj.grid.nodes(),
        "substeps_per_cell": traj.substeps,
        "accuracy": traj.accuracy,
        "nodes": traj.times.len(),
    })
}

/// `(t, ||z(t)||)` with the model's discrete `L^2` norm.
pub fn state_norms(model: &dyn SemilinearModel, traj: &Trajectory) -> Vec<(f64, f64)> {
    traj.times
        .iter()
        .zip(&traj.states)
        .map(|(&t, z)| (t, model.state_norm(z)))
        .collect()
}
