//! Integer-feasible controls for mixed-integer optimal control of
//! semidiscretized semilinear evolution equations.
//!
//! The relaxed problem with convex mode multipliers is solved by a direct
//! method with discrete-adjoint gradients; its multipliers are rounded
//! either by sum-up rounding or by a switching-budget-aware min-max
//! problem; the control grid is refined by bisection until the integer
//! solution's cost is close to the relaxed one.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments,
    clippy::type_complexity
)]

pub mod combinatorial;
pub mod driver;
pub mod error;
pub mod evolution;
pub mod experiment;
pub mod grid;
pub mod numeric;
pub mod relaxed;
pub mod rounding;
pub mod verify;

pub use error::{Error, Result};
pub use grid::TimeGrid;
