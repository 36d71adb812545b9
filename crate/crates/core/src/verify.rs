//! Randomized self-checks against independent oracles, reported as
//! machine-readable pass/fail criteria.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::combinatorial::{brute_force_minmax, solve_minmax, CellAverages, SwitchBudget};
use crate::error::{Error, Result};
use crate::evolution::{
    build_heat2d, build_lotka_volterra, HeatParams, LotkaVolterraParams, SemilinearModel,
};
use crate::grid::TimeGrid;
use crate::relaxed::{adjoint_gradient, finite_difference_gradient};
use crate::rounding::{accumulated_deviation, sur_round, RelaxedControl};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Criterion {
    pub name: String,
    pub passed: bool,
    /// Worst observed value.
    pub measured: f64,
    pub threshold: f64,
    pub instances: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suite: String,
    pub seed: u64,
    pub elapsed_secs: f64,
    pub criteria: Vec<Criterion>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }
}

pub const SUITES: [&str; 3] = ["rounding", "minmax", "gradient"];

/// Runs a named suite with its default instance count.
pub fn run_suite(name: &str, seed: u64) -> Result<VerifyReport> {
    match name {
        "rounding" => rounding_suite(seed, 1000),
        "minmax" => minmax_suite(seed, 200),
        "gradient" => gradient_suite(seed, 20),
        other => Err(Error::InvalidConfig(format!(
            "unknown suite '{other}' (expected one of {})",
            SUITES.join(", ")
        ))),
    }
}

/// Random grid on `[0, t_f]` with `n` cells of uneven length.
pub fn random_grid(rng: &mut impl Rng, n: usize) -> TimeGrid {
    let t_f = rng.gen_range(0.5..20.0);
    let lens: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = lens.iter().sum();
    let mut nodes = Vec::with_capacity(n + 1);
    nodes.push(0.0);
    let mut acc = 0.0;
    for l in &lens[..n - 1] {
        acc += l;
        nodes.push(acc / total * t_f);
    }
    nodes.push(t_f);
    TimeGrid::new(nodes).expect("positive lengths give a valid grid")
}

/// Random rows in the unit simplex, with occasional exact zeros, vertices
/// and ties.
pub fn random_simplex_rows(rng: &mut impl Rng, n: usize, n_modes: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| match rng.gen_range(0..10) {
            0 => {
                let mut row = vec![0.0; n_modes];
                row[rng.gen_range(0..n_modes)] = 1.0;
                row
            }
            1 => vec![1.0 / n_modes as f64; n_modes],
            _ => {
                let raw: Vec<f64> = (0..n_modes)
                    .map(|_| {
                        if rng.gen_bool(0.2) {
                            0.0
                        } else {
                            -rng.gen::<f64>().max(1e-300).ln()
                        }
                    })
                    .collect();
                let s: f64 = raw.iter().sum();
                if s == 0.0 {
                    vec![1.0 / n_modes as f64; n_modes]
                } else {
                    raw.iter().map(|x| x / s).collect()
                }
            }
        })
        .collect()
}

/// Sum-up rounding: one-hot output and the `(N-1) dt_max` deviation bound.
pub fn rounding_suite(seed: u64, instances: usize) -> Result<VerifyReport> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_ratio = 0.0f64;
    let mut bound_failures = 0;
    let mut sos1_failures = 0;
    for _ in 0..instances {
        let n_modes = rng.gen_range(1..=6);
        let n = rng.gen_range(1..=200);
        let grid = random_grid(&mut rng, n);
        let t_f = grid.t_final();
        let alpha = RelaxedControl::new(
            grid,
            vec![vec![]; n],
            random_simplex_rows(&mut rng, n, n_modes),
        )?;
        let beta = sur_round(&alpha);
        let one_hot = beta.rows().iter().all(|r| {
            r.iter().filter(|&&x| x == 1.0).count() == 1 && r.iter().all(|&x| x == 0.0 || x == 1.0)
        });
        if !one_hot {
            sos1_failures += 1;
        }
        let report = accumulated_deviation(&alpha, &beta)?;
        if !report.within_bound(t_f) {
            bound_failures += 1;
        }
        if report.bound > 0.0 {
            worst_ratio = worst_ratio.max(report.overall_max / report.bound);
        }
    }
    Ok(VerifyReport {
        suite: "rounding".into(),
        seed,
        elapsed_secs: started.elapsed().as_secs_f64(),
        criteria: vec![
            Criterion {
                name: "sur_deviation_bound".into(),
                passed: bound_failures == 0,
                measured: worst_ratio,
                threshold: 1.0,
                instances,
                detail: format!("{bound_failures} instances above (N-1) dt_max + 1e-10 t_f; measured is max deviation / bound"),
            },
            Criterion {
                name: "sur_sos1".into(),
                passed: sos1_failures == 0,
                measured: sos1_failures as f64,
                threshold: 0.0,
                instances,
                detail: "cells without exactly one active mode".into(),
            },
        ],
    })
}

/// Random budget over ordered pairs of `n_modes` modes; each pair is
/// constrained with probability one half.
pub fn random_budget(rng: &mut impl Rng, n_modes: usize, max_switches: u32) -> SwitchBudget {
    let mut b = SwitchBudget::new();
    for i in 0..n_modes {
        for j in 0..n_modes {
            if i != j && rng.gen_bool(0.5) {
                b.set(i, j, rng.gen_range(0..=max_switches))
                    .expect("distinct modes");
            }
        }
    }
    b
}

/// Branch-and-bound against exhaustive enumeration.
pub fn minmax_suite(seed: u64, instances: usize) -> Result<VerifyReport> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let mut worst_gap = 0.0f64;
    let mut budget_violations = 0;
    for _ in 0..instances {
        let n_modes = rng.gen_range(1..=3);
        let n = rng.gen_range(1..=8);
        let grid = random_grid(&mut rng, n);
        let q = CellAverages::new(random_simplex_rows(&mut rng, n, n_modes))?;
        let budget = random_budget(&mut rng, n_modes, 3);
        let fast = solve_minmax(&q, &grid, &budget)?;
        let exact = brute_force_minmax(&q, &grid, &budget)?;
        if fast.objective != exact.objective || !fast.optimal {
            mismatches += 1;
        }
        worst_gap = worst_gap.max((fast.objective - exact.objective).abs());
        if !budget.admits(&fast.p) {
            budget_violations += 1;
        }
    }
    Ok(VerifyReport {
        suite: "minmax".into(),
        seed,
        elapsed_secs: started.elapsed().as_secs_f64(),
        criteria: vec![
            Criterion {
                name: "minmax_matches_enumeration".into(),
                passed: mismatches == 0,
                measured: worst_gap,
                threshold: 0.0,
                instances,
                detail: format!("{mismatches} instances with a different objective"),
            },
            Criterion {
                name: "minmax_budget_feasible".into(),
                passed: budget_violations == 0,
                measured: budget_violations as f64,
                threshold: 0.0,
                instances,
                detail: "solutions violating a switch budget".into(),
            },
        ],
    })
}

/// Relaxed control with random multipliers and ordinary controls drawn
/// from the box intersected with `[-2, 2]`.
pub fn random_relaxed_control(
    rng: &mut impl Rng,
    grid: &TimeGrid,
    n_modes: usize,
    bounds: &[(f64, f64)],
) -> Result<RelaxedControl> {
    let n = grid.n_cells();
    let omega = (0..n)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| {
                    let (lo, hi) = (lo.max(-2.0), hi.min(2.0));
                    if lo < hi {
                        rng.gen_range(lo..hi)
                    } else {
                        lo
                    }
                })
                .collect()
        })
        .collect();
    RelaxedControl::new(grid.clone(), omega, random_simplex_rows(rng, n, n_modes))
}

/// `max |adjoint - fd| / max |fd|` for one control.
pub fn gradient_relative_error(
    model: &dyn SemilinearModel,
    control: &RelaxedControl,
    substeps: usize,
    fd_step: f64,
) -> Result<f64> {
    let (_, adjoint, _) = adjoint_gradient(model, control, substeps)?;
    let fd = finite_difference_gradient(model, control, substeps, fd_step)?;
    let a = adjoint.flatten();
    let f = fd.flatten();
    let scale = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = a
        .iter()
        .zip(&f)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// Heat on a 10 x 20 grid and the predator-prey model on a mask of at most
/// 200 cells, each on `instances` random controls and grids, integrated
/// with substeps of length at most 0.25.
pub fn gradient_suite(seed: u64, instances: usize) -> Result<VerifyReport> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heat = build_heat2d(HeatParams {
        n_xi: 10,
        n_zeta: 20,
        ..HeatParams::default()
    })?;
    let lotka = build_lotka_volterra(LotkaVolterraParams {
        n_side: 15,
        ..LotkaVolterraParams::default()
    })?;
    let models: [(&str, &dyn SemilinearModel); 2] = [("heat2d", &heat), ("lotka_volterra", &lotka)];
    let mut criteria = Vec::new();
    for (name, model) in models {
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let cells = rng.gen_range(2..=5);
            let grid = scaled_grid(&mut rng, cells, model.t_final());
            let control =
                random_relaxed_control(&mut rng, &grid, model.n_modes(), model.control_bounds())?;
            let substeps = (grid.dt_max() / 0.25).ceil().max(4.0) as usize;
            worst = worst.max(gradient_relative_error(model, &control, substeps, 1e-5)?);
        }
        criteria.push(Criterion {
            name: format!("gradient_{name}"),
            passed: worst <= 1e-5,
            measured: worst,
            threshold: 1e-5,
            instances,
            detail: format!("adjoint vs central differences, {} states", model.dim()),
        });
    }
    Ok(VerifyReport {
        suite: "gradient".into(),
        seed,
        elapsed_secs: started.elapsed().as_secs_f64(),
        criteria,
    })
}

fn scaled_grid(rng: &mut impl Rng, cells: usize, t_final: f64) -> TimeGrid {
    let g = random_grid(rng, cells);
    let s = t_final / g.t_final();
    let mut nodes: Vec<f64> = g.nodes().iter().map(|t| t * s).collect();
    *nodes.last_mut().expect("grid has nodes") = t_final;
    TimeGrid::new(nodes).expect("scaling keeps nodes increasing")
}
