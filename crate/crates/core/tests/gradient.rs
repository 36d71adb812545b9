use miocp::evolution::{
    build_heat2d, build_lotka_volterra, build_scalar, AffineMode, HeatParams, LotkaVolterraParams,
    ScalarParams, SemilinearModel,
};
use miocp::grid::TimeGrid;
use miocp::relaxed::{adjoint_gradient, finite_difference_gradient};
use miocp::rounding::RelaxedControl;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_control(
    rng: &mut ChaCha8Rng,
    grid: &TimeGrid,
    n_modes: usize,
    bounds: &[(f64, f64)],
) -> RelaxedControl {
    let n = grid.n_cells();
    let alpha: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..n_modes).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|x| x / s).collect()
        })
        .collect();
    let omega: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| rng.gen_range(lo.max(-2.0)..hi.min(2.0)))
                .collect()
        })
        .collect();
    RelaxedControl::new(grid.clone(), omega, alpha).unwrap()
}

fn max_rel_error(
    model: &dyn SemilinearModel,
    control: &RelaxedControl,
    substeps: usize,
    step: f64,
) -> f64 {
    let (_, adj, _) = adjoint_gradient(model, control, substeps).unwrap();
    let fd = finite_difference_gradient(model, control, substeps, step).unwrap();
    let a = adj.flatten();
    let f = fd.flatten();
    let scale = f.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
    a.iter()
        .zip(&f)
        .map(|(x, y)| (x - y).abs() / scale)
        .fold(0.0, f64::max)
}

#[test]
fn scalar_affine_gradient() {
    let model = build_scalar(ScalarParams {
        a: -0.7,
        z0: 0.4,
        t_final: 2.0,
        modes: vec![
            AffineMode {
                offset: 1.0,
                state: -0.5,
                control: 1.0,
            },
            AffineMode {
                offset: -1.0,
                state: 0.3,
                control: 0.5,
            },
            AffineMode {
                offset: 0.2,
                state: 0.0,
                control: -1.0,
            },
        ],
        with_control: true,
        u_min: -1.0,
        u_max: 1.0,
        terminal_weight: 1.5,
        terminal_target: 0.3,
        state_weight: 1.0,
        state_target: -0.2,
        control_weight: 0.1,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = TimeGrid::new(vec![0.0, 0.3, 0.9, 1.0, 1.6, 2.0]).unwrap();
    for _ in 0..5 {
        let c = random_control(&mut rng, &grid, 3, &[(-1.0, 1.0)]);
        let e = max_rel_error(&model, &c, 3, 1e-6);
        assert!(e <= 1e-7, "relative error {e}");
    }
}

#[test]
fn lotka_volterra_gradient() {
    let model = build_lotka_volterra(LotkaVolterraParams {
        n_side: 8,
        t_final: 3.0,
        ..Default::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = TimeGrid::uniform(3.0, 4).unwrap();
    let c = random_control(&mut rng, &grid, 2, &[]);
    let e = max_rel_error(&model, &c, 8, 1e-5);
    assert!(e <= 1e-6, "relative error {e}");
}

#[test]
fn heat_gradient() {
    let model = build_heat2d(HeatParams {
        n_xi: 8,
        n_zeta: 16,
        t_final: 3.0,
        ..Default::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid = TimeGrid::uniform(3.0, 3).unwrap();
    let c = random_control(&mut rng, &grid, 9, &[(-2.0, 2.0)]);
    let e = max_rel_error(&model, &c, 4, 1e-4);
    assert!(e <= 1e-6, "relative error {e}");
}
