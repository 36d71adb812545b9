use miocp::combinatorial::SwitchBudget;
use miocp::driver::{
    profile_regularity_constants, relative_errors, run, run_algorithm1, run_algorithm2,
    AlgorithmConfig, RoundingMode, TermReason,
};
use miocp::evolution::{
    build_heat2d, build_lotka_volterra, build_scalar, evaluate_cost, integrate_fixed, AffineMode,
    HeatParams, LotkaVolterraParams, ScalarParams, SemilinearModel,
};
use miocp::grid::TimeGrid;
use miocp::rounding::RelaxedControl;

fn mode(offset: f64, state: f64) -> AffineMode {
    AffineMode {
        offset,
        state,
        control: 0.0,
    }
}

/// Two modes pulling in opposite directions with an interior target, so the
/// relaxed optimum chatters.
fn chattering() -> miocp::evolution::ScalarModel {
    build_scalar(ScalarParams {
        a: -0.2,
        z0: 0.0,
        t_final: 2.0,
        modes: vec![mode(1.0, 0.0), mode(-1.0, 0.0)],
        state_weight: 1.0,
        state_target: 0.3,
        ..ScalarParams::default()
    })
    .unwrap()
}

#[test]
fn bang_bang_optimum_exits_before_rounding() {
    let model = build_scalar(ScalarParams {
        t_final: 1.0,
        modes: vec![mode(1.0, 0.0), mode(-1.0, 0.0)],
        terminal_weight: 1.0,
        terminal_target: 2.0,
        ..ScalarParams::default()
    })
    .unwrap();
    let cfg = AlgorithmConfig::new(TimeGrid::uniform(1.0, 4).unwrap(), 1e-3, 1e-3, 3);
    let out = run_algorithm1(&model, &cfg).unwrap();
    assert_eq!(out.reason, TermReason::Step4);
    assert_eq!(out.history.len(), 1);
    assert!(out.solution.beta.modes().iter().all(|&m| m == 0));
    assert!((out.solution.cost - 1.0).abs() < 1e-12);
}

#[test]
fn sur_loop_refines_and_audits() {
    let model = chattering();
    let cfg = AlgorithmConfig::new(TimeGrid::uniform(2.0, 4).unwrap(), 1e-4, 1e-4, 3);
    let out = run(&model, &cfg).unwrap();
    let h = &out.history;
    assert!(h.len() >= 2);
    for (k, r) in h.iter().enumerate() {
        assert_eq!(r.k, k);
        assert!((r.dt_max - 0.5 / (1 << k) as f64).abs() < 1e-15);
        assert!(r.deviation.within_bound(2.0));
        assert_eq!(r.term_reason.is_some(), k + 1 == h.len());
    }
    let errs = relative_errors(h);
    assert!(errs.last().unwrap() < &errs[0]);

    let s = &out.solution;
    let again = integrate_fixed(
        &model,
        &s.omega,
        &s.beta.rows(),
        &s.beta.grid(),
        s.trajectory.substeps,
    )
    .unwrap();
    assert_eq!(evaluate_cost(&model, &again, &s.omega).unwrap(), s.cost);
}

#[test]
fn zero_budgets_give_a_constant_control() {
    let model = chattering();
    let mut cfg = AlgorithmConfig::new(TimeGrid::uniform(2.0, 4).unwrap(), 1e-4, 1e-4, 2);
    cfg.mode = RoundingMode::Minmax;
    cfg.budgets = Some(SwitchBudget::all_pairs(2, 0));
    let out = run_algorithm2(&model, &cfg).unwrap();
    let modes = out.solution.beta.modes();
    assert!(modes.iter().all(|&m| m == modes[0]));
    for r in &out.history {
        assert!(r.switch_counts.iter().flatten().all(|&c| c == 0));
    }
}

#[test]
fn loose_budgets_do_no_worse_than_sum_up_rounding() {
    let model = chattering();
    let mut cfg = AlgorithmConfig::new(TimeGrid::uniform(2.0, 4).unwrap(), 1e-4, 1e-4, 2);
    cfg.mode = RoundingMode::Minmax;
    cfg.budgets = Some(SwitchBudget::all_pairs(2, 1000));
    let out = run(&model, &cfg).unwrap();
    for r in &out.history {
        let j_sub = r.j_sub.unwrap();
        assert!(j_sub <= r.deviation.bound + 1e-12);
        assert_eq!(r.minmax_optimal, Some(true));
    }
    assert!(matches!(
        out.reason,
        TermReason::Step7Prime | TermReason::Cap
    ));
}

#[test]
fn min_max_loop_needs_budgets_and_matching_mode() {
    let model = chattering();
    let mut cfg = AlgorithmConfig::new(TimeGrid::uniform(2.0, 4).unwrap(), 1e-4, 1e-4, 1);
    assert!(run_algorithm2(&model, &cfg).is_err());
    cfg.mode = RoundingMode::Minmax;
    assert!(run_algorithm2(&model, &cfg).is_err());
    assert!(run_algorithm1(&model, &cfg).is_err());
    let short = AlgorithmConfig::new(TimeGrid::uniform(1.0, 4).unwrap(), 1e-4, 1e-4, 1);
    assert!(run(&model, &short).is_err());
}

#[test]
fn predator_prey_respects_a_switch_budget() {
    let model = build_lotka_volterra(LotkaVolterraParams {
        n_side: 8,
        ..LotkaVolterraParams::default()
    })
    .unwrap();
    let mut cfg = AlgorithmConfig::new(TimeGrid::uniform(15.0, 8).unwrap(), 1e-2, 1e-2, 1);
    cfg.mode = RoundingMode::Minmax;
    cfg.budgets = Some(
        SwitchBudget::new()
            .with(0, 1, 2)
            .unwrap()
            .with(1, 0, 2)
            .unwrap(),
    );
    cfg.solver.max_iters = 40;
    let out = run(&model, &cfg).unwrap();
    let budget = cfg.budgets.as_ref().unwrap();
    assert!(budget.admits(&out.solution.beta));
    for r in &out.history {
        assert!(r.switch_counts[0][1] <= 2 && r.switch_counts[1][0] <= 2);
    }
}

#[test]
fn profile_constants_scale_with_the_control() {
    let model = build_heat2d(HeatParams {
        n_xi: 10,
        n_zeta: 20,
        ..HeatParams::default()
    })
    .unwrap();
    let grid = TimeGrid::uniform(model.t_final(), 3).unwrap();
    let zero = RelaxedControl::uniform(grid.clone(), model.n_modes(), &[0.0]).unwrap();
    let p0 = profile_regularity_constants(&model, &zero, 1.0).unwrap();
    assert!(p0.holds && p0.c.iter().all(|&c| c == 0.0));
    let one = RelaxedControl::uniform(grid.clone(), model.n_modes(), &[1.0]).unwrap();
    let two = RelaxedControl::uniform(grid, model.n_modes(), &[2.0]).unwrap();
    let p1 = profile_regularity_constants(&model, &one, 1.0).unwrap();
    let p2 = profile_regularity_constants(&model, &two, 3.0).unwrap();
    for i in 0..model.n_modes() {
        assert!(p1.l_bar[i] > 0.0);
        assert!((p2.l_bar[i] - 2.0 * p1.l_bar[i]).abs() <= 1e-12 * p2.l_bar[i]);
        assert!((p2.c[i] - 3.0 * (p2.l_bar[i] + p2.c_bar[i])).abs() <= 1e-12 * p2.c[i]);
    }

    let lv = build_lotka_volterra(LotkaVolterraParams {
        n_side: 6,
        ..LotkaVolterraParams::default()
    })
    .unwrap();
    let c = RelaxedControl::uniform(TimeGrid::uniform(15.0, 2).unwrap(), 2, &[]).unwrap();
    assert!(profile_regularity_constants(&lv, &c, 1.0).is_err());
}
