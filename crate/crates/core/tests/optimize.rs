mod common;

use meanfield::dynamics::{cost, integrate, PiecewiseConstantControl, TimeGrid};
use meanfield::optimize::{
    barycenter_reference, counterexample_instance, estimate_value, estimate_value_with,
    gamma_sweep, splitting_diagnostic, GammaBenchmark, OptimizerConfig,
};
use meanfield::system::{make_attraction_system, make_barycenter_system};
use meanfield::transport::{wasserstein, EmpiricalMeasure};

fn quick_config(seed: u64) -> OptimizerConfig {
    OptimizerConfig {
        starts: 2,
        max_iters: 300,
        tol: 1e-7,
        substeps: 1,
        seed,
        ..Default::default()
    }
}

/// One particle from the origin to (1, 0): by calculus the optimum drives at
/// constant speed half way, paying |u|^2 + |Delta - u|^2 minimized at
/// u = Delta / 2 with value |Delta|^2 / 2 = 0.5.
#[test]
fn singleton_closed_form() {
    let nu = EmpiricalMeasure::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let sys = make_barycenter_system(nu, 1.0).unwrap();
    let x0 = EmpiricalMeasure::from_rows(&[vec![0.0, 0.0]]).unwrap();
    let grid = TimeGrid::new(1.0, 2).unwrap();
    let report = estimate_value(&sys, x0.points(), grid, &quick_config(1)).unwrap();
    assert!((report.value - 0.5).abs() <= 1e-3, "value {}", report.value);
    for k in 0..2 {
        let u = report.control.cell(k);
        assert!((u[(0, 0)] - 0.5).abs() <= 1e-3);
        assert!(u[(0, 1)].abs() <= 1e-3);
    }
    assert!(report.converged);
}

/// Simulating the analytic reference controls through the integrator and
/// cost reproduces the reference value to quadrature accuracy.
#[test]
fn reference_is_self_consistent_through_dynamics() {
    let mut rng = common::rng(200);
    let mu0 = common::random_cloud(&mut rng, 6, 2, 1.0);
    let nu = common::random_cloud(&mut rng, 6, 2, 1.0);
    let reference = barycenter_reference(&mu0, &nu, 1.0).unwrap();
    let sys = make_barycenter_system(nu, (reference.required_radius * 1.5).max(1.0)).unwrap();
    for cells in [1, 3, 10] {
        let grid = TimeGrid::new(1.0, cells).unwrap();
        let control =
            PiecewiseConstantControl::constant_per_particle(grid, reference.controls.view());
        let bundle = integrate(&sys, mu0.points(), &control, 1).unwrap();
        let j = cost(&sys, &bundle, &control).unwrap();
        assert!(
            (j - reference.value).abs() <= 1e-9,
            "K={cells}: {j} vs {}",
            reference.value
        );
    }
}

/// The reference's terminal cloud is the geodesic midpoint at T = 1.
#[test]
fn reference_midpoint_is_geodesic_point() {
    let mut rng = common::rng(201);
    let mu0 = common::random_cloud(&mut rng, 5, 2, 1.0);
    let nu = common::random_cloud(&mut rng, 5, 2, 1.0);
    let r = barycenter_reference(&mu0, &nu, 1.0).unwrap();
    let (w, _) = wasserstein(&mu0, &nu, 2.0).unwrap();
    let (to_mid, _) = wasserstein(&mu0, &r.midpoint, 2.0).unwrap();
    let (from_mid, _) = wasserstein(&r.midpoint, &nu, 2.0).unwrap();
    assert!((to_mid - 0.5 * w).abs() <= 1e-9);
    assert!((from_mid - 0.5 * w).abs() <= 1e-9);
    assert!((r.value - 0.5 * w * w).abs() <= 1e-12);
}

#[test]
fn optimizer_reaches_reference_on_small_instance() {
    let mut rng = common::rng(77);
    let mu0 = common::random_cloud(&mut rng, 8, 2, 1.0);
    let nu = common::random_cloud(&mut rng, 8, 2, 1.0);
    let reference = barycenter_reference(&mu0, &nu, 1.0).unwrap();
    let sys = make_barycenter_system(nu, (reference.required_radius * 1.5).max(1.0)).unwrap();
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let report = estimate_value(&sys, mu0.points(), grid, &quick_config(3)).unwrap();
    let rel = (report.value - reference.value).abs() / reference.value;
    assert!(rel <= 0.01, "relative gap {rel}");
    // upper-bound semantics: the estimate sits above the exact optimum
    assert!(report.value >= reference.value - 1e-9);
}

/// The report's value re-evaluates exactly as cost(integrate(control)).
#[test]
fn reported_value_matches_reported_control() {
    let mut rng = common::rng(91);
    let mu0 = common::random_cloud(&mut rng, 5, 2, 1.0);
    let nu = common::random_cloud(&mut rng, 5, 2, 1.0);
    let reference = barycenter_reference(&mu0, &nu, 1.0).unwrap();
    let sys = make_barycenter_system(nu, (reference.required_radius * 1.5).max(1.0)).unwrap();
    let grid = TimeGrid::new(1.0, 3).unwrap();
    let config = OptimizerConfig {
        starts: 1,
        max_iters: 40,
        substeps: 2,
        seed: 5,
        ..Default::default()
    };
    let report = estimate_value(&sys, mu0.points(), grid, &config).unwrap();
    let bundle = integrate(&sys, mu0.points(), &report.control, 2).unwrap();
    let j = cost(&sys, &bundle, &report.control).unwrap();
    assert!((j - report.value).abs() <= 1e-12);
}

/// Consistency of the differentiation stencil: the central difference with
/// step eps agrees with the one-sided difference at half step to O(eps) on
/// a smooth system.
#[test]
fn difference_stencils_are_consistent() {
    let sys = make_attraction_system(2, 1.0).unwrap();
    let grid = TimeGrid::new(1.0, 3).unwrap();
    let mut rng = common::rng(55);
    let x0 = common::random_cloud(&mut rng, 4, 2, 1.0);
    let u = common::random_cloud(&mut rng, 4, 2, 0.4);
    let control = PiecewiseConstantControl::constant_per_particle(grid, u.points());

    let eval = |ctrl: &PiecewiseConstantControl| -> f64 {
        let bundle = integrate(&sys, x0.points(), ctrl, 4).unwrap();
        cost(&sys, &bundle, ctrl).unwrap()
    };
    let j0 = eval(&control);
    let eps = 1e-4;
    for &(k, i, j) in &[(0usize, 0usize, 0usize), (1, 2, 1), (2, 3, 0)] {
        let mut plus = control.clone();
        plus.values_mut()[(k, i, j)] += eps;
        let mut minus = control.clone();
        minus.values_mut()[(k, i, j)] -= eps;
        let mut half = control.clone();
        half.values_mut()[(k, i, j)] += 0.5 * eps;
        let central = (eval(&plus) - eval(&minus)) / (2.0 * eps);
        let one_sided = (eval(&half) - j0) / (0.5 * eps);
        assert!(
            (central - one_sided).abs() <= 50.0 * eps,
            "stencils differ: {central} vs {one_sided}"
        );
    }
}

/// Warm-starting at the analytic optimizer terminates at the first
/// stationarity check with the value unchanged.
#[test]
fn warm_start_certificate() {
    let mut rng = common::rng(103);
    let mu0 = common::random_cloud(&mut rng, 6, 2, 1.0);
    let nu = common::random_cloud(&mut rng, 6, 2, 1.0);
    let reference = barycenter_reference(&mu0, &nu, 1.0).unwrap();
    let sys = make_barycenter_system(nu, (reference.required_radius * 1.5).max(1.0)).unwrap();
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let warm = PiecewiseConstantControl::constant_per_particle(grid, reference.controls.view());
    let config = OptimizerConfig {
        starts: 1,
        tol: 1e-6,
        substeps: 1,
        seed: 0,
        ..Default::default()
    };
    let report = estimate_value_with(&sys, mu0.points(), grid, &config, Some(&warm)).unwrap();
    assert!(report.converged);
    assert_eq!(report.histories[0].iterations, 0);
    assert!((report.value - reference.value).abs() <= 1e-9);
}

/// Refining the grid cannot raise the best value on the barycenter
/// instance, whose optimum is grid-independent.
#[test]
fn grid_refinement_does_not_raise_the_value() {
    let mut rng = common::rng(111);
    let mu0 = common::random_cloud(&mut rng, 4, 2, 1.0);
    let nu = common::random_cloud(&mut rng, 4, 2, 1.0);
    let reference = barycenter_reference(&mu0, &nu, 1.0).unwrap();
    let sys = make_barycenter_system(nu, (reference.required_radius * 1.5).max(1.0)).unwrap();
    let config = OptimizerConfig {
        starts: 2,
        tol: 1e-8,
        substeps: 1,
        seed: 9,
        ..Default::default()
    };
    let coarse =
        estimate_value(&sys, mu0.points(), TimeGrid::new(1.0, 1).unwrap(), &config).unwrap();
    let fine = estimate_value(&sys, mu0.points(), TimeGrid::new(1.0, 4).unwrap(), &config).unwrap();
    assert!(fine.value <= coarse.value + 1e-6);
}

/// k = 2 instance: the 4-particle discrete reference agrees with exhaustive
/// minimization over all 24 permutations (frozen value 5/128).
#[test]
fn counterexample_reference_matches_brute_force_at_k2() {
    let (mu0, nu) = counterexample_instance(2).unwrap();
    let brute = common::brute_force_wasserstein(&mu0, &nu, 2.0);
    let reference = barycenter_reference(&mu0, &nu, 1.0).unwrap();
    assert!((reference.value - 0.5 * brute * brute).abs() <= 1e-12);
    assert!((reference.value - 0.0390625).abs() <= 1e-12);
}

/// The discrete reference approaches the continuum values: at k = 20 the
/// squared transport cost is within a per-mille of 1/12 and the value of
/// 1/24.
#[test]
fn counterexample_reference_approaches_continuum_at_k20() {
    let (mu0, nu) = counterexample_instance(20).unwrap();
    let (w2, _) = wasserstein(&mu0, &nu, 2.0).unwrap();
    assert!(
        ((w2 * w2) - 1.0 / 12.0).abs() / (1.0 / 12.0) <= 1e-3,
        "W2^2 = {}",
        w2 * w2
    );
    let reference = barycenter_reference(&mu0, &nu, 1.0).unwrap();
    assert!(
        (reference.value - 1.0 / 24.0).abs() / (1.0 / 24.0) <= 1e-3,
        "value {}",
        reference.value
    );
}

/// Matched targets of adjacent segment points split across the square: the
/// diagnostic stays above 1/4 as the resolution grows.
#[test]
fn splitting_diagnostic_stays_large() {
    for k in [4usize, 8] {
        let (mu0, nu) = counterexample_instance(k).unwrap();
        let split = splitting_diagnostic(&mu0, &nu).unwrap();
        assert!(split >= 0.25, "k={k}: split {split}");
    }
}

#[test]
fn gamma_identical_benchmark_rows_are_zero() {
    let grid = TimeGrid::new(1.0, 2).unwrap();
    let config = OptimizerConfig {
        starts: 1,
        max_iters: 200,
        tol: 1e-8,
        substeps: 1,
        seed: 4,
        ..Default::default()
    };
    let table = gamma_sweep(
        GammaBenchmark::BarycenterIdentical { seed: 11 },
        &[2, 3],
        grid,
        &config,
    )
    .unwrap();
    assert_eq!(table.rows.len(), 2);
    for row in &table.rows {
        assert!(row.value.abs() <= 1e-6, "N={}: value {}", row.n, row.value);
        assert_eq!(row.reference, 0.0);
    }
    assert!(table.continuum_reference.is_none());
}

/// Exhausting the budget without reaching stationarity reports
/// not-converged.
#[test]
fn budget_exhaustion_sets_not_converged() {
    let mut rng = common::rng(19);
    let mu0 = common::random_cloud(&mut rng, 4, 2, 1.0);
    let nu = common::random_cloud(&mut rng, 4, 2, 1.0);
    let sys = make_barycenter_system(nu, 2.0).unwrap();
    let grid = TimeGrid::new(1.0, 2).unwrap();
    let config = OptimizerConfig {
        starts: 2,
        max_iters: 1,
        tol: 1e-14,
        substeps: 1,
        seed: 2,
        ..Default::default()
    };
    let report = estimate_value(&sys, mu0.points(), grid, &config).unwrap();
    assert!(!report.converged);
    for h in &report.histories {
        assert!(!h.converged);
    }
}
