mod common;

use meanfield::dynamics::{apriori_check, cost, integrate, PiecewiseConstantControl, TimeGrid};
use meanfield::system::{check_assumptions_in, make_attraction_system, RegularityConstants};
use meanfield::transport::{lp_distance, wasserstein_points};
use ndarray::Array3;
use rand::Rng;

/// RK4 at substeps = 1 agrees with a 1000x finer explicit-Euler reference
/// (Richardson-extrapolated to push the oracle's own first-order error
/// below the tolerance) on the attraction system.
#[test]
fn rk4_matches_fine_euler_reference() {
    let sys = make_attraction_system(2, 1.0).unwrap();
    let grid = TimeGrid::new(1.0, 16).unwrap();
    let mut rng = common::rng(7);
    let x0 = common::random_cloud(&mut rng, 8, 2, 1.0);
    let u = common::random_cloud(&mut rng, 8, 2, 0.5);
    let control = PiecewiseConstantControl::constant_per_particle(grid, u.points());

    let bundle = integrate(&sys, x0.points(), &control, 1).unwrap();
    let reference =
        common::richardson_euler_reference(&sys, &x0.points().to_owned(), &control, 1000);
    let dev = common::sup_deviation(&bundle, &reference);
    assert!(dev < 1e-6, "sup deviation {dev}");
}

/// Doubling substeps shrinks the error against a 16x reference by at least
/// a factor 8 (fourth-order behaviour).
#[test]
fn substep_refinement_is_fourth_order() {
    let sys = make_attraction_system(2, 1.0).unwrap();
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let mut rng = common::rng(11);
    let x0 = common::random_cloud(&mut rng, 6, 2, 2.0);
    let u = common::random_cloud(&mut rng, 6, 2, 0.5);
    let control = PiecewiseConstantControl::constant_per_particle(grid, u.points());

    let reference = integrate(&sys, x0.points(), &control, 64).unwrap();
    let mut errors = Vec::new();
    for substeps in [1, 2, 4] {
        let bundle = integrate(&sys, x0.points(), &control, substeps).unwrap();
        errors.push(common::bundle_deviation(&bundle, &reference));
    }
    assert!(
        errors[0] / errors[1] >= 8.0,
        "ratio {}",
        errors[0] / errors[1]
    );
    assert!(
        errors[1] / errors[2] >= 8.0,
        "ratio {}",
        errors[1] / errors[2]
    );
}

/// Control perturbations propagate at most linearly (stability): the state
/// deviation shrinks at least linearly as the control deviation shrinks,
/// within the Gronwall envelope e^{LT} L T delta.
#[test]
fn stability_in_the_control() {
    let sys = make_attraction_system(2, 2.0).unwrap();
    let grid = TimeGrid::new(1.0, 5).unwrap();
    let mut rng = common::rng(23);
    let x0 = common::random_cloud(&mut rng, 5, 2, 1.0);
    let u = common::random_cloud(&mut rng, 5, 2, 0.5);
    let direction = common::random_cloud(&mut rng, 5, 2, 1.0);
    let base = PiecewiseConstantControl::constant_per_particle(grid, u.points());
    let bundle0 = integrate(&sys, x0.points(), &base, 4).unwrap();

    let l = sys.constants().lipschitz;
    let t = grid.horizon();
    let envelope = (l * t).exp() * l * t;

    let mut prev_dev = f64::INFINITY;
    for &delta in &[0.2, 0.1, 0.05, 0.025] {
        let mut perturbed = base.clone();
        let mut worst_cell_dev = 0.0_f64;
        {
            let values = perturbed.values_mut();
            for i in 0..5 {
                let mut step = 0.0;
                for j in 0..2 {
                    let offset = delta * direction.point(i)[j];
                    step += offset * offset;
                    for k in 0..grid.cells() {
                        values[(k, i, j)] += offset;
                    }
                }
                worst_cell_dev = worst_cell_dev.max(step.sqrt());
            }
        }
        let bundle1 = integrate(&sys, x0.points(), &perturbed, 4).unwrap();
        let dev = common::bundle_deviation(&bundle1, &bundle0);
        assert!(
            dev <= envelope * worst_cell_dev * 1.05,
            "delta={delta}: deviation {dev} above envelope {}",
            envelope * worst_cell_dev
        );
        // at least linear shrinkage
        assert!(dev <= 0.6 * prev_dev || prev_dev == f64::INFINITY);
        prev_dev = dev;
    }
}

/// Pushing two bundles' slices through the transport bound: W_p of the
/// empirical measures never exceeds the labelled L^p distance of the rows.
#[test]
fn empirical_measure_consistency_between_bundles() {
    let sys = make_attraction_system(2, 1.0).unwrap();
    let grid = TimeGrid::new(1.0, 6).unwrap();
    let mut rng = common::rng(31);
    let x0 = common::random_cloud(&mut rng, 6, 2, 1.5);
    let ua = common::random_cloud(&mut rng, 6, 2, 0.5);
    let ub = common::random_cloud(&mut rng, 6, 2, 0.5);
    let ca = PiecewiseConstantControl::constant_per_particle(grid, ua.points());
    let cb = PiecewiseConstantControl::constant_per_particle(grid, ub.points());
    let a = integrate(&sys, x0.points(), &ca, 4).unwrap();
    let b = integrate(&sys, x0.points(), &cb, 4).unwrap();
    for k in 0..=grid.cells() {
        for p in [1.0, 2.0] {
            let (w, _) = wasserstein_points(a.state_at(k), b.state_at(k), p).unwrap();
            let lp = lp_distance(a.state_at(k), b.state_at(k), p).unwrap();
            assert!(w <= lp + 1e-12);
        }
    }
}

/// 500 random attraction-family runs with constants taken from the checker:
/// the Gronwall a priori bounds never fail.
#[test]
fn apriori_bounds_hold_on_random_validated_runs() {
    let mut rng = common::rng(1009);
    let mut failures = 0;
    for trial in 0..500 {
        let n = rng.gen_range(2..=6);
        let d = rng.gen_range(1..=3);
        let radius = rng.gen_range(0.2..=2.0);
        let cells = rng.gen_range(1..=5);
        let horizon = rng.gen_range(0.5..=2.0);
        let sys = make_attraction_system(d, radius).unwrap();

        // declare the observed growth ratio, then verify the bound with it
        let report = check_assumptions_in(&sys, 400, trial as u64, 1e-9, 5.0).unwrap();
        let constants = RegularityConstants::new(
            sys.constants().lipschitz,
            report.field_growth_ratio.max(1e-6),
            sys.constants().cost_growth,
        )
        .unwrap();
        let sys = sys.with_constants(constants);

        let grid = TimeGrid::new(horizon, cells).unwrap();
        let x0 = common::random_cloud(&mut rng, n, d, 3.0);
        let mut controls = Array3::zeros((cells, n, d));
        for k in 0..cells {
            for i in 0..n {
                let u = sys.control_set().sample(&mut rng);
                for j in 0..d {
                    controls[(k, i, j)] = u[j];
                }
            }
        }
        let control = PiecewiseConstantControl::new(grid, controls).unwrap();
        let bundle = integrate(&sys, x0.points(), &control, 4).unwrap();
        let verdict = apriori_check(&bundle, &sys, x0.points());
        if !verdict.passed() {
            failures += 1;
        }
    }
    assert_eq!(failures, 0);
}

/// Bounded controls on the barycenter system stay inside the Gronwall
/// envelope with the declared growth constant C >= R.
#[test]
fn apriori_bounds_hold_for_barycenter_runs() {
    use meanfield::system::make_barycenter_system;
    let mut rng = common::rng(400);
    let nu = common::random_cloud(&mut rng, 5, 2, 1.0);
    let sys = make_barycenter_system(nu, 1.5).unwrap();
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let x0 = common::random_cloud(&mut rng, 5, 2, 2.0);
    for trial in 0..20u64 {
        let mut controls = Array3::zeros((4, 5, 2));
        let mut crng = common::rng(trial);
        for k in 0..4 {
            for i in 0..5 {
                let u = sys.control_set().sample(&mut crng);
                controls[(k, i, 0)] = u[0];
                controls[(k, i, 1)] = u[1];
            }
        }
        let control = PiecewiseConstantControl::new(grid, controls).unwrap();
        let bundle = integrate(&sys, x0.points(), &control, 2).unwrap();
        let verdict = apriori_check(&bundle, &sys, x0.points());
        assert!(verdict.passed(), "trial {trial}: {verdict:?}");
    }
}

/// Identical inputs, bit-identical outputs, independent of repetition.
#[test]
fn integration_is_deterministic() {
    let sys = make_attraction_system(3, 1.0).unwrap();
    let grid = TimeGrid::new(1.5, 7).unwrap();
    let mut rng = common::rng(77);
    let x0 = common::random_cloud(&mut rng, 4, 3, 2.0);
    let u = common::random_cloud(&mut rng, 4, 3, 0.3);
    let control = PiecewiseConstantControl::constant_per_particle(grid, u.points());
    let a = integrate(&sys, x0.points(), &control, 4).unwrap();
    let b = integrate(&sys, x0.points(), &control, 4).unwrap();
    assert!(a
        .states()
        .iter()
        .zip(b.states().iter())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    let ja = cost(&sys, &a, &control).unwrap();
    let jb = cost(&sys, &b, &control).unwrap();
    assert_eq!(ja.to_bits(), jb.to_bits());
}
