mod common;

use meanfield::transport::{
    lp_distance, mccann_interpolate, moment, wasserstein, EmpiricalMeasure,
};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn three_point_line_matches_brute_force() {
    let mu =
        EmpiricalMeasure::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
    let nu =
        EmpiricalMeasure::from_rows(&[vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, 1.0]]).unwrap();
    let brute = common::brute_force_wasserstein(&mu, &nu, 2.0);
    assert!((brute - 1.0).abs() < 1e-15);
    let (d, plan) = wasserstein(&mu, &nu, 2.0).unwrap();
    assert!((d - 1.0).abs() < 1e-15);
    assert!(plan.is_identity());
}

#[test]
fn assignment_equals_brute_force_on_random_instances() {
    let mut rng = common::rng(2024);
    for trial in 0..60 {
        let n = rng.gen_range(1..=7);
        let d = rng.gen_range(1..=3);
        let p = if trial % 2 == 0 { 1.0 } else { 2.0 };
        let mu = common::random_cloud(&mut rng, n, d, 5.0);
        let nu = common::random_cloud(&mut rng, n, d, 5.0);
        let brute = common::brute_force_wasserstein(&mu, &nu, p);
        let (fast, plan) = wasserstein(&mu, &nu, p).unwrap();
        assert!(
            (fast - brute).abs() <= 1e-10 * brute.max(1.0),
            "n={n} d={d} p={p}: {fast} vs brute {brute}"
        );
        // the returned plan attains the reported distance
        let attained: f64 = (0..n)
            .map(|i| {
                mu.point(i)
                    .iter()
                    .zip(nu.point(plan.map(i)).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
                    .powf(p)
            })
            .sum::<f64>();
        let attained = (attained / n as f64).powf(1.0 / p);
        assert!((attained - fast).abs() <= 1e-10 * fast.max(1.0));
    }
}

#[test]
fn geodesic_interpolation_scales_distance() {
    let mut rng = common::rng(5);
    let mu = common::random_cloud(&mut rng, 6, 2, 2.0);
    let nu = common::random_cloud(&mut rng, 6, 2, 2.0);
    let (w, plan) = wasserstein(&mu, &nu, 2.0).unwrap();
    for &t in &[0.25, 0.5, 0.75] {
        let sigma = mccann_interpolate(&mu, &nu, &plan, t).unwrap();
        let (wt, _) = wasserstein(&mu, &sigma, 2.0).unwrap();
        assert!(
            (wt - t * w).abs() < 1e-9,
            "t={t}: W2(mu, sigma_t) = {wt}, expected {}",
            t * w
        );
    }
}

fn cloud_strategy(n: usize, d: usize) -> impl Strategy<Value = EmpiricalMeasure> {
    prop::collection::vec(prop::collection::vec(-10.0..10.0f64, d), n)
        .prop_map(|rows| EmpiricalMeasure::from_rows(&rows).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_axioms(
        (a, b, c) in (1usize..=6, 1usize..=3).prop_flat_map(|(n, d)| {
            (cloud_strategy(n, d), cloud_strategy(n, d), cloud_strategy(n, d))
        }),
        p in prop::sample::select(vec![1.0f64, 2.0]),
    ) {
        let (dab, _) = wasserstein(&a, &b, p).unwrap();
        let (dba, _) = wasserstein(&b, &a, p).unwrap();
        let (dac, _) = wasserstein(&a, &c, p).unwrap();
        let (dcb, _) = wasserstein(&c, &b, p).unwrap();
        let (daa, _) = wasserstein(&a, &a, p).unwrap();
        // symmetry, identity, triangle inequality
        prop_assert!((dab - dba).abs() <= 1e-10);
        prop_assert!(daa <= 1e-10);
        prop_assert!(dab <= dac + dcb + 1e-10);
        prop_assert!(dab >= 0.0);
    }

    #[test]
    fn pushforward_bound(
        (a, b) in (1usize..=6, 1usize..=3).prop_flat_map(|(n, d)| {
            (cloud_strategy(n, d), cloud_strategy(n, d))
        }),
        p in prop::sample::select(vec![1.0f64, 2.0]),
    ) {
        // W_p under the common indexing never exceeds the labelled L^p cost
        let (w, _) = wasserstein(&a, &b, p).unwrap();
        let lp = lp_distance(a.points(), b.points(), p).unwrap();
        prop_assert!(w <= lp + 1e-12);
    }

    #[test]
    fn moment_is_distance_to_origin_singleton(
        point in prop::collection::vec(-10.0..10.0f64, 1..=3),
        p in prop::sample::select(vec![1.0f64, 2.0]),
    ) {
        // m_p(mu) = W_p(mu, delta_0) for a singleton
        let mu = EmpiricalMeasure::from_rows(std::slice::from_ref(&point)).unwrap();
        let origin = EmpiricalMeasure::from_rows(&[vec![0.0; point.len()]]).unwrap();
        let (w, _) = wasserstein(&mu, &origin, p).unwrap();
        prop_assert!((moment(&mu, p).unwrap() - w).abs() <= 1e-12);
    }
}
