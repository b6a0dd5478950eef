//! Shared test oracles, independent of the library's implementation paths:
//! brute-force assignment minimization and a fine-step explicit Euler
//! integrator.

#![allow(dead_code)]

use meanfield::dynamics::{PiecewiseConstantControl, TrajectoryBundle};
use meanfield::system::ControlSystem;
use meanfield::transport::{EmpiricalMeasure, MeasureView};
use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> EmpiricalMeasure {
    let mut pts = Array2::zeros((n, d));
    for i in 0..n {
        for j in 0..d {
            pts[(i, j)] = rng.gen_range(-scale..=scale);
        }
    }
    EmpiricalMeasure::new(pts).unwrap()
}

fn pair_dist(a: &EmpiricalMeasure, i: usize, b: &EmpiricalMeasure, j: usize) -> f64 {
    a.point(i)
        .iter()
        .zip(b.point(j).iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for smaller in permutations(n - 1) {
        for pos in 0..n {
            let mut perm = smaller.clone();
            perm.insert(pos, n - 1);
            out.push(perm);
        }
    }
    out
}

/// Exhaustive minimum of `((1/N) sum_i |x_i - y_{pi(i)}|^p)^(1/p)` over all
/// N! permutations. Usable up to N = 8 or so.
pub fn brute_force_wasserstein(a: &EmpiricalMeasure, b: &EmpiricalMeasure, p: f64) -> f64 {
    let n = a.len();
    let mut best = f64::INFINITY;
    for perm in permutations(n) {
        let total: f64 = (0..n).map(|i| pair_dist(a, i, b, perm[i]).powf(p)).sum();
        best = best.min(total);
    }
    (best / n as f64).powf(1.0 / p)
}

/// Explicit Euler reference for the coupled mean-field system, with
/// `steps_per_cell` uniform steps inside every grid cell and the same
/// constant-per-cell control semantics as the production integrator.
/// First-order but trivially correct; run it with a very fine step.
pub fn euler_reference(
    system: &ControlSystem,
    x0: &Array2<f64>,
    control: &PiecewiseConstantControl,
    steps_per_cell: usize,
) -> Array3<f64> {
    let grid = control.grid();
    let (n, d) = x0.dim();
    let mut states = Array3::zeros((grid.cells() + 1, n, d));
    states.index_axis_mut(Axis(0), 0).assign(x0);
    let mut x = x0.clone();
    let h = grid.step() / steps_per_cell as f64;
    let mut vel = vec![0.0; d];
    for k in 0..grid.cells() {
        let block = control.cell(k);
        for _ in 0..steps_per_cell {
            let snapshot = x.clone();
            let mu = MeasureView::new(snapshot.view());
            for i in 0..n {
                let xi = snapshot.row(i);
                let ui = block.row(i);
                system.eval_field(
                    xi.as_slice().unwrap(),
                    ui.as_slice().unwrap(),
                    &mu,
                    &mut vel,
                );
                for j in 0..d {
                    x[(i, j)] += h * vel[j];
                }
            }
        }
        states.index_axis_mut(Axis(0), k + 1).assign(&x);
    }
    states
}

/// Richardson extrapolation of two explicit-Euler runs (steps and 2x
/// steps): second-order accurate, still independent of the RK4 path.
pub fn richardson_euler_reference(
    system: &ControlSystem,
    x0: &Array2<f64>,
    control: &PiecewiseConstantControl,
    steps_per_cell: usize,
) -> Array3<f64> {
    let coarse = euler_reference(system, x0, control, steps_per_cell);
    let fine = euler_reference(system, x0, control, 2 * steps_per_cell);
    2.0 * &fine - &coarse
}

/// Sup over nodes and particles of the Euclidean state deviation.
pub fn sup_deviation(a: &TrajectoryBundle, b: &Array3<f64>) -> f64 {
    let mut worst = 0.0_f64;
    let (nodes, n, d) = b.dim();
    for k in 0..nodes {
        let sa = a.state_at(k);
        for i in 0..n {
            let dev: f64 = (0..d)
                .map(|j| (sa[(i, j)] - b[(k, i, j)]).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(dev);
        }
    }
    worst
}

/// Sup deviation between two bundles on a shared grid.
pub fn bundle_deviation(a: &TrajectoryBundle, b: &TrajectoryBundle) -> f64 {
    sup_deviation(a, b.states())
}

/// Euclidean sup deviation of the final states of two bundles.
pub fn bundle_deviation_at_end(a: &TrajectoryBundle, b: &TrajectoryBundle) -> f64 {
    let fa = a.final_state();
    let fb = b.final_state();
    let mut worst = 0.0_f64;
    for i in 0..fa.nrows() {
        let dev: f64 = (0..fa.ncols())
            .map(|j| (fa[(i, j)] - fb[(i, j)]).powi(2))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(dev);
    }
    worst
}
