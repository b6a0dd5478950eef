//! Value-function estimation by direct transcription over piecewise-constant
//! controls, the barycenter analytic reference, and the convergence
//! experiment harness.
//!
//! The optimizer is projected gradient descent with backtracking and
//! multistart. Gradients are central finite differences through the
//! integrator and cost; a squared-Wasserstein terminal term is
//! differentiated through the optimal assignment frozen at the current
//! iterate (a generalized gradient away from the assignment-switching set,
//! and an exact majorizer everywhere). Perturbing the control of cell k
//! leaves the trajectory prefix untouched, so each coordinate re-integrates
//! only the tail cells.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;
use std::time::{Duration, Instant};

use crate::dynamics::{
    cost, integrate, rollout_tail, CellField, OrdinaryControl, PiecewiseConstantControl, TimeGrid,
    TrajectoryBundle,
};
use crate::error::{Error, Result};
use crate::rng;
use crate::system::{make_barycenter_system, ControlSystem, TerminalCost};
use crate::transport::{
    mccann_interpolate, wasserstein_points, Assignment, EmpiricalMeasure, MeasureView,
};

/// Knobs of the projected-gradient optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Independent random restarts.
    pub starts: usize,
    /// Iteration budget per start.
    pub max_iters: usize,
    /// Initial line-search step.
    pub initial_step: f64,
    /// Backtracking factor in (0, 1).
    pub backtracking: f64,
    /// Central-difference step; `None` selects cbrt(machine epsilon) scaled
    /// by the control magnitude.
    pub fd_step: Option<f64>,
    /// Stationarity tolerance on the RMS projected-gradient norm.
    pub tol: f64,
    /// RK4 substeps per grid cell.
    pub substeps: usize,
    /// Master seed for the multistart streams.
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            starts: 3,
            max_iters: 400,
            initial_step: 1.0,
            backtracking: 0.5,
            fd_step: None,
            tol: 1e-6,
            substeps: 4,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.starts == 0 || self.max_iters == 0 || self.substeps == 0 {
            return Err(Error::InvalidArgument(
                "starts, max_iters and substeps must be positive".into(),
            ));
        }
        if [self.initial_step, self.tol]
            .iter()
            .any(|c| c.is_nan() || *c <= 0.0)
        {
            return Err(Error::InvalidArgument(
                "initial_step and tol must be positive".into(),
            ));
        }
        if self.backtracking.is_nan() || self.backtracking <= 0.0 || self.backtracking >= 1.0 {
            return Err(Error::InvalidArgument(
                "backtracking factor must lie in (0, 1)".into(),
            ));
        }
        if let Some(h) = self.fd_step {
            if h.is_nan() || h <= 0.0 {
                return Err(Error::InvalidArgument("fd_step must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Convergence history of one start.
#[derive(Debug, Clone)]
pub struct StartHistory {
    /// Cost at the initial control and after every accepted iteration.
    pub values: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Result of a value estimation: the best local value found is an upper
/// bound on the discretized value function.
#[derive(Debug, Clone)]
pub struct ValueReport {
    pub value: f64,
    pub control: PiecewiseConstantControl,
    pub histories: Vec<StartHistory>,
    /// True when at least one start reached the stationarity tolerance.
    pub converged: bool,
    pub wall_time: Duration,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Terminal cost as seen by the finite-difference loop: the
/// squared-Wasserstein term is replaced by its quadratic at the assignment
/// frozen from the nominal trajectory.
enum FrozenTerminal {
    Zero,
    /// Per-particle targets `y_{pi(i)}` of the frozen optimal plan.
    Quadratic(Array2<f64>),
    /// Evaluate the custom callable as-is (cheap and smooth by contract).
    True,
}

impl FrozenTerminal {
    fn for_state(system: &ControlSystem, final_state: ArrayView2<'_, f64>) -> Result<Self> {
        Ok(match system.terminal() {
            TerminalCost::Zero => FrozenTerminal::Zero,
            TerminalCost::W2Squared { target } => {
                let (_, plan) = wasserstein_points(final_state, target.points(), 2.0)?;
                let mut aligned = Array2::zeros((final_state.nrows(), final_state.ncols()));
                for i in 0..final_state.nrows() {
                    aligned.row_mut(i).assign(&target.point(plan.map(i)));
                }
                FrozenTerminal::Quadratic(aligned)
            }
            TerminalCost::Custom(_) => FrozenTerminal::True,
        })
    }

    fn eval(&self, system: &ControlSystem, final_state: &Array2<f64>) -> Result<f64> {
        match self {
            FrozenTerminal::Zero => Ok(0.0),
            FrozenTerminal::Quadratic(targets) => {
                let n = final_state.nrows();
                let mut sum = 0.0;
                for i in 0..n {
                    for j in 0..final_state.ncols() {
                        let gap = final_state[(i, j)] - targets[(i, j)];
                        sum += gap * gap;
                    }
                }
                Ok(sum / n as f64)
            }
            FrozenTerminal::True => {
                system.eval_terminal_mean(&MeasureView::new(final_state.view()))
            }
        }
    }
}

/// Ordinary control with one (cell, particle) row overridden; lets the
/// finite-difference loop perturb a single coordinate without cloning the
/// whole control array.
struct PatchedControl<'a> {
    base: &'a PiecewiseConstantControl,
    cell: usize,
    particle: usize,
    row: Vec<f64>,
}

impl CellField for PatchedControl<'_> {
    fn eval_field(
        &self,
        system: &ControlSystem,
        cell: usize,
        particle: usize,
        x: &[f64],
        mu: &MeasureView<'_>,
        out: &mut [f64],
    ) {
        if cell == self.cell && particle == self.particle {
            system.eval_field(x, &self.row, mu, out);
        } else {
            OrdinaryControl(self.base).eval_field(system, cell, particle, x, mu, out);
        }
    }

    fn eval_running(
        &self,
        system: &ControlSystem,
        cell: usize,
        particle: usize,
        x: &[f64],
        mu: &MeasureView<'_>,
    ) -> f64 {
        if cell == self.cell && particle == self.particle {
            system.eval_running(x, &self.row, mu)
        } else {
            OrdinaryControl(self.base).eval_running(system, cell, particle, x, mu)
        }
    }
}

struct Objective<'s, 'x> {
    system: &'s ControlSystem,
    x0: ArrayView2<'x, f64>,
    grid: TimeGrid,
    substeps: usize,
}

impl Objective<'_, '_> {
    /// Integrate and evaluate the true cost (terminal assignment re-solved).
    fn eval_true(&self, control: &PiecewiseConstantControl) -> Result<(f64, TrajectoryBundle)> {
        let bundle = integrate(self.system, self.x0, control, self.substeps)?;
        let j = cost(self.system, &bundle, control)?;
        Ok((j, bundle))
    }

    /// Central-difference gradient through integrate + cost with the
    /// terminal assignment frozen at `bundle`. The prefix of the trajectory
    /// before the perturbed cell cancels in the difference, so each
    /// coordinate only rolls out the tail.
    fn gradient(
        &self,
        control: &PiecewiseConstantControl,
        bundle: &TrajectoryBundle,
        fd_step: Option<f64>,
    ) -> Result<Array3<f64>> {
        let frozen = FrozenTerminal::for_state(self.system, bundle.final_state())?;
        let (cells, n, m) = control.values().dim();
        let coords: Vec<(usize, usize, usize)> = (0..cells)
            .flat_map(|k| (0..n).flat_map(move |i| (0..m).map(move |j| (k, i, j))))
            .collect();
        let base_eps = fd_step.unwrap_or(f64::EPSILON.cbrt());

        let entries: Vec<f64> = coords
            .par_iter()
            .map(|&(k, i, j)| -> Result<f64> {
                let center = control.values()[(k, i, j)];
                let eps = base_eps * (1.0 + center.abs());
                let plus = self.tail_value(control, bundle, &frozen, k, i, j, center + eps)?;
                let minus = self.tail_value(control, bundle, &frozen, k, i, j, center - eps)?;
                Ok((plus - minus) / (2.0 * eps))
            })
            .collect::<Result<Vec<f64>>>()?;

        Ok(Array3::from_shape_vec((cells, n, m), entries).expect("coordinate order matches"))
    }

    /// Tail cost (running over cells >= k plus frozen terminal) with one
    /// control coordinate replaced.
    #[allow(clippy::too_many_arguments)]
    fn tail_value(
        &self,
        control: &PiecewiseConstantControl,
        bundle: &TrajectoryBundle,
        frozen: &FrozenTerminal,
        k: usize,
        i: usize,
        j: usize,
        value: f64,
    ) -> Result<f64> {
        let mut row = control.cell(k).row(i).to_vec();
        row[j] = value;
        let patched = PatchedControl {
            base: control,
            cell: k,
            particle: i,
            row,
        };
        let mut state = bundle.state_at(k).to_owned();
        let running = rollout_tail(
            self.system,
            &patched,
            self.grid,
            self.substeps,
            k,
            &mut state,
        )?;
        Ok(running + frozen.eval(self.system, &state)?)
    }

    /// RMS norm of the unit-step projected gradient
    /// `u - Proj_U(u - g)`; zero exactly at stationary points of the
    /// constrained problem.
    fn projected_gradient_norm(
        &self,
        control: &PiecewiseConstantControl,
        gradient: &Array3<f64>,
    ) -> f64 {
        let stepped = self.project_step(control, gradient, 1.0);
        let mut sq = 0.0;
        let mut count = 0usize;
        for (a, b) in control.values().iter().zip(stepped.values().iter()) {
            sq += (a - b) * (a - b);
            count += 1;
        }
        (sq / count as f64).sqrt()
    }

    /// `Proj_U(u - step g)`, projecting each (cell, particle) row.
    fn project_step(
        &self,
        control: &PiecewiseConstantControl,
        gradient: &Array3<f64>,
        step: f64,
    ) -> PiecewiseConstantControl {
        let mut values = control.values().clone();
        values.scaled_add(-step, gradient);
        let (cells, n, _) = values.dim();
        for k in 0..cells {
            let mut block = values.index_axis_mut(Axis(0), k);
            for i in 0..n {
                let mut row = block.row_mut(i);
                self.system
                    .control_set()
                    .project(row.as_slice_mut().expect("control rows are contiguous"));
            }
        }
        PiecewiseConstantControl::new(control.grid(), values).expect("projected values are finite")
    }

    fn run_start(
        &self,
        config: &OptimizerConfig,
        initial: PiecewiseConstantControl,
    ) -> Result<(f64, PiecewiseConstantControl, StartHistory)> {
        let mut u = initial;
        let (mut j_cur, mut bundle) = self.eval_true(&u)?;
        let mut values = vec![j_cur];
        let mut converged = false;
        let mut iterations = 0;
        let mut step = config.initial_step;

        for _ in 0..config.max_iters {
            let g = self.gradient(&u, &bundle, config.fd_step)?;
            if self.projected_gradient_norm(&u, &g) <= config.tol {
                converged = true;
                break;
            }
            iterations += 1;

            // regrow the step after successful iterations, then backtrack
            step /= config.backtracking;
            let mut accepted = false;
            for _ in 0..MAX_BACKTRACKS {
                let candidate = self.project_step(&u, &g, step);
                let move_sq: f64 = candidate
                    .values()
                    .iter()
                    .zip(u.values().iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if move_sq == 0.0 {
                    break; // projection absorbed the whole step
                }
                let (j_new, b_new) = self.eval_true(&candidate)?;
                if j_new <= j_cur - ARMIJO / step * move_sq {
                    u = candidate;
                    j_cur = j_new;
                    bundle = b_new;
                    accepted = true;
                    break;
                }
                step *= config.backtracking;
            }
            values.push(j_cur);
            if !accepted {
                break; // stalled: no acceptable step above rounding level
            }
        }

        Ok((
            j_cur,
            u,
            StartHistory {
                values,
                converged,
                iterations,
            },
        ))
    }
}

/// Estimate the N-particle value function by multistart projected gradient
/// descent over the K x N x m control array.
///
/// The first start is the cold start of direct transcription, the zero
/// control projected onto the control set; the remaining starts draw
/// uniform random controls. The cold start matters when the terminal cost
/// is a squared Wasserstein distance: its landscape is only piecewise
/// smooth and random starts tend to descend into the basin of a suboptimal
/// terminal matching, while from the uncontrolled trajectory the active
/// matching is the transport-optimal one. The returned best value is an
/// upper bound on the discretized value and re-evaluates exactly as
/// `cost(integrate(..))` at the reported control.
pub fn estimate_value(
    system: &ControlSystem,
    x0: ArrayView2<'_, f64>,
    grid: TimeGrid,
    config: &OptimizerConfig,
) -> Result<ValueReport> {
    estimate_value_with(system, x0, grid, config, None)
}

/// [`estimate_value`] with an optional warm start replacing the first
/// random start.
pub fn estimate_value_with(
    system: &ControlSystem,
    x0: ArrayView2<'_, f64>,
    grid: TimeGrid,
    config: &OptimizerConfig,
    warm: Option<&PiecewiseConstantControl>,
) -> Result<ValueReport> {
    config.validate()?;
    let clock = Instant::now();
    let objective = Objective {
        system,
        x0,
        grid,
        substeps: config.substeps,
    };
    let n = x0.nrows();
    let m = system.control_dim();

    // Starts are independent and run in parallel, each owning its control
    // array; aggregation below is order-independent (first strictly-best
    // start wins, in start order).
    let outcomes: Vec<(f64, PiecewiseConstantControl, StartHistory)> = (0..config.starts)
        .into_par_iter()
        .map(|start| {
            let initial = match (start, warm) {
                (0, Some(w)) => {
                    if w.grid() != grid {
                        return Err(Error::GridMismatch(
                            "warm start was built on a different grid".into(),
                        ));
                    }
                    w.clone()
                }
                (0, None) => {
                    // cold start: the zero control, projected onto the set
                    let mut zero = vec![0.0; m];
                    system.control_set().project(&mut zero);
                    PiecewiseConstantControl::constant(grid, n, &zero)
                }
                _ => {
                    let mut rng = rng::indexed_stream(config.seed, "optimizer-start", start as u64);
                    let mut values = Array3::zeros((grid.cells(), n, m));
                    for k in 0..grid.cells() {
                        for i in 0..n {
                            let sample = system.control_set().sample(&mut rng);
                            for (j, &c) in sample.iter().enumerate() {
                                values[(k, i, j)] = c;
                            }
                        }
                    }
                    PiecewiseConstantControl::new(grid, values)?
                }
            };
            objective.run_start(config, initial)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best: Option<(f64, PiecewiseConstantControl)> = None;
    let mut histories = Vec::with_capacity(config.starts);
    for (value, control, history) in outcomes {
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, control));
        }
        histories.push(history);
    }
    let (value, control) = best.expect("at least one start");
    let converged = histories.iter().any(|h| h.converged);
    Ok(ValueReport {
        value,
        control,
        histories,
        converged,
        wall_time: clock.elapsed(),
    })
}

/// Closed-form solution of the barycenter benchmark on one instance.
#[derive(Debug, Clone)]
pub struct BarycenterReference {
    /// `W_2^2(mu0, nu) / (1 + T)`; one half of `W_2^2` at T = 1.
    pub value: f64,
    /// Optimal constant controls, one row per particle:
    /// `(y_{pi(i)} - x_i) / (1 + T)`.
    pub controls: Array2<f64>,
    /// The attained terminal cloud, the geodesic point at `T / (1 + T)`
    /// (the McCann midpoint at T = 1).
    pub midpoint: EmpiricalMeasure,
    /// Smallest control radius for which the instance is feasible:
    /// `max_i |y_{pi(i)} - x_i| / (1 + T)`.
    pub required_radius: f64,
    pub plan: Assignment,
}

/// Solve the barycenter benchmark analytically: match `mu0` to `nu` by the
/// exact p = 2 assignment and drive every particle at constant speed towards
/// the geodesic point.
pub fn barycenter_reference(
    mu0: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    horizon: f64,
) -> Result<BarycenterReference> {
    if horizon.is_nan() || horizon <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let (w2, plan) = wasserstein_points(mu0.points(), nu.points(), 2.0)?;
    let n = mu0.len();
    let d = mu0.dim();
    let scale = 1.0 / (1.0 + horizon);
    let mut controls = Array2::zeros((n, d));
    let mut required_radius = 0.0_f64;
    for i in 0..n {
        let x = mu0.point(i);
        let y = nu.point(plan.map(i));
        let mut sq = 0.0;
        for j in 0..d {
            let u = (y[j] - x[j]) * scale;
            controls[(i, j)] = u;
            sq += u * u;
        }
        required_radius = required_radius.max(sq.sqrt());
    }
    let midpoint = mccann_interpolate(mu0, nu, &plan, horizon * scale)?;
    Ok(BarycenterReference {
        value: w2 * w2 * scale,
        controls,
        midpoint,
        required_radius,
        plan,
    })
}

/// Benchmarks of the convergence harness, addressable by id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaBenchmark {
    /// Segment-to-square instance whose continuum value is 1/24 and whose
    /// optimal transport map does not exist; N must be a perfect square.
    Counterexample,
    /// Random two-cloud barycenter instance per N; the discrete reference
    /// is exact, so rows measure pure optimizer error.
    Barycenter { seed: u64 },
    /// Degenerate instance with nu = mu0; the value is 0.
    BarycenterIdentical { seed: u64 },
}

impl GammaBenchmark {
    pub fn parse(id: &str, seed: u64) -> Result<Self> {
        match id {
            "counterexample" => Ok(GammaBenchmark::Counterexample),
            "barycenter" => Ok(GammaBenchmark::Barycenter { seed }),
            "barycenter-identical" => Ok(GammaBenchmark::BarycenterIdentical { seed }),
            other => Err(Error::InvalidArgument(format!(
                "unknown benchmark id: {other}"
            ))),
        }
    }
}

/// One row of the convergence experiment.
#[derive(Debug, Clone)]
pub struct GammaRow {
    pub n: usize,
    /// Optimizer estimate of the N-particle value.
    pub value: f64,
    /// Analytic or discrete reference for this row.
    pub reference: f64,
    /// `|value - reference| / max(|reference|, 1e-12)`.
    pub relative_error: f64,
    pub seconds: f64,
    pub converged: bool,
}

/// Value-vs-N table of a convergence sweep.
#[derive(Debug, Clone)]
pub struct GammaTable {
    pub benchmark: GammaBenchmark,
    pub rows: Vec<GammaRow>,
    /// The continuum value the rows approach, when the benchmark has one.
    pub continuum_reference: Option<f64>,
}

/// `W_2^2` between the continuum counterexample marginals (segment to unit
/// square): the integral of `(x_1 - 1/2)^2` over the square.
pub const COUNTEREXAMPLE_W2SQ: f64 = 1.0 / 12.0;

fn relative_error(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs().max(1e-12)
}

/// Run the value estimator across particle counts and record each estimate
/// against its reference. For the counterexample benchmark the reference is
/// the continuum value `1/(12 (1 + T))` (1/24 at T = 1); for the barycenter
/// benchmarks it is the per-N discrete reference.
pub fn gamma_sweep(
    benchmark: GammaBenchmark,
    sizes: &[usize],
    grid: TimeGrid,
    config: &OptimizerConfig,
) -> Result<GammaTable> {
    if sizes.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one particle count".into(),
        ));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "particle counts must be strictly increasing".into(),
        ));
    }
    let continuum = match benchmark {
        GammaBenchmark::Counterexample => Some(COUNTEREXAMPLE_W2SQ / (1.0 + grid.horizon())),
        _ => None,
    };

    // Rows are independent experiments; run them in parallel and collect in
    // input order.
    let rows: Vec<GammaRow> = sizes
        .par_iter()
        .map(|&n| -> Result<GammaRow> {
            let clock = Instant::now();
            let (mu0, nu) = match benchmark {
                GammaBenchmark::Counterexample => {
                    let k = (n as f64).sqrt().round() as usize;
                    if k * k != n || k < 2 {
                        return Err(Error::InvalidArgument(format!(
                            "counterexample benchmark needs N = k^2 with k >= 2, got {n}"
                        )));
                    }
                    counterexample_instance(k)?
                }
                GammaBenchmark::Barycenter { seed } => random_barycenter_instance(seed, n, false)?,
                GammaBenchmark::BarycenterIdentical { seed } => {
                    random_barycenter_instance(seed, n, true)?
                }
            };
            let reference_data = barycenter_reference(&mu0, &nu, grid.horizon())?;
            let reference = match benchmark {
                GammaBenchmark::Counterexample => continuum.expect("set above"),
                _ => reference_data.value,
            };
            let radius = (reference_data.required_radius * 1.5).max(1.0);
            let system = make_barycenter_system(nu.clone(), radius)?;
            let report = estimate_value(&system, mu0.points(), grid, config)?;
            Ok(GammaRow {
                n,
                value: report.value,
                reference,
                relative_error: relative_error(report.value, reference),
                seconds: clock.elapsed().as_secs_f64(),
                converged: report.converged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GammaTable {
        benchmark,
        rows,
        continuum_reference: continuum,
    })
}

fn random_barycenter_instance(
    seed: u64,
    n: usize,
    identical: bool,
) -> Result<(EmpiricalMeasure, EmpiricalMeasure)> {
    use rand::Rng;
    let mut rng = rng::indexed_stream(seed, "gamma-instance", n as u64);
    let mut draw = |shift: f64| -> Result<EmpiricalMeasure> {
        let mut pts = Array2::zeros((n, 2));
        for i in 0..n {
            pts[(i, 0)] = rng.gen_range(0.0..1.0) + shift;
            pts[(i, 1)] = rng.gen_range(0.0..1.0);
        }
        EmpiricalMeasure::new(pts)
    };
    let mu0 = draw(0.0)?;
    let nu = if identical { mu0.clone() } else { draw(1.0)? };
    Ok((mu0, nu))
}

/// The counterexample marginals at resolution k: mu0 samples the vertical
/// segment {1/2} x [0,1] at N = k^2 cell centers, nu is the k x k grid of
/// cell centers of the unit square. Both converge to their continuum limits
/// at rate O(1/k) in W_p.
pub fn counterexample_instance(k: usize) -> Result<(EmpiricalMeasure, EmpiricalMeasure)> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need k >= 2, got {k}")));
    }
    let n = k * k;
    let mut mu0 = Array2::zeros((n, 2));
    for j in 0..n {
        mu0[(j, 0)] = 0.5;
        mu0[(j, 1)] = (j as f64 + 0.5) / n as f64;
    }
    let mut nu = Array2::zeros((n, 2));
    for a in 0..k {
        for b in 0..k {
            nu[(a * k + b, 0)] = (a as f64 + 0.5) / k as f64;
            nu[(a * k + b, 1)] = (b as f64 + 0.5) / k as f64;
        }
    }
    Ok((EmpiricalMeasure::new(mu0)?, EmpiricalMeasure::new(nu)?))
}

/// Max over segment-adjacent initial points of the distance between their
/// matched terminal targets under the optimal p = 2 plan. Staying bounded
/// away from zero as N grows is the finite-N signature of the nonexistence
/// of an optimal transport map from the segment.
pub fn splitting_diagnostic(mu0: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    let (_, plan) = wasserstein_points(mu0.points(), nu.points(), 2.0)?;
    let mut worst = 0.0_f64;
    for j in 1..mu0.len() {
        let a = nu.point(plan.map(j - 1));
        let b = nu.point(plan.map(j));
        let gap: f64 = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(gap);
    }
    Ok(worst)
}

/// Full counterexample experiment at resolution k.
#[derive(Debug, Clone)]
pub struct CounterexampleReport {
    pub k: usize,
    pub n: usize,
    /// `W_2^2(mu0^N, nu^N) / (1 + T)`, the exact discretized value.
    pub discrete_reference: f64,
    /// Optimizer estimate of the N-particle value.
    pub optimizer: ValueReport,
    pub splitting: f64,
    /// Continuum value `1/(12 (1 + T))`.
    pub continuum_value: f64,
}

/// Run the nonexistence demonstration: discrete reference, optimizer value
/// and splitting diagnostic at resolution k.
pub fn counterexample_demo(
    k: usize,
    grid: TimeGrid,
    config: &OptimizerConfig,
) -> Result<CounterexampleReport> {
    let (mu0, nu) = counterexample_instance(k)?;
    let reference = barycenter_reference(&mu0, &nu, grid.horizon())?;
    let splitting = splitting_diagnostic(&mu0, &nu)?;
    let radius = (reference.required_radius * 1.5).max(1.0);
    let system = make_barycenter_system(nu.clone(), radius)?;
    let optimizer = estimate_value(&system, mu0.points(), grid, config)?;
    Ok(CounterexampleReport {
        k,
        n: k * k,
        discrete_reference: reference.value,
        optimizer,
        splitting,
        continuum_value: COUNTEREXAMPLE_W2SQ / (1.0 + grid.horizon()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::make_decoupled_system;

    #[test]
    fn zero_cost_converges_at_first_iterate() {
        let sys = make_decoupled_system(2, 1.0, false).unwrap();
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let x0 = ndarray::array![[0.0, 0.0], [1.0, 1.0]];
        let config = OptimizerConfig {
            starts: 1,
            ..Default::default()
        };
        let report = estimate_value(&sys, x0.view(), grid, &config).unwrap();
        assert_eq!(report.value, 0.0);
        assert!(report.converged);
        assert_eq!(report.histories[0].iterations, 0);
    }

    #[test]
    fn reference_on_identical_clouds_is_zero() {
        let mu = EmpiricalMeasure::from_rows(&[vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        let r = barycenter_reference(&mu, &mu, 1.0).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.controls.iter().all(|&c| c == 0.0));
        assert_eq!(r.midpoint.points(), mu.points());
        assert_eq!(r.required_radius, 0.0);
    }

    #[test]
    fn reference_on_singletons() {
        let mu = EmpiricalMeasure::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let nu = EmpiricalMeasure::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let r = barycenter_reference(&mu, &nu, 1.0).unwrap();
        assert!((r.value - 12.5).abs() < 1e-12);
        assert!((r.controls[(0, 0)] - 1.5).abs() < 1e-12);
        assert!((r.controls[(0, 1)] - 2.0).abs() < 1e-12);
        assert!((r.midpoint.point(0)[0] - 1.5).abs() < 1e-12);
        assert!((r.midpoint.point(0)[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn counterexample_instance_shapes() {
        let (mu0, nu) = counterexample_instance(3).unwrap();
        assert_eq!(mu0.len(), 9);
        assert_eq!(nu.len(), 9);
        assert!(mu0.points().column(0).iter().all(|&x| x == 0.5));
        assert!(counterexample_instance(1).is_err());
    }

    #[test]
    fn benchmark_ids_parse() {
        assert_eq!(
            GammaBenchmark::parse("counterexample", 0).unwrap(),
            GammaBenchmark::Counterexample
        );
        assert!(GammaBenchmark::parse("nope", 0).is_err());
    }

    #[test]
    fn sweep_rejects_nonincreasing_sizes() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let config = OptimizerConfig::default();
        assert!(gamma_sweep(GammaBenchmark::Counterexample, &[16, 16], grid, &config).is_err());
        assert!(gamma_sweep(GammaBenchmark::Counterexample, &[], grid, &config).is_err());
        // non-square N
        assert!(gamma_sweep(GammaBenchmark::Counterexample, &[15], grid, &config).is_err());
    }

    #[test]
    fn config_validation() {
        let bad_factor = OptimizerConfig {
            backtracking: 1.0,
            ..Default::default()
        };
        assert!(bad_factor.validate().is_err());
        let no_starts = OptimizerConfig {
            starts: 0,
            ..Default::default()
        };
        assert!(no_starts.validate().is_err());
    }
}
