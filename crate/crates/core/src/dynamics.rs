//! Integration of the coupled mean-field particle ODE and evaluation of the
//! Lagrangian cost.
//!
//! The integrator is fixed-step classical RK4 on the full coupled state: all
//! particles advance synchronously and every stage evaluates the vector field
//! against the empirical measure of that stage's full state. The mean-field
//! reduction sums in particle-index order, so results do not depend on
//! scheduling.

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::system::ControlSystem;
use crate::transport::MeasureView;

/// Uniform partition of `[0, T]` into `K` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    cells: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, cells: usize) -> Result<Self> {
        if horizon.is_nan() || horizon <= 0.0 || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if cells == 0 {
            return Err(Error::InvalidArgument(
                "grid needs at least one cell".into(),
            ));
        }
        Ok(Self { horizon, cells })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.cells as f64
    }

    /// Node t_k = k h, k = 0..=K.
    pub fn node(&self, k: usize) -> f64 {
        k as f64 * self.step()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.cells).map(|k| self.node(k))
    }

    /// Split every cell into `m` equal subcells.
    pub fn refine(&self, m: usize) -> Result<TimeGrid> {
        if m == 0 {
            return Err(Error::InvalidArgument(
                "refinement factor must be >= 1".into(),
            ));
        }
        TimeGrid::new(self.horizon, self.cells * m)
    }
}

/// Per-cell, per-particle control values: a K x N x m array, constant on
/// each time cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstantControl {
    grid: TimeGrid,
    values: Array3<f64>,
}

impl PiecewiseConstantControl {
    pub fn new(grid: TimeGrid, values: Array3<f64>) -> Result<Self> {
        if values.shape()[0] != grid.cells() {
            return Err(Error::GridMismatch(format!(
                "control has {} cells but the grid has {}",
                values.shape()[0],
                grid.cells()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidControl(
                "control values must be finite".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    /// The zero control on `grid` for `n` particles with `m` components.
    pub fn zeros(grid: TimeGrid, n: usize, m: usize) -> Self {
        Self {
            grid,
            values: Array3::zeros((grid.cells(), n, m)),
        }
    }

    /// The control constant in time and across particles.
    pub fn constant(grid: TimeGrid, n: usize, u: &[f64]) -> Self {
        let mut values = Array3::zeros((grid.cells(), n, u.len()));
        for k in 0..grid.cells() {
            for i in 0..n {
                for (j, &c) in u.iter().enumerate() {
                    values[(k, i, j)] = c;
                }
            }
        }
        Self { grid, values }
    }

    /// Per-particle controls, constant in time.
    pub fn constant_per_particle(grid: TimeGrid, controls: ArrayView2<'_, f64>) -> Self {
        let (n, m) = (controls.nrows(), controls.ncols());
        let mut values = Array3::zeros((grid.cells(), n, m));
        for k in 0..grid.cells() {
            values.index_axis_mut(Axis(0), k).assign(&controls);
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn particles(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn control_dim(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array3<f64> {
        &mut self.values
    }

    /// Control block of cell `k`, an N x m view.
    pub fn cell(&self, k: usize) -> ArrayView2<'_, f64> {
        self.values.index_axis(Axis(0), k)
    }

    /// Check every value against the control set membership predicate.
    pub fn validate_in(&self, system: &ControlSystem) -> Result<()> {
        if self.control_dim() != system.control_dim() {
            return Err(Error::DimensionMismatch(
                self.control_dim(),
                system.control_dim(),
            ));
        }
        for k in 0..self.grid.cells() {
            let block = self.cell(k);
            for i in 0..self.particles() {
                let u = block.row(i);
                let u = u.as_slice().expect("control rows are contiguous");
                if !system.control_set().contains(u, MEMBERSHIP_TOL) {
                    return Err(Error::InvalidControl(format!(
                        "value at cell {k}, particle {i} lies outside the control set"
                    )));
                }
            }
        }
        Ok(())
    }
}

const MEMBERSHIP_TOL: f64 = 1e-9;

/// Sampled particle paths on a time grid: a (K+1) x N x d array whose row at
/// node k is X_{t_k}. The first row equals the supplied initial condition
/// bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    grid: TimeGrid,
    states: Array3<f64>,
}

impl TrajectoryBundle {
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn particles(&self) -> usize {
        self.states.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.states.shape()[2]
    }

    pub fn states(&self) -> &Array3<f64> {
        &self.states
    }

    /// Particle positions at node `k`, an N x d view.
    pub fn state_at(&self, k: usize) -> ArrayView2<'_, f64> {
        self.states.index_axis(Axis(0), k)
    }

    pub fn final_state(&self) -> ArrayView2<'_, f64> {
        self.state_at(self.grid.cells())
    }
}

/// Per-cell field and running cost seen by the integrator. Ordinary controls
/// plug in directly; relaxed controls average over their atoms.
pub(crate) trait CellField: Sync {
    fn eval_field(
        &self,
        system: &ControlSystem,
        cell: usize,
        particle: usize,
        x: &[f64],
        mu: &MeasureView<'_>,
        out: &mut [f64],
    );

    fn eval_running(
        &self,
        system: &ControlSystem,
        cell: usize,
        particle: usize,
        x: &[f64],
        mu: &MeasureView<'_>,
    ) -> f64;
}

pub(crate) struct OrdinaryControl<'a>(pub &'a PiecewiseConstantControl);

impl CellField for OrdinaryControl<'_> {
    fn eval_field(
        &self,
        system: &ControlSystem,
        cell: usize,
        particle: usize,
        x: &[f64],
        mu: &MeasureView<'_>,
        out: &mut [f64],
    ) {
        let block = self.0.values.index_axis(Axis(0), cell);
        let u = block.row(particle);
        system.eval_field(
            x,
            u.as_slice().expect("control rows are contiguous"),
            mu,
            out,
        );
    }

    fn eval_running(
        &self,
        system: &ControlSystem,
        cell: usize,
        particle: usize,
        x: &[f64],
        mu: &MeasureView<'_>,
    ) -> f64 {
        let block = self.0.values.index_axis(Axis(0), cell);
        let u = block.row(particle);
        system.eval_running(x, u.as_slice().expect("control rows are contiguous"), mu)
    }
}

/// Scratch buffers for one RK4 integration.
struct RkScratch {
    k1: Array2<f64>,
    k2: Array2<f64>,
    k3: Array2<f64>,
    k4: Array2<f64>,
    stage: Array2<f64>,
    mean: Vec<f64>,
}

impl RkScratch {
    fn new(n: usize, d: usize) -> Self {
        Self {
            k1: Array2::zeros((n, d)),
            k2: Array2::zeros((n, d)),
            k3: Array2::zeros((n, d)),
            k4: Array2::zeros((n, d)),
            stage: Array2::zeros((n, d)),
            mean: vec![0.0; d],
        }
    }
}

fn column_mean(x: ArrayView2<'_, f64>, mean: &mut [f64]) {
    let (n, d) = x.dim();
    mean.fill(0.0);
    for i in 0..n {
        let row = x.row(i);
        for j in 0..d {
            mean[j] += row[j];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
}

fn eval_stage<F: CellField>(
    system: &ControlSystem,
    field: &F,
    cell: usize,
    x: &Array2<f64>,
    mean: &mut [f64],
    out: &mut Array2<f64>,
) {
    column_mean(x.view(), mean);
    let mu = MeasureView::with_mean(x.view(), mean);
    let n = x.nrows();
    for i in 0..n {
        let xi = x.row(i);
        let xi = xi.as_slice().expect("state rows are contiguous");
        let mut oi = out.row_mut(i);
        field.eval_field(
            system,
            cell,
            i,
            xi,
            &mu,
            oi.as_slice_mut().expect("contiguous"),
        );
    }
}

/// Advance the full particle state across one grid cell with RK4 substeps.
fn advance_cell<F: CellField>(
    system: &ControlSystem,
    field: &F,
    cell: usize,
    x: &mut Array2<f64>,
    h_cell: f64,
    substeps: usize,
    scratch: &mut RkScratch,
) {
    let h = h_cell / substeps as f64;
    for _ in 0..substeps {
        eval_stage(system, field, cell, x, &mut scratch.mean, &mut scratch.k1);

        scratch.stage.assign(x);
        scratch.stage.scaled_add(0.5 * h, &scratch.k1);
        eval_stage(
            system,
            field,
            cell,
            &scratch.stage,
            &mut scratch.mean,
            &mut scratch.k2,
        );

        scratch.stage.assign(x);
        scratch.stage.scaled_add(0.5 * h, &scratch.k2);
        eval_stage(
            system,
            field,
            cell,
            &scratch.stage,
            &mut scratch.mean,
            &mut scratch.k3,
        );

        scratch.stage.assign(x);
        scratch.stage.scaled_add(h, &scratch.k3);
        eval_stage(
            system,
            field,
            cell,
            &scratch.stage,
            &mut scratch.mean,
            &mut scratch.k4,
        );

        let w = h / 6.0;
        x.scaled_add(w, &scratch.k1);
        x.scaled_add(2.0 * w, &scratch.k2);
        x.scaled_add(2.0 * w, &scratch.k3);
        x.scaled_add(w, &scratch.k4);
    }
}

fn check_state_finite(x: &Array2<f64>, grid: TimeGrid, cell: usize) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState {
            time: grid.node(cell + 1),
            cell,
        });
    }
    Ok(())
}

fn check_initial(system: &ControlSystem, x0: ArrayView2<'_, f64>, n: usize) -> Result<()> {
    if x0.nrows() != n {
        return Err(Error::SizeMismatch(x0.nrows(), n));
    }
    if x0.ncols() != system.state_dim() {
        return Err(Error::DimensionMismatch(x0.ncols(), system.state_dim()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "initial condition must be finite".into(),
        ));
    }
    Ok(())
}

pub(crate) fn integrate_driver<F: CellField>(
    system: &ControlSystem,
    x0: ArrayView2<'_, f64>,
    grid: TimeGrid,
    substeps: usize,
    field: &F,
) -> Result<TrajectoryBundle> {
    if substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be >= 1".into()));
    }
    let (n, d) = (x0.nrows(), x0.ncols());
    let k_cells = grid.cells();
    let mut states = Array3::zeros((k_cells + 1, n, d));
    states.index_axis_mut(Axis(0), 0).assign(&x0);

    let mut x = x0.to_owned();
    let mut scratch = RkScratch::new(n, d);
    let h = grid.step();
    for k in 0..k_cells {
        advance_cell(system, field, k, &mut x, h, substeps, &mut scratch);
        check_state_finite(&x, grid, k)?;
        states.index_axis_mut(Axis(0), k + 1).assign(&x);
    }
    Ok(TrajectoryBundle { grid, states })
}

/// Advance `x` in place from node `start_cell` to the final node, returning
/// the running-cost contribution of the traversed cells (trapezoid per cell,
/// averaged over particles). Shares its arithmetic with [`integrate_driver`]
/// so optimizer rollouts reproduce `integrate` + `cost` exactly.
pub(crate) fn rollout_tail<F: CellField>(
    system: &ControlSystem,
    field: &F,
    grid: TimeGrid,
    substeps: usize,
    start_cell: usize,
    x: &mut Array2<f64>,
) -> Result<f64> {
    if start_cell >= grid.cells() {
        return Ok(0.0);
    }
    let (n, d) = x.dim();
    let mut scratch = RkScratch::new(n, d);
    let h = grid.step();
    let mut running = 0.0;
    let mut left = running_node_sum(system, field, start_cell, x.view(), &mut scratch.mean);
    for k in start_cell..grid.cells() {
        advance_cell(system, field, k, x, h, substeps, &mut scratch);
        check_state_finite(x, grid, k)?;
        let right = running_node_sum(system, field, k, x.view(), &mut scratch.mean);
        running += 0.5 * h * (left + right);
        if k + 1 < grid.cells() {
            // re-evaluate under the next cell's control
            left = running_node_sum(system, field, k + 1, x.view(), &mut scratch.mean);
        }
    }
    Ok(running / n as f64)
}

fn running_node_sum<F: CellField>(
    system: &ControlSystem,
    field: &F,
    cell: usize,
    x: ArrayView2<'_, f64>,
    mean: &mut [f64],
) -> f64 {
    column_mean(x, mean);
    let mu = MeasureView::with_mean(x, mean);
    let mut sum = 0.0;
    for i in 0..x.nrows() {
        let xi = x.row(i);
        let xi = xi.as_slice().expect("state rows are contiguous");
        sum += field.eval_running(system, cell, i, xi, &mu);
    }
    sum
}

/// Per-cell running-cost increments of a stored bundle (trapezoid on the
/// cell endpoints with the cell's control), averaged over particles.
pub(crate) fn running_increments<F: CellField>(
    system: &ControlSystem,
    bundle: &TrajectoryBundle,
    field: &F,
) -> Vec<f64> {
    let grid = bundle.grid();
    let h = grid.step();
    let n = bundle.particles();
    let mut out = Vec::with_capacity(grid.cells());
    let mut mean = vec![0.0; bundle.dim()];
    for k in 0..grid.cells() {
        let l = running_node_sum(system, field, k, bundle.state_at(k), &mut mean);
        let r = running_node_sum(system, field, k, bundle.state_at(k + 1), &mut mean);
        out.push(0.5 * h * (l + r) / n as f64);
    }
    out
}

pub(crate) fn cost_driver<F: CellField>(
    system: &ControlSystem,
    bundle: &TrajectoryBundle,
    field: &F,
) -> Result<f64> {
    let running: f64 = running_increments(system, bundle, field).iter().sum();
    let final_state = bundle.final_state();
    let mu = MeasureView::new(final_state);
    let terminal = system.eval_terminal_mean(&mu)?;
    Ok(running + terminal)
}

/// Solve the coupled Cauchy system of the N-particle Lagrangian problem:
/// each particle follows `dX_i/dt = f(X_i, u_i(t), mu_t)` where `mu_t` is
/// the empirical measure of the full current state and `u_i` is constant on
/// each grid cell.
pub fn integrate(
    system: &ControlSystem,
    x0: ArrayView2<'_, f64>,
    control: &PiecewiseConstantControl,
    substeps: usize,
) -> Result<TrajectoryBundle> {
    check_initial(system, x0, control.particles())?;
    control.validate_in(system)?;
    integrate_driver(
        system,
        x0,
        control.grid(),
        substeps,
        &OrdinaryControl(control),
    )
}

/// Lagrangian cost of a trajectory/control pair:
/// `(1/N) sum_i [ sum_k trapezoid_k C(X_i, u_i, mu) ] + (1/N) sum_i C_T(X_i(T), mu_T)`.
pub fn cost(
    system: &ControlSystem,
    bundle: &TrajectoryBundle,
    control: &PiecewiseConstantControl,
) -> Result<f64> {
    if bundle.grid() != control.grid() {
        return Err(Error::GridMismatch(
            "bundle and control were built on different grids".into(),
        ));
    }
    if bundle.particles() != control.particles() {
        return Err(Error::SizeMismatch(bundle.particles(), control.particles()));
    }
    cost_driver(system, bundle, &OrdinaryControl(control))
}

/// Verdict of the a priori estimates on an integrated bundle.
#[derive(Debug, Clone)]
pub struct AprioriReport {
    /// max_k m_p(mu_k), the discrete sup of the L^p norm of the state.
    pub sup_norm: f64,
    /// e^{2CT} (m_p(mu_0) + C T) with C the declared growth constant.
    pub sup_bound: f64,
    pub sup_slack: f64,
    pub sup_ok: bool,
    /// max_k |X_{k+1} - X_k|_{L^p} / (h (1 + m_p(mu_0))).
    pub time_lipschitz_ratio: f64,
    /// The constant C_T = C (1 + 2 e^{2CT}(1 + CT)) implied by the growth bound.
    pub time_lipschitz_bound: f64,
    pub time_lipschitz_ok: bool,
    /// Whether the first bundle row equals the supplied X_0 bit-exactly.
    pub initial_condition_matches: bool,
}

impl AprioriReport {
    pub fn passed(&self) -> bool {
        self.sup_ok && self.time_lipschitz_ok && self.initial_condition_matches
    }
}

/// Check the Gronwall a priori estimates with the system's declared growth
/// constant: `sup_t |X_t|_{L^p} <= e^{2CT}(|X_0|_{L^p} + CT)` and the
/// per-step time-Lipschitz bound. Violations are reported, not thrown.
pub fn apriori_check(
    bundle: &TrajectoryBundle,
    system: &ControlSystem,
    x0: ArrayView2<'_, f64>,
) -> AprioriReport {
    let p = system.moment_exponent();
    let c = system.constants().growth;
    let grid = bundle.grid();
    let t = grid.horizon();
    let h = grid.step();

    let norms: Vec<f64> = (0..=grid.cells())
        .map(|k| MeasureView::new(bundle.state_at(k)).moment(p))
        .collect();
    let sup_norm = norms.iter().cloned().fold(0.0_f64, f64::max);
    let sup_bound = (2.0 * c * t).exp() * (norms[0] + c * t);

    let mut lip_ratio = 0.0_f64;
    for k in 0..grid.cells() {
        let step = crate::transport::lp_distance(bundle.state_at(k + 1), bundle.state_at(k), p)
            .expect("bundle rows share shape");
        lip_ratio = lip_ratio.max(step / (h * (1.0 + norms[0])));
    }
    let lip_bound = c * (1.0 + 2.0 * (2.0 * c * t).exp() * (1.0 + c * t));

    let initial_condition_matches = bundle.state_at(0) == x0;

    AprioriReport {
        sup_norm,
        sup_bound,
        sup_slack: sup_bound - sup_norm,
        sup_ok: sup_norm <= sup_bound,
        time_lipschitz_ratio: lip_ratio,
        time_lipschitz_bound: lip_bound,
        time_lipschitz_ok: lip_ratio <= lip_bound,
        initial_condition_matches,
    }
}
