//! Relaxed (Young-measure) controls, the lifted dynamics and cost, the
//! chattering approximation, and the dyadic partition projection.
//!
//! Relaxed controls here are finitely atomic: each (cell, particle) entry is
//! a probability mixture over control atoms. The lifted field is the
//! weighted average `sum_j w_j f(x, u_j, mu)`; chattering trades the mixture
//! for rapid deterministic switching with time fractions matching the
//! weights up to 1/m.

use ndarray::{Array2, Array3, ArrayView2};

use crate::dynamics::{
    cost_driver, integrate_driver, CellField, PiecewiseConstantControl, TimeGrid, TrajectoryBundle,
};
use crate::error::{Error, Result};
use crate::system::ControlSystem;
use crate::transport::MeasureView;

/// One weighted control atom.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub point: Vec<f64>,
    pub weight: f64,
}

const WEIGHT_TOL: f64 = 1e-12;

/// Per-cell, per-particle finite probability mixtures over control atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedControl {
    grid: TimeGrid,
    /// entries[cell][particle] is the atom list of that entry.
    entries: Vec<Vec<Vec<Atom>>>,
}

impl RelaxedControl {
    /// Validate weights (nonnegative, summing to 1 within 1e-12) and shape
    /// (every cell lists the same particle count, every atom the same
    /// control dimension, at least one atom per entry).
    pub fn new(grid: TimeGrid, entries: Vec<Vec<Vec<Atom>>>) -> Result<Self> {
        if entries.len() != grid.cells() {
            return Err(Error::GridMismatch(format!(
                "relaxed control has {} cells but the grid has {}",
                entries.len(),
                grid.cells()
            )));
        }
        let n = entries.first().map(|c| c.len()).unwrap_or(0);
        if n == 0 {
            return Err(Error::InvalidControl(
                "relaxed control needs at least one particle".into(),
            ));
        }
        let mut control_dim = None;
        for cell in &entries {
            if cell.len() != n {
                return Err(Error::InvalidControl(
                    "inconsistent particle count across cells".into(),
                ));
            }
            for mixture in cell {
                if mixture.is_empty() {
                    return Err(Error::InvalidControl(
                        "every entry needs at least one atom".into(),
                    ));
                }
                let mut total = 0.0;
                for atom in mixture {
                    if atom.weight < 0.0 || !atom.weight.is_finite() {
                        return Err(Error::InvalidControl(
                            "atom weights must be nonnegative".into(),
                        ));
                    }
                    if atom.point.iter().any(|c| !c.is_finite()) {
                        return Err(Error::InvalidControl(
                            "atom coordinates must be finite".into(),
                        ));
                    }
                    match control_dim {
                        None => control_dim = Some(atom.point.len()),
                        Some(m) if m != atom.point.len() => {
                            return Err(Error::DimensionMismatch(m, atom.point.len()));
                        }
                        _ => {}
                    }
                    total += atom.weight;
                }
                if (total - 1.0).abs() > WEIGHT_TOL {
                    return Err(Error::InvalidControl(format!(
                        "atom weights sum to {total}, expected 1"
                    )));
                }
            }
        }
        Ok(Self { grid, entries })
    }

    /// Dirac lift of an ordinary control: one atom of weight 1 per entry.
    pub fn from_ordinary(control: &PiecewiseConstantControl) -> Self {
        let grid = control.grid();
        let entries = (0..grid.cells())
            .map(|k| {
                let block = control.cell(k);
                (0..control.particles())
                    .map(|i| {
                        vec![Atom {
                            point: block.row(i).to_vec(),
                            weight: 1.0,
                        }]
                    })
                    .collect()
            })
            .collect();
        Self { grid, entries }
    }

    /// The same two-atom mixture on every (cell, particle) entry.
    pub fn uniform_mixture(grid: TimeGrid, particles: usize, atoms: Vec<Atom>) -> Result<Self> {
        let entries = vec![vec![atoms.clone(); particles]; grid.cells()];
        Self::new(grid, entries)
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn particles(&self) -> usize {
        self.entries[0].len()
    }

    pub fn control_dim(&self) -> usize {
        self.entries[0][0][0].point.len()
    }

    pub fn entry(&self, cell: usize, particle: usize) -> &[Atom] {
        &self.entries[cell][particle]
    }

    pub fn max_atoms(&self) -> usize {
        self.entries
            .iter()
            .flat_map(|c| c.iter().map(|m| m.len()))
            .max()
            .unwrap_or(0)
    }

    /// Check atoms against the system's control set and the configured atom
    /// budget.
    pub fn validate_in(&self, system: &ControlSystem, max_atoms: usize) -> Result<()> {
        if self.control_dim() != system.control_dim() {
            return Err(Error::DimensionMismatch(
                self.control_dim(),
                system.control_dim(),
            ));
        }
        if self.max_atoms() > max_atoms {
            return Err(Error::InvalidControl(format!(
                "entry holds {} atoms, budget is {max_atoms}",
                self.max_atoms()
            )));
        }
        for (k, cell) in self.entries.iter().enumerate() {
            for (i, mixture) in cell.iter().enumerate() {
                for atom in mixture {
                    if !system.control_set().contains(&atom.point, 1e-9) {
                        return Err(Error::InvalidControl(format!(
                            "atom at cell {k}, particle {i} lies outside the control set"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// The same Young measure expressed on a grid refined by `factor`:
    /// every cell splits into `factor` subcells carrying the original
    /// mixture. Dynamics are unchanged; cost quadrature resolves finer.
    pub fn refine(&self, factor: usize) -> Result<RelaxedControl> {
        let fine = self.grid.refine(factor)?;
        let mut entries = Vec::with_capacity(fine.cells());
        for cell in &self.entries {
            for _ in 0..factor {
                entries.push(cell.clone());
            }
        }
        Ok(RelaxedControl {
            grid: fine,
            entries,
        })
    }

    /// Ordinary control at the per-entry barycenter `sum_j w_j u_j`. Under
    /// the affinity condition it generates the same trajectories.
    pub fn barycenter_control(&self) -> PiecewiseConstantControl {
        let (kc, n, m) = (self.grid.cells(), self.particles(), self.control_dim());
        let mut values = Array3::zeros((kc, n, m));
        for k in 0..kc {
            for i in 0..n {
                for atom in &self.entries[k][i] {
                    for j in 0..m {
                        values[(k, i, j)] += atom.weight * atom.point[j];
                    }
                }
            }
        }
        PiecewiseConstantControl::new(self.grid, values).expect("barycenter values are finite")
    }
}

struct MixtureField<'a>(&'a RelaxedControl);

impl CellField for MixtureField<'_> {
    fn eval_field(
        &self,
        system: &ControlSystem,
        cell: usize,
        particle: usize,
        x: &[f64],
        mu: &MeasureView<'_>,
        out: &mut [f64],
    ) {
        out.fill(0.0);
        let mut scratch = [0.0_f64; 16];
        let d = out.len();
        let buf = &mut scratch[..d.min(16)];
        let mut heap;
        let buf: &mut [f64] = if d <= 16 {
            buf
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        for atom in self.0.entry(cell, particle) {
            system.eval_field(x, &atom.point, mu, buf);
            for j in 0..d {
                out[j] += atom.weight * buf[j];
            }
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
        self.0
            .entry(cell, particle)
            .iter()
            .map(|atom| atom.weight * system.eval_running(x, &atom.point, mu))
            .sum()
    }
}

/// Integrate the lifted dynamics: each particle follows the averaged field
/// `sum_j w_j f(x, u_j, mu)` of its per-cell mixture.
pub fn relaxed_integrate(
    system: &ControlSystem,
    x0: ArrayView2<'_, f64>,
    sigma: &RelaxedControl,
    substeps: usize,
) -> Result<TrajectoryBundle> {
    if x0.nrows() != sigma.particles() {
        return Err(Error::SizeMismatch(x0.nrows(), sigma.particles()));
    }
    if x0.ncols() != system.state_dim() {
        return Err(Error::DimensionMismatch(x0.ncols(), system.state_dim()));
    }
    sigma.validate_in(system, usize::MAX)?;
    integrate_driver(system, x0, sigma.grid(), substeps, &MixtureField(sigma))
}

/// Relaxed cost: the running integrand is the mixture average
/// `sum_j w_j C(X_i, u_j, mu)`; the terminal term is unchanged.
pub fn relaxed_cost(
    system: &ControlSystem,
    bundle: &TrajectoryBundle,
    sigma: &RelaxedControl,
) -> Result<f64> {
    if bundle.grid() != sigma.grid() {
        return Err(Error::GridMismatch(
            "bundle and relaxed control were built on different grids".into(),
        ));
    }
    if bundle.particles() != sigma.particles() {
        return Err(Error::SizeMismatch(bundle.particles(), sigma.particles()));
    }
    cost_driver(system, bundle, &MixtureField(sigma))
}

/// Largest-remainder apportionment of `m` slots to `weights` (which sum to
/// 1). Ties go to the earliest index. Each share differs from `m w_j` by
/// less than 1.
fn apportion(weights: &[f64], m: usize) -> Vec<usize> {
    let mut shares: Vec<usize> = weights
        .iter()
        .map(|w| (w * m as f64).floor() as usize)
        .collect();
    let assigned: usize = shares.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // sort by descending remainder, earliest index first on ties
    order.sort_by(|&a, &b| {
        let ra = weights[a] * m as f64 - shares[a] as f64;
        let rb = weights[b] * m as f64 - shares[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &j in order.iter().take(m.saturating_sub(assigned)) {
        shares[j] += 1;
    }
    shares
}

/// Proportional (quota) schedule of the apportioned subcells: subcell `s`
/// goes to the atom with the largest remaining deficit against its share,
/// earliest index on ties. Atoms with share n_j appear exactly n_j times,
/// spread through the cell so runs of any atom stay O(1) subcells long.
fn interleave(shares: &[usize], m: usize) -> Vec<usize> {
    let mut assigned = vec![0usize; shares.len()];
    let mut order = Vec::with_capacity(m);
    for s in 0..m {
        let mut pick = usize::MAX;
        let mut best = f64::NEG_INFINITY;
        for (j, &share) in shares.iter().enumerate() {
            if assigned[j] >= share {
                continue;
            }
            let deficit = share as f64 * (s + 1) as f64 / m as f64 - assigned[j] as f64;
            if deficit > best {
                best = deficit;
                pick = j;
            }
        }
        assigned[pick] += 1;
        order.push(pick);
    }
    order
}

/// Approximate a relaxed control by an ordinary piecewise-constant control
/// that chatters among the atoms.
///
/// Every cell is refined into `m` equal subcells; atom j receives a number
/// of subcells fixed by largest-remainder apportionment of `m w_j`
/// (deterministic, first-index ties), laid out by proportional interleaving
/// so the switching scale shrinks like 1/m. Per entry, the time fraction
/// given to atom j differs from w_j by at most 1/m.
pub fn chatter(sigma: &RelaxedControl, m: usize) -> Result<PiecewiseConstantControl> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "chattering factor must be >= 1".into(),
        ));
    }
    let coarse = sigma.grid();
    let fine = coarse.refine(m)?;
    let (n, mdim) = (sigma.particles(), sigma.control_dim());
    let mut values = Array3::zeros((fine.cells(), n, mdim));
    for k in 0..coarse.cells() {
        for i in 0..n {
            let atoms = sigma.entry(k, i);
            let weights: Vec<f64> = atoms.iter().map(|a| a.weight).collect();
            let shares = apportion(&weights, m);
            for (sub, &which) in interleave(&shares, m).iter().enumerate() {
                for j in 0..mdim {
                    values[(k * m + sub, i, j)] = atoms[which].point[j];
                }
            }
        }
    }
    PiecewiseConstantControl::new(fine, values)
}

/// Piecewise-constant cell averages of a function on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionProjection {
    /// values.row(k) is the average of g over `I_k = [(k-1)/N, k/N)`.
    values: Array2<f64>,
}

impl PartitionProjection {
    pub fn cells(&self) -> usize {
        self.values.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    /// The projected (piecewise constant) function.
    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let n = self.cells();
        let k = ((x * n as f64).floor() as usize).min(n - 1);
        self.values.row(k).to_vec()
    }

    /// L^1 distance between the projection and `g`, by composite midpoint
    /// quadrature with `samples_per_cell` nodes per cell (Euclidean norm of
    /// the pointwise gap).
    pub fn l1_error<G>(&self, g: G, samples_per_cell: usize) -> f64
    where
        G: Fn(f64) -> Vec<f64>,
    {
        let n = self.cells();
        let s = samples_per_cell.max(1);
        let width = 1.0 / (n as f64 * s as f64);
        let mut total = 0.0;
        for k in 0..n {
            let avg = self.values.row(k);
            for j in 0..s {
                let x = (k * s + j) as f64 * width + 0.5 * width;
                let gx = g(x);
                let gap: f64 = gx
                    .iter()
                    .zip(avg.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                total += gap * width;
            }
        }
        total
    }
}

/// Project `g : [0,1] -> R^q` onto the uniform partition `I_k = [(k-1)/N, k/N)`:
/// each cell value is the cell average of g, computed by composite midpoint
/// quadrature with `samples_per_cell` nodes.
pub fn partition_project<G>(
    g: G,
    cells: usize,
    samples_per_cell: usize,
) -> Result<PartitionProjection>
where
    G: Fn(f64) -> Vec<f64>,
{
    if cells == 0 {
        return Err(Error::InvalidArgument(
            "partition needs at least one cell".into(),
        ));
    }
    if samples_per_cell == 0 {
        return Err(Error::InvalidArgument(
            "need at least one sample per cell".into(),
        ));
    }
    let probe = g(0.5);
    let q = probe.len();
    if q == 0 {
        return Err(Error::InvalidArgument(
            "projected function must have output dimension >= 1".into(),
        ));
    }
    let mut values = Array2::zeros((cells, q));
    let width = 1.0 / (cells as f64 * samples_per_cell as f64);
    for k in 0..cells {
        for j in 0..samples_per_cell {
            let x = (k * samples_per_cell + j) as f64 * width + 0.5 * width;
            let gx = g(x);
            if gx.len() != q {
                return Err(Error::DimensionMismatch(q, gx.len()));
            }
            for (c, v) in gx.iter().enumerate() {
                values[(k, c)] += v / samples_per_cell as f64;
            }
        }
    }
    Ok(PartitionProjection { values })
}

/// Scalar convenience wrapper around [`partition_project`].
pub fn partition_project_scalar<G>(
    g: G,
    cells: usize,
    samples_per_cell: usize,
) -> Result<PartitionProjection>
where
    G: Fn(f64) -> f64,
{
    partition_project(|x| vec![g(x)], cells, samples_per_cell)
}
