//! The empirical superposition principle: reconstruct N particle curves (and
//! a sampled velocity field) from a path of empirical measures via optimal
//! matchings between consecutive time slices.
//!
//! Matchings use W_1 plans, under which the mean polyline length of the
//! reconstruction equals the sum of consecutive W_1 distances exactly; W_2
//! matchings are available behind a flag for experiments. The per-step
//! assignment problems are independent and run in parallel; the label
//! composition is a sequential prefix product afterwards.

use ndarray::{Array3, ArrayView2};
use rayon::prelude::*;

use crate::dynamics::TrajectoryBundle;
use crate::error::{Error, Result};
use crate::transport::{wasserstein_points, Assignment, EmpiricalMeasure};

/// Empirical measures sampled at the dyadic times `t_n = n T 2^{-M}`.
#[derive(Debug, Clone)]
pub struct MarginalPath {
    horizon: f64,
    measures: Vec<EmpiricalMeasure>,
}

impl MarginalPath {
    /// Requires `2^M + 1` measures for some `M >= 0`, all with the same
    /// particle count and dimension.
    pub fn new(horizon: f64, measures: Vec<EmpiricalMeasure>) -> Result<Self> {
        if horizon.is_nan() || horizon <= 0.0 || !horizon.is_finite() {
            return Err(Error::InvalidPath(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let len = measures.len();
        if len < 2 || !(len - 1).is_power_of_two() {
            return Err(Error::InvalidPath(format!(
                "need 2^M + 1 time slices, got {len}"
            )));
        }
        let n = measures[0].len();
        let d = measures[0].dim();
        for m in &measures {
            if m.len() != n {
                return Err(Error::InvalidPath(format!(
                    "particle count changes along the path: {} vs {n}",
                    m.len()
                )));
            }
            if m.dim() != d {
                return Err(Error::InvalidPath(format!(
                    "dimension changes along the path: {} vs {d}",
                    m.dim()
                )));
            }
        }
        Ok(Self { horizon, measures })
    }

    /// Forget the particle labels of a simulated bundle whose grid has a
    /// power-of-two cell count.
    pub fn from_bundle(bundle: &TrajectoryBundle) -> Result<Self> {
        let cells = bundle.grid().cells();
        if !cells.is_power_of_two() {
            return Err(Error::InvalidPath(format!(
                "bundle has {cells} cells; need a power of two"
            )));
        }
        let measures = (0..=cells)
            .map(|k| EmpiricalMeasure::from_view(bundle.state_at(k)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(bundle.grid().horizon(), measures)
    }

    /// Dyadic depth M.
    pub fn level(&self) -> u32 {
        (self.measures.len() - 1).trailing_zeros()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        false // at least 2 slices by construction
    }

    pub fn particles(&self) -> usize {
        self.measures[0].len()
    }

    pub fn dim(&self) -> usize {
        self.measures[0].dim()
    }

    pub fn measure(&self, n: usize) -> &EmpiricalMeasure {
        &self.measures[n]
    }

    pub fn time(&self, n: usize) -> f64 {
        self.horizon * n as f64 / (self.measures.len() - 1) as f64
    }

    /// Sum of consecutive `W_1` distances along the path.
    pub fn w1_length(&self) -> Result<f64> {
        let mut total = 0.0;
        for n in 1..self.measures.len() {
            let (w, _) = wasserstein_points(
                self.measures[n - 1].points(),
                self.measures[n].points(),
                1.0,
            )?;
            total += w;
        }
        Ok(total)
    }
}

/// Matching metric for the per-step optimal plans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchingNorm {
    W1,
    W2,
}

/// N uniformly weighted polyline curves, the discrete superposition measure
/// eta = (1/N) sum_i delta_{gamma_i}.
#[derive(Debug, Clone)]
pub struct SuperpositionMeasure {
    horizon: f64,
    /// N x (2^M + 1) x d vertex array.
    curves: Array3<f64>,
}

impl SuperpositionMeasure {
    pub fn particles(&self) -> usize {
        self.curves.shape()[0]
    }

    pub fn vertex_count(&self) -> usize {
        self.curves.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.curves.shape()[2]
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn time(&self, n: usize) -> f64 {
        self.horizon * n as f64 / (self.vertex_count() - 1) as f64
    }

    /// Vertices of curve `i`, a (2^M + 1) x d view.
    pub fn curve(&self, i: usize) -> ArrayView2<'_, f64> {
        self.curves.index_axis(ndarray::Axis(0), i)
    }

    pub fn curves(&self) -> &Array3<f64> {
        &self.curves
    }

    /// The vertex cloud at time index `n` (curves evaluated at `t_n`).
    pub fn measure_at(&self, n: usize) -> EmpiricalMeasure {
        let v = self.curves.index_axis(ndarray::Axis(1), n);
        EmpiricalMeasure::from_view(v).expect("curve vertices are finite")
    }

    /// Mean polyline length `(1/N) sum_i len(gamma_i)`.
    pub fn mean_length(&self) -> f64 {
        let n = self.particles();
        let mut total = 0.0;
        for i in 0..n {
            let c = self.curve(i);
            for v in 1..self.vertex_count() {
                let seg: f64 = (0..self.dim())
                    .map(|j| (c[(v, j)] - c[(v - 1, j)]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                total += seg;
            }
        }
        total / n as f64
    }
}

/// Reconstruct curves from a marginal path by W_1 matchings.
pub fn superpose(path: &MarginalPath) -> Result<SuperpositionMeasure> {
    superpose_with(path, MatchingNorm::W1)
}

/// [`superpose`] with an explicit matching metric.
pub fn superpose_with(path: &MarginalPath, norm: MatchingNorm) -> Result<SuperpositionMeasure> {
    let steps = path.len() - 1;
    let n = path.particles();
    let d = path.dim();
    let p = match norm {
        MatchingNorm::W1 => 1.0,
        MatchingNorm::W2 => 2.0,
    };

    // The step matchings are independent; solve them in parallel.
    let plans: Vec<Assignment> = (1..=steps)
        .into_par_iter()
        .map(|s| {
            wasserstein_points(path.measure(s - 1).points(), path.measure(s).points(), p)
                .map(|(_, plan)| plan)
        })
        .collect::<Result<Vec<_>>>()?;

    // Sequential prefix composition: label_i(s) = sigma_s(label_i(s-1)).
    let mut curves = Array3::zeros((n, steps + 1, d));
    let mut labels: Vec<usize> = (0..n).collect();
    for i in 0..n {
        let x = path.measure(0).point(i);
        for j in 0..d {
            curves[(i, 0, j)] = x[j];
        }
    }
    for (s, plan) in plans.iter().enumerate() {
        for label in labels.iter_mut() {
            *label = plan.map(*label);
        }
        let slice = path.measure(s + 1);
        for (i, &label) in labels.iter().enumerate() {
            let x = slice.point(label);
            for j in 0..d {
                curves[(i, s + 1, j)] = x[j];
            }
        }
    }
    Ok(SuperpositionMeasure {
        horizon: path.horizon(),
        curves,
    })
}

/// Both sides of the length identity: mean polyline length of the
/// reconstruction vs. the summed consecutive W_1 distances of the path. The
/// gap vanishes when every step matching is W_1-optimal.
#[derive(Debug, Clone, Copy)]
pub struct LengthIdentity {
    pub mean_curve_length: f64,
    pub marginal_w1_length: f64,
    pub gap: f64,
}

pub fn path_length_identity(
    path: &MarginalPath,
    eta: &SuperpositionMeasure,
) -> Result<LengthIdentity> {
    if eta.vertex_count() != path.len() {
        return Err(Error::InvalidPath(format!(
            "reconstruction has {} vertices, path has {} slices",
            eta.vertex_count(),
            path.len()
        )));
    }
    let lhs = eta.mean_length();
    let rhs = path.w1_length()?;
    Ok(LengthIdentity {
        mean_curve_length: lhs,
        marginal_w1_length: rhs,
        gap: lhs - rhs,
    })
}

/// Reconstruct at two consecutive dyadic levels and report the maximal
/// vertex deviation on the shared nodes, after aligning curves at t = 0
/// (ties broken by lexicographic vertex order). A nonincreasing sequence
/// over M certifies convergence numerically.
pub fn refine_consistency(coarse: &MarginalPath, fine: &MarginalPath) -> Result<f64> {
    if fine.len() != 2 * coarse.len() - 1 {
        return Err(Error::InvalidPath(format!(
            "levels are not consecutive: {} and {} slices",
            coarse.len(),
            fine.len()
        )));
    }
    if (coarse.horizon() - fine.horizon()).abs() > 0.0 {
        return Err(Error::InvalidPath("horizons differ".into()));
    }
    for s in 0..coarse.len() {
        let (w, _) = wasserstein_points(
            coarse.measure(s).points(),
            fine.measure(2 * s).points(),
            1.0,
        )?;
        if w > 0.0 {
            return Err(Error::InvalidPath(format!(
                "shared node {s} differs between levels (W_1 = {w})"
            )));
        }
    }

    let eta_c = superpose(coarse)?;
    let eta_f = superpose(fine)?;
    let order_c = lexicographic_order(&eta_c, 1);
    let order_f = lexicographic_order(&eta_f, 2);

    let mut sup = 0.0_f64;
    for (&ic, &if_) in order_c.iter().zip(&order_f) {
        let cc = eta_c.curve(ic);
        let cf = eta_f.curve(if_);
        for s in 0..coarse.len() {
            let dev: f64 = (0..coarse.dim())
                .map(|j| (cc[(s, j)] - cf[(2 * s, j)]).powi(2))
                .sum::<f64>()
                .sqrt();
            sup = sup.max(dev);
        }
    }
    Ok(sup)
}

/// Curve indices sorted by initial vertex, ties by the subsequent vertices
/// (compared on the shared dyadic nodes only, i.e. with stride `stride`).
fn lexicographic_order(eta: &SuperpositionMeasure, stride: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..eta.particles()).collect();
    order.sort_by(|&a, &b| {
        let ca = eta.curve(a);
        let cb = eta.curve(b);
        let mut s = 0;
        while s < eta.vertex_count() {
            for j in 0..eta.dim() {
                match ca[(s, j)]
                    .partial_cmp(&cb[(s, j)])
                    .expect("finite vertices")
                {
                    std::cmp::Ordering::Equal => {}
                    other => return other,
                }
            }
            s += stride;
        }
        std::cmp::Ordering::Equal
    });
    order
}

/// Central-difference velocity samples at the interior vertices of every
/// curve, with collisions flagged: where several curves pass through the
/// same space-time vertex with different slopes, the field value is
/// genuinely ambiguous and reported as a conflict rather than resolved.
#[derive(Debug, Clone)]
pub struct VelocityField {
    /// Interior node times t_1 .. t_{V-2}.
    pub times: Vec<f64>,
    /// N x (V-2) x d positions at the interior nodes.
    pub positions: Array3<f64>,
    /// N x (V-2) x d central-difference slopes.
    pub velocities: Array3<f64>,
    pub conflicts: Vec<VelocityConflict>,
}

/// Several curves share a space-time vertex with differing slopes.
#[derive(Debug, Clone)]
pub struct VelocityConflict {
    /// Interior node index (0-based among interior nodes).
    pub node: usize,
    pub time: f64,
    pub position: Vec<f64>,
    pub curves: Vec<usize>,
}

const CONFLICT_SLOPE_TOL: f64 = 1e-9;

pub fn extract_velocity(eta: &SuperpositionMeasure) -> VelocityField {
    let n = eta.particles();
    let v = eta.vertex_count();
    let d = eta.dim();
    let interior = v.saturating_sub(2);
    let tau = eta.horizon() / (v - 1) as f64;

    let mut positions = Array3::zeros((n, interior, d));
    let mut velocities = Array3::zeros((n, interior, d));
    let times: Vec<f64> = (1..v - 1).map(|s| eta.time(s)).collect();

    for i in 0..n {
        let c = eta.curve(i);
        for s in 1..v - 1 {
            for j in 0..d {
                positions[(i, s - 1, j)] = c[(s, j)];
                velocities[(i, s - 1, j)] = (c[(s + 1, j)] - c[(s - 1, j)]) / (2.0 * tau);
            }
        }
    }

    // Group curves by exact vertex coordinates per node; flag groups whose
    // slopes disagree.
    let mut conflicts = Vec::new();
    for s in 0..interior {
        let mut groups: std::collections::HashMap<Vec<u64>, Vec<usize>> =
            std::collections::HashMap::new();
        for i in 0..n {
            let key: Vec<u64> = (0..d).map(|j| positions[(i, s, j)].to_bits()).collect();
            groups.entry(key).or_default().push(i);
        }
        for (_, members) in groups {
            if members.len() < 2 {
                continue;
            }
            let disagree = members.iter().any(|&a| {
                members.iter().any(|&b| {
                    (0..d).any(|j| {
                        (velocities[(a, s, j)] - velocities[(b, s, j)]).abs() > CONFLICT_SLOPE_TOL
                    })
                })
            });
            if disagree {
                let mut members = members;
                members.sort_unstable();
                conflicts.push(VelocityConflict {
                    node: s,
                    time: times[s],
                    position: (0..d).map(|j| positions[(members[0], s, j)]).collect(),
                    curves: members,
                });
            }
        }
    }
    conflicts.sort_by_key(|a| (a.node, a.curves.clone()));

    VelocityField {
        times,
        positions,
        velocities,
        conflicts,
    }
}
