//! Exact optimal transport between equal-size empirical measures.
//!
//! Everything here operates on uniformly weighted point clouds, the measures
//! mu = (1/N) sum_i delta_{x_i}. For two such measures with the same N the
//! p-Wasserstein distance reduces to a minimum-cost assignment on the matrix
//! |x_i - y_j|^p, solved exactly by [`lap`].

mod lap;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// N uniformly weighted points in d-dimensional space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Array2<f64>,
}

impl EmpiricalMeasure {
    /// Wrap an N x d array of points. Requires N >= 1 and finite coordinates.
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "empirical measure needs at least one point".into(),
            ));
        }
        if points.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(
                "empirical measure coordinates must be finite".into(),
            ));
        }
        Ok(Self { points })
    }

    /// Build from explicit rows, all of the same dimension.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument(
                "empirical measure needs at least one point".into(),
            ));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::InvalidArgument(
                "points must have dimension >= 1".into(),
            ));
        }
        let mut points = Array2::zeros((rows.len(), d));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch(d, row.len()));
            }
            for (j, &c) in row.iter().enumerate() {
                points[(i, j)] = c;
            }
        }
        Self::new(points)
    }

    /// Copy a borrowed point cloud into an owned measure.
    pub fn from_view(points: ArrayView2<'_, f64>) -> Result<Self> {
        Self::new(points.to_owned())
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // N >= 1 by construction
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn view(&self) -> MeasureView<'_> {
        MeasureView::new(self.points.view())
    }
}

/// Borrowed view of an empirical measure with a precomputed mean.
///
/// Vector fields and costs receive this view; the integrator shares one per
/// stage so mean-field statistics are computed once, not once per particle.
#[derive(Debug, Clone)]
pub struct MeasureView<'a> {
    points: ArrayView2<'a, f64>,
    mean: Vec<f64>,
}

impl<'a> MeasureView<'a> {
    pub fn new(points: ArrayView2<'a, f64>) -> Self {
        let mean = points
            .mean_axis(Axis(0))
            .expect("point cloud is nonempty")
            .to_vec();
        Self { points, mean }
    }

    /// Wrap a point cloud whose mean the caller already holds.
    pub fn with_mean(points: ArrayView2<'a, f64>, mean: &[f64]) -> Self {
        debug_assert_eq!(points.ncols(), mean.len());
        Self {
            points,
            mean: mean.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'a, f64> {
        self.points
    }

    pub fn point(&self, i: usize) -> ArrayView1<'a, f64> {
        self.points.index_axis_move(Axis(0), i)
    }

    /// Barycenter of the cloud.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// p-th moment ((1/N) sum |x_i|^p)^(1/p).
    pub fn moment(&self, p: f64) -> f64 {
        let n = self.points.nrows() as f64;
        let sum: f64 = self
            .points
            .outer_iter()
            .map(|row| euclidean_norm(row).powf(p))
            .sum();
        (sum / n).powf(1.0 / p)
    }
}

/// A bijection {0..N-1} -> {0..N-1}, the support of an optimal plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    perm: Vec<usize>,
}

impl Assignment {
    /// Validate that `perm` is a permutation.
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &j in &perm {
            if j >= n || seen[j] {
                return Err(Error::InvalidArgument(
                    "assignment must be a bijection".into(),
                ));
            }
            seen[j] = true;
        }
        Ok(Self { perm })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Image of index `i`.
    pub fn map(&self, i: usize) -> usize {
        self.perm[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    /// Composition `other . self` (apply `self` first).
    pub fn then(&self, other: &Assignment) -> Assignment {
        debug_assert_eq!(self.len(), other.len());
        Assignment {
            perm: self.perm.iter().map(|&j| other.perm[j]).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &j)| i == j)
    }
}

fn euclidean_norm(x: ArrayView1<'_, f64>) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn pair_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_exponent(p: f64) -> Result<()> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidExponent(p));
    }
    Ok(())
}

fn check_compatible(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.nrows() != b.nrows() {
        return Err(Error::SizeMismatch(a.nrows(), b.nrows()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(a.ncols(), b.ncols()));
    }
    Ok(())
}

/// p-Wasserstein distance between two equal-size point clouds, together with
/// an optimal assignment.
///
/// The distance is `((1/N) sum_i |x_i - y_{pi(i)}|^p)^(1/p)` minimized over
/// permutations `pi`; the minimization is exact (linear assignment on the
/// cost matrix `|x_i - y_j|^p`). Ties between optimal permutations are broken
/// by solver determinism; only the value and optimality of the returned plan
/// are contractual.
pub fn wasserstein_points(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    p: f64,
) -> Result<(f64, Assignment)> {
    check_exponent(p)?;
    check_compatible(a, b)?;
    let n = a.nrows();

    let mut cost = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let d = pair_distance(a.row(i), b.row(j));
            cost[(i, j)] = if p == 2.0 {
                d * d
            } else if p == 1.0 {
                d
            } else {
                d.powf(p)
            };
        }
    }
    let (perm, total) = lap::solve(cost.view());
    let distance = (total / n as f64).powf(1.0 / p);
    Ok((distance, Assignment { perm }))
}

/// [`wasserstein_points`] on [`EmpiricalMeasure`] operands.
pub fn wasserstein(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    p: f64,
) -> Result<(f64, Assignment)> {
    wasserstein_points(mu.points(), nu.points(), p)
}

/// p-th moment of an empirical measure.
pub fn moment(mu: &EmpiricalMeasure, p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(mu.view().moment(p))
}

/// Point of the displacement interpolation at time `t`: matched points move
/// along straight lines, `(1-t) x_i + t y_{pi(i)}`. For an optimal p=2 plan
/// this is a point of the constant-speed Wasserstein geodesic.
pub fn mccann_interpolate(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    plan: &Assignment,
    t: f64,
) -> Result<EmpiricalMeasure> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInterpolant(t));
    }
    check_compatible(mu.points(), nu.points())?;
    if plan.len() != mu.len() {
        return Err(Error::SizeMismatch(plan.len(), mu.len()));
    }
    let mut points = Array2::zeros((mu.len(), mu.dim()));
    for i in 0..mu.len() {
        let x = mu.point(i);
        let y = nu.point(plan.map(i));
        for j in 0..mu.dim() {
            points[(i, j)] = (1.0 - t) * x[j] + t * y[j];
        }
    }
    EmpiricalMeasure::new(points)
}

/// `((1/N) sum_i |a_i - b_i|^p)^(1/p)`, the L^p distance of two labelled
/// clouds under the common indexing. Upper-bounds the Wasserstein distance.
pub fn lp_distance(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, p: f64) -> Result<f64> {
    check_exponent(p)?;
    check_compatible(a, b)?;
    let n = a.nrows() as f64;
    let sum: f64 = (0..a.nrows())
        .map(|i| pair_distance(a.row(i), b.row(i)).powf(p))
        .sum();
    Ok((sum / n).powf(1.0 / p))
}
