//! The control system S = (U, f, C, C_T) and its runtime contract checks.
//!
//! The control space is restricted to compact convex subsets of R^m (boxes
//! and balls), which admit exact projections; mean-field dependence is always
//! an empirical measure. Regularity constants are declared by the caller and
//! spot-checked by sampling, never proved.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng;
use crate::transport::{wasserstein_points, EmpiricalMeasure, MeasureView};

/// Compact convex control set in R^m.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSet {
    /// Axis-aligned box, one `[lower_j, upper_j]` interval per coordinate.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Closed Euclidean ball.
    Ball { center: Vec<f64>, radius: f64 },
}

impl ControlSet {
    pub fn centered_ball(dim: usize, radius: f64) -> Result<Self> {
        if radius.is_nan() || radius <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        Ok(ControlSet::Ball {
            center: vec![0.0; dim],
            radius,
        })
    }

    pub fn unit_box(dim: usize) -> Self {
        ControlSet::Box {
            lower: vec![-1.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ControlSet::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::InvalidArgument(
                        "box bounds must be nonempty and of equal length".into(),
                    ));
                }
                if lower
                    .iter()
                    .zip(upper)
                    .any(|(a, b)| a > b || !a.is_finite() || !b.is_finite())
                {
                    return Err(Error::InvalidArgument(
                        "box needs finite lower <= upper per coordinate".into(),
                    ));
                }
                Ok(())
            }
            ControlSet::Ball { center, radius } => {
                if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "ball center must be nonempty and finite".into(),
                    ));
                }
                if radius.is_nan() || *radius <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "ball radius must be positive, got {radius}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Control dimension m.
    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Box { lower, .. } => lower.len(),
            ControlSet::Ball { center, .. } => center.len(),
        }
    }

    /// Membership up to relative slack `tol` (projection outputs may sit a
    /// rounding error outside the exact set).
    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        if u.len() != self.dim() {
            return false;
        }
        match self {
            ControlSet::Box { lower, upper } => u
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(x, (a, b))| *x >= a - tol && *x <= b + tol),
            ControlSet::Ball { center, radius } => {
                let r2: f64 = u.iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum();
                r2.sqrt() <= radius * (1.0 + tol) + tol
            }
        }
    }

    /// Exact Euclidean projection onto the set: coordinate clamp for boxes,
    /// radial rescale for balls.
    pub fn project(&self, u: &mut [f64]) {
        match self {
            ControlSet::Box { lower, upper } => {
                for (x, (a, b)) in u.iter_mut().zip(lower.iter().zip(upper)) {
                    *x = x.clamp(*a, *b);
                }
            }
            ControlSet::Ball { center, radius } => {
                let r2: f64 = u.iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum();
                let r = r2.sqrt();
                if r > *radius {
                    let s = radius / r;
                    for (x, c) in u.iter_mut().zip(center) {
                        *x = c + (*x - c) * s;
                    }
                }
            }
        }
    }

    /// Uniform sample from the set.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            ControlSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(a, b)| rng.gen_range(*a..=*b))
                .collect(),
            ControlSet::Ball { center, radius } => {
                // isotropic direction, radius with density ~ r^{m-1}
                let m = center.len();
                let mut v: Vec<f64> = (0..m)
                    .map(|_| {
                        // Box-Muller; two uniforms per normal keeps the draw
                        // count fixed, preserving stream prefixes.
                        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                        let u2: f64 = rng.gen_range(0.0..1.0);
                        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                    })
                    .collect();
                let norm: f64 = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                let r = radius * rng.gen_range(0.0..=1.0_f64).powf(1.0 / m as f64);
                let scale = if norm > 0.0 { r / norm } else { 0.0 };
                for (x, c) in v.iter_mut().zip(center) {
                    *x = c + *x * scale;
                }
                v
            }
        }
    }
}

/// Dynamics callable: `(x, u, mu, out)` writes f(x, u, mu) into `out`.
pub type FieldFn = Arc<dyn Fn(&[f64], &[f64], &MeasureView<'_>, &mut [f64]) + Send + Sync>;
/// Running cost callable.
pub type RunningFn = Arc<dyn Fn(&[f64], &[f64], &MeasureView<'_>) -> f64 + Send + Sync>;
/// Terminal cost callable.
pub type TerminalFn = Arc<dyn Fn(&[f64], &MeasureView<'_>) -> f64 + Send + Sync>;

/// Terminal cost C_T(x, mu).
///
/// The squared-Wasserstein variant is recognized by the cost evaluator (one
/// assignment solve per bundle instead of one per particle) and by the
/// optimizer, which differentiates it through a frozen optimal assignment.
#[derive(Clone)]
pub enum TerminalCost {
    Zero,
    /// `C_T(x, mu) = W_2^2(mu, target)`, independent of x.
    W2Squared {
        target: EmpiricalMeasure,
    },
    Custom(TerminalFn),
}

impl std::fmt::Debug for TerminalCost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TerminalCost::Zero => write!(f, "Zero"),
            TerminalCost::W2Squared { target } => {
                write!(f, "W2Squared(N={}, d={})", target.len(), target.dim())
            }
            TerminalCost::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Declared regularity constants of a system: L from the Lipschitz condition
/// on f, C from the linear growth of f, D from the polynomial growth of the
/// costs. All positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityConstants {
    pub lipschitz: f64,
    pub growth: f64,
    pub cost_growth: f64,
}

impl RegularityConstants {
    pub fn new(lipschitz: f64, growth: f64, cost_growth: f64) -> Result<Self> {
        if [lipschitz, growth, cost_growth]
            .iter()
            .any(|c| c.is_nan() || *c <= 0.0)
        {
            return Err(Error::InvalidArgument(
                "regularity constants must be positive".into(),
            ));
        }
        Ok(Self {
            lipschitz,
            growth,
            cost_growth,
        })
    }
}

/// The tuple S = (U, f, C, C_T) plus declared constants.
///
/// Immutable after construction; callables must be pure and reentrant.
#[derive(Clone)]
pub struct ControlSystem {
    state_dim: usize,
    control_set: ControlSet,
    field: FieldFn,
    running: RunningFn,
    terminal: TerminalCost,
    constants: RegularityConstants,
    moment_exponent: f64,
    affine_in_u: bool,
}

impl std::fmt::Debug for ControlSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlSystem")
            .field("state_dim", &self.state_dim)
            .field("control_set", &self.control_set)
            .field("terminal", &self.terminal)
            .field("constants", &self.constants)
            .field("moment_exponent", &self.moment_exponent)
            .field("affine_in_u", &self.affine_in_u)
            .finish()
    }
}

impl ControlSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_dim: usize,
        control_set: ControlSet,
        field: FieldFn,
        running: RunningFn,
        terminal: TerminalCost,
        constants: RegularityConstants,
        moment_exponent: f64,
        affine_in_u: bool,
    ) -> Result<Self> {
        control_set.validate()?;
        if state_dim == 0 {
            return Err(Error::InvalidArgument(
                "state dimension must be >= 1".into(),
            ));
        }
        if moment_exponent.is_nan() || moment_exponent < 1.0 {
            return Err(Error::InvalidExponent(moment_exponent));
        }
        Ok(Self {
            state_dim,
            control_set,
            field,
            running,
            terminal,
            constants,
            moment_exponent,
            affine_in_u,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_set.dim()
    }

    pub fn control_set(&self) -> &ControlSet {
        &self.control_set
    }

    pub fn constants(&self) -> RegularityConstants {
        self.constants
    }

    /// Replace the declared constants, e.g. with observed checker ratios.
    pub fn with_constants(mut self, constants: RegularityConstants) -> Self {
        self.constants = constants;
        self
    }

    pub fn moment_exponent(&self) -> f64 {
        self.moment_exponent
    }

    pub fn affine_in_u(&self) -> bool {
        self.affine_in_u
    }

    pub fn terminal(&self) -> &TerminalCost {
        &self.terminal
    }

    pub fn eval_field(&self, x: &[f64], u: &[f64], mu: &MeasureView<'_>, out: &mut [f64]) {
        (self.field)(x, u, mu, out);
    }

    pub fn eval_running(&self, x: &[f64], u: &[f64], mu: &MeasureView<'_>) -> f64 {
        (self.running)(x, u, mu)
    }

    /// Mean terminal cost `(1/N) sum_i C_T(x_i, mu)` of a terminal cloud.
    pub fn eval_terminal_mean(&self, mu: &MeasureView<'_>) -> Result<f64> {
        match &self.terminal {
            TerminalCost::Zero => Ok(0.0),
            TerminalCost::W2Squared { target } => {
                let (w, _) = wasserstein_points(mu.points(), target.points(), 2.0)?;
                Ok(w * w)
            }
            TerminalCost::Custom(g) => {
                let n = mu.len();
                let mut sum = 0.0;
                for i in 0..n {
                    let row = mu.point(i);
                    let x = row.as_slice().expect("terminal states are contiguous");
                    sum += g(x, mu);
                }
                Ok(sum / n as f64)
            }
        }
    }
}

/// The Wasserstein-barycenter benchmark system: f(x, u, mu) = u,
/// C(x, u, mu) = |u|^2, C_T(x, mu) = W_2^2(mu, nu), controls from the
/// closed ball of radius `radius`, p = 2.
pub fn make_barycenter_system(nu: EmpiricalMeasure, radius: f64) -> Result<ControlSystem> {
    if radius.is_nan() || radius <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "control radius must be positive, got {radius}"
        )));
    }
    let d = nu.dim();
    let set = ControlSet::centered_ball(d, radius)?;
    let target_m2 = crate::transport::moment(&nu, 2.0)?;
    let constants = RegularityConstants::new(
        1.0,
        radius.max(1.0),
        (2.0 * target_m2 * target_m2).max(radius * radius).max(2.0),
    )?;
    let field: FieldFn = Arc::new(|_x, u, _mu, out| out.copy_from_slice(u));
    let running: RunningFn = Arc::new(|_x, u, _mu| u.iter().map(|c| c * c).sum());
    ControlSystem::new(
        d,
        set,
        field,
        running,
        TerminalCost::W2Squared { target: nu },
        constants,
        2.0,
        true,
    )
}

/// Mean-reverting benchmark system: f(x, u, mu) = -(x - mean(mu)) + u,
/// C(x, u, mu) = |u|^2 + |x|^2, C_T(x, mu) = |x|^2, controls from the closed
/// ball of radius `radius`, p = 2.
pub fn make_attraction_system(state_dim: usize, radius: f64) -> Result<ControlSystem> {
    let set = ControlSet::centered_ball(state_dim, radius)?;
    let constants = RegularityConstants::new(2.0, radius.max(1.0), (radius * radius).max(1.0))?;
    let field: FieldFn = Arc::new(|x, u, mu, out| {
        let mean = mu.mean();
        for j in 0..x.len() {
            out[j] = -(x[j] - mean[j]) + u[j];
        }
    });
    let running: RunningFn = Arc::new(|x, u, _mu| {
        u.iter().map(|c| c * c).sum::<f64>() + x.iter().map(|c| c * c).sum::<f64>()
    });
    let terminal: TerminalFn = Arc::new(|x, _mu| x.iter().map(|c| c * c).sum());
    ControlSystem::new(
        state_dim,
        set,
        field,
        running,
        TerminalCost::Custom(terminal),
        constants,
        2.0,
        true,
    )
}

/// Decoupled benchmark system: f(x, u, mu) = u with running cost |u|^2 (or
/// zero) and no terminal cost.
pub fn make_decoupled_system(
    state_dim: usize,
    radius: f64,
    quadratic_running: bool,
) -> Result<ControlSystem> {
    let set = ControlSet::centered_ball(state_dim, radius)?;
    let constants = RegularityConstants::new(1.0, radius.max(1.0), (radius * radius).max(1.0))?;
    let field: FieldFn = Arc::new(|_x, u, _mu, out| out.copy_from_slice(u));
    let running: RunningFn = if quadratic_running {
        Arc::new(|_x, u, _mu| u.iter().map(|c| c * c).sum())
    } else {
        Arc::new(|_x, _u, _mu| 0.0)
    };
    ControlSystem::new(
        state_dim,
        set,
        field,
        running,
        TerminalCost::Zero,
        constants,
        2.0,
        true,
    )
}

/// Sampled verdict on the declared regularity contract.
///
/// Ratios are maxima over the sample stream, so for a fixed seed they are
/// monotone nondecreasing in the sample count. Violations are reported, not
/// thrown: the checker is advisory.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub samples: usize,
    /// max |f(x,u,mu) - f(y,u,nu)| / d_p((x,mu),(y,nu))
    pub lipschitz_ratio: f64,
    /// max |f| / (1 + |x| + m_p(mu))
    pub field_growth_ratio: f64,
    /// max C / (1 + |x|^p + m_p^p(mu))
    pub running_growth_ratio: f64,
    /// max C_T / (1 + |x|^p + m_p^p(mu))
    pub terminal_growth_ratio: f64,
    /// max |f(x, (u+v)/2, mu) - (f(x,u,mu) + f(x,v,mu))/2|
    pub affinity_residual: f64,
    /// count of C(x, (u+v)/2, mu) > (C(x,u,mu) + C(x,v,mu))/2 + tol
    pub convexity_violations: usize,
    pub lipschitz_ok: bool,
    pub field_growth_ok: bool,
    pub cost_growth_ok: bool,
    pub affinity_ok: bool,
    pub convexity_ok: bool,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.lipschitz_ok
            && self.field_growth_ok
            && self.cost_growth_ok
            && self.affinity_ok
            && self.convexity_ok
    }
}

/// Default half-width of the sampling box for states and measure supports.
pub const DEFAULT_SAMPLE_BOUND: f64 = 10.0;
const MAX_MEASURE_POINTS: usize = 8;

/// Spot-check the declared constants of `system` on `samples` random
/// `(x, y, u, v, mu, nu)` tuples drawn from a seeded stream.
///
/// States are drawn from `[-10, 10]^d` ([`DEFAULT_SAMPLE_BOUND`]); use
/// [`check_assumptions_in`] to change the domain. Affinity and midpoint
/// convexity in u are only checked when the system declares `affine_in_u`.
pub fn check_assumptions(
    system: &ControlSystem,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<AssumptionReport> {
    check_assumptions_in(system, samples, seed, tol, DEFAULT_SAMPLE_BOUND)
}

/// [`check_assumptions`] with an explicit sampling bound.
pub fn check_assumptions_in(
    system: &ControlSystem,
    samples: usize,
    seed: u64,
    tol: f64,
    bound: f64,
) -> Result<AssumptionReport> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if bound.is_nan() || bound <= 0.0 {
        return Err(Error::InvalidArgument(
            "sampling bound must be positive".into(),
        ));
    }
    let mut rng = rng::stream(seed, "assumption-checker");
    let d = system.state_dim();
    let p = system.moment_exponent();

    let mut report = AssumptionReport {
        samples,
        lipschitz_ratio: 0.0,
        field_growth_ratio: 0.0,
        running_growth_ratio: 0.0,
        terminal_growth_ratio: 0.0,
        affinity_residual: 0.0,
        convexity_violations: 0,
        lipschitz_ok: true,
        field_growth_ok: true,
        cost_growth_ok: true,
        affinity_ok: true,
        convexity_ok: true,
    };

    let mut fx = vec![0.0; d];
    let mut fy = vec![0.0; d];
    let mut fmid = vec![0.0; d];

    for _ in 0..samples {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-bound..=bound)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-bound..=bound)).collect();
        let u = system.control_set().sample(&mut rng);
        let v = system.control_set().sample(&mut rng);
        let n_pts = rng.gen_range(1..=MAX_MEASURE_POINTS);
        let mu_pts = sample_cloud(&mut rng, n_pts, d, bound);
        let nu_pts = sample_cloud(&mut rng, n_pts, d, bound);
        let mu = MeasureView::new(mu_pts.view());
        let nu = MeasureView::new(nu_pts.view());

        system.eval_field(&x, &u, &mu, &mut fx);
        system.eval_field(&y, &u, &nu, &mut fy);

        // Lipschitz in (x, mu) at fixed u, w.r.t. d_p.
        let (wp, _) = wasserstein_points(mu_pts.view(), nu_pts.view(), p)?;
        let state_dist = dist(&x, &y);
        let dp = (state_dist.powf(p) + wp.powf(p)).powf(1.0 / p);
        if dp > 0.0 {
            let ratio = dist(&fx, &fy) / dp;
            report.lipschitz_ratio = report.lipschitz_ratio.max(ratio);
        }

        // Linear growth of f.
        let growth_den = 1.0 + norm(&x) + mu.moment(p);
        report.field_growth_ratio = report.field_growth_ratio.max(norm(&fx) / growth_den);

        // Polynomial growth of the costs.
        let cost_den = 1.0 + norm(&x).powf(p) + mu.moment(p).powf(p);
        let c = system.eval_running(&x, &u, &mu);
        report.running_growth_ratio = report.running_growth_ratio.max(c / cost_den);
        match system.terminal() {
            TerminalCost::Zero => {}
            TerminalCost::W2Squared { target } => {
                // W_2^2 needs a support of the target's size.
                let term_pts = sample_cloud(&mut rng, target.len(), d, bound);
                let term_mu = MeasureView::new(term_pts.view());
                let (w, _) = wasserstein_points(term_pts.view(), target.points(), 2.0)?;
                let den = 1.0 + norm(&x).powf(p) + term_mu.moment(p).powf(p);
                report.terminal_growth_ratio = report.terminal_growth_ratio.max(w * w / den);
            }
            TerminalCost::Custom(g) => {
                report.terminal_growth_ratio =
                    report.terminal_growth_ratio.max(g(&x, &mu) / cost_den);
            }
        }

        // Affinity of f and midpoint convexity of C in u.
        if system.affine_in_u() {
            let mid: Vec<f64> = u.iter().zip(&v).map(|(a, b)| 0.5 * (a + b)).collect();
            system.eval_field(&x, &mid, &mu, &mut fmid);
            system.eval_field(&x, &v, &mu, &mut fy);
            let residual = (0..d)
                .map(|j| (fmid[j] - 0.5 * (fx[j] + fy[j])).abs())
                .fold(0.0_f64, f64::max);
            report.affinity_residual = report.affinity_residual.max(residual);

            let cu = system.eval_running(&x, &u, &mu);
            let cv = system.eval_running(&x, &v, &mu);
            let cmid = system.eval_running(&x, &mid, &mu);
            if cmid > 0.5 * (cu + cv) + tol {
                report.convexity_violations += 1;
            }
        }
    }

    let k = system.constants();
    report.lipschitz_ok = report.lipschitz_ratio <= k.lipschitz + tol;
    report.field_growth_ok = report.field_growth_ratio <= k.growth + tol;
    report.cost_growth_ok = report.running_growth_ratio <= k.cost_growth + tol
        && report.terminal_growth_ratio <= k.cost_growth + tol;
    report.affinity_ok = !system.affine_in_u() || report.affinity_residual <= tol;
    report.convexity_ok = report.convexity_violations == 0;
    Ok(report)
}

fn sample_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize, bound: f64) -> Array2<f64> {
    let mut pts = Array2::zeros((n, d));
    for i in 0..n {
        for j in 0..d {
            pts[(i, j)] = rng.gen_range(-bound..=bound);
        }
    }
    pts
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
