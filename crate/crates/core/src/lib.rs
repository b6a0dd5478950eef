//! Finite-particle machinery for multi-agent deterministic optimal control.
//!
//! The library models N interacting particles whose common velocity field
//! depends on each particle's state, its control, and the empirical measure
//! of the whole population. On top of the core simulation it provides:
//!
//! - [`transport`]: exact p-Wasserstein distances, plans and displacement
//!   interpolation between equal-size empirical measures (assignment-based);
//! - [`system`]: the control system tuple (U, f, C, C_T) with sampled
//!   verification of its declared Lipschitz/growth/convexity contract;
//! - [`dynamics`]: deterministic RK4 integration of the coupled mean-field
//!   ODE and the transcribed cost functional;
//! - [`relaxed`]: finitely atomic Young-measure controls, the averaged
//!   dynamics and cost, chattering approximations, and cell-average
//!   projections onto uniform partitions of [0, 1];
//! - [`superposition`]: reconstruction of particle curves from a path of
//!   empirical measures via optimal matchings, with length identities,
//!   refinement diagnostics and velocity extraction;
//! - [`optimize`]: multistart projected-gradient estimation of the
//!   N-particle value function, the analytic barycenter reference, and the
//!   convergence experiment harness with its segment-to-square benchmark;
//! - [`io`]: CSV/JSON/SVG serialization of all of the above.

pub mod dynamics;
pub mod error;
pub mod io;
pub mod optimize;
pub mod relaxed;
pub mod rng;
pub mod superposition;
pub mod system;
pub mod transport;

pub use error::{Error, Result};
