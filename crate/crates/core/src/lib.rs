//! Simulation and Monte Carlo verification toolkit for functional SDEs of
//! neutral type with a linear integral neutral term.
//!
//! The crate covers the full loop from model declaration to quantitative
//! verification:
//!
//! - [`segment`]: states of the segment process on the delay window, the sup
//!   norm and the integral neutral operator;
//! - [`model`]: coefficient declarations, hypothesis constants, sampling
//!   falsifiers and the certified-rate condition;
//! - [`simulate`]: reproducible Brownian driving noise and the explicit
//!   first-order integrator built on the distributed-delay reduction;
//! - [`coupling`]: the coupling by change of measure: auxiliary process,
//!   drift schedule, coupling time, envelope and Girsanov density;
//! - [`estimators`]: Monte Carlo verification of contraction, concentration,
//!   the Harnack inequality, reweighted law identity, total-variation and
//!   L2 ergodicity, and a limited hypercontractivity check;
//! - [`observables`]: bounded segment observables used by the estimators.

// negated float comparisons like `!(x > 0.0)` reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// estimator signatures mirror the operations they implement
#![allow(clippy::too_many_arguments)]

pub mod coupling;
pub mod error;
pub mod estimators;
pub mod model;
pub mod observables;
pub mod segment;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
pub use model::{builtin_model, ConditionReport, HypothesisConstants, ModelSpec};
pub use segment::Segment;
pub use simulate::{generate_noise, integrate, NoisePath, Trajectory};
