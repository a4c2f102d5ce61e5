//! Monte Carlo verification of the quantitative conclusions.
//!
//! Every estimator evaluates the semigroup `P_t f(xi) = E f(X_t(xi))` on
//! segment observables by simulation, is deterministic given its seed, and
//! reduces trials with compensated sums in trial order, so results do not
//! depend on worker scheduling.

mod concentration;
mod contraction;
mod invariant;
mod reweighting;

pub use concentration::exp_moment;
pub use contraction::{
    contraction_curve, wasserstein_cauchy, wasserstein_cauchy_curve, ContractionReport,
    WassersteinPoint, WassersteinReport,
};
pub use invariant::{hyper_check, l2_decay, HyperReport, L2Point, L2Report};
pub use reweighting::{
    harnack_check, harnack_two_stage, reweighted_law_check, tv_decay, HarnackReport, LawCheck,
    TvPoint, TvReport,
};

use std::collections::BTreeMap;

use serde::Serialize;

/// A scalar Monte Carlo estimate with its decision, if the producing
/// operation defines one, and named diagnostic values.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub point_estimate: f64,
    pub std_error: f64,
    pub trials: usize,
    /// `None` when no pass/fail semantics apply (for example when the rate
    /// certificate is infeasible and judgments are disabled).
    pub pass: Option<bool>,
    pub metadata: BTreeMap<String, f64>,
}

impl EstimateReport {
    pub(crate) fn new(point_estimate: f64, std_error: f64, trials: usize) -> Self {
        Self {
            point_estimate,
            std_error,
            trials,
            pass: None,
            metadata: BTreeMap::new(),
        }
    }

    pub(crate) fn with(mut self, key: &str, value: f64) -> Self {
        self.metadata.insert(key.to_string(), value);
        self
    }
}

/// Run independent trials in parallel, keeping trial order in the output.
pub(crate) fn parallel_trials<T: Send>(
    trials: usize,
    run: impl Fn(u32) -> crate::Result<T> + Sync + Send,
) -> crate::Result<Vec<T>> {
    use rayon::prelude::*;
    (0..trials as u32).into_par_iter().map(run).collect()
}
