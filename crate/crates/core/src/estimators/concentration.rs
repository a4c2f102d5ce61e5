//! Exponential concentration of the segment sup norm.

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::segment::Segment;
use crate::simulate::{generate_noise, integrate, steps_for, stream_id};
use crate::stats;

use super::EstimateReport;

/// Share of the mean carried by the top 1% of samples that raises the
/// heavy-tail flag.
const HEAVY_TAIL_SHARE: f64 = 0.5;

/// Monte Carlo estimate of `E exp(eps ||X_t(xi)||_inf^2)`.
///
/// The pass flag reports that the estimate is finite and not dominated by its
/// extreme tail; rate judgments across `t` belong to the caller.
pub fn exp_moment(
    spec: &ModelSpec,
    xi: &Segment,
    epsilon: f64,
    t: f64,
    trials: usize,
    seed: u64,
) -> Result<EstimateReport> {
    if epsilon < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be nonnegative, got {epsilon}"
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let h = xi.step();
    let steps = steps_for(t, h)?;
    let values = super::parallel_trials(trials, |trial| {
        let noise = generate_noise(seed, stream_id(0, trial), steps, h, spec.dim());
        let traj = integrate(spec, xi, t, &noise)?;
        let sup = traj.final_segment().uniform_norm();
        Ok((epsilon * sup * sup).exp())
    })?;
    let (mean, se) = stats::mean_se(&values);
    let top = stats::top_share(&values, 0.01);
    let heavy = top > HEAVY_TAIL_SHARE || !mean.is_finite();
    let mut report = EstimateReport::new(mean, se, trials)
        .with("epsilon", epsilon)
        .with("t", t)
        .with("top_percentile_share", top)
        .with("heavy_tail", if heavy { 1.0 } else { 0.0 });
    report.pass = Some(!heavy);
    Ok(report)
}
