//! Estimators against the invariant law: L2 decay of the semigroup and the
//! hypercontractivity necessary condition.
//!
//! The invariant measure is never constructed; it is approximated by the
//! empirical law of warmed-up chains, with the warmup length reported.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::observables::Observable;
use crate::segment::Segment;
use crate::simulate::{generate_noise, integrate, steps_for, stream_id};
use crate::stats;

/// Relative slack on the certified rate accepted by the L2 fit.
const L2_RATE_TOLERANCE: f64 = 0.3;
/// Bootstrap resamples for the variance standard errors.
const BOOTSTRAP_RESAMPLES: usize = 200;

/// Draw `count` segments from the chain after `warmup` time units, one
/// independent chain per sample, all started from the zero segment.
fn warmup_samples(
    spec: &ModelSpec,
    h: f64,
    warmup: f64,
    count: usize,
    seed: u64,
    phase: u32,
) -> Result<Vec<Segment>> {
    let m = steps_for(spec.delay(), h)?;
    if m == 0 {
        return Err(Error::GridMismatch(
            "step does not divide the delay window".into(),
        ));
    }
    let start = Segment::constant(nalgebra::DVector::zeros(spec.dim()), h, m)?;
    let steps = steps_for(warmup, h)?;
    super::parallel_trials(count, |trial| {
        let noise = generate_noise(seed, stream_id(phase, trial), steps, h, spec.dim());
        let traj = integrate(spec, &start, warmup, &noise)?;
        Ok(traj.final_segment())
    })
}

/// Inner Monte Carlo estimates of `P_t f(xi_i)` for every outer sample,
/// returning `(estimate, inner variance of the mean)` pairs.
fn inner_estimates(
    spec: &ModelSpec,
    f: &Observable,
    outer: &[Segment],
    t: f64,
    trials_inner: usize,
    seed: u64,
    phase: u32,
) -> Result<Vec<(f64, f64)>> {
    let h = outer[0].step();
    let steps = steps_for(t, h)?;
    super::parallel_trials(outer.len(), |i| {
        let xi = &outer[i as usize];
        let mut values = Vec::with_capacity(trials_inner);
        for j in 0..trials_inner {
            let trial = i * trials_inner as u32 + j as u32;
            let noise = generate_noise(seed, stream_id(phase, trial), steps, h, spec.dim());
            let traj = integrate(spec, xi, t, &noise)?;
            values.push(f(&traj.final_segment()));
        }
        let (mean, se) = stats::mean_se(&values);
        Ok((mean, se * se))
    })
}

/// Debiased variance across outer samples: the spread of the inner estimates
/// minus the average inner noise, floored at zero.
fn debiased_variance(pairs: &[(f64, f64)]) -> f64 {
    let estimates: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let noise: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let raw = stats::variance(&estimates);
    let correction = stats::kahan_sum(noise.iter().copied()) / noise.len() as f64;
    (raw - correction).max(0.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct L2Point {
    pub t: f64,
    /// Debiased `Var_mu(P_t f)` estimate.
    pub variance: f64,
    /// Bootstrap standard error over the outer samples.
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct L2Report {
    pub points: Vec<L2Point>,
    pub fitted_rate: Option<f64>,
    pub certified_rate: Option<f64>,
    /// Decay at least `70%` of the certified rate; `None` when infeasible.
    pub pass: Option<bool>,
    pub warmup: f64,
    pub trials_outer: usize,
    pub trials_inner: usize,
}

/// Variance of `P_t f` under the warmed-up empirical law, per grid time.
///
/// Outer samples are independent warmed-up chains; inner loops estimate
/// `P_t f` at each sample. The inner Monte Carlo noise is subtracted from the
/// across-sample variance, so the reported curve decays with the semigroup
/// and not with the inner budget.
pub fn l2_decay(
    spec: &ModelSpec,
    f: &Observable,
    t_grid: &[f64],
    warmup: f64,
    trials_outer: usize,
    trials_inner: usize,
    h: f64,
    seed: u64,
) -> Result<L2Report> {
    if trials_outer < 2 || trials_inner == 0 {
        return Err(Error::InvalidParameter(
            "nested Monte Carlo budgets must be >= 2 outer and >= 1 inner".into(),
        ));
    }
    let outer = warmup_samples(spec, h, warmup, trials_outer, seed, 0)?;
    let mut points = Vec::with_capacity(t_grid.len());
    for (ti, &t) in t_grid.iter().enumerate() {
        let pairs = inner_estimates(spec, f, &outer, t, trials_inner, seed, 1 + ti as u32)?;
        let variance = debiased_variance(&pairs);
        // bootstrap over outer samples, pairing estimate and inner noise
        let std_error =
            bootstrap_variance_se(&pairs, crate::simulate::derive_seed(seed, ti as u64));
        points.push(L2Point {
            t,
            variance,
            std_error,
        });
    }
    let fitted_rate =
        stats::fit_log_slope(&points.iter().map(|p| (p.t, p.variance)).collect::<Vec<_>>());
    let certified_rate = spec.check_conditions().certified_rate();
    let pass = match (fitted_rate, certified_rate) {
        (Some(rate), Some(cert)) => Some(rate <= -(1.0 - L2_RATE_TOLERANCE) * cert),
        _ => None,
    };
    Ok(L2Report {
        points,
        fitted_rate,
        certified_rate,
        pass,
        warmup,
        trials_outer,
        trials_inner,
    })
}

fn bootstrap_variance_se(pairs: &[(f64, f64)], seed: u64) -> f64 {
    if pairs.len() < 2 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats_out = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut buf = vec![(0.0, 0.0); pairs.len()];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for slot in buf.iter_mut() {
            *slot = pairs[rng.random_range(0..pairs.len())];
        }
        stats_out.push(debiased_variance(&buf));
    }
    stats::variance(&stats_out).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct HyperReport {
    /// `(mu(|P_t f|^4))^{1/4}` over the warmed-up samples.
    pub four_norm: f64,
    pub four_norm_se: f64,
    /// `(mu(f^2))^{1/2}` over the warmed-up samples.
    pub two_norm: f64,
    pub two_norm_se: f64,
    /// `two_norm + 3 SE - four_norm`.
    pub margin: f64,
    pub pass: bool,
    pub t: f64,
    pub warmup: f64,
    pub trials_outer: usize,
    pub trials_inner: usize,
}

/// Necessary condition for hypercontractivity on one observable:
/// `||P_t f||_{L^4(mu)} <= ||f||_{L^2(mu)}` at large `t`. This checks a single
/// `f`, not the operator norm.
pub fn hyper_check(
    spec: &ModelSpec,
    f: &Observable,
    t: f64,
    warmup: f64,
    trials_outer: usize,
    trials_inner: usize,
    h: f64,
    seed: u64,
) -> Result<HyperReport> {
    if trials_outer < 2 || trials_inner == 0 {
        return Err(Error::InvalidParameter(
            "nested Monte Carlo budgets must be >= 2 outer and >= 1 inner".into(),
        ));
    }
    let outer = warmup_samples(spec, h, warmup, trials_outer, seed, 0)?;
    let pairs = inner_estimates(spec, f, &outer, t, trials_inner, seed, 1)?;
    let fourth: Vec<f64> = pairs.iter().map(|p| p.0.powi(4)).collect();
    let squares: Vec<f64> = outer.iter().map(|xi| f(xi).powi(2)).collect();
    let (m4, se4) = stats::mean_se(&fourth);
    let (m2, se2) = stats::mean_se(&squares);
    let four_norm = m4.max(0.0).powf(0.25);
    let two_norm = m2.max(0.0).sqrt();
    // delta method through the root transforms
    let four_norm_se = if m4 > 0.0 {
        0.25 * se4 * m4.powf(-0.75)
    } else {
        0.0
    };
    let two_norm_se = if m2 > 0.0 { 0.5 * se2 / m2.sqrt() } else { 0.0 };
    let combined = (four_norm_se.powi(2) + two_norm_se.powi(2)).sqrt();
    let margin = two_norm + 3.0 * combined - four_norm;
    Ok(HyperReport {
        four_norm,
        four_norm_se,
        two_norm,
        two_norm_se,
        margin,
        pass: four_norm <= two_norm + 3.0 * combined,
        t,
        warmup,
        trials_outer,
        trials_inner,
    })
}
