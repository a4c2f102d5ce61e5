//! Estimators built on the change of measure: the Harnack inequality with
//! power, the reweighted law identity and the total-variation decay bound.

use serde::Serialize;

use crate::coupling::{default_tolerance, run_coupling};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::observables::Observable;
use crate::segment::Segment;
use crate::simulate::{generate_noise, integrate, steps_for, stream_id};
use crate::stats;

/// Trials whose log-density exceeds this are excluded (and counted): the
/// density would overflow `exp`.
const LOG_DENSITY_OVERFLOW: f64 = 700.0;
/// Relative slack on the certified `lambda / 2` accepted by the TV fit.
const TV_RATE_TOLERANCE: f64 = 0.2;

/// Both sides of the Harnack inequality with power 2 and the fitted minimal
/// constant.
#[derive(Debug, Clone, Serialize)]
pub struct HarnackReport {
    /// `(P_t f(xi))^2`.
    pub left: f64,
    pub left_se: f64,
    /// `P_t f^2(eta) * exp(c ||xi - eta||_inf^2)`.
    pub right: f64,
    pub right_se: f64,
    /// `right + 3 SE - left`.
    pub margin: f64,
    pub pass: bool,
    /// Constant used on the right side.
    pub c_used: f64,
    /// Empirical minimal constant `[2 ln P_t f(xi) - ln P_t f^2(eta)] / gap^2`.
    pub c_star: Option<f64>,
    pub c_star_se: Option<f64>,
    pub gap_sq: f64,
    pub trials: usize,
}

/// Estimate both sides of `(P_t f(xi))^2 <= (P_t f^2(eta)) e^{c gap^2}` by
/// independent plain simulations with delta-method errors.
///
/// `t_total` is the semigroup time and must exceed the delay; `f` must be
/// nonnegative (checked on every sampled path).
pub fn harnack_check(
    spec: &ModelSpec,
    f: &Observable,
    xi: &Segment,
    eta: &Segment,
    t_total: f64,
    c: f64,
    trials: usize,
    seed: u64,
) -> Result<HarnackReport> {
    if !(t_total > spec.delay()) {
        return Err(Error::InvalidParameter(format!(
            "harnack check needs t_total > r0, got {t_total} <= {}",
            spec.delay()
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let h = xi.step();
    let steps = steps_for(t_total, h)?;
    let sample = |segment: &Segment, phase: u32, square: bool| -> Result<Vec<f64>> {
        super::parallel_trials(trials, |trial| {
            let noise = generate_noise(seed, stream_id(phase, trial), steps, h, spec.dim());
            let traj = integrate(spec, segment, t_total, &noise)?;
            let v = f(&traj.final_segment());
            if v < 0.0 {
                return Err(Error::InvalidParameter(
                    "harnack observable must be nonnegative".into(),
                ));
            }
            Ok(if square { v * v } else { v })
        })
    };
    let left_samples = sample(xi, 0, false)?;
    let right_samples = sample(eta, 1, true)?;
    let (m1, se1) = stats::mean_se(&left_samples);
    let (m2, se2) = stats::mean_se(&right_samples);

    let gap_sq = xi
        .nodes()
        .iter()
        .zip(eta.nodes())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max)
        .powi(2);
    let weight = (c * gap_sq).exp();
    let left = m1 * m1;
    let left_se = 2.0 * m1.abs() * se1;
    let right = m2 * weight;
    let right_se = se2 * weight;
    let combined = (left_se * left_se + right_se * right_se).sqrt();
    let margin = right + 3.0 * combined - left;

    let (c_star, c_star_se) = if gap_sq > 0.0 && m1 > 0.0 && m2 > 0.0 {
        let star = (2.0 * m1.ln() - m2.ln()) / gap_sq;
        let star_se = ((2.0 * se1 / m1).powi(2) + (se2 / m2).powi(2)).sqrt() / gap_sq;
        (Some(star), Some(star_se))
    } else {
        (None, None)
    };

    Ok(HarnackReport {
        left,
        left_se,
        right,
        right_se,
        margin,
        pass: left <= right + 3.0 * combined,
        c_used: c,
        c_star,
        c_star_se,
        gap_sq,
        trials,
    })
}

/// Two-stage protocol: measure the minimal constant on one set of seeds,
/// freeze `c = factor * max(c_star, 0)`, then re-verify on fresh seeds.
/// Returns the measuring and the verifying report.
pub fn harnack_two_stage(
    spec: &ModelSpec,
    f: &Observable,
    xi: &Segment,
    eta: &Segment,
    t_total: f64,
    factor: f64,
    trials: usize,
    seed: u64,
) -> Result<(HarnackReport, HarnackReport)> {
    let stage1 = harnack_check(spec, f, xi, eta, t_total, 0.0, trials, seed)?;
    let frozen = factor * stage1.c_star.unwrap_or(0.0).max(0.0);
    let stage2 = harnack_check(
        spec,
        f,
        xi,
        eta,
        t_total,
        frozen,
        trials,
        crate::simulate::derive_seed(seed, 1),
    )?;
    Ok((stage1, stage2))
}

/// Per-observable comparison of the reweighted coupling estimate against a
/// plain run.
#[derive(Debug, Clone, Serialize)]
pub struct LawCheck {
    pub observable: String,
    /// `E[R f(Y_{t + r0})]` over the coupling runs.
    pub reweighted: f64,
    pub reweighted_se: f64,
    /// `E[f(X_{t + r0}(eta))]` over independent plain runs.
    pub plain: f64,
    pub plain_se: f64,
    pub pass: bool,
    pub excluded: usize,
    pub exclusion_rate: f64,
    pub trials: usize,
}

/// Verify the law identity under reweighting: the density `R` of the coupling
/// started from `(xi, eta)` turns expectations over the coupled paths into
/// expectations of the plain solution started from `eta`.
///
/// The observable is evaluated on the auxiliary path's final segment
/// `Y_{t + r0}` (equal to `X_{t + r0}` once the paths have coupled) and the
/// reference side is an independent plain simulation from `eta`.
pub fn reweighted_law_check(
    spec: &ModelSpec,
    xi: &Segment,
    eta: &Segment,
    t: f64,
    observables: &[(String, Observable)],
    trials: usize,
    seed: u64,
) -> Result<Vec<LawCheck>> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let h = xi.step();
    let m = xi.intervals();
    let steps = steps_for(t, h)? + m;
    let horizon = steps as f64 * h;
    let tol = default_tolerance((xi.latest() - eta.latest()).norm());

    // (density, per-observable values on Y's final segment); None = overflow
    let coupled: Vec<Option<(f64, Vec<f64>)>> = super::parallel_trials(trials, |trial| {
        let noise = generate_noise(seed, stream_id(0, trial), steps, h, spec.dim());
        let trace = run_coupling(spec, xi, eta, t, &noise, tol)?;
        if trace.log_density > LOG_DENSITY_OVERFLOW {
            return Ok(None);
        }
        let seg = trace.y.final_segment();
        Ok(Some((
            trace.density,
            observables.iter().map(|(_, f)| f(&seg)).collect(),
        )))
    })?;
    let plain: Vec<Vec<f64>> = super::parallel_trials(trials, |trial| {
        let noise = generate_noise(seed, stream_id(1, trial), steps, h, spec.dim());
        let traj = integrate(spec, eta, horizon, &noise)?;
        let seg = traj.final_segment();
        Ok(observables.iter().map(|(_, f)| f(&seg)).collect())
    })?;

    let excluded = coupled.iter().filter(|v| v.is_none()).count();
    let exclusion_rate = excluded as f64 / trials as f64;
    let mut checks = Vec::with_capacity(observables.len());
    for (idx, (name, _)) in observables.iter().enumerate() {
        let weighted: Vec<f64> = coupled
            .iter()
            .flatten()
            .map(|(density, values)| density * values[idx])
            .collect();
        let reference: Vec<f64> = plain.iter().map(|values| values[idx]).collect();
        let (rw, rw_se) = stats::mean_se(&weighted);
        let (pl, pl_se) = stats::mean_se(&reference);
        let combined = (rw_se * rw_se + pl_se * pl_se).sqrt();
        checks.push(LawCheck {
            observable: name.clone(),
            reweighted: rw,
            reweighted_se: rw_se,
            plain: pl,
            plain_se: pl_se,
            pass: (rw - pl).abs() <= 3.0 * combined,
            excluded,
            exclusion_rate,
            trials,
        });
    }
    Ok(checks)
}

#[derive(Debug, Clone, Serialize)]
pub struct TvPoint {
    /// Coupling design horizon.
    pub t: f64,
    /// `E|1 - R|`, an upper bound for the total-variation distance of the
    /// laws at `t + r0`.
    pub bound: f64,
    pub std_error: f64,
    pub excluded: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TvReport {
    pub points: Vec<TvPoint>,
    /// Log-slope of the bound over the fitted part of the grid.
    pub fitted_rate: Option<f64>,
    /// One-sided p-value for a decreasing trend beyond the burn-in.
    pub trend_p: Option<f64>,
    pub certified_rate: Option<f64>,
    /// Significant decrease and decay at least `80%` of `lambda / 2`;
    /// `None` without a feasible certificate.
    pub pass: Option<bool>,
    pub fit_skip: usize,
}

/// The coupling bound `E|1 - R|` on a grid of design horizons. The first
/// `fit_skip` grid points are reported but excluded from the rate fit and
/// the trend test (the theorem only speaks past an unspecified burn-in).
pub fn tv_decay(
    spec: &ModelSpec,
    xi: &Segment,
    eta: &Segment,
    t_grid: &[f64],
    trials: usize,
    seed: u64,
    fit_skip: usize,
) -> Result<TvReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let h = xi.step();
    let m = xi.intervals();
    let tol = default_tolerance((xi.latest() - eta.latest()).norm());
    let mut points = Vec::with_capacity(t_grid.len());
    for (i, &t) in t_grid.iter().enumerate() {
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tv grid times must be positive, got {t}"
            )));
        }
        let steps = steps_for(t, h)? + m;
        let values: Vec<Option<f64>> = super::parallel_trials(trials, |trial| {
            let noise = generate_noise(seed, stream_id(i as u32, trial), steps, h, spec.dim());
            let trace = run_coupling(spec, xi, eta, t, &noise, tol)?;
            if trace.log_density > LOG_DENSITY_OVERFLOW {
                return Ok(None);
            }
            Ok(Some((1.0 - trace.density).abs()))
        })?;
        let kept: Vec<f64> = values.iter().flatten().copied().collect();
        let excluded = trials - kept.len();
        let (bound, std_error) = stats::mean_se(&kept);
        points.push(TvPoint {
            t,
            bound,
            std_error,
            excluded,
        });
    }
    let tail: Vec<&TvPoint> = points.iter().skip(fit_skip).collect();
    let fitted_rate =
        stats::fit_log_slope(&tail.iter().map(|p| (p.t, p.bound)).collect::<Vec<_>>());
    let trend_p = if tail.len() >= 3 {
        Some(stats::decreasing_trend_p(
            &tail.iter().map(|p| p.bound).collect::<Vec<_>>(),
        ))
    } else {
        None
    };
    let certified_rate = spec.check_conditions().certified_rate();
    let pass = match (fitted_rate, certified_rate, trend_p) {
        (Some(rate), Some(cert), Some(p)) => {
            Some(p < 0.05 && rate <= -(1.0 - TV_RATE_TOLERANCE) * cert / 2.0)
        }
        _ => None,
    };
    Ok(TvReport {
        points,
        fitted_rate,
        trend_p,
        certified_rate,
        pass,
        fit_skip,
    })
}
