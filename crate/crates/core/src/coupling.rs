//! Coupling by change of measure.
//!
//! Given initial segments `xi` and `eta`, the target process `X` solves the
//! neutral equation while the auxiliary process `Y` starts from `eta`, shares
//! the noise and the *same* neutral increment as `X`, and carries an extra
//! drift `g(s) (X - Y)/|X - Y|` that forces the paths together no later than
//! the design horizon `t`:
//!
//! ```text
//! d{Y(s) + L X_s} = { Z(Y(s)) + b(X_s) + g(s) 1_{s < tau} dir(s) } ds + sigma dW
//! ```
//!
//! With the closed-form schedule `g` the gap is dominated by a deterministic
//! envelope `G` that vanishes at `t`, and from the coupling time
//! `tau = inf{s : X(s) = Y(s)}` onward the processes are identical. The
//! Girsanov density
//!
//! ```text
//! R = exp[ -int <sigma^{-1} h, dW> - 1/2 int |sigma^{-1} h|^2 ds ]
//! ```
//!
//! reweights the law of `Y` into the law of the plain solution started from
//! `eta`; `h` collects the drift difference between the coupled dynamics of
//! `Y` and the target dynamics, assembled from the recorded components
//! `(h1, h2, h3)` as `h = kappa h1 1_[0,r0] + kappa h2 1_(r0,t+r0] + h3`.
//! The `kappa` factor carries the weight of the integral operator into the
//! window identity `d L(Y_s - X_s) = kappa (h1 | h2) ds`, which
//! [`neutral_identity_check`] verifies on the grid.
//!
//! Discrete realization of coalescence: the singular pull cannot shrink the
//! gap below one Euler increment, so the step that would overshoot sets
//! `Y = X` exactly instead, and from then on `Y` is pinned to `X` bit for
//! bit. A threshold `tol` also detects near-contact directly.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::segment::{trapezoid, Segment};
use crate::simulate::{steps_for, NoisePath, Trajectory};
use crate::stats;

/// Below this size the closed forms for `g` and `G` switch to their
/// removable-singularity limits.
const KAPPA1_LIMIT: f64 = 1e-8;

/// Default coupling-time threshold for a given initial gap.
pub fn default_tolerance(gap0: f64) -> f64 {
    1e-8 * (1.0 + gap0)
}

/// The forcing schedule `g(r) = gap0 e^{kappa1 r} / int_0^t e^{2 kappa1 u} du`
/// on `[0, t]`, extended by zero beyond `t`.
#[derive(Debug, Clone, Copy)]
pub struct ForcingSchedule {
    gap0: f64,
    kappa1: f64,
    horizon: f64,
}

impl ForcingSchedule {
    pub fn new(kappa1: f64, xi0: &DVector<f64>, eta0: &DVector<f64>, t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "coupling horizon must be positive, got {t}"
            )));
        }
        Ok(Self {
            gap0: (xi0 - eta0).norm(),
            kappa1,
            horizon: t,
        })
    }

    pub fn value(&self, r: f64) -> f64 {
        if r < 0.0 || r > self.horizon {
            return 0.0;
        }
        if self.kappa1.abs() < KAPPA1_LIMIT {
            self.gap0 / self.horizon
        } else {
            let denom = (2.0 * self.kappa1 * self.horizon).exp_m1() / (2.0 * self.kappa1);
            self.gap0 * (self.kappa1 * r).exp() / denom
        }
    }
}

/// The deterministic envelope dominating the gap,
/// `G(s) = gap0 (e^{2 kappa1 t - kappa1 s} - e^{kappa1 s}) / (e^{2 kappa1 t} - 1)`,
/// nonincreasing on `[0, t]` with `G(0) = gap0` and `G(t) = 0`.
#[derive(Debug, Clone, Copy)]
pub struct Envelope {
    gap0: f64,
    kappa1: f64,
    horizon: f64,
}

impl Envelope {
    pub fn new(kappa1: f64, xi0: &DVector<f64>, eta0: &DVector<f64>, t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "coupling horizon must be positive, got {t}"
            )));
        }
        Ok(Self {
            gap0: (xi0 - eta0).norm(),
            kappa1,
            horizon: t,
        })
    }

    pub fn value(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.horizon);
        if self.kappa1.abs() < KAPPA1_LIMIT {
            self.gap0 * (self.horizon - s) / self.horizon
        } else {
            let num = (self.kappa1 * s).exp() * (2.0 * self.kappa1 * (self.horizon - s)).exp_m1();
            let den = (2.0 * self.kappa1 * self.horizon).exp_m1();
            self.gap0 * num / den
        }
    }
}

/// Everything recorded along one coupled pair of paths on `[-r0, t + r0]`.
#[derive(Debug, Clone)]
pub struct CouplingTrace {
    pub x: Trajectory,
    pub y: Trajectory,
    /// First grid time with `|X - Y| <= tol` (or a capped pull); `None` if
    /// the paths never met, which the construction is designed to exclude.
    pub tau: Option<f64>,
    tau_index: Option<usize>,
    /// `g(t_k)` for `k = 0..=K`, zero beyond the design horizon.
    pub g_values: Vec<f64>,
    /// `G(t_k)` on the design window `[0, t]`.
    pub envelope: Vec<f64>,
    /// Component `h1` on `[0, r0]` (zero-padded elsewhere).
    pub h1: Vec<DVector<f64>>,
    /// Component `h2` on `(r0, t + r0]` (zero-padded elsewhere).
    pub h2: Vec<DVector<f64>>,
    /// Component `h3` on `[0, t + r0]`.
    pub h3: Vec<DVector<f64>>,
    /// Assembled drift correction `kappa h1 + kappa h2 + h3` per grid node.
    pub h: Vec<DVector<f64>>,
    pub log_density: f64,
    pub density: f64,
    kappa: f64,
    step: f64,
    design_horizon: f64,
}

impl CouplingTrace {
    /// Grid index of the coupling time, when one was detected.
    pub fn tau_index(&self) -> Option<usize> {
        self.tau_index
    }

    /// The design horizon `t` handed to [`run_coupling`].
    pub fn design_horizon(&self) -> f64 {
        self.design_horizon
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Pathwise gap `|X(t_k) - Y(t_k)|` for `k = 0..=K`.
    pub fn gaps(&self) -> Vec<f64> {
        (0..=self.x.steps())
            .map(|k| (self.x.state(k as isize) - self.y.state(k as isize)).norm())
            .collect()
    }
}

/// Girsanov exponent of the drift correction `h` against the increments that
/// drove the paths: left-endpoint sums for both the stochastic and the time
/// integral.
pub fn log_density(
    h_values: &[DVector<f64>],
    sigma_inv: &nalgebra::DMatrix<f64>,
    noise: &NoisePath,
    steps: usize,
) -> f64 {
    let h = noise.step();
    let mut ito = Vec::with_capacity(steps);
    let mut quad = Vec::with_capacity(steps);
    for (k, correction) in h_values.iter().enumerate().take(steps) {
        let v = sigma_inv * correction;
        ito.push(v.dot(noise.increment(k)));
        quad.push(v.norm_squared());
    }
    -stats::kahan_sum(ito) - 0.5 * h * stats::kahan_sum(quad)
}

/// Density report of a completed trace.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GirsanovDensity {
    pub log_density: f64,
    pub density: f64,
}

/// Recompute the Girsanov density of a trace against its driving noise.
pub fn girsanov_density(
    trace: &CouplingTrace,
    spec: &ModelSpec,
    noise: &NoisePath,
) -> Result<GirsanovDensity> {
    let sigma_inv = spec.sigma_inverse()?;
    let steps = trace.x.steps();
    if noise.steps() < steps {
        return Err(Error::GridMismatch(
            "noise path shorter than the coupling trace".into(),
        ));
    }
    let log_density = log_density(&trace.h, sigma_inv, noise, steps);
    Ok(GirsanovDensity {
        log_density,
        density: log_density.exp(),
    })
}

/// Run the coupling from `(xi, eta)` with design horizon `t` over the full
/// window `[0, t + r0]`.
///
/// Both paths are driven by the same noise. The coupling time is the first
/// grid time where the gap falls to `tol` or the scheduled pull would
/// overshoot the remaining gap; from then on `Y` is set to `X` node for node.
pub fn run_coupling(
    spec: &ModelSpec,
    xi: &Segment,
    eta: &Segment,
    t: f64,
    noise: &NoisePath,
    tol: f64,
) -> Result<CouplingTrace> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "coupling tolerance must be positive, got {tol}"
        )));
    }
    if xi.dim() != spec.dim() || eta.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            actual: xi.dim(),
        });
    }
    if xi.intervals() != eta.intervals() || xi.step() != eta.step() {
        return Err(Error::GridMismatch(
            "initial segments must share one grid".into(),
        ));
    }
    let h = xi.step();
    let m = xi.intervals();
    let steps_design = steps_for(t, h)?;
    if steps_design == 0 {
        return Err(Error::InvalidParameter(
            "coupling horizon must cover at least one step".into(),
        ));
    }
    let steps = steps_design + m;
    if noise.steps() < steps {
        return Err(Error::GridMismatch(format!(
            "noise path has {} increments, need {steps}",
            noise.steps()
        )));
    }
    let kappa = spec.kappa();
    let kappa1 = spec.constants().kappa1;
    let sigma = spec.sigma();
    let sigma_inv = spec.sigma_inverse()?;

    let schedule = ForcingSchedule::new(kappa1, xi.latest(), eta.latest(), t)?;
    let envelope_fn = Envelope::new(kappa1, xi.latest(), eta.latest(), t)?;

    let mut x_states: Vec<DVector<f64>> = xi.nodes().to_vec();
    let mut y_states: Vec<DVector<f64>> = eta.nodes().to_vec();
    x_states.reserve(steps);
    y_states.reserve(steps);
    let mut x_window = xi.clone();

    // lambda_k = Z(Y_k) - Z(X_k) + g 1_{k < tau} dir_k, recorded per node
    let mut lambda: Vec<DVector<f64>> = Vec::with_capacity(steps + 1);
    let mut g_values: Vec<f64> = Vec::with_capacity(steps + 1);

    let mut tau_index: Option<usize> = None;
    let gap0 = (xi.latest() - eta.latest()).norm();
    if gap0 <= tol {
        tau_index = Some(0);
        y_states[m] = x_states[m].clone();
    }

    for k in 0..=steps {
        let time = k as f64 * h;
        let coupled = tau_index.map(|ti| k >= ti).unwrap_or(false);
        let x_k = &x_states[m + k];
        let y_k = &y_states[m + k];
        let g_k = if coupled { 0.0 } else { schedule.value(time) };
        g_values.push(g_k);
        let mut lam = spec.state_drift(y_k) - spec.state_drift(x_k);
        if !coupled && g_k != 0.0 {
            let diff = x_k - y_k;
            let n = diff.norm();
            if n > 0.0 {
                lam.axpy(g_k / n, &diff, 1.0);
            }
        }
        lambda.push(lam);

        if k == steps {
            break;
        }

        // advance X by the plain reduced scheme
        let x_delayed = &x_states[k];
        let mut x_drift = spec.state_drift(x_k);
        let b_x = spec.segment_drift(&x_window);
        x_drift += &b_x;
        x_drift.axpy(-kappa, x_k, 1.0);
        x_drift.axpy(kappa, x_delayed, 1.0);
        let mut x_next = x_k.clone();
        x_next.axpy(h, &x_drift, 1.0);
        x_next.gemv(1.0, sigma, noise.increment(k), 1.0);
        if !x_next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                step: k,
                time: (k + 1) as f64 * h,
            });
        }

        let y_next = if coupled {
            x_next.clone()
        } else {
            // Y without the pull: shares the neutral increment of X, the
            // history drift b(X_s) and the noise, so the no-pull gap is
            // noise-free: gap_pred = (X_k - Y_k) + h (Z(X_k) - Z(Y_k)).
            let mut y_free = y_k.clone();
            let mut y_drift = spec.state_drift(y_k);
            y_drift += &b_x;
            y_drift.axpy(-kappa, x_k, 1.0);
            y_drift.axpy(kappa, x_delayed, 1.0);
            y_free.axpy(h, &y_drift, 1.0);
            y_free.gemv(1.0, sigma, noise.increment(k), 1.0);

            let gap_pred = &x_next - &y_free;
            let pull = h * g_values[k];
            if gap_pred.norm() <= pull.max(tol) {
                // the scheduled pull closes the remaining gap inside this
                // step: realize the coalescence exactly
                tau_index = Some(k + 1);
                x_next.clone()
            } else {
                let diff = x_k - y_k;
                let n = diff.norm();
                if pull > 0.0 && n > 0.0 {
                    y_free.axpy(pull / n, &diff, 1.0);
                }
                if (&x_next - &y_free).norm() <= tol {
                    tau_index = Some(k + 1);
                    x_next.clone()
                } else {
                    y_free
                }
            }
        };
        if !y_next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                step: k,
                time: (k + 1) as f64 * h,
            });
        }

        x_window.push(x_next.clone())?;
        x_states.push(x_next);
        y_states.push(y_next);
    }

    let x = Trajectory::from_parts(x_states, m, h);
    let y = Trajectory::from_parts(y_states, m, h);

    // h-decomposition per grid node
    let dim = spec.dim();
    let zero = DVector::zeros(dim);
    let mut h1 = vec![zero.clone(); steps + 1];
    let mut h2 = vec![zero.clone(); steps + 1];
    let mut h3 = vec![zero.clone(); steps + 1];
    let mut h_all = vec![zero.clone(); steps + 1];
    for k in 0..=steps {
        if k <= m {
            // h1(r) = xi(r - r0) - eta(r - r0) + Y(r) - X(r) on [0, r0]
            let mut v = xi.node(k) - eta.node(k);
            v += y.state(k as isize);
            v -= x.state(k as isize);
            h1[k] = v;
        } else {
            // h2(r) = int_{r - r0}^r lambda(u) du on (r0, t + r0]
            h2[k] = trapezoid(&lambda[k - m..=k], h);
        }
        // h3(r) = g(r) 1_{r < tau} dir(r) + b(X_r) - b(Y_r)
        let mut v = spec.segment_drift(&x.segment(k)) - spec.segment_drift(&y.segment(k));
        if g_values[k] != 0.0 {
            let diff = x.state(k as isize) - y.state(k as isize);
            let n = diff.norm();
            if n > 0.0 {
                v.axpy(g_values[k] / n, &diff, 1.0);
            }
        }
        h3[k] = v;

        let mut total = h3[k].clone();
        total.axpy(kappa, &h1[k], 1.0);
        total.axpy(kappa, &h2[k], 1.0);
        h_all[k] = total;
    }

    let ld = log_density(&h_all, sigma_inv, noise, steps);
    let envelope = (0..=steps_design)
        .map(|k| envelope_fn.value(k as f64 * h))
        .collect();

    Ok(CouplingTrace {
        x,
        y,
        tau: tau_index.map(|k| k as f64 * h),
        tau_index,
        g_values,
        envelope,
        h1,
        h2,
        h3,
        h: h_all,
        log_density: ld,
        density: ld.exp(),
        kappa,
        step: h,
        design_horizon: t,
    })
}

/// Maximum grid defect of the window identity
/// `L(Y_{s+h} - X_{s+h}) - L(Y_s - X_s) = h * kappa * (h1 | h2)(s) + O(h^2)`.
pub fn neutral_identity_check(trace: &CouplingTrace) -> f64 {
    let m = trace.x.history();
    let steps = trace.x.steps();
    let h = trace.step;
    let kappa = trace.kappa;
    let window_integral = |k: usize| -> DVector<f64> {
        let diff: Vec<DVector<f64>> = trace
            .y
            .window(k)
            .iter()
            .zip(trace.x.window(k))
            .map(|(a, b)| a - b)
            .collect();
        let mut v = trapezoid(&diff, h);
        v *= kappa;
        v
    };
    let mut defect = 0.0f64;
    let mut current = window_integral(0);
    for k in 0..steps {
        let next = window_integral(k + 1);
        let piece = if k <= m { &trace.h1[k] } else { &trace.h2[k] };
        let mut residual = &next - &current;
        residual.axpy(-h * kappa, piece, 1.0);
        let r = residual.norm();
        if r > defect {
            defect = r;
        }
        current = next;
    }
    defect
}

/// Monte Carlo Novikov diagnostic: estimate of `E exp(1/2 int |sigma^{-1} h|^2 ds)`
/// over independent coupling runs, with a dominance flag when the top decile
/// of the sampled exponentials carries most of the mean.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NovikovReport {
    pub estimate: f64,
    pub std_error: f64,
    pub trials: usize,
    /// Share of the sample mean carried by the top 10% of trials.
    pub top_decile_share: f64,
    /// Set when the share suggests a diverging exponential moment.
    pub divergence_flag: bool,
}

pub fn novikov_diagnostic(
    spec: &ModelSpec,
    xi: &Segment,
    eta: &Segment,
    t: f64,
    trials: usize,
    seed: u64,
) -> Result<NovikovReport> {
    use rayon::prelude::*;
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let sigma_inv = spec.sigma_inverse()?;
    let h = xi.step();
    let steps = steps_for(t, h)? + xi.intervals();
    let tol = default_tolerance((xi.latest() - eta.latest()).norm());
    let values: Vec<f64> = (0..trials as u32)
        .into_par_iter()
        .map(|trial| {
            let noise = crate::simulate::generate_noise(
                seed,
                crate::simulate::stream_id(0, trial),
                steps,
                h,
                spec.dim(),
            );
            let trace = run_coupling(spec, xi, eta, t, &noise, tol)?;
            let quad: Vec<f64> = (0..steps)
                .map(|k| (sigma_inv * &trace.h[k]).norm_squared())
                .collect();
            Ok((0.5 * h * stats::kahan_sum(quad)).exp())
        })
        .collect::<Result<Vec<f64>>>()?;
    let (estimate, std_error) = stats::mean_se(&values);
    let top_decile_share = stats::top_share(&values, 0.10);
    Ok(NovikovReport {
        estimate,
        std_error,
        trials,
        top_decile_share,
        divergence_flag: top_decile_share > 0.5 || !estimate.is_finite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_model;
    use crate::simulate::generate_noise;
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    fn scalar_linear(extra: &[(&str, f64)]) -> ModelSpec {
        let params: BTreeMap<String, f64> =
            extra.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        builtin_model("scalar_linear", &params).unwrap()
    }

    fn const_segment(value: f64, h: f64, m: usize) -> Segment {
        Segment::constant(DVector::from_vec(vec![value]), h, m).unwrap()
    }

    #[test]
    fn schedule_vanishes_for_zero_initial_gap() {
        let x0 = DVector::from_vec(vec![1.0, 2.0]);
        let g = ForcingSchedule::new(0.7, &x0, &x0, 1.5).unwrap();
        for i in 0..10 {
            assert_eq!(g.value(i as f64 * 0.15), 0.0);
        }
    }

    #[test]
    fn schedule_small_kappa1_limit_is_gap_over_t() {
        let x0 = DVector::from_vec(vec![1.0]);
        let y0 = DVector::from_vec(vec![0.25]);
        let g = ForcingSchedule::new(0.0, &x0, &y0, 2.5).unwrap();
        for i in 0..=10 {
            assert_relative_eq!(g.value(i as f64 * 0.25), 0.75 / 2.5, epsilon = 1e-14);
        }
        // continuity of the limit branch
        let g_eps = ForcingSchedule::new(1e-9, &x0, &y0, 2.5).unwrap();
        assert_relative_eq!(g_eps.value(1.0), g.value(1.0), epsilon = 1e-7);
    }

    #[test]
    fn schedule_matches_direct_quadrature_normalization() {
        // the defining property: int_0^t e^{kappa1 r} g(r) dr = gap0
        let x0 = DVector::from_vec(vec![1.0]);
        let y0 = DVector::from_vec(vec![0.0]);
        let (kappa1, t) = (1.0, 1.0);
        let g = ForcingSchedule::new(kappa1, &x0, &y0, t).unwrap();
        assert_relative_eq!(g.value(0.0), 2.0 / ((2.0f64).exp() - 1.0), epsilon = 1e-12);
        let n = 200_000;
        let dt = t / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let r = (i as f64 + 0.5) * dt;
            acc += (kappa1 * r).exp() * g.value(r) * dt;
        }
        assert_relative_eq!(acc, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn envelope_boundary_values_and_monotonicity() {
        let x0 = DVector::from_vec(vec![2.0]);
        let y0 = DVector::from_vec(vec![0.5]);
        for &kappa1 in &[-0.8, 0.0, 1.0, 3.0] {
            let env = Envelope::new(kappa1, &x0, &y0, 1.25).unwrap();
            assert_relative_eq!(env.value(0.0), 1.5, epsilon = 1e-12);
            assert!(env.value(1.25).abs() < 1e-12);
            let mut prev = env.value(0.0);
            for i in 1..=50 {
                let cur = env.value(1.25 * i as f64 / 50.0);
                assert!(cur <= prev + 1e-12, "envelope increased at kappa1 {kappa1}");
                prev = cur;
            }
        }
    }

    #[test]
    fn envelope_interior_point_closed_form() {
        let x0 = DVector::from_vec(vec![1.0]);
        let y0 = DVector::from_vec(vec![0.0]);
        let env = Envelope::new(1.0, &x0, &y0, 1.0).unwrap();
        let expected = ((1.5f64).exp() - (0.5f64).exp()) / ((2.0f64).exp() - 1.0);
        assert_relative_eq!(env.value(0.5), expected, epsilon = 1e-12);
    }

    #[test]
    fn rejects_nonpositive_horizon_and_tolerance() {
        let x0 = DVector::from_vec(vec![1.0]);
        let y0 = DVector::from_vec(vec![0.0]);
        assert!(ForcingSchedule::new(1.0, &x0, &y0, 0.0).is_err());
        assert!(Envelope::new(1.0, &x0, &y0, -1.0).is_err());
        let spec = scalar_linear(&[]);
        let h = spec.delay() / 20.0;
        let xi = const_segment(1.0, h, 20);
        let eta = const_segment(0.0, h, 20);
        let noise = generate_noise(0, 0, 200, h, 1);
        assert!(run_coupling(&spec, &xi, &eta, 1.0, &noise, 0.0).is_err());
    }

    #[test]
    fn equal_initial_data_couple_immediately() {
        let spec = scalar_linear(&[]);
        let h = spec.delay() / 20.0;
        let xi = const_segment(0.7, h, 20);
        let noise = generate_noise(12, 0, 200, h, 1);
        let trace = run_coupling(&spec, &xi, &xi, 0.5, &noise, default_tolerance(0.0)).unwrap();
        assert_eq!(trace.tau, Some(0.0));
        assert_eq!(trace.x.states(), trace.y.states());
        assert!(trace.g_values.iter().all(|&g| g == 0.0));
        for k in 0..trace.h.len() {
            assert_eq!(trace.h1[k].norm(), 0.0);
            assert_eq!(trace.h2[k].norm(), 0.0);
            assert_eq!(trace.h3[k].norm(), 0.0);
        }
        assert_eq!(trace.density, 1.0);
    }

    #[test]
    fn deterministic_coupling_respects_envelope_and_couples_in_time() {
        // sigma = 0: the gap dynamics is exactly the deterministic envelope ODE
        let spec = scalar_linear(&[("sigma", 0.0)]);
        let r0 = spec.delay();
        let t = 1.0;
        for &m in &[20usize, 200] {
            let h = r0 / m as f64;
            let xi = const_segment(1.0, h, m);
            let eta = const_segment(0.0, h, m);
            // sigma = 0 blocks the density, so drive the pieces directly
            let sched = ForcingSchedule::new(spec.constants().kappa1, xi.latest(), eta.latest(), t)
                .unwrap();
            let env = Envelope::new(spec.constants().kappa1, xi.latest(), eta.latest(), t).unwrap();
            // manual pair integration mirroring run_coupling's scheme
            let mut x = 1.0f64;
            let mut y = 0.0f64;
            let a = 6.0;
            let mut coupled_at = None;
            for k in 0..steps_for(t, h).unwrap() {
                let time = k as f64 * h;
                let gap = x - y;
                let g = if coupled_at.is_none() {
                    sched.value(time)
                } else {
                    0.0
                };
                let x_next = x + h * (-a * x);
                let y_free = y + h * (-a * y);
                let gap_pred = x_next - y_free;
                let pull = h * g;
                if coupled_at.is_none() && gap_pred.abs() <= pull {
                    coupled_at = Some(time + h);
                    y = x_next;
                } else if coupled_at.is_some() {
                    y = x_next;
                } else {
                    y = y_free + pull * gap.signum();
                }
                x = x_next;
                let bound = env.value(time + h)
                    + 10.0 * h * (spec.constants().state_lip + spec.constants().segment_lip);
                assert!(
                    (x - y).abs() <= bound,
                    "gap {} above envelope {} at m = {m}",
                    (x - y).abs(),
                    bound
                );
            }
            assert!(coupled_at.is_some(), "no coalescence at m = {m}");
            assert!(coupled_at.unwrap() <= t + h + 1e-12);
        }
    }

    #[test]
    fn coupling_run_pins_y_to_x_after_tau() {
        let spec = scalar_linear(&[]);
        let h = spec.delay() / 20.0;
        let m = 20;
        let t = 5.0 * spec.delay();
        let xi = const_segment(0.5, h, m);
        let eta = const_segment(0.0, h, m);
        let steps = steps_for(t, h).unwrap() + m;
        for seed in 0..20u64 {
            let noise = generate_noise(seed, 0, steps, h, 1);
            let trace = run_coupling(&spec, &xi, &eta, t, &noise, default_tolerance(0.5)).unwrap();
            let ti = trace.tau_index().expect("paths must couple");
            assert!(trace.tau.unwrap() <= t + h + 1e-12, "tau = {:?}", trace.tau);
            for k in ti..=trace.x.steps() {
                assert_eq!(
                    trace.x.state(k as isize),
                    trace.y.state(k as isize),
                    "bit-exact pinning violated at node {k}"
                );
            }
            // envelope value at tau dominates the residual gap up to tol
            let gap_at_tau = (trace.x.state(ti as isize) - trace.y.state(ti as isize)).norm();
            assert!(gap_at_tau <= default_tolerance(0.5));
        }
    }

    #[test]
    fn envelope_dominates_the_noisy_gap_up_to_scheme_slack() {
        let spec = scalar_linear(&[]);
        let h = spec.delay() / 20.0;
        let m = 20;
        let t = 5.0 * spec.delay();
        let xi = const_segment(0.5, h, m);
        let eta = const_segment(0.0, h, m);
        let steps = steps_for(t, h).unwrap() + m;
        let slack = 10.0 * h * (spec.constants().state_lip + spec.constants().segment_lip);
        for seed in 100..220u64 {
            let noise = generate_noise(seed, 0, steps, h, 1);
            let trace = run_coupling(&spec, &xi, &eta, t, &noise, default_tolerance(0.5)).unwrap();
            let gaps = trace.gaps();
            for (k, env) in trace.envelope.iter().enumerate() {
                assert!(
                    gaps[k] <= env + slack,
                    "seed {seed}: gap {} above envelope {} at node {k}",
                    gaps[k],
                    env
                );
            }
        }
    }

    #[test]
    fn segment_gap_bound_holds_along_the_trace() {
        // ||X_s - Y_s||_inf <= ||xi - eta||_inf on [0, r0] and
        // <= G(s - r0) + C h beyond, with G nonincreasing
        let spec = scalar_linear(&[]);
        let h = spec.delay() / 20.0;
        let m = 20;
        let t = 5.0 * spec.delay();
        let xi = const_segment(0.5, h, m);
        let eta = const_segment(0.0, h, m);
        let steps = steps_for(t, h).unwrap() + m;
        let env = Envelope::new(spec.constants().kappa1, xi.latest(), eta.latest(), t).unwrap();
        let slack = 10.0 * h * (spec.constants().state_lip + spec.constants().segment_lip);
        for seed in 300..330u64 {
            let noise = generate_noise(seed, 0, steps, h, 1);
            let trace = run_coupling(&spec, &xi, &eta, t, &noise, default_tolerance(0.5)).unwrap();
            for k in 0..=trace.x.steps() {
                let seg_gap = (0..=m)
                    .map(|j| (trace.x.window(k)[j].clone() - &trace.y.window(k)[j]).norm())
                    .fold(0.0, f64::max);
                let bound = if k <= m {
                    0.5
                } else {
                    env.value((k - m) as f64 * h) + slack
                };
                assert!(
                    seg_gap <= bound + 1e-12,
                    "seed {seed}: segment gap {seg_gap} above {bound} at node {k}"
                );
            }
        }
    }

    #[test]
    fn constant_drift_correction_matches_the_closed_form_density() {
        // h constant = v, sigma = identity: R = exp(-<v, W(T)> - |v|^2 T / 2)
        let h = 0.01;
        let steps = 250;
        let v = DVector::from_vec(vec![0.8, -0.3]);
        let noise = generate_noise(77, 5, steps, h, 2);
        let h_values = vec![v.clone(); steps];
        let sigma_inv = nalgebra::DMatrix::identity(2, 2);
        let ld = log_density(&h_values, &sigma_inv, &noise, steps);
        let mut w_total = DVector::zeros(2);
        for k in 0..steps {
            w_total += noise.increment(k);
        }
        let expected = -v.dot(&w_total) - 0.5 * v.norm_squared() * h * steps as f64;
        assert_relative_eq!(ld, expected, epsilon = 1e-10);
    }

    #[test]
    fn girsanov_density_recomputation_matches_the_trace() {
        let spec = scalar_linear(&[]);
        let h = spec.delay() / 20.0;
        let m = 20;
        let t = 2.0 * spec.delay();
        let xi = const_segment(0.3, h, m);
        let eta = const_segment(0.0, h, m);
        let steps = steps_for(t, h).unwrap() + m;
        let noise = generate_noise(8, 2, steps, h, 1);
        let trace = run_coupling(&spec, &xi, &eta, t, &noise, default_tolerance(0.3)).unwrap();
        let d = girsanov_density(&trace, &spec, &noise).unwrap();
        assert_eq!(d.log_density, trace.log_density);
        assert!(trace.density > 0.0);
    }

    #[test]
    fn density_is_a_mean_one_martingale() {
        let spec = scalar_linear(&[]);
        let h = spec.delay() / 20.0;
        let m = 20;
        let t = 2.0 * spec.delay();
        let xi = const_segment(0.5, h, m);
        let eta = const_segment(0.0, h, m);
        let steps = steps_for(t, h).unwrap() + m;
        let trials = 10_000u32;
        let densities: Vec<f64> = (0..trials)
            .map(|trial| {
                let noise = generate_noise(2025, crate::simulate::stream_id(0, trial), steps, h, 1);
                run_coupling(&spec, &xi, &eta, t, &noise, default_tolerance(0.5))
                    .unwrap()
                    .density
            })
            .collect();
        let (mean, se) = stats::mean_se(&densities);
        assert!(densities.iter().all(|&d| d > 0.0));
        assert!(
            (mean - 1.0).abs() <= 3.0 * se,
            "E R = {mean} +- {se} is not 1 within 3 SE"
        );
    }

    #[test]
    fn neutral_identity_defect_is_zero_for_equal_data_and_scales_with_h() {
        let spec = scalar_linear(&[("sigma", 1.0)]);
        let r0 = spec.delay();
        let t = 2.0 * r0;
        // equal data: both sides vanish identically
        let h = r0 / 20.0;
        let xi = const_segment(0.4, h, 20);
        let noise = generate_noise(4, 0, steps_for(t, h).unwrap() + 20, h, 1);
        let trace = run_coupling(&spec, &xi, &xi, t, &noise, default_tolerance(0.0)).unwrap();
        assert!(neutral_identity_check(&trace) <= 1e-12);

        // deterministic scalar case: defect ratio >= 1.8 under h-halving
        let spec0 = scalar_linear(&[("sigma", 1e-30)]);
        let defect_at = |m: usize| {
            let h = r0 / m as f64;
            let xi = const_segment(1.0, h, m);
            let eta = const_segment(0.0, h, m);
            let noise = generate_noise(0, 0, steps_for(t, h).unwrap() + m, h, 1);
            let trace = run_coupling(&spec0, &xi, &eta, t, &noise, default_tolerance(1.0)).unwrap();
            neutral_identity_check(&trace)
        };
        let coarse = defect_at(20);
        let fine = defect_at(40);
        assert!(coarse > 0.0);
        assert!(coarse / fine >= 1.8, "ratio {}", coarse / fine);
    }

    #[test]
    fn identity_sides_vanish_on_windows_fully_past_tau() {
        let spec = scalar_linear(&[]);
        let h = spec.delay() / 20.0;
        let m = 20;
        let t = 5.0 * spec.delay();
        let xi = const_segment(0.5, h, m);
        let eta = const_segment(0.0, h, m);
        let steps = steps_for(t, h).unwrap() + m;
        let noise = generate_noise(55, 0, steps, h, 1);
        let trace = run_coupling(&spec, &xi, &eta, t, &noise, default_tolerance(0.5)).unwrap();
        let ti = trace.tau_index().unwrap();
        for k in (ti + m)..=trace.x.steps() {
            if k > m {
                assert!(trace.h2[k].norm() <= 1e-14);
            }
            assert!(trace.h3[k].norm() <= 1e-14);
        }
    }

    #[test]
    fn novikov_estimate_is_one_for_equal_data_and_stable_otherwise() {
        let spec = scalar_linear(&[]);
        let h = spec.delay() / 20.0;
        let m = 20;
        let t = 2.0 * spec.delay();
        let xi = const_segment(0.2, h, m);
        let report = novikov_diagnostic(&spec, &xi, &xi, t, 64, 9).unwrap();
        assert_eq!(report.estimate, 1.0);
        assert_eq!(report.std_error, 0.0);
        assert!(!report.divergence_flag);

        let eta = const_segment(0.0, h, m);
        let small = novikov_diagnostic(&spec, &xi, &eta, t, 1000, 10).unwrap();
        let big = novikov_diagnostic(&spec, &xi, &eta, t, 2000, 11).unwrap();
        assert!(small.estimate.is_finite() && big.estimate.is_finite());
        assert!(!small.divergence_flag);
        let combined = (small.std_error.powi(2) + big.std_error.powi(2)).sqrt();
        assert!(
            (small.estimate - big.estimate).abs() <= 3.0 * combined,
            "estimates {} vs {} with combined SE {combined}",
            small.estimate,
            big.estimate
        );
    }

    #[test]
    fn sigma_zero_is_rejected_for_measure_change_operations() {
        let spec = scalar_linear(&[("sigma", 0.0)]);
        let h = spec.delay() / 20.0;
        let xi = const_segment(0.5, h, 20);
        let eta = const_segment(0.0, h, 20);
        let noise = generate_noise(0, 0, 200, h, 1);
        assert!(matches!(
            run_coupling(&spec, &xi, &eta, 1.0, &noise, 1e-8),
            Err(Error::SingularSigma)
        ));
        assert!(novikov_diagnostic(&spec, &xi, &eta, 1.0, 10, 0).is_err());
    }
}
