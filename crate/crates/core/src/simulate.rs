//! Brownian driving noise and the explicit first-order integrator.
//!
//! The neutral equation is integrated through the distributed-delay
//! reduction: for the integral operator `L` over a sliding window,
//! `d(L X_t)/dt = kappa * (X(t) - X(t - r0))` exactly, so the dynamics is
//! equivalent to
//!
//! ```text
//! dX = [ -kappa (X(t) - X(t - r0)) + Z(X(t)) + b(X_t) ] dt + sigma dW
//! ```
//!
//! which an explicit Euler step discretizes without any per-step solve.
//! The quantity `Gamma(t) = X(t) + L X_t` whose differential the equation
//! prescribes is kept as a consistency diagnostic ([`gamma_consistency`]).

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::segment::{trapezoid, Segment};

/// Relative tolerance for grid compatibility checks.
const GRID_TOL: f64 = 1e-9;

/// Deterministically derive an independent seed for a sub-task.
/// SplitMix64 over the master seed and the index.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream id from an operation-local phase and a trial index.
/// Phases separate the independent Monte Carlo loops inside one operation.
pub fn stream_id(phase: u32, trial: u32) -> u64 {
    ((phase as u64) << 32) | trial as u64
}

/// A realized Brownian increment path: i.i.d. Gaussian vectors with
/// per-coordinate variance `h`, reproducible from `(seed, stream)`.
#[derive(Debug, Clone)]
pub struct NoisePath {
    increments: Vec<DVector<f64>>,
    step: f64,
    seed: u64,
    stream: u64,
}

impl NoisePath {
    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.increments.first().map(|v| v.len()).unwrap_or(0)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Increment over `[t_k, t_{k+1}]`.
    pub fn increment(&self, k: usize) -> &DVector<f64> {
        &self.increments[k]
    }

    pub fn increments(&self) -> &[DVector<f64>] {
        &self.increments
    }

    /// The all-zero path, for deterministic studies.
    pub fn zeros(steps: usize, step: f64, dim: usize) -> Self {
        Self {
            increments: vec![DVector::zeros(dim); steps],
            step,
            seed: 0,
            stream: 0,
        }
    }

    /// The tail of this path starting at increment `from`, as its own path.
    /// Used by synchronous couplings of runs launched at different times.
    pub fn tail(&self, from: usize) -> Self {
        Self {
            increments: self.increments[from..].to_vec(),
            step: self.step,
            seed: self.seed,
            stream: self.stream,
        }
    }
}

/// Generate the increments of an `dim`-dimensional Brownian path on a grid
/// of `steps` intervals of width `step`.
pub fn generate_noise(seed: u64, stream: u64, steps: usize, step: f64, dim: usize) -> NoisePath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let scale = step.sqrt();
    let increments = (0..steps)
        .map(|_| DVector::from_fn(dim, |_, _| scale * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    NoisePath {
        increments,
        step,
        seed,
        stream,
    }
}

/// A realized path on `[-r0, K h]` holding the initial window and every
/// integrator output, with segment extraction at any nonnegative grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<DVector<f64>>,
    history: usize,
    step: f64,
}

impl Trajectory {
    pub(crate) fn from_parts(states: Vec<DVector<f64>>, history: usize, step: f64) -> Self {
        debug_assert!(states.len() > history);
        Self {
            states,
            history,
            step,
        }
    }

    /// Number of integration steps `K` (grid times run `-m..=K`).
    pub fn steps(&self) -> usize {
        self.states.len() - self.history - 1
    }

    /// Grid intervals inside one delay window.
    pub fn history(&self) -> usize {
        self.history
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    /// State at grid time index `k` in `-m ..= K` (time `k * h`).
    pub fn state(&self, k: isize) -> &DVector<f64> {
        &self.states[(k + self.history as isize) as usize]
    }

    /// All stored nodes, oldest (`t = -r0`) first.
    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    /// Borrowed delay window ending at grid time index `k >= 0`.
    pub fn window(&self, k: usize) -> &[DVector<f64>] {
        &self.states[k..=k + self.history]
    }

    /// Segment extracted at grid time index `k >= 0`.
    pub fn segment(&self, k: usize) -> Segment {
        Segment::new(self.window(k).to_vec(), self.step)
            .expect("trajectory windows are valid segments")
    }

    pub fn final_segment(&self) -> Segment {
        self.segment(self.steps())
    }

    /// `Gamma(t_k) = X(t_k) + L X_{t_k}` for `k = 0..=K`, by trapezoid.
    pub fn gamma(&self, kappa: f64) -> Vec<DVector<f64>> {
        (0..=self.steps())
            .map(|k| {
                let mut g = trapezoid(self.window(k), self.step);
                g *= kappa;
                g += self.state(k as isize);
                g
            })
            .collect()
    }

    /// Grid times for every stored node, `-r0` first.
    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len())
            .map(|i| (i as isize - self.history as isize) as f64 * self.step)
            .collect()
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= GRID_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Number of grid steps in `span`, which must be an exact multiple of `h`.
pub fn steps_for(span: f64, h: f64) -> Result<usize> {
    let k = (span / h).round();
    if k < 0.0 || !close(k * h, span) {
        return Err(Error::GridMismatch(format!(
            "span {span} is not a nonnegative multiple of the step {h}"
        )));
    }
    Ok(k as usize)
}

/// Integrate the neutral equation from `initial` over `[0, horizon]` with the
/// given driving noise. Pure in all arguments; a non-finite state aborts with
/// the offending step index.
pub fn integrate(
    spec: &ModelSpec,
    initial: &Segment,
    horizon: f64,
    noise: &NoisePath,
) -> Result<Trajectory> {
    if initial.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            actual: initial.dim(),
        });
    }
    if !close(initial.delay(), spec.delay()) {
        return Err(Error::GridMismatch(format!(
            "initial segment covers {} but the model delay is {}",
            initial.delay(),
            spec.delay()
        )));
    }
    let h = initial.step();
    if !close(noise.step(), h) {
        return Err(Error::GridMismatch(format!(
            "noise step {} differs from the segment grid step {h}",
            noise.step()
        )));
    }
    let steps = steps_for(horizon, h)?;
    if noise.steps() < steps {
        return Err(Error::GridMismatch(format!(
            "noise path has {} increments, need {steps}",
            noise.steps()
        )));
    }
    if steps > 0 && noise.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            actual: noise.dim(),
        });
    }

    let m = initial.intervals();
    let kappa = spec.kappa();
    let sigma = spec.sigma();
    let mut states: Vec<DVector<f64>> = Vec::with_capacity(m + 1 + steps);
    states.extend(initial.nodes().iter().cloned());
    let mut window = initial.clone();

    for k in 0..steps {
        let x = &states[m + k];
        let x_delayed = &states[k];
        let mut next = x.clone();
        let mut drift = spec.state_drift(x);
        drift += spec.segment_drift(&window);
        drift.axpy(-kappa, x, 1.0);
        drift.axpy(kappa, x_delayed, 1.0);
        next.axpy(h, &drift, 1.0);
        next.gemv(1.0, sigma, noise.increment(k), 1.0);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                step: k,
                time: (k + 1) as f64 * h,
            });
        }
        window.push(next.clone())?;
        states.push(next);
    }

    Ok(Trajectory {
        states,
        history: m,
        step: h,
    })
}

/// Maximum defect of the integral identity for `Gamma(t) = X(t) + L X_t`:
///
/// ```text
/// Gamma(t_k) =? Gamma(0) + sum_{j<k} h [Z(X_j) + b(X_{t_j})] + sigma sum_{j<k} dW_j
/// ```
///
/// The defect is `O(h)` uniformly for the reduction-based scheme.
pub fn gamma_consistency(traj: &Trajectory, spec: &ModelSpec, noise: &NoisePath) -> Result<f64> {
    if traj.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            actual: traj.dim(),
        });
    }
    if noise.steps() < traj.steps() {
        return Err(Error::GridMismatch(
            "noise path shorter than the trajectory it drove".into(),
        ));
    }
    let h = traj.step();
    let gamma = traj.gamma(spec.kappa());
    let mut rhs = gamma[0].clone();
    let mut defect = 0.0f64;
    for (k, value) in gamma.iter().enumerate() {
        let d = (value - &rhs).norm();
        if d > defect {
            defect = d;
        }
        if k < traj.steps() {
            let seg = traj.segment(k);
            let mut drift = spec.state_drift(traj.state(k as isize));
            drift += spec.segment_drift(&seg);
            rhs.axpy(h, &drift, 1.0);
            rhs.gemv(1.0, spec.sigma(), noise.increment(k), 1.0);
        }
    }
    Ok(defect)
}
