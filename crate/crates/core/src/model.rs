//! Model declarations and certification of the rate condition.
//!
//! A [`ModelSpec`] bundles the coefficient functions of a neutral functional
//! SDE
//!
//! ```text
//! d{X(t) + L X_t} = {Z(X(t)) + b(X_t)} dt + sigma dW(t)
//! ```
//!
//! together with user-declared hypothesis constants: Lipschitz constants for
//! `Z` and `b`, the dissipativity pair `(lambda1, lambda2)` of the one-sided
//! segment condition, and the one-sided constant `kappa1` of `Z` alone.
//! Constants are declared, not derived; [`ModelSpec::verify_dissipativity`]
//! and [`ModelSpec::verify_h2`] are sampling falsifiers for them.
//!
//! [`ConditionReport`] evaluates the certified-rate condition
//!
//! ```text
//! rho  = lambda1 / (1 + kappa)
//! gate = 1 - kappa * r0^2 * exp(rho * r0)        (must be positive)
//! rate = rho - (kappa r0^2 lambda1 + lambda2) exp(rho r0) / ((1 - kappa) gate)
//! ```
//!
//! and the certified ergodicity rate is `rate` whenever both the gate and the
//! rate are positive. Infeasibility is a reported state, not an error:
//! simulation remains available, only certificates are withheld.
//!
//! At `kappa = 0` the gate is identically 1 and the rate reduces to
//! `lambda1 - lambda2 * exp(lambda1 * r0)`; note that the exponent carries
//! `lambda1`, so feasibility at `kappa = 0` is strictly harder than the
//! condition `lambda1 > lambda2 * exp(lambda2 * r0)` that is sometimes quoted
//! for the memoryless case.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::segment::Segment;

/// Pointwise drift coefficient `Z`.
pub type DriftFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
/// History-dependent drift coefficient `b` acting on segments.
pub type FunctionalFn = dyn Fn(&Segment) -> DVector<f64> + Send + Sync;

/// Declared hypothesis constants of a model.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HypothesisConstants {
    /// Lipschitz constant of the pointwise drift.
    pub state_lip: f64,
    /// Lipschitz constant of the history drift w.r.t. the sup norm.
    pub segment_lip: f64,
    /// Dissipativity constant paired with the pointwise gap.
    pub lambda1: f64,
    /// Dissipativity constant paired with the sup-norm gap.
    pub lambda2: f64,
    /// One-sided constant of the pointwise drift alone:
    /// `<Z(x) - Z(y), x - y> <= -kappa1 |x - y|^2`.
    pub kappa1: f64,
}

/// A fully declared neutral functional SDE model.
pub struct ModelSpec {
    name: String,
    dim: usize,
    kappa: f64,
    r0: f64,
    state_drift: Box<DriftFn>,
    segment_drift: Box<FunctionalFn>,
    sigma: DMatrix<f64>,
    sigma_inv: Option<DMatrix<f64>>,
    sigma_cond: f64,
    constants: HypothesisConstants,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("kappa", &self.kappa)
            .field("r0", &self.r0)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        kappa: f64,
        r0: f64,
        sigma: DMatrix<f64>,
        state_drift: Box<DriftFn>,
        segment_drift: Box<FunctionalFn>,
        constants: HypothesisConstants,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "state dimension must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&kappa) {
            return Err(Error::InvalidParameter(format!(
                "kappa must lie in [0, 1), got {kappa}"
            )));
        }
        if !(r0 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "delay must be positive, got {r0}"
            )));
        }
        if sigma.nrows() != dim || sigma.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: sigma.nrows(),
            });
        }
        if !(constants.lambda1 > constants.lambda2) || !(constants.lambda2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need lambda1 > lambda2 > 0, got lambda1 = {}, lambda2 = {}",
                constants.lambda1, constants.lambda2
            )));
        }
        if constants.state_lip < 0.0 || constants.segment_lip < 0.0 {
            return Err(Error::InvalidParameter(
                "Lipschitz constants must be nonnegative".into(),
            ));
        }
        // A singular sigma is allowed for deterministic studies; operations
        // that change measure demand the inverse and fail loudly without it.
        let sigma_inv = sigma.clone().try_inverse();
        let svd = sigma.clone().svd(false, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let smin = svd
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let sigma_cond = if smin > 0.0 {
            smax / smin
        } else {
            f64::INFINITY
        };
        Ok(Self {
            name: name.into(),
            dim,
            kappa,
            r0,
            state_drift,
            segment_drift,
            sigma,
            sigma_inv,
            sigma_cond,
            constants,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn delay(&self) -> f64 {
        self.r0
    }

    pub fn constants(&self) -> &HypothesisConstants {
        &self.constants
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Condition number of sigma (infinite when singular).
    pub fn sigma_condition(&self) -> f64 {
        self.sigma_cond
    }

    pub fn sigma_inverse(&self) -> Result<&DMatrix<f64>> {
        self.sigma_inv.as_ref().ok_or(Error::SingularSigma)
    }

    /// trace(sigma sigma^T), the total noise intensity.
    pub fn noise_trace(&self) -> f64 {
        self.sigma.iter().map(|v| v * v).sum()
    }

    pub fn state_drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.state_drift)(x)
    }

    pub fn segment_drift(&self, seg: &Segment) -> DVector<f64> {
        (self.segment_drift)(seg)
    }

    /// Evaluate the rate condition for this model's declared constants.
    pub fn check_conditions(&self) -> ConditionReport {
        ConditionReport::evaluate(
            self.kappa,
            self.r0,
            self.constants.lambda1,
            self.constants.lambda2,
        )
    }

    /// Sample pairs from the centered cube of the given radius and count
    /// violations of the declared one-sided condition on `Z`.
    pub fn verify_dissipativity(&self, samples: usize, radius: f64, seed: u64) -> ViolationReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut violations = 0usize;
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..samples {
            let x = random_vector(&mut rng, self.dim, radius);
            let y = random_vector(&mut rng, self.dim, radius);
            let diff = &x - &y;
            let lhs = (self.state_drift(&x) - self.state_drift(&y)).dot(&diff);
            let rhs = -self.constants.kappa1 * diff.norm_squared();
            let margin = lhs - rhs;
            if margin > relative_slack(lhs, rhs) {
                violations += 1;
            }
            if margin > worst {
                worst = margin;
            }
        }
        ViolationReport {
            samples,
            violations,
            worst_margin: worst,
        }
    }

    /// Sample random piecewise-linear segment pairs bounded by the radius and
    /// count violations of the declared segment dissipativity condition.
    pub fn verify_h2(&self, samples: usize, radius: f64, seed: u64) -> ViolationReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intervals = H2_GRID_INTERVALS;
        let step = self.r0 / intervals as f64;
        let mut violations = 0usize;
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..samples {
            let xi = random_segment(&mut rng, self.dim, intervals, step, radius);
            let eta = random_segment(&mut rng, self.dim, intervals, step, radius);
            let gap0 = xi.latest() - eta.latest();
            let diff_nodes: Vec<DVector<f64>> = xi
                .nodes()
                .iter()
                .zip(eta.nodes())
                .map(|(a, b)| a - b)
                .collect();
            let diff = Segment::new(diff_nodes, step).expect("segment pair shares the grid");
            let neutral = diff.neutral_term(self.kappa);
            let drift_gap = self.state_drift(xi.latest()) - self.state_drift(eta.latest())
                + self.segment_drift(&xi)
                - self.segment_drift(&eta);
            let lhs = 2.0 * drift_gap.dot(&(&gap0 + neutral));
            let rhs = self.constants.lambda2 * diff.uniform_norm().powi(2)
                - self.constants.lambda1 * gap0.norm_squared();
            let margin = lhs - rhs;
            if margin > relative_slack(lhs, rhs) {
                violations += 1;
            }
            if margin > worst {
                worst = margin;
            }
        }
        ViolationReport {
            samples,
            violations,
            worst_margin: worst,
        }
    }
}

/// Grid intervals used when sampling verification segments.
const H2_GRID_INTERVALS: usize = 20;

/// Relative slack distinguishing round-off from genuine violations.
fn relative_slack(lhs: f64, rhs: f64) -> f64 {
    1e-9 * (1.0 + lhs.abs() + rhs.abs())
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.random_range(-radius..=radius))
}

fn random_segment(
    rng: &mut ChaCha8Rng,
    dim: usize,
    intervals: usize,
    step: f64,
    radius: f64,
) -> Segment {
    let values = (0..=intervals)
        .map(|_| random_vector(rng, dim, radius))
        .collect();
    Segment::new(values, step).expect("verification grid is valid")
}

/// Outcome of a sampling falsifier.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ViolationReport {
    pub samples: usize,
    pub violations: usize,
    /// Largest observed excess of the left side over the right (negative
    /// when the condition held with margin on every sample).
    pub worst_margin: f64,
}

/// Evaluated feasibility of the rate condition and the certified rates.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConditionReport {
    pub rho: f64,
    pub gate: f64,
    /// Certified exponential rate; `None` when the gate fails.
    pub lambda: Option<f64>,
    pub feasible: bool,
}

impl ConditionReport {
    /// Direct evaluation from the four scalars entering the condition.
    pub fn evaluate(kappa: f64, r0: f64, lambda1: f64, lambda2: f64) -> Self {
        let rho = lambda1 / (1.0 + kappa);
        let growth = (rho * r0).exp();
        let gate = 1.0 - kappa * r0 * r0 * growth;
        let lambda = if gate > 0.0 {
            Some(rho - (kappa * r0 * r0 * lambda1 + lambda2) * growth / ((1.0 - kappa) * gate))
        } else {
            None
        };
        let feasible = gate > 0.0 && lambda.map(|l| l > 0.0).unwrap_or(false);
        ConditionReport {
            rho,
            gate,
            lambda,
            feasible,
        }
    }

    /// The certified rate, when feasible.
    pub fn certified_rate(&self) -> Option<f64> {
        if self.feasible {
            self.lambda
        } else {
            None
        }
    }
}

/// One catalog entry for a built-in model.
pub struct ModelInfo {
    pub name: &'static str,
    pub summary: &'static str,
    /// (parameter, default, meaning)
    pub params: &'static [(&'static str, f64, &'static str)],
}

/// Built-in model catalog, stable ordering.
pub fn builtin_catalog() -> &'static [ModelInfo] {
    &[
        ModelInfo {
            name: "ornstein",
            summary: "memoryless Ornstein-Uhlenbeck fixture: Z(x) = -a x, b = 0, kappa = 0",
            params: &[
                ("a", 1.0, "mean-reversion rate (a > 0)"),
                ("sigma", 1.0, "noise level (sigma * identity)"),
                ("r0", 0.25, "delay window carried by segments"),
                ("dim", 1.0, "state dimension"),
            ],
        },
        ModelInfo {
            name: "scalar_linear",
            summary:
                "scalar linear model: Z(x) = -a x, b(phi) = beta * phi(-r0), integral neutral term",
            params: &[
                ("a", 6.0, "mean-reversion rate (a > 0)"),
                ("beta", 0.1, "delayed feedback gain (beta >= 0)"),
                ("kappa", 0.05, "neutral weight in [0, 1)"),
                ("r0", 0.2, "delay"),
                ("sigma", 1.0, "noise level"),
                (
                    "delta",
                    0.05,
                    "slack moved between the declared lambda1 and lambda2",
                ),
            ],
        },
        ModelInfo {
            name: "cubic",
            summary: "scalar double-well-free cubic: Z(x) = -x^3 - a x, b = 0, kappa = 0; \
                      drift is locally Lipschitz, declared state_lip refers to the |x| <= 2 ball",
            params: &[
                ("a", 1.0, "linear dissipation rate (a > 0)"),
                ("sigma", 1.0, "noise level"),
                ("r0", 0.25, "delay window carried by segments"),
            ],
        },
    ]
}

/// Build a catalog model by name. Unknown names and out-of-range parameters
/// are errors; so are parameter sets that break `lambda1 > lambda2 > 0`.
pub fn builtin_model(name: &str, params: &BTreeMap<String, f64>) -> Result<ModelSpec> {
    let info = builtin_catalog()
        .iter()
        .find(|m| m.name == name)
        .ok_or_else(|| Error::UnknownModel(name.to_string()))?;
    for key in params.keys() {
        if !info.params.iter().any(|(p, _, _)| p == key) {
            return Err(Error::InvalidParameter(format!(
                "model '{name}' has no parameter '{key}'"
            )));
        }
    }
    let get = |key: &str| -> f64 {
        params.get(key).copied().unwrap_or_else(|| {
            info.params
                .iter()
                .find(|(p, _, _)| *p == key)
                .map(|(_, d, _)| *d)
                .expect("defaults cover every declared parameter")
        })
    };
    match name {
        "ornstein" => {
            let a = get("a");
            let sigma = get("sigma");
            let r0 = get("r0");
            let dim = get("dim") as usize;
            if a <= 0.0 {
                return Err(Error::InvalidParameter("ornstein needs a > 0".into()));
            }
            let constants = HypothesisConstants {
                state_lip: a,
                segment_lip: 0.0,
                lambda1: 1.9 * a,
                lambda2: 0.1 * a,
                kappa1: a,
            };
            ModelSpec::new(
                "ornstein",
                dim.max(1),
                0.0,
                r0,
                DMatrix::identity(dim.max(1), dim.max(1)) * sigma,
                Box::new(move |x: &DVector<f64>| x * (-a)),
                Box::new(|seg: &Segment| DVector::zeros(seg.dim())),
                constants,
            )
        }
        "scalar_linear" => {
            let a = get("a");
            let beta = get("beta");
            let kappa = get("kappa");
            let r0 = get("r0");
            let sigma = get("sigma");
            let delta = get("delta");
            if a <= 0.0 || beta < 0.0 || delta <= 0.0 {
                return Err(Error::InvalidParameter(
                    "scalar_linear needs a > 0, beta >= 0, delta > 0".into(),
                ));
            }
            // Young's inequality applied to the cross terms of the segment
            // condition gives these admissible declared constants:
            //   lambda1 = 2a - a*kappa*r0 - beta - delta
            //   lambda2 = a*kappa*r0 + beta + 2*beta*kappa*r0 + delta
            let lambda1 = 2.0 * a - a * kappa * r0 - beta - delta;
            let lambda2 = a * kappa * r0 + beta + 2.0 * beta * kappa * r0 + delta;
            let constants = HypothesisConstants {
                state_lip: a,
                segment_lip: beta,
                lambda1,
                lambda2,
                kappa1: a,
            };
            ModelSpec::new(
                "scalar_linear",
                1,
                kappa,
                r0,
                DMatrix::from_element(1, 1, sigma),
                Box::new(move |x: &DVector<f64>| x * (-a)),
                Box::new(move |seg: &Segment| seg.oldest() * beta),
                constants,
            )
        }
        "cubic" => {
            let a = get("a");
            let sigma = get("sigma");
            let r0 = get("r0");
            if a <= 0.0 {
                return Err(Error::InvalidParameter("cubic needs a > 0".into()));
            }
            let constants = HypothesisConstants {
                // local Lipschitz bound on |x| <= 2: |Z'(x)| <= a + 3 * 4
                state_lip: a + 12.0,
                segment_lip: 0.0,
                lambda1: 1.9 * a,
                lambda2: 0.1 * a,
                kappa1: a,
            };
            ModelSpec::new(
                "cubic",
                1,
                0.0,
                r0,
                DMatrix::from_element(1, 1, sigma),
                Box::new(move |x: &DVector<f64>| {
                    DVector::from_fn(x.len(), |i, _| -x[i] * x[i] * x[i] - a * x[i])
                }),
                Box::new(|seg: &Segment| DVector::zeros(seg.dim())),
                constants,
            )
        }
        _ => Err(Error::UnknownModel(name.to_string())),
    }
}

/// Inline linear model: `Z(x) = A x`, `b(phi) = B phi(-r0)`, with constants
/// declared by the caller. This is the config-file escape hatch for models
/// beyond the catalog.
#[allow(clippy::too_many_arguments)]
pub fn linear_model(
    name: impl Into<String>,
    a_matrix: DMatrix<f64>,
    delay_matrix: DMatrix<f64>,
    kappa: f64,
    r0: f64,
    sigma: DMatrix<f64>,
    constants: HypothesisConstants,
) -> Result<ModelSpec> {
    let dim = a_matrix.nrows();
    if a_matrix.ncols() != dim || delay_matrix.nrows() != dim || delay_matrix.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: delay_matrix.nrows(),
        });
    }
    let a = a_matrix;
    let b = delay_matrix;
    ModelSpec::new(
        name,
        dim,
        kappa,
        r0,
        sigma,
        Box::new(move |x: &DVector<f64>| &a * x),
        Box::new(move |seg: &Segment| &b * seg.oldest()),
        constants,
    )
}
