//! Bounded segment observables for the semigroup estimators.
//!
//! The semigroup acts on functions of segments, so every observable here is a
//! shared closure `Segment -> f64`. All catalog entries are bounded; the
//! Harnack protocol additionally needs them nonnegative.

use std::sync::Arc;

use crate::segment::Segment;

/// A bounded function of a segment state.
pub type Observable = Arc<dyn Fn(&Segment) -> f64 + Send + Sync>;

/// `1 ∧ |phi(0)|`, the workhorse bounded nonnegative observable.
pub fn clipped_abs_present() -> Observable {
    Arc::new(|seg: &Segment| seg.latest().norm().min(1.0))
}

/// `1 ∧ ||phi||_inf`.
pub fn clipped_sup_norm() -> Observable {
    Arc::new(|seg: &Segment| seg.uniform_norm().min(1.0))
}

/// `sin(omega * phi(0)) / 2 + 1/2`, bounded in [0, 1].
pub fn shifted_sine(omega: f64) -> Observable {
    Arc::new(move |seg: &Segment| 0.5 + 0.5 * (omega * seg.latest()[0]).sin())
}

/// `exp(-|phi(0)|^2)`.
pub fn gaussian_bump() -> Observable {
    Arc::new(|seg: &Segment| (-seg.latest().norm_squared()).exp())
}

/// Indicator of `|phi(0)| > threshold`.
pub fn indicator_above(threshold: f64) -> Observable {
    Arc::new(move |seg: &Segment| {
        if seg.latest().norm() > threshold {
            1.0
        } else {
            0.0
        }
    })
}

/// Constant observable.
pub fn constant(value: f64) -> Observable {
    Arc::new(move |_seg: &Segment| value)
}

/// A reproducible family of random bounded nonnegative observables,
/// `|cos(a phi(0)_1 + b ||phi||_inf + c)|` with seeded coefficients.
pub fn random_bounded(seed: u64, count: usize) -> Vec<Observable> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let a: f64 = rng.random_range(-3.0..3.0);
            let b: f64 = rng.random_range(-3.0..3.0);
            let c: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let f: Observable = Arc::new(move |seg: &Segment| {
                (a * seg.latest()[0] + b * seg.uniform_norm() + c)
                    .cos()
                    .abs()
            });
            f
        })
        .collect()
}

/// Catalog entry for the runner: name, summary, and whether the constructor
/// takes a scalar parameter.
pub struct ObservableInfo {
    pub name: &'static str,
    pub summary: &'static str,
    pub parameter: Option<&'static str>,
}

pub fn catalog() -> &'static [ObservableInfo] {
    &[
        ObservableInfo {
            name: "clipped_abs_present",
            summary: "1 ∧ |phi(0)|",
            parameter: None,
        },
        ObservableInfo {
            name: "clipped_sup_norm",
            summary: "1 ∧ ||phi||_inf",
            parameter: None,
        },
        ObservableInfo {
            name: "shifted_sine",
            summary: "(1 + sin(omega * phi(0)_1)) / 2",
            parameter: Some("omega"),
        },
        ObservableInfo {
            name: "gaussian_bump",
            summary: "exp(-|phi(0)|^2)",
            parameter: None,
        },
        ObservableInfo {
            name: "indicator_above",
            summary: "1 when |phi(0)| > threshold",
            parameter: Some("threshold"),
        },
    ]
}

/// Construct a catalog observable by name.
pub fn by_name(name: &str, parameter: Option<f64>) -> Option<Observable> {
    match name {
        "clipped_abs_present" => Some(clipped_abs_present()),
        "clipped_sup_norm" => Some(clipped_sup_norm()),
        "shifted_sine" => Some(shifted_sine(parameter.unwrap_or(1.0))),
        "gaussian_bump" => Some(gaussian_bump()),
        "indicator_above" => Some(indicator_above(parameter.unwrap_or(0.5))),
        _ => None,
    }
}
