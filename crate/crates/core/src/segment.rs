//! Segment-process states on the delay window.
//!
//! A [`Segment`] holds a path history on `[-r0, 0]` sampled on a uniform grid
//! with `m` intervals of width `h`, so `r0 = m * h` holds exactly by
//! construction. Node `j` sits at `theta_j = -r0 + j * h`; node `m` is the
//! present value. The sup norm is taken over grid nodes and the integral
//! neutral operator `L phi = kappa * integral of phi over [-r0, 0]` is
//! evaluated by the composite trapezoid rule, which is exact on piecewise
//! linear data and matches the first-order integrator.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// A function history on the delay window, one value vector per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    values: Vec<DVector<f64>>,
    step: f64,
}

impl Segment {
    /// Build a segment from `m + 1` node values (oldest first) and grid step `h`.
    pub fn new(values: Vec<DVector<f64>>, step: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidParameter(
                "a segment needs at least two nodes (m >= 1)".into(),
            ));
        }
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "grid step must be positive and finite, got {step}"
            )));
        }
        let dim = values[0].len();
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "state dimension must be >= 1".into(),
            ));
        }
        for v in &values[1..] {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
        }
        Ok(Self { values, step })
    }

    /// Constant segment `phi(theta) = value` with `intervals` grid intervals.
    pub fn constant(value: DVector<f64>, step: f64, intervals: usize) -> Result<Self> {
        Self::new(vec![value; intervals + 1], step)
    }

    /// Sample a function of `theta` in `[-r0, 0]` onto the grid.
    pub fn from_fn(step: f64, intervals: usize, f: impl Fn(f64) -> DVector<f64>) -> Result<Self> {
        let r0 = step * intervals as f64;
        let values = (0..=intervals).map(|j| f(-r0 + j as f64 * step)).collect();
        Self::new(values, step)
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Number of grid intervals `m`.
    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// The delay `r0 = m * h`.
    pub fn delay(&self) -> f64 {
        self.step * self.intervals() as f64
    }

    /// Value at node `j` (node 0 is `theta = -r0`, node `m` is `theta = 0`).
    pub fn node(&self, j: usize) -> &DVector<f64> {
        &self.values[j]
    }

    pub fn nodes(&self) -> &[DVector<f64>] {
        &self.values
    }

    /// Value at `theta = 0` (the present state).
    pub fn latest(&self) -> &DVector<f64> {
        self.values.last().unwrap()
    }

    /// Value at `theta = -r0`.
    pub fn oldest(&self) -> &DVector<f64> {
        &self.values[0]
    }

    /// Discrete sup norm: max over grid nodes of the Euclidean norm.
    pub fn uniform_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// The neutral operator `L phi = kappa * integral of phi over [-r0, 0]`,
    /// by composite trapezoid on the grid.
    pub fn neutral_term(&self, kappa: f64) -> DVector<f64> {
        let mut out = trapezoid(&self.values, self.step);
        out *= kappa;
        out
    }

    /// New segment with the window advanced by one step: node `j` takes the
    /// old node `j + 1` and the newest node becomes `new_value`.
    pub fn shift_append(&self, new_value: DVector<f64>) -> Result<Self> {
        if new_value.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: new_value.len(),
            });
        }
        let mut values = Vec::with_capacity(self.values.len());
        values.extend_from_slice(&self.values[1..]);
        values.push(new_value);
        Ok(Self {
            values,
            step: self.step,
        })
    }

    /// In-place window advance for a buffer owned by a single trajectory worker.
    /// Same semantics as [`Segment::shift_append`].
    pub fn push(&mut self, new_value: DVector<f64>) -> Result<()> {
        if new_value.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: new_value.len(),
            });
        }
        self.values.rotate_left(1);
        *self.values.last_mut().unwrap() = new_value;
        Ok(())
    }
}

/// Composite trapezoid quadrature of grid values with spacing `h`
/// (endpoints carry weight `h / 2`).
pub fn trapezoid(values: &[DVector<f64>], h: f64) -> DVector<f64> {
    let dim = values[0].len();
    let mut acc = DVector::zeros(dim);
    let last = values.len() - 1;
    for (j, v) in values.iter().enumerate() {
        let w = if j == 0 || j == last { 0.5 } else { 1.0 };
        acc.axpy(w * h, v, 1.0);
    }
    acc
}
