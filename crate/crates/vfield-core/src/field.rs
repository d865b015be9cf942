//! The vector-field abstraction shared by the prior, the benchmark
//! systems, and model-backed estimators.

use crate::error::CoreError;

/// A state-dependent velocity function f: R^d -> R^d.
pub trait VectorField {
    fn dimension(&self) -> usize;

    /// Write f(x) into `out`. Both slices have length `dimension()`.
    fn eval_into(&self, x: &[f64], out: &mut [f64]);

    /// Convenience wrapper with dimension checking.
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>, CoreError> {
        if x.len() != self.dimension() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dimension(),
                got: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite {
                context: "vector field input",
            });
        }
        let mut out = vec![0.0; self.dimension()];
        self.eval_into(x, &mut out);
        Ok(out)
    }
}

/// Wrap a closure as a vector field (benchmark systems, test fields).
pub struct FnField<F: Fn(&[f64], &mut [f64])> {
    dimension: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnField<F> {
    pub fn new(dimension: usize, f: F) -> Self {
        Self { dimension, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> VectorField for FnField<F> {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}
