//! Minimal deterministic differentiable-array engine.
//!
//! Everything is float-64 and row-major. The engine supports exactly the
//! layer kinds the two networks in this crate need (see [`network::LayerSpec`])
//! on fixed, replayable computation graphs; gradients for every layer are
//! validated against central finite differences in the test suite.

pub mod adam;
pub mod checkpoint;
pub mod init;
pub mod network;
pub mod ops;

use crate::error::{Error, Result};

/// Dense n-dimensional float-64 array with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; len],
            grad: None,
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![value; len],
            grad: None,
        }
    }

    /// Builds a tensor from a flat row-major buffer.
    pub fn from_vec(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("{} values for shape {:?}", len, shape),
                values.len(),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            values,
            grad: None,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    /// Allocates (or zeroes) the gradient buffer.
    pub fn reset_grad(&mut self) -> &mut [f64] {
        let len = self.values.len();
        let grad = self.grad.get_or_insert_with(|| vec![0.0; len]);
        grad.fill(0.0);
        grad
    }

    /// Errors if any value is NaN or infinite, naming the first offender.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        check_finite(&self.values, context)
    }
}

/// Slice-level finiteness check shared by layer and optimizer boundaries.
pub fn check_finite(values: &[f64], context: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(index) => Err(Error::NonFinite {
            context: context.to_string(),
            index,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates_length() {
        let err = Tensor::from_vec(&[2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
        let t = Tensor::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.len(), 6);
    }

    #[test]
    fn check_finite_names_index() {
        let mut t = Tensor::zeros(&[4]);
        t.values_mut()[2] = f64::NAN;
        match t.check_finite("unit").unwrap_err() {
            Error::NonFinite { index, .. } => assert_eq!(index, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn reset_grad_allocates_and_zeroes() {
        let mut t = Tensor::filled(&[3], 1.0);
        assert!(t.grad().is_none());
        t.reset_grad()[1] = 5.0;
        assert_eq!(t.grad().unwrap(), &[0.0, 5.0, 0.0]);
        t.reset_grad();
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0, 0.0]);
    }
}
