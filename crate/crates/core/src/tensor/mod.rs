//! Dense row-major tensors and reverse-mode differentiation.
//!
//! `Tensor` is the universal value type: a shape plus a flat row-major data
//! buffer. Differentiation happens through [`Tape`]: operations are recorded
//! eagerly and `backward` replays them in exact reverse creation order,
//! accumulating gradients additively across fan-out. All summation orders
//! are fixed, so identical inputs produce bit-identical outputs.

mod conv;
mod gradcheck;
mod tape;

pub use conv::{conv2d_out_dims, conv2d_raw};
pub use gradcheck::{gradcheck, GradcheckReport};
pub use tape::{NodeId, Tape};

use crate::elem::Elem;
use crate::error::{Error, Result};

/// Dense N-dimensional array of floats, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Elem> Tensor<T> {
    /// Construct from shape and data. Errors when the element count does not
    /// match the shape or any value is non-finite.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Domain {
                op: "tensor",
                detail: format!("zero dimension in shape {shape:?}"),
            });
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor" });
        }
        Ok(Self { shape, data })
    }

    /// Construct without the finiteness check, for callers that explicitly
    /// handle non-finite values.
    pub fn new_unchecked(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Fill from an `f64`-producing closure in index order.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|i| T::from_f64(f(i))).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Single element of a scalar tensor.
    pub fn item(&self) -> T {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Convert the element type (used to move data between the `f32`
    /// training path and the `f64` analysis path).
    pub fn cast<U: Elem>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Mean absolute difference against another tensor of the same shape,
    /// computed outside the tape (plain evaluation, no gradients).
    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "l1_distance",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Sum of absolute differences (no mean normalization).
    pub fn l1_sum(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "l1_sum",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_mismatch_is_rejected() {
        let r = Tensor::<f64>::new(vec![2, 2], vec![1.0, 2.0, 3.0]);
        assert!(matches!(r, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn non_finite_construction_is_rejected() {
        let r = Tensor::<f64>::new(vec![2], vec![1.0, f64::NAN]);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
        assert!(Tensor::<f64>::new_unchecked(vec![2], vec![1.0, f64::NAN]).is_ok());
    }

    #[test]
    fn zero_dimension_is_rejected() {
        let r = Tensor::<f32>::new(vec![0, 3], vec![]);
        assert!(matches!(r, Err(Error::Domain { .. })));
    }

    #[test]
    fn cast_round_trips_f32_values() {
        let t = Tensor::<f32>::new(vec![3], vec![0.5, -1.25, 3.0]).unwrap();
        let d: Tensor<f64> = t.cast();
        let back: Tensor<f32> = d.cast();
        assert_eq!(t.data(), back.data());
    }
}
