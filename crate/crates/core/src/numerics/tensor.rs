//! Dense row-major f64 tensor. Rank is arbitrary in principle, but the ops
//! in this crate only ever build rank-2 values (scalars are `[1, 1]`).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking that `data` fills `shape` exactly.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension {
                op: "Tensor::new",
                detail: format!("shape {:?} wants {} elements, got {}", shape, numel, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![0.0; numel] }
    }

    pub fn scalar(x: f64) -> Self {
        Self { shape: vec![1, 1], data: vec![x] }
    }

    /// Rank-2 tensor from a flat row-major slice.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// A single row `[1, n]`.
    pub fn row(data: Vec<f64>) -> Self {
        let n = data.len();
        Self { shape: vec![1, n], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a rank-2 tensor (scalars and rows included).
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2, "rank-2 expected, got {:?}", self.shape);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2, "rank-2 expected, got {:?}", self.shape);
        self.shape[1]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, x: f64) {
        let c = self.cols();
        self.data[i * c + j] = x;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// True when every entry is finite (no NaN / ±inf).
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    /// Scalar value of a `[1, 1]` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Dimension {
                op: "Tensor::item",
                detail: format!("expected a single element, shape is {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.at(0, 2), 3.0);
        assert_eq!(t.at(1, 0), 4.0);
        assert_eq!(t.row_slice(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn finiteness_detects_nan_and_inf() {
        let mut t = Tensor::zeros(vec![2, 2]);
        assert!(t.is_finite());
        t.set(0, 1, f64::NAN);
        assert!(!t.is_finite());
        t.set(0, 1, f64::INFINITY);
        assert!(!t.is_finite());
    }

    #[test]
    fn item_rejects_non_scalar() {
        assert_eq!(Tensor::scalar(4.25).item().unwrap(), 4.25);
        assert!(Tensor::zeros(vec![1, 2]).item().is_err());
    }
}
