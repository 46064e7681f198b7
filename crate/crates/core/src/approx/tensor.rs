use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense row-major tensor of `f64`.
///
/// Graph values are always viewed as matrices: the first dimension is the row
/// count and the remaining dimensions are flattened into columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBuf {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TensorBuf {
    /// Checked constructor: `product(shape) == data.len()` and all entries finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                name: "tensor".into(),
                detail: format!("entry {i} is {}", data[i]),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Matrix constructor for internal use; panics on a size mismatch.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix {rows}x{cols}");
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn row(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::matrix(1, n, data)
    }

    pub fn scalar(x: f64) -> Self {
        Self::matrix(1, 1, vec![x])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &TensorBuf) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Stacks equally sized rows into a matrix.
    pub fn stack_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut data = Vec::new();
        let mut n = 0;
        let mut width = None;
        for r in rows {
            match width {
                None => width = Some(r.len()),
                Some(w) => assert_eq!(w, r.len(), "ragged rows"),
            }
            data.extend_from_slice(r);
            n += 1;
        }
        Self::matrix(n, width.unwrap_or(0), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shape_and_non_finite() {
        assert!(TensorBuf::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(TensorBuf::new(vec![1, 2], vec![0.0, f64::NAN]).is_err());
        let t = TensorBuf::new(vec![2, 3, 2], vec![1.0; 12]).unwrap();
        assert_eq!((t.rows(), t.cols()), (2, 6));
    }
}
