use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major N-dimensional array.
///
/// Every extent is at least one and the buffer length always equals the
/// product of the extents.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Scalar>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::ZeroExtent(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<Scalar>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::ShapeDataMismatch {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: Scalar) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn scalar(value: Scalar) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> Scalar) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        })
    }

    /// Zero tensor with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[Scalar] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [Scalar] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Scalar> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::ShapeDataMismatch {
                shape: shape.to_vec(),
                len: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Extents of a rank-4 `[B, C, H, W]` tensor.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match *self.shape.as_slice() {
            [b, c, h, w] => Ok([b, c, h, w]),
            _ => Err(Error::invalid(
                op,
                alloc::format!("expected a [B,C,H,W] tensor, got shape {:?}", self.shape),
            )),
        }
    }

    /// Leading extent and the product of the rest, i.e. the `[B, D]` view.
    pub fn batch_rows(&self) -> (usize, usize) {
        let b = self.shape[0];
        (b, self.data.len() / b)
    }

    pub fn map(&self, f: impl Fn(Scalar) -> Scalar) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: Scalar) -> Self {
        self.map(|v| v * factor)
    }

    pub fn sum(&self) -> Scalar {
        self.data.iter().sum()
    }

    /// Sum of elementwise products. Shapes must match.
    pub fn dot(&self, other: &Tensor) -> Result<Scalar> {
        if self.shape != other.shape {
            return Err(Error::mismatch("dot", &self.shape, &other.shape));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::mismatch("add", &self.shape, &other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<Scalar> {
        if self.shape != other.shape {
            return Err(Error::mismatch("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, Scalar::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows `[start, start + count)` along the leading axis.
    pub fn slice_rows(&self, start: usize, count: usize) -> Result<Tensor> {
        let (b, d) = self.batch_rows();
        if count == 0 || start + count > b {
            return Err(Error::invalid(
                "slice_rows",
                alloc::format!("rows {start}..{} out of {b}", start + count),
            ));
        }
        let mut shape = self.shape.clone();
        shape[0] = count;
        Ok(Tensor {
            shape,
            data: self.data[start * d..(start + count) * d].to_vec(),
        })
    }

    /// Rows at `indices` along the leading axis, in that order.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (b, d) = self.batch_rows();
        if indices.is_empty() {
            return Err(Error::invalid("gather_rows", "no rows selected"));
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= b {
                return Err(Error::invalid("gather_rows", alloc::format!("row {i} out of {b}")));
            }
            data.extend_from_slice(&self.data[i * d..(i + 1) * d]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Tensor { shape, data })
    }

    /// Concatenates tensors along the leading axis.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_rows", "no tensors given"))?;
        let mut shape = first.shape.clone();
        let mut data = Vec::new();
        shape[0] = 0;
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(Error::mismatch("concat_rows", &first.shape, &p.shape));
            }
            shape[0] += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape, data })
    }
}
