//! Dense row-major tensors and the reverse-mode tape that differentiates them.

mod kernels;
pub mod spectral;
mod tape;

pub use spectral::{circular_convolve, circular_correlate, Spectral};
pub use tape::{Tape, Var};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense N-dimensional array stored row-major, with an optional gradient
/// buffer of the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

pub(crate) fn numel(dims: &[usize]) -> usize {
    dims.iter().product()
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor from its extents and a flat row-major buffer.
    ///
    /// Rank must be at least one. Zero extents are accepted so that empty
    /// channel blocks can take part in concatenation.
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Input("tensor rank must be at least 1".into()));
        }
        if numel(&dims) != data.len() {
            return Err(Error::Input(format!(
                "dims {:?} hold {} elements but buffer has {}",
                dims,
                numel(&dims),
                data.len()
            )));
        }
        Ok(Tensor {
            dims,
            data,
            grad: None,
        })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        assert!(!dims.is_empty(), "tensor rank must be at least 1");
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; numel(dims)],
            grad: None,
        }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        assert!(!dims.is_empty(), "tensor rank must be at least 1");
        Tensor {
            dims: dims.to_vec(),
            data: (0..numel(dims)).map(&mut f).collect(),
            grad: None,
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Tensor {
            dims: vec![data.len()],
            data,
            grad: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::vector(vec![value])
    }

    pub fn from_f64(dims: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(dims.to_vec(), data.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub(crate) fn grad_mut(&mut self) -> &mut Option<Vec<T>> {
        &mut self.grad
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.len() {
            return Err(Error::shape("set_grad", &[grad.len()], &self.dims));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Returns a copy with new extents covering the same number of elements.
    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || numel(dims) != self.len() {
            return Err(Error::shape("reshape", &self.dims, dims));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data: self.data.clone(),
            grad: None,
        })
    }

    /// Element at a multi-index; panics when out of range.
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.dims.len(), "index rank mismatch");
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.dims) {
            assert!(i < d, "index {index:?} out of range for {:?}", self.dims);
            flat = flat * d + i;
        }
        self.data[flat]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.dims != other.dims {
            return Err(Error::shape("dot", &self.dims, &other.dims));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn norm(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
    }

    /// Converts every element to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
            grad: None,
        }
    }

    /// Slice of the leading axis, e.g. one frame of a `[t, C, H, W]` tensor.
    pub fn slice0(&self, i: usize) -> Result<Self> {
        let n = self.dims[0];
        if i >= n {
            return Err(Error::Input(format!(
                "slice {i} out of range for leading extent {n}"
            )));
        }
        let inner = numel(&self.dims[1..]);
        let mut dims = self.dims[1..].to_vec();
        if dims.is_empty() {
            dims.push(1);
        }
        Tensor::new(dims, self.data[i * inner..(i + 1) * inner].to_vec())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Input("cannot stack an empty list".into()))?;
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            if p.dims != first.dims {
                return Err(Error::shape("stack", &first.dims, &p.dims));
            }
            data.extend_from_slice(&p.data);
        }
        let mut dims = vec![parts.len()];
        dims.extend_from_slice(&first.dims);
        Tensor::new(dims, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_element_count() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![], vec![]).is_err());
    }

    #[test]
    fn multi_index_is_row_major() {
        let t = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        assert_eq!(t.at(&[1, 2, 3]), 23.0);
        assert_eq!(t.at(&[0, 1, 0]), 4.0);
    }

    #[test]
    fn slice_and_stack_are_inverse() {
        let t = Tensor::<f32>::from_fn(&[3, 2, 2], |i| i as f32);
        let parts: Vec<_> = (0..3).map(|i| t.slice0(i).unwrap()).collect();
        assert_eq!(Tensor::stack(&parts).unwrap(), t);
    }

    #[test]
    fn reshape_rejects_wrong_count() {
        let t = Tensor::<f64>::zeros(&[2, 3]);
        assert!(t.reshape(&[3, 2]).is_ok());
        assert!(matches!(t.reshape(&[4]), Err(Error::Shape { .. })));
    }
}
