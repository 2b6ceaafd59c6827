//! Dense row-major `f64` tensors and the reverse-mode tape that differentiates them.

mod check;
pub(crate) mod kernels;
mod tape;

pub use check::{grad_check, grad_check_with};
pub use kernels::ConvGeometry;
pub use tape::{sigmoid, ReduceKind, Tape, UnaryKind, Var};

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{shape_err, Error, Result};

/// An n-dimensional array of `f64` in row-major order.
///
/// A tensor with an empty shape is a scalar holding exactly one value.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return shape_err(format!("dimensions must be positive, got {shape:?}"));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return shape_err(format!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    /// Panics on a zero dimension.
    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero dimension in {shape:?}");
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        t
    }

    /// Zero-mean Gaussian entries.
    pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        Self::from_fn(shape, |_| normal.sample(rng))
    }

    /// Entries uniform on `[low, high)`.
    pub fn uniform(shape: &[usize], low: f64, high: f64, rng: &mut impl Rng) -> Self {
        let dist = Uniform::new(low, high).expect("invalid uniform range");
        Self::from_fn(shape, |_| dist.sample(rng))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::Contract(format!("item() on tensor of shape {:?}", self.shape))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.iter().any(|&d| d == 0) {
            return shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Sub-tensor `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.ndim() {
            return shape_err(format!("axis {axis} out of range for {:?}", self.shape));
        }
        if len == 0 || start + len > self.shape[axis] {
            return shape_err(format!(
                "slice {start}..{} out of range for axis {axis} of {:?}",
                start + len,
                self.shape
            ));
        }
        let (outer, inner) = split_at_axis(&self.shape, axis);
        let dim = self.shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Self { shape, data })
    }

    /// Joins tensors along `axis`; every other dimension must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        if axis >= first.ndim() {
            return shape_err(format!("axis {axis} out of range for {:?}", first.shape));
        }
        for p in &parts[1..] {
            let compatible = p.ndim() == first.ndim()
                && p.shape.iter().zip(&first.shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return shape_err(format!(
                    "concat along axis {axis}: {:?} does not match {:?}",
                    p.shape, first.shape
                ));
            }
        }
        let (outer, inner) = split_at_axis(&first.shape, axis);
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let run = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * run..(o + 1) * run]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Self { shape, data })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("stack of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return shape_err(format!("stack: {:?} does not match {:?}", p.shape, first.shape));
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }

    /// Gathers entries of the leading axis in `indices` order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if self.ndim() == 0 || indices.is_empty() {
            return shape_err("select_rows needs a leading axis and at least one index");
        }
        let row = self.len() / self.shape[0];
        let mut data = Vec::with_capacity(row * indices.len());
        for &i in indices {
            if i >= self.shape[0] {
                return shape_err(format!("row {i} out of range for {:?}", self.shape));
            }
            data.extend_from_slice(&self.data[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Self { shape, data })
    }

    /// Row `i` of the leading axis, without that axis.
    pub fn row(&self, i: usize) -> Result<Self> {
        let picked = self.select_rows(&[i])?;
        let shape = self.shape[1..].to_vec();
        Ok(Self { shape, data: picked.data })
    }
}

/// `(product of dims before axis, product of dims after axis)`.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize) {
    (shape[..axis].iter().product(), shape[axis + 1..].iter().product())
}

/// Numpy-style broadcast of two shapes, aligned at the trailing dimension.
pub fn broadcast_shape(lhs: &[usize], rhs: &[usize]) -> Result<Vec<usize>> {
    let n = lhs.len().max(rhs.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let a = if i + lhs.len() >= n { lhs[i + lhs.len() - n] } else { 1 };
        let b = if i + rhs.len() >= n { rhs[i + rhs.len() - n] } else { 1 };
        out[i] = match (a, b) {
            (a, b) if a == b => a,
            (1, b) => b,
            (a, 1) => a,
            _ => return Err(Error::Broadcast { lhs: lhs.to_vec(), rhs: rhs.to_vec() }),
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out` (broadcast dimensions get stride 0).
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// For each flat index of `out`, the flat index into a tensor of `shape`.
pub(crate) fn broadcast_index(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let strides = broadcast_strides(shape, out);
    let numel: usize = out.iter().product();
    let mut index = Vec::with_capacity(numel);
    let mut coord = vec![0usize; out.len()];
    let mut pos = 0usize;
    for _ in 0..numel {
        index.push(pos);
        for d in (0..out.len()).rev() {
            coord[d] += 1;
            pos += strides[d];
            if coord[d] < out[d] {
                break;
            }
            pos -= strides[d] * coord[d];
            coord[d] = 0;
        }
    }
    index
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(matches!(Tensor::new([2, 3], vec![0.0; 5]), Err(Error::Shape(_))));
        assert!(matches!(Tensor::new([2, 0], vec![]), Err(Error::Shape(_))));
    }

    #[test]
    fn concat_then_narrow_recovers_inputs() {
        let a = Tensor::from_fn(&[2, 3, 2], |i| i as f64);
        let b = Tensor::from_fn(&[2, 1, 2], |i| 100.0 + i as f64);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 4, 2]);
        assert_eq!(c.narrow(1, 0, 3).unwrap(), a);
        assert_eq!(c.narrow(1, 3, 1).unwrap(), b);
    }

    #[test]
    fn concat_single_is_identity() {
        let a = Tensor::from_fn(&[3, 2], |i| i as f64 * 0.5);
        assert_eq!(Tensor::concat(&[&a], 0).unwrap(), a);
    }

    #[test]
    fn concat_channel_shapes() {
        let a = Tensor::zeros(&[2, 3, 4, 4]);
        let b = Tensor::zeros(&[2, 5, 4, 4]);
        assert_eq!(Tensor::concat(&[&a, &b], 1).unwrap().shape(), &[2, 8, 4, 4]);
        let bad = Tensor::zeros(&[2, 5, 4, 3]);
        assert!(matches!(Tensor::concat(&[&a, &bad], 1), Err(Error::Shape(_))));
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]).unwrap(), vec![2, 3, 4]);
        assert_eq!(broadcast_shape(&[], &[5]).unwrap(), vec![5]);
        assert!(matches!(broadcast_shape(&[2, 3], &[2]), Err(Error::Broadcast { .. })));
    }

    #[test]
    fn broadcast_index_matches_coordinates() {
        let idx = broadcast_index(&[3, 1], &[2, 3, 4]);
        for (flat, &src) in idx.iter().enumerate() {
            let j = (flat / 4) % 3;
            assert_eq!(src, j);
        }
    }
}
