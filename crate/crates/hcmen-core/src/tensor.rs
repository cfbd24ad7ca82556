//! Dense row-major tensors over `f32` (training) or `f64` (gradient checking).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use num_traits::Float;

use crate::error::{Error, Result};

/// Scalar element of a tensor. Implemented for `f32` and `f64`; the `f64`
/// instantiation exists solely so finite-difference checks can run in double
/// precision.
pub trait Element:
    Float + num_traits::NumAssign + Default + Debug + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("finite f64 converts")
    }
    fn as_f64(self) -> f64 {
        <f64 as num_traits::NumCast>::from(self).expect("element converts to f64")
    }
}

impl Element for f32 {}
impl Element for f64 {}

/// Dense multi-dimensional array in row-major order.
///
/// Invariants: `product(shape) == data.len()`, and `grad` (when present) has
/// the same number of elements as `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Element = f32> {
    shape: Vec<usize>,
    data: Vec<E>,
    pub requires_grad: bool,
    pub grad: Option<Vec<E>>,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self { shape, data: vec![E::zero(); n], requires_grad: false, grad: None }
    }

    pub fn filled(shape: Vec<usize>, value: E) -> Self {
        let n: usize = shape.iter().product();
        Self { shape, data: vec![value; n], requires_grad: false, grad: None }
    }

    pub fn scalar(value: E) -> Self {
        Self { shape: vec![1], data: vec![value], requires_grad: false, grad: None }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> E) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks the tensor as a trainable parameter.
    pub fn param(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    /// Number of rows when the tensor is interpreted as a matrix
    /// (first axis; 1 for rank-0/1 tensors of a single row).
    pub fn rows(&self) -> usize {
        if self.shape.len() < 2 { 1 } else { self.shape[0] }
    }

    /// Size of the trailing axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| F::from_f64(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| F::from_f64(v.as_f64())).collect()),
        }
    }
}

/// Linear interpolation of a `[T, D]` sequence onto `target_len` uniformly
/// spaced time positions. `T == target_len` is an exact identity; endpoints
/// are preserved for `target_len >= 2`.
pub fn resample_time<E: Element>(x: &Tensor<E>, target_len: usize) -> Result<Tensor<E>> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(Error::Shape(format!("resample_time expects [T, D], got {shape:?}")));
    }
    let (t_len, dim) = (shape[0], shape[1]);
    if t_len == 0 {
        return Err(Error::Contract("resample_time: empty input sequence".into()));
    }
    if target_len == 0 {
        return Err(Error::Contract("resample_time: target length must be >= 1".into()));
    }
    let src = x.data();
    let mut out = Vec::with_capacity(target_len * dim);
    for j in 0..target_len {
        let pos = if target_len == 1 {
            E::from_f64((t_len - 1) as f64 / 2.0)
        } else {
            E::from_f64(j as f64 * (t_len - 1) as f64 / (target_len - 1) as f64)
        };
        let lo = pos.floor();
        let lo_idx = (lo.as_f64() as usize).min(t_len - 1);
        let frac = pos - lo;
        if frac == E::zero() || lo_idx + 1 >= t_len {
            out.extend_from_slice(&src[lo_idx * dim..(lo_idx + 1) * dim]);
        } else {
            let hi_idx = lo_idx + 1;
            for d in 0..dim {
                let a = src[lo_idx * dim + d];
                let b = src[hi_idx * dim + d];
                out.push(a + frac * (b - a));
            }
        }
    }
    Tensor::new(vec![target_len, dim], out)
}

/// Rows of `x` in reversed order (pure, non-recorded variant).
pub fn reverse_rows<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    let rows = x.rows();
    let dim = x.numel() / rows.max(1);
    let src = x.data();
    let mut out = Vec::with_capacity(src.len());
    for r in (0..rows).rev() {
        out.extend_from_slice(&src[r * dim..(r + 1) * dim]);
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}
