//! Dense row-major tensors and the matrix kernels the layers are built on.

use std::fmt;
use std::ops::Range;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Ordered, strictly positive axis extents.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return shape_err("shape must have at least one axis");
        }
        if let Some(axis) = dims.iter().position(|&d| d == 0) {
            return shape_err(format!("axis {axis} of {dims:?} has zero extent"));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Shape(format!("element count of {dims:?} overflows")))?;
        Ok(Self(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    /// Product of the extents. Overflow is ruled out at construction.
    pub fn element_count(&self) -> usize {
        self.0.iter().product()
    }

    pub fn last(&self) -> usize {
        *self.0.last().expect("shape has at least one axis")
    }

    /// Row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.0.len() {
            return shape_err(format!("index {index:?} has wrong rank for shape {self:?}"));
        }
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.0) {
            if i >= d {
                return shape_err(format!("index {index:?} out of bounds for shape {self:?}"));
            }
            off = off * d + i;
        }
        Ok(off)
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl TryFrom<&[usize]> for Shape {
    type Error = Error;

    fn try_from(dims: &[usize]) -> Result<Self> {
        Shape::new(dims.to_vec())
    }
}

/// Dense N-dimensional array stored row-major (last axis fastest).
///
/// Images use channel-last layout `(H, W, C)`; batches put the batch axis first.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_data(shape: Shape, values: Vec<T>) -> Result<Self> {
        if values.len() != shape.element_count() {
            return shape_err(format!(
                "{} values cannot fill shape {shape:?} ({} elements)",
                values.len(),
                shape.element_count()
            ));
        }
        let t = Self { shape, data: values };
        t.debug_check_finite();
        Ok(t)
    }

    /// Convenience constructor from a dims slice.
    pub fn new(dims: &[usize], values: Vec<T>) -> Result<Self> {
        Self::from_data(Shape::new(dims.to_vec())?, values)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: &[usize], value: T) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        let data = vec![value; shape.element_count()];
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts_unchecked(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.element_count(), data.len());
        let t = Self { shape, data };
        t.debug_check_finite();
        t
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
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

    pub fn at(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.shape.offset(index)?])
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        self.clone().into_reshaped(dims)
    }

    pub fn into_reshaped(self, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        if shape.element_count() != self.data.len() {
            return shape_err(format!(
                "cannot reshape {:?} into {shape:?}: element counts differ",
                self.shape
            ));
        }
        Ok(Self { shape, data: self.data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts_unchecked(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    #[inline]
    pub(crate) fn debug_check_finite(&self) {
        debug_assert!(self.all_finite(), "non-finite value in tensor of shape {:?}", self.shape);
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return shape_err(format!("cannot compare {:?} with {:?}", self.shape, other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    /// Matrix product of two rank-2 tensors, accumulated in `f64`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let (&[m, k], &[k2, n]) = (self.dims(), rhs.dims()) else {
            return shape_err(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape, rhs.shape
            ));
        };
        if k != k2 {
            return shape_err(format!(
                "matmul inner extents differ: {:?} x {:?}",
                self.shape, rhs.shape
            ));
        }
        let out = gemm(&self.data, m, k, &rhs.data, n);
        Ok(Self::from_parts_unchecked(Shape::new(vec![m, n])?, out))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Self> {
        let &[m, n] = self.dims() else {
            return shape_err(format!("transpose needs rank 2, got {:?}", self.shape));
        };
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self::from_parts_unchecked(Shape::new(vec![n, m])?, out))
    }

    /// Concatenates tensors along their last axis.
    pub fn concat_last_axis(parts: &[&Self]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return shape_err("concatenation of zero tensors");
        };
        let lead = &first.dims()[..first.shape.rank() - 1];
        for p in parts {
            if &p.dims()[..p.shape.rank() - 1] != lead {
                return shape_err(format!(
                    "concat: leading extents {:?} and {:?} differ",
                    first.shape, p.shape
                ));
            }
        }
        let rows: usize = lead.iter().product();
        let width: usize = parts.iter().map(|p| p.shape.last()).sum();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for p in parts {
                let w = p.shape.last();
                data.extend_from_slice(&p.data[r * w..(r + 1) * w]);
            }
        }
        let mut dims = lead.to_vec();
        dims.push(width);
        Ok(Self::from_parts_unchecked(Shape::new(dims)?, data))
    }

    /// Extracts `range` of the last axis; the inverse of [`Tensor::concat_last_axis`].
    pub fn slice_last_axis(&self, range: Range<usize>) -> Result<Self> {
        let w = self.shape.last();
        if range.start >= range.end || range.end > w {
            return shape_err(format!("slice {range:?} out of bounds for last extent {w}"));
        }
        let rows = self.data.len() / w;
        let mut data = Vec::with_capacity(rows * range.len());
        for r in 0..rows {
            data.extend_from_slice(&self.data[r * w + range.start..r * w + range.end]);
        }
        let mut dims = self.dims().to_vec();
        *dims.last_mut().unwrap() = range.len();
        Ok(Self::from_parts_unchecked(Shape::new(dims)?, data))
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        let head: Vec<_> = self.data.iter().take(SHOWN).collect();
        if self.data.len() > SHOWN {
            write!(f, " {head:?}...")
        } else {
            write!(f, " {head:?}")
        }
    }
}

// ---------------------------------------------------------------------------
// Slice kernels. All of them accumulate in f64.

/// `out[m,n] += a[m,k] · b[k,n]` with `b` already widened to f64.
///
/// Zero entries of `a` are skipped, which pays off behind ReLU masks.
pub(crate) fn gemm_acc<T: Scalar>(a: &[T], m: usize, k: usize, b: &[f64], n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for (a_row, o_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (p, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let av = av.as_f64();
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn widen<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.as_f64()).collect()
}

pub(crate) fn narrow<T: Scalar>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::from_f64(x)).collect()
}

/// `a[m,k] · b[k,n]`.
pub(crate) fn gemm<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    let mut acc = vec![0.0; m * n];
    gemm_acc(a, m, k, &widen(b), n, &mut acc);
    narrow(&acc)
}

/// `aᵀ · b` for `a[m,k]`, `b[m,n]`, giving `[k,n]` in f64.
pub(crate) fn gemm_tn_f64<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut acc = vec![0.0; k * n];
    let mut b_row = vec![0.0; n];
    for i in 0..m {
        for (dst, src) in b_row.iter_mut().zip(&b[i * n..(i + 1) * n]) {
            *dst = src.as_f64();
        }
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let av = av.as_f64();
            for (o, &bv) in acc[p * n..(p + 1) * n].iter_mut().zip(&b_row) {
                *o += av * bv;
            }
        }
    }
    acc
}

/// `a · bᵀ` for `a[m,n]`, `b[k,n]`, giving `[m,k]` in f64.
pub(crate) fn gemm_nt_f64<T: Scalar>(a: &[T], m: usize, n: usize, b: &[T], k: usize) -> Vec<f64> {
    debug_assert_eq!(b.len(), k * n);
    let mut bt = vec![0.0; n * k];
    for p in 0..k {
        for j in 0..n {
            bt[j * k + p] = b[p * n + j].as_f64();
        }
    }
    let mut acc = vec![0.0; m * k];
    gemm_acc(a, m, n, &bt, k, &mut acc);
    acc
}
