//! Dense row-major tensors.
//!
//! A [`Tensor`] owns a flat buffer and a list of extents. Element `(i0, .., ik)`
//! lives at `Σ i_a · stride_a` where `stride_a` is the product of the trailing
//! extents. There is no broadcasting beyond scalar operands; every other shape
//! disagreement is an [`Error::Dimension`].
//!
//! Arithmetic is carried out in `f64` regardless of the storage precision and
//! rounded once on store.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use crate::error::{dim_err, Error, Result};

/// Storage precision tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::Single => "single",
            Precision::Double => "double",
        }
    }
}

/// Element type of a [`Tensor`]. Implemented for `f32` and `f64`.
pub trait Scalar: Copy + Default + PartialEq + PartialOrd + Debug + Send + Sync + 'static {
    const PRECISION: Precision;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn checked_len(shape: &[usize]) -> Option<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return None;
    }
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        match checked_len(shape) {
            Some(n) if n == data.len() => Ok(Self {
                shape: shape.to_vec(),
                data,
            }),
            _ => Err(Error::InvalidShape {
                shape: shape.to_vec(),
                len: data.len(),
            }),
        }
    }

    /// # Panics
    /// If any extent is zero or `shape` is empty.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::default())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = checked_len(shape)
            .unwrap_or_else(|| panic!("tensor extents must be positive, got {shape:?}"));
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn ones_like(other: &Self) -> Self {
        Self::full(&other.shape, T::from_f64(1.0))
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros(&other.shape)
    }

    /// Builds a tensor from a function of the flat (row-major) index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| T::from_f64(if i / n == i % n { 1.0 } else { 0.0 }))
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
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

    /// Row-major strides, innermost last.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for a in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * self.shape[a + 1];
        }
        strides
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(i, d)| i >= d) {
            return Err(Error::Index {
                index: index.to_vec(),
                shape: self.shape.clone(),
            });
        }
        Ok(index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| acc * d + i))
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: T) -> Result<()> {
        let o = self.offset(index)?;
        self.data[o] = value;
        Ok(())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        match checked_len(shape) {
            Some(n) if n == self.data.len() => {
                self.shape = shape.to_vec();
                Ok(self)
            }
            _ => Err(Error::InvalidShape {
                shape: shape.to_vec(),
                len: self.data.len(),
            }),
        }
    }

    /// Contiguous block addressed by a prefix of leading indices, e.g.
    /// `k.block(&[h, e])` on an `H×E×d_e×d_h` tensor is the `d_e×d_h` slice.
    pub fn block(&self, leading: &[usize]) -> Result<&[T]> {
        let (start, len) = self.block_range(leading)?;
        Ok(&self.data[start..start + len])
    }

    pub fn block_mut(&mut self, leading: &[usize]) -> Result<&mut [T]> {
        let (start, len) = self.block_range(leading)?;
        Ok(&mut self.data[start..start + len])
    }

    /// Owned copy of [`Tensor::block`] with the leading axes dropped.
    pub fn sub_tensor(&self, leading: &[usize]) -> Result<Self> {
        let data = self.block(leading)?.to_vec();
        let shape = &self.shape[leading.len()..];
        if shape.is_empty() {
            return Self::new(&[1], data);
        }
        Self::new(shape, data)
    }

    fn block_range(&self, leading: &[usize]) -> Result<(usize, usize)> {
        if leading.len() > self.shape.len()
            || leading.iter().zip(&self.shape).any(|(i, d)| i >= d)
        {
            return Err(Error::Index {
                index: leading.to_vec(),
                shape: self.shape.clone(),
            });
        }
        let len: usize = self.shape[leading.len()..].iter().product();
        let start = leading
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| acc * d + i)
            * len;
        Ok((start, len))
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_f64(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        self.map(|v| T::from_f64(f(v.to_f64())))
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(dim_err(op, &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| T::from_f64(f(a.to_f64(), b.to_f64())))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Hadamard product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn add_scalar(&self, c: f64) -> Self {
        self.map_f64(|v| v + c)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map_f64(|v| v * c)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(dim_err("add_assign", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = T::from_f64(a.to_f64() + b.to_f64());
        }
        Ok(())
    }

    pub fn transpose2d(&self) -> Result<Self> {
        let (m, n) = self.dims2("transpose2d")?;
        let mut out = Self::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                out.data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(out)
    }

    /// `self · other` for `m×k` and `k×n` operands.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(dim_err("matmul", &self.shape, &other.shape));
        }
        let mut out = Self::zeros(&[m, n]);
        gemm_nn(&self.data, &other.data, &mut out.data, m, k, n);
        Ok(out)
    }

    /// `self · otherᵀ` for `m×k` and `n×k` operands.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2("matmul_nt")?;
        let (n, k2) = other.dims2("matmul_nt")?;
        if k != k2 {
            return Err(dim_err("matmul_nt", &self.shape, &other.shape));
        }
        let mut out = Self::zeros(&[m, n]);
        gemm_nt(&self.data, &other.data, &mut out.data, m, k, n);
        Ok(out)
    }

    /// `selfᵀ · other` for `k×m` and `k×n` operands.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        let (k, m) = self.dims2("matmul_tn")?;
        let (k2, n) = other.dims2("matmul_tn")?;
        if k != k2 {
            return Err(dim_err("matmul_tn", &self.shape, &other.shape));
        }
        let mut out = Self::zeros(&[m, n]);
        gemm_tn(&self.data, &other.data, &mut out.data, k, m, n);
        Ok(out)
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::Rank {
                op,
                expected: 2,
                got: self.shape.len(),
            }),
        }
    }

    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::Rank {
                op,
                expected: 3,
                got: self.shape.len(),
            }),
        }
    }

    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c, d] => Ok((a, b, c, d)),
            _ => Err(Error::Rank {
                op,
                expected: 4,
                got: self.shape.len(),
            }),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.to_f64().abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.to_f64().is_finite())
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.to_f64().is_finite())
    }
}

/// `c += a·b`, row-major, `f64` accumulation.
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let mut row = vec![0.0f64; n];
    for i in 0..m {
        for (r, cv) in row.iter_mut().zip(&c[i * n..(i + 1) * n]) {
            *r = cv.to_f64();
        }
        for t in 0..k {
            let av = a[i * k + t].to_f64();
            if av == 0.0 {
                continue;
            }
            for (r, bv) in row.iter_mut().zip(&b[t * n..(t + 1) * n]) {
                *r += av * bv.to_f64();
            }
        }
        for (cv, r) in c[i * n..(i + 1) * n].iter_mut().zip(&row) {
            *cv = T::from_f64(*r);
        }
    }
}

/// `c += a·bᵀ` with `a: m×k`, `b: n×k`.
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &b[j * k..(j + 1) * k];
            let dot: f64 = ar.iter().zip(br).map(|(x, y)| x.to_f64() * y.to_f64()).sum();
            let cv = &mut c[i * n + j];
            *cv = T::from_f64(cv.to_f64() + dot);
        }
    }
}

/// `c += aᵀ·b` with `a: k×m`, `b: k×n`.
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], k: usize, m: usize, n: usize) {
    let mut acc = vec![0.0f64; m * n];
    for (x, cv) in acc.iter_mut().zip(c.iter()) {
        *x = cv.to_f64();
    }
    for t in 0..k {
        let br = &b[t * n..(t + 1) * n];
        for i in 0..m {
            let av = a[t * m + i].to_f64();
            if av == 0.0 {
                continue;
            }
            for (x, bv) in acc[i * n..(i + 1) * n].iter_mut().zip(br) {
                *x += av * bv.to_f64();
            }
        }
    }
    for (cv, x) in c.iter_mut().zip(&acc) {
        *cv = T::from_f64(*x);
    }
}

/// Largest elementwise `|a − b| / max(1, |a|, |b|)`.
pub fn max_rel_error<T: Scalar, U: Scalar>(a: &Tensor<T>, b: &Tensor<U>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(dim_err("max_rel_error", a.shape(), b.shape()));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let (x, y) = (x.to_f64(), y.to_f64());
            (x - y).abs() / 1f64.max(x.abs()).max(y.abs())
        })
        .fold(0.0, f64::max))
}

/// `max|a − b| / max|b|`, with `b` taken as the reference. Zero when both are zero.
pub fn normwise_rel_error<T: Scalar, U: Scalar>(a: &Tensor<T>, reference: &Tensor<U>) -> Result<f64> {
    if a.shape() != reference.shape() {
        return Err(dim_err("normwise_rel_error", a.shape(), reference.shape()));
    }
    let diff = a
        .data()
        .iter()
        .zip(reference.data())
        .map(|(x, y)| (x.to_f64() - y.to_f64()).abs())
        .fold(0.0, f64::max);
    let scale = reference.max_abs();
    if diff == 0.0 {
        return Ok(0.0);
    }
    Ok(diff / scale.max(f64::MIN_POSITIVE))
}
