//! Dense NCHW tensors, row-major matrices and deterministic data generation.

use std::fmt::Debug;

use num_traits::Float;
use rand::distr::uniform::SampleUniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Scalar element type of tensors and matrices.
pub trait Element: Float + Default + Debug + Send + Sync + SampleUniform + 'static {}

impl Element for f32 {}
impl Element for f64 {}

/// Default relative tolerance for 32-bit correctness comparisons.
pub const DEFAULT_RTOL: f64 = 1e-4;
/// Default absolute tolerance for 32-bit correctness comparisons.
pub const DEFAULT_ATOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4D<T = f32> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Element> Tensor4D<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4D {
            dims: [n, c, h, w],
            data: vec![T::zero(); n * c * h * w],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::DimMismatch(format!(
                "buffer of {} elements for dims {dims:?}",
                data.len()
            )));
        }
        Ok(Tensor4D { dims, data })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Linear offset of `(n, c, y, x)`.
    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cc, hh, ww] = self.dims;
        ((n * cc + c) * hh + y) * ww + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// I.i.d. uniform samples over `[-1, 1)`. A given seed always yields the
    /// same buffer within one build.
    pub fn fill_random(&mut self, seed: u64) {
        fill_uniform(&mut self.data, seed);
    }

    pub fn fill_constant(&mut self, v: T) {
        self.data.fill(v);
    }

    pub fn map_inplace(&mut self, f: impl Fn(T) -> T) {
        for x in &mut self.data {
            *x = f(*x);
        }
    }
}

pub(crate) fn fill_uniform<T: Element>(buf: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = -T::one();
    let hi = T::one();
    for x in buf {
        *x = rng.random_range(lo..hi);
    }
}

/// Elementwise `|a − b| ≤ atol + rtol·|b|`.
///
/// The returned error is `max |a − b| / (|b| + atol/rtol)`, which is at most
/// `rtol` exactly when the predicate holds. With `rtol == 0` it degrades to
/// the plain relative error `|a − b| / |b|`.
pub fn allclose<T: Element>(a: &Tensor4D<T>, b: &Tensor4D<T>, rtol: f64, atol: f64) -> Result<(bool, f64)> {
    if a.dims != b.dims {
        return Err(Error::DimMismatch(format!("{:?} vs {:?}", a.dims, b.dims)));
    }
    Ok(allclose_slices(&a.data, &b.data, rtol, atol))
}

pub(crate) fn allclose_slices<T: Element>(a: &[T], b: &[T], rtol: f64, atol: f64) -> (bool, f64) {
    let floor = if rtol > 0.0 { atol / rtol } else { 0.0 };
    let mut pass = true;
    let mut max_err = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let x = x.to_f64().unwrap_or(f64::NAN);
        let y = y.to_f64().unwrap_or(f64::NAN);
        let diff = (x - y).abs();
        let within = diff <= atol + rtol * y.abs();
        if !within {
            pass = false;
        }
        let err = if diff == 0.0 { 0.0 } else { diff / (y.abs() + floor) };
        // NaN propagates as a failure with infinite error.
        max_err = if err.is_nan() { f64::INFINITY } else { max_err.max(err) };
    }
    (pass, max_err)
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRM<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Element> MatrixRM<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        MatrixRM {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch(format!(
                "buffer of {} elements for {rows}x{cols}",
                data.len()
            )));
        }
        Ok(MatrixRM { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn random(rows: usize, cols: usize, seed: u64) -> Self {
        let mut m = Self::zeros(rows, cols);
        fill_uniform(&mut m.data, seed);
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn view(&self) -> MatRef<'_, T> {
        MatRef {
            data: &self.data,
            rows: self.rows,
            cols: self.cols,
            row_stride: self.cols,
        }
    }

    pub fn view_mut(&mut self) -> MatMut<'_, T> {
        MatMut {
            rows: self.rows,
            cols: self.cols,
            row_stride: self.cols,
            data: &mut self.data,
        }
    }
}

/// Borrowed row-major matrix with an arbitrary row stride.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    row_stride: usize,
}

impl<'a, T: Copy> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize, row_stride: usize) -> Result<Self> {
        check_view(data.len(), rows, cols, row_stride)?;
        Ok(MatRef {
            data,
            rows,
            cols,
            row_stride,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.row_stride + c]
    }

    #[inline]
    pub(crate) fn row(&self, r: usize) -> &'a [T] {
        let start = r * self.row_stride;
        &self.data[start..start + self.cols]
    }
}

/// Mutable counterpart of [`MatRef`].
#[derive(Debug)]
pub struct MatMut<'a, T> {
    data: &'a mut [T],
    rows: usize,
    cols: usize,
    row_stride: usize,
}

impl<'a, T: Copy> MatMut<'a, T> {
    pub fn new(data: &'a mut [T], rows: usize, cols: usize, row_stride: usize) -> Result<Self> {
        check_view(data.len(), rows, cols, row_stride)?;
        Ok(MatMut {
            data,
            rows,
            cols,
            row_stride,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [T] {
        let start = r * self.row_stride;
        &mut self.data[start..start + self.cols]
    }
}

fn check_view(len: usize, rows: usize, cols: usize, row_stride: usize) -> Result<()> {
    if cols > row_stride && rows > 1 {
        return Err(Error::DimMismatch(format!("cols {cols} exceed row stride {row_stride}")));
    }
    let needed = if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * row_stride + cols
    };
    if needed > len {
        return Err(Error::DimMismatch(format!(
            "{rows}x{cols} view with stride {row_stride} needs {needed} elements, buffer has {len}"
        )));
    }
    Ok(())
}
