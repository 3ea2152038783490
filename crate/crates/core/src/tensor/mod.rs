//! Dense row-major matrices with a small reverse-mode autodiff tape.
//!
//! Everything the particle model needs is two-dimensional: vectors are
//! `d x 1` columns and scalars are `1 x 1`.

mod dd;
mod gradcheck;
mod param;
mod tape;

use std::borrow::Cow;
use std::fmt::Debug;

use crate::error::{Error, Result};

pub use gradcheck::{
    finite_diff_check, finite_diff_check_reference, finite_diff_check_with_params, GradCheckReport, ScalarFn,
};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};

/// Floating point element type. `f32` for training, `f64` for gradient checks,
/// double-double as the finite-difference reference.
pub trait Real: num_traits::Float + Default + Debug + Send + Sync + std::ops::AddAssign + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Operations the tape uses whose generic versions are inaccurate for
    /// some wide types.
    fn exp_fn(self) -> Self {
        self.exp()
    }
    fn ln_fn(self) -> Self {
        self.ln()
    }
    fn tanh_fn(self) -> Self {
        self.tanh()
    }
    fn div_fn(self, rhs: Self) -> Self {
        self / rhs
    }
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

pub type Shape = [usize; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            shape: [rows, cols],
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            shape: [rows, cols],
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Contract(format!(
                "tensor dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "{rows}x{cols} tensor needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self {
            shape: [rows, cols],
            data,
        })
    }

    /// Builds from nested rows; panics on ragged input (test helper).
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows[0].len();
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        let data = rows
            .iter()
            .flat_map(|row| row.iter().map(|&x| T::from_f64(x)))
            .collect();
        Self::from_vec(r, c, data).expect("non-empty rows")
    }

    pub fn column(values: &[T]) -> Self {
        Self {
            shape: [values.len(), 1],
            data: values.to_vec(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: [1, 1],
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
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

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        let cols = self.shape[1];
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn column_values(&self, c: usize) -> Vec<T> {
        (0..self.rows()).map(|r| self.get(r, c)).collect()
    }

    /// The only scalar of a `1 x 1` tensor.
    pub fn item(&self) -> Result<T> {
        if self.shape == [1, 1] {
            Ok(self.data[0])
        } else {
            Err(Error::Contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|x| U::from_f64(x.as_f64())).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    // --- pure kernels, shared by the tape ----------------------------------

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.cols() != other.rows() {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape,
                rhs: other.shape,
            });
        }
        let mut out = Tensor::zeros(self.rows(), other.cols());
        gemm_acc(self, false, other, false, &mut out);
        Ok(out)
    }

    pub fn transpose(&self) -> Tensor<T> {
        let [r, c] = self.shape;
        let mut out = Tensor::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    /// Select columns by index, in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> Result<Tensor<T>> {
        if idx.is_empty() {
            return Err(Error::Contract("select_columns with no columns".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.cols()) {
            return Err(Error::Contract(format!(
                "column {bad} out of range for {:?}",
                self.shape
            )));
        }
        let mut out = Tensor::zeros(self.rows(), idx.len());
        for r in 0..self.rows() {
            for (j, &c) in idx.iter().enumerate() {
                out.data[r * idx.len() + j] = self.get(r, c);
            }
        }
        Ok(out)
    }

    /// Per-row maximum (`rows x 1`) and the lowest column index attaining it.
    pub fn max_over_columns(&self) -> (Tensor<T>, Vec<usize>) {
        let [r, c] = self.shape;
        let mut values = Vec::with_capacity(r);
        let mut argmax = Vec::with_capacity(r);
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            values.push(row[best]);
            argmax.push(best);
        }
        (
            Tensor {
                shape: [r, 1],
                data: values,
            },
            argmax,
        )
    }
}

/// Narrowest output for which row updates beat dot products.
const AXPY_MIN_COLS: usize = 8;

/// `out += op(a) * op(b)` where `op` optionally transposes.
///
/// Wide outputs are accumulated as scaled row updates; narrow ones as
/// contiguous dot products, or as rows of the transposed product when `a`
/// is transposed.
pub(crate) fn gemm_acc<T: Real>(a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool, out: &mut Tensor<T>) {
    let (m, k) = if ta { (a.cols(), a.rows()) } else { (a.rows(), a.cols()) };
    let (k2, n) = if tb { (b.cols(), b.rows()) } else { (b.rows(), b.cols()) };
    debug_assert_eq!(k, k2);
    debug_assert_eq!(out.shape, [m, n]);
    if k == 0 || n == 0 {
        return;
    }
    if n >= AXPY_MIN_COLS {
        let b_rows = if tb {
            Cow::Owned(b.transpose().data)
        } else {
            Cow::Borrowed(&b.data[..])
        };
        if ta {
            for (acol, brow) in a.data.chunks_exact(m.max(1)).zip(b_rows.chunks_exact(n)) {
                for (&x, orow) in acol.iter().zip(out.data.chunks_exact_mut(n)) {
                    axpy(x, brow, orow);
                }
            }
        } else {
            for (arow, orow) in a.data.chunks_exact(k).zip(out.data.chunks_exact_mut(n)) {
                for (&x, brow) in arow.iter().zip(b_rows.chunks_exact(n)) {
                    axpy(x, brow, orow);
                }
            }
        }
    } else if ta && !tb {
        // out^T = b^T a, built from rows of a, then added transposed
        let mut out_t = vec![T::zero(); n * m];
        for (arow, brow) in a.data.chunks_exact(m.max(1)).zip(b.data.chunks_exact(n)) {
            for (&x, trow) in brow.iter().zip(out_t.chunks_exact_mut(m.max(1))) {
                axpy(x, arow, trow);
            }
        }
        for (i, orow) in out.data.chunks_exact_mut(n).enumerate() {
            for (j, o) in orow.iter_mut().enumerate() {
                *o += out_t[j * m + i];
            }
        }
    } else {
        let a_rows = if ta {
            Cow::Owned(a.transpose().data)
        } else {
            Cow::Borrowed(&a.data[..])
        };
        let b_rows = if tb {
            Cow::Borrowed(&b.data[..])
        } else {
            Cow::Owned(b.transpose().data)
        };
        for (arow, orow) in a_rows.chunks_exact(k).zip(out.data.chunks_exact_mut(n)) {
            for (o, brow) in orow.iter_mut().zip(b_rows.chunks_exact(k)) {
                *o += dot(arow, brow);
            }
        }
    }
}

/// `y += alpha * x`
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with four independent partial sums.
fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let xs = x.chunks_exact(4);
    let ys = y.chunks_exact(4);
    let (xr, yr) = (xs.remainder(), ys.remainder());
    for (cx, cy) in xs.zip(ys) {
        for l in 0..4 {
            acc[l] += cx[l] * cy[l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (&a, &b) in xr.iter().zip(yr) {
        s += a * b;
    }
    s
}
