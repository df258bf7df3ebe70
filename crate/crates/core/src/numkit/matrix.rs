use std::fmt;
use std::ops::{Index, IndexMut};

use super::NumError;

/// Products with fewer multiply-adds than this use a plain triple loop whose
/// summation order is fixed and easy to reproduce. Larger products go through
/// the blocked `dgemm` kernel.
const SMALL_PRODUCT: usize = 512;

/// Dense row-major `rows × cols` matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        f.debug_list().entries(self.data.chunks(self.cols)).finish()
    }
}

impl Matrix {
    /// Panics if either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        if rows == 0 || cols == 0 {
            return Err(NumError::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(NumError::BufferLength {
                len: data.len(),
                rows,
                cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// A `1 × n` row vector.
    pub fn row_vector(values: &[f64]) -> Self {
        Self::from_vec(1, values.len(), values.to_vec()).expect("non-empty row vector")
    }

    /// An `n × 1` column vector.
    pub fn column_vector(values: &[f64]) -> Self {
        Self::from_vec(values.len(), 1, values.to_vec()).expect("non-empty column vector")
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Matrix {
        self.map(|v| v * k)
    }

    fn zip_with(
        &self,
        other: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix, NumError> {
        self.same_shape(other, op)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, NumError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, NumError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix, NumError> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<(), NumError> {
        self.axpy(1.0, other)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<(), NumError> {
        self.same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Matrix, op: &'static str) -> Result<(), NumError> {
        if self.shape() != other.shape() {
            return Err(NumError::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix, NumError> {
        let first = parts.first().ok_or(NumError::EmptyShape { rows: 0, cols: 0 })?;
        let cols = first.cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(NumError::Shape {
                    op: "vstack",
                    left: first.shape(),
                    right: p.shape(),
                });
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_slice(&self, start: usize, end: usize) -> Matrix {
        assert!(start < end && end <= self.rows, "row range out of bounds");
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Column sums as an `rows × 1` vector (reduces over the batch).
    pub fn sum_columns(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, 1);
        for r in 0..self.rows {
            out.data[r] = self.row(r).iter().sum();
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Whether an operand enters a product as-is or transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Op {
    N,
    T,
}

fn op_shape(m: &Matrix, op: Op) -> (usize, usize) {
    match op {
        Op::N => (m.rows, m.cols),
        Op::T => (m.cols, m.rows),
    }
}

fn op_strides(m: &Matrix, op: Op) -> (isize, isize) {
    match op {
        Op::N => (m.cols as isize, 1),
        Op::T => (1, m.cols as isize),
    }
}

/// `c ← alpha · op(a) · op(b) + beta · c`
pub(crate) fn gemm(
    alpha: f64,
    a: &Matrix,
    op_a: Op,
    b: &Matrix,
    op_b: Op,
    beta: f64,
    c: &mut Matrix,
) -> Result<(), NumError> {
    let (m, k) = op_shape(a, op_a);
    let (kb, n) = op_shape(b, op_b);
    if k != kb {
        return Err(NumError::Shape {
            op: "matmul",
            left: (m, k),
            right: (kb, n),
        });
    }
    if c.shape() != (m, n) {
        return Err(NumError::Shape {
            op: "matmul output",
            left: (m, n),
            right: c.shape(),
        });
    }
    let (rsa, csa) = op_strides(a, op_a);
    let (rsb, csb) = op_strides(b, op_b);
    if m * k * n < SMALL_PRODUCT {
        let at = |i: usize, p: usize| a.data[(i as isize * rsa + p as isize * csa) as usize];
        let bt = |p: usize, j: usize| b.data[(p as isize * rsb + j as isize * csb) as usize];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += at(i, p) * bt(p, j);
                }
                let slot = &mut c.data[i * n + j];
                *slot = if beta == 0.0 {
                    alpha * acc
                } else {
                    alpha * acc + beta * *slot
                };
            }
        }
        return Ok(());
    }
    // SAFETY: the shape checks above guarantee every strided access lies
    // inside the three buffers, and `c` does not alias `a` or `b` because it
    // is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(())
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, NumError> {
    if a.cols != b.rows {
        return Err(NumError::Shape {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm(1.0, a, Op::N, b, Op::N, 0.0, &mut out)?;
    Ok(out)
}

/// `w · x + b` with the `rows × 1` bias broadcast over the columns of `x`.
pub fn affine(w: &Matrix, x: &Matrix, b: &Matrix) -> Result<Matrix, NumError> {
    if b.cols != 1 || b.rows != w.rows {
        return Err(NumError::Shape {
            op: "affine bias",
            left: (w.rows, 1),
            right: b.shape(),
        });
    }
    let mut out = matmul(w, x)?;
    add_column_broadcast(&mut out, b);
    Ok(out)
}

pub(crate) fn add_column_broadcast(m: &mut Matrix, b: &Matrix) {
    let cols = m.cols;
    for (r, row) in m.data.chunks_mut(cols).enumerate() {
        let bias = b.data[r];
        row.iter_mut().for_each(|v| *v += bias);
    }
}

/// Scalar functions applied entrywise by [`map_elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Sigmoid,
    Tanh,
    Exp,
    Log,
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn map_elementwise(m: &Matrix, f: Elementwise) -> Result<Matrix, NumError> {
    Ok(match f {
        Elementwise::Sigmoid => m.map(sigmoid),
        Elementwise::Tanh => m.map(f64::tanh),
        Elementwise::Exp => m.map(f64::exp),
        Elementwise::Log => {
            if let Some(&bad) = m.data.iter().find(|v| !(**v > 0.0)) {
                return Err(NumError::Domain {
                    op: "log",
                    value: bad,
                });
            }
            m.map(f64::ln)
        }
    })
}

/// Column-wise softmax with max subtraction.
pub fn softmax_columns(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for c in 0..m.cols {
        let max = (0..m.rows).map(|r| m[(r, c)]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for r in 0..m.rows {
            let e = (m[(r, c)] - max).exp();
            out[(r, c)] = e;
            total += e;
        }
        for r in 0..m.rows {
            out[(r, c)] /= total;
        }
    }
    out
}
