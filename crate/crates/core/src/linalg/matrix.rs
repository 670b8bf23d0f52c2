use std::fmt;

use super::real::Real;
use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}) ", self.rows, self.cols)?;
        f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()
    }
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from `f64` rows; panics on ragged input (test helper).
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend(row.iter().map(|&v| T::of(v)));
        }
        Self { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
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
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same(other, op)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_same(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    /// Adds a `1 x cols` row vector to every row.
    pub fn add_row_broadcast(&mut self, bias: &Self) -> Result<()> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(Error::Shape {
                op: "add_row_broadcast",
                left: self.shape(),
                right: bias.shape(),
            });
        }
        for row in self.data.chunks_mut(self.cols) {
            for (a, &b) in row.iter_mut().zip(&bias.data) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Accumulates the column sums into a `1 x cols` row vector.
    pub fn sum_rows_into(&self, out: &mut Self) -> Result<()> {
        if out.rows != 1 || out.cols != self.cols {
            return Err(Error::Shape {
                op: "sum_rows_into",
                left: self.shape(),
                right: out.shape(),
            });
        }
        for row in self.data.chunks(self.cols) {
            for (o, &v) in out.data.iter_mut().zip(row) {
                *o += v;
            }
        }
        Ok(())
    }

    /// Multiplies row `i` by `coeffs[i]`.
    pub fn scale_rows(&mut self, coeffs: &[T]) {
        debug_assert_eq!(coeffs.len(), self.rows);
        for (row, &c) in self.data.chunks_mut(self.cols.max(1)).zip(coeffs) {
            row.iter_mut().for_each(|x| *x *= c);
        }
    }

    /// Row lookup: output row `k` is `self.row(ids[k])`.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Self> {
        let mut out = Self::zeros(ids.len(), self.cols);
        for (k, &id) in ids.iter().enumerate() {
            if id >= self.rows {
                return Err(Error::Shape {
                    op: "gather_rows",
                    left: self.shape(),
                    right: (id, 0),
                });
            }
            out.row_mut(k).copy_from_slice(self.row(id));
        }
        Ok(out)
    }

    /// Inverse of [`gather_rows`](Self::gather_rows): `self.row(ids[k]) += grad.row(k)`.
    pub fn scatter_add_rows(&mut self, ids: &[usize], grad: &Self) -> Result<()> {
        if grad.rows != ids.len() || grad.cols != self.cols {
            return Err(Error::Shape {
                op: "scatter_add_rows",
                left: self.shape(),
                right: grad.shape(),
            });
        }
        for (k, &id) in ids.iter().enumerate() {
            if id >= self.rows {
                return Err(Error::Shape {
                    op: "scatter_add_rows",
                    left: self.shape(),
                    right: (id, 0),
                });
            }
            let src = grad.row(k);
            for (a, &b) in self.row_mut(id).iter_mut().zip(src) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &x| if x.abs() > m { x.abs() } else { m })
    }

    fn check_same(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

/// Matrix product `a · b`, optionally added onto a copy of `accumulate_into`.
pub fn gemm<T: Real>(a: &Matrix<T>, b: &Matrix<T>, accumulate_into: Option<&Matrix<T>>) -> Result<Matrix<T>> {
    let mut out = match accumulate_into {
        Some(acc) => {
            if acc.shape() != (a.rows, b.cols) {
                return Err(Error::Shape {
                    op: "gemm accumulator",
                    left: (a.rows, b.cols),
                    right: acc.shape(),
                });
            }
            acc.clone()
        }
        None => Matrix::zeros(a.rows, b.cols),
    };
    matmul_acc(a, b, &mut out)?;
    Ok(out)
}

/// `out += a · b`
pub fn matmul_acc<T: Real>(a: &Matrix<T>, b: &Matrix<T>, out: &mut Matrix<T>) -> Result<()> {
    if a.cols != b.rows || out.rows != a.rows || out.cols != b.cols {
        return Err(Error::Shape {
            op: "gemm",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let n = b.cols;
    for i in 0..a.rows {
        let a_row = &a.data[i * a.cols..(i + 1) * a.cols];
        let o_row = &mut out.data[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &b_pj) in o_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
    Ok(())
}

/// `out += aᵀ · b` without materializing the transpose.
pub fn matmul_tn_acc<T: Real>(a: &Matrix<T>, b: &Matrix<T>, out: &mut Matrix<T>) -> Result<()> {
    if a.rows != b.rows || out.rows != a.cols || out.cols != b.cols {
        return Err(Error::Shape {
            op: "gemm_tn",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let n = b.cols;
    for i in 0..a.rows {
        let a_row = &a.data[i * a.cols..(i + 1) * a.cols];
        let b_row = &b.data[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let o_row = &mut out.data[p * n..(p + 1) * n];
            for (o, &b_ij) in o_row.iter_mut().zip(b_row) {
                *o += a_ip * b_ij;
            }
        }
    }
    Ok(())
}

/// `out += a · bᵀ` without materializing the transpose.
pub fn matmul_nt_acc<T: Real>(a: &Matrix<T>, b: &Matrix<T>, out: &mut Matrix<T>) -> Result<()> {
    if a.cols != b.cols || out.rows != a.rows || out.cols != b.rows {
        return Err(Error::Shape {
            op: "gemm_nt",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let k = a.cols;
    for i in 0..a.rows {
        let a_row = &a.data[i * k..(i + 1) * k];
        for j in 0..b.rows {
            let b_row = &b.data[j * k..(j + 1) * k];
            let dot: T = a_row.iter().zip(b_row).map(|(&x, &y)| x * y).sum();
            out.data[i * b.rows + j] += dot;
        }
    }
    Ok(())
}
