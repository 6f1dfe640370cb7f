//! Row-major dense matrices backed by `matrixmultiply`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
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
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// First `n` rows as a new matrix.
    pub fn top_rows(&self, n: usize) -> Matrix {
        Matrix {
            rows: n,
            cols: self.cols,
            data: self.data[..n * self.cols].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self · rhs`
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        gemm(
            self.rows,
            self.cols,
            rhs.cols,
            (&self.data, self.cols as isize, 1),
            (&rhs.data, rhs.cols as isize, 1),
            &mut out.data,
            0.0,
        );
        out
    }

    /// `selfᵀ · rhs`
    pub fn t_matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.rows, rhs.rows, "t_matmul inner dimension");
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        gemm(
            self.cols,
            self.rows,
            rhs.cols,
            (&self.data, 1, self.cols as isize),
            (&rhs.data, rhs.cols as isize, 1),
            &mut out.data,
            0.0,
        );
        out
    }

    /// `self · rhsᵀ`
    pub fn matmul_t(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.cols, "matmul_t inner dimension");
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        gemm(
            self.rows,
            self.cols,
            rhs.rows,
            (&self.data, self.cols as isize, 1),
            (&rhs.data, 1, rhs.cols as isize),
            &mut out.data,
            0.0,
        );
        out
    }

    /// Accumulates `selfᵀ · rhs` into `acc` (a flat `cols × rhs.cols` block).
    pub fn t_matmul_acc(&self, rhs: &Matrix, acc: &mut [f64]) {
        assert_eq!(self.rows, rhs.rows);
        assert_eq!(acc.len(), self.cols * rhs.cols);
        gemm(
            self.cols,
            self.rows,
            rhs.cols,
            (&self.data, 1, self.cols as isize),
            (&rhs.data, rhs.cols as isize, 1),
            acc,
            1.0,
        );
    }

    pub fn add_row_vector(&mut self, v: &[f64]) {
        debug_assert_eq!(v.len(), self.cols);
        for row in self.data.chunks_exact_mut(self.cols) {
            for (x, b) in row.iter_mut().zip(v) {
                *x += b;
            }
        }
    }

    /// Column sums accumulated into `acc`.
    pub fn col_sums_acc(&self, acc: &mut [f64]) {
        debug_assert_eq!(acc.len(), self.cols);
        for row in self.data.chunks_exact(self.cols) {
            for (a, x) in acc.iter_mut().zip(row) {
                *a += x;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Multiplies a flat row-major `rows × cols` weight block: `x · W`.
pub fn matmul_block(x: &Matrix, w: &[f64], cols: usize) -> Matrix {
    let k = x.cols();
    assert_eq!(w.len(), k * cols, "weight block size");
    let mut out = Matrix::zeros(x.rows(), cols);
    gemm(
        x.rows(),
        k,
        cols,
        (x.as_slice(), k as isize, 1),
        (w, cols as isize, 1),
        &mut out.data,
        0.0,
    );
    out
}

/// `dy · Wᵀ` for a flat row-major `rows × cols` weight block.
pub fn matmul_block_t(dy: &Matrix, w: &[f64], rows: usize) -> Matrix {
    let cols = dy.cols();
    assert_eq!(w.len(), rows * cols, "weight block size");
    let mut out = Matrix::zeros(dy.rows(), rows);
    gemm(
        dy.rows(),
        cols,
        rows,
        (dy.as_slice(), cols as isize, 1),
        (w, 1, cols as isize),
        &mut out.data,
        0.0,
    );
    out
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    // SAFETY: callers pass slices whose lengths cover the strided extents
    // (checked by the shape assertions above each call site).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
        })
    }

    fn transpose(a: &Matrix) -> Matrix {
        Matrix::from_fn(a.cols(), a.rows(), |i, j| a.get(j, i))
    }

    #[test]
    fn products_match_naive_loops() {
        let a = Matrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64 * 0.5 - 2.0);
        let b = Matrix::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.25);
        let c = Matrix::from_fn(5, 4, |i, j| (i + 2 * j) as f64 * 0.1);
        assert!(a.matmul(&b).max_abs_diff(&naive(&a, &b)) < 1e-12);
        assert!(a.t_matmul(&c).max_abs_diff(&naive(&transpose(&a), &c)) < 1e-12);
        assert!(c.matmul_t(&b).max_abs_diff(&naive(&c, &transpose(&b))) < 1e-12);
        let via_block = matmul_block(&a, b.as_slice(), 4);
        assert!(via_block.max_abs_diff(&naive(&a, &b)) < 1e-12);
        let back = matmul_block_t(&c, b.as_slice(), 3);
        assert!(back.max_abs_diff(&naive(&c, &transpose(&b))) < 1e-12);
        let mut acc = vec![1.0; 12];
        a.t_matmul_acc(&c, &mut acc);
        let expect = naive(&transpose(&a), &c);
        for (x, y) in acc.iter().zip(expect.as_slice()) {
            assert!((x - 1.0 - y).abs() < 1e-12);
        }
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
    }
}
