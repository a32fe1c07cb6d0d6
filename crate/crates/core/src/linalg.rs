//! Small dense row-major matrix and a Cholesky solver.
//!
//! The DI computations only ever need symmetric positive-definite solves on
//! `D x D` systems, so this stays deliberately small.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        Mat { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * self^T`, exploiting symmetry of the result.
    pub fn gram(&self) -> Mat {
        let mut out = Mat::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in 0..=i {
                let v = dot(self.row(i), self.row(j));
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    /// `self * other^T`.
    pub fn mul_transpose(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "mul_transpose dimension mismatch");
        Mat::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn add_diagonal(&self, value: f64) -> Mat {
        let mut out = self.clone();
        for i in 0..self.rows.min(self.cols) {
            out[(i, i)] += value;
        }
        out
    }

    /// Principal submatrix on the given index set (rows and columns).
    pub fn principal(&self, idx: &[usize]) -> Mat {
        Mat::from_fn(idx.len(), idx.len(), |i, j| self[(idx[i], idx[j])])
    }

    pub fn select_rows(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Mat::from_vec(idx.len(), self.cols, data)
    }

    /// Copy with every row shifted to zero mean.
    pub fn center_rows(&self) -> Mat {
        let mut out = self.clone();
        if self.cols == 0 {
            return out;
        }
        for i in 0..self.rows {
            let row = out.row_mut(i);
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            row.iter_mut().for_each(|v| *v -= mean);
        }
        out
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Mat,
}

impl Cholesky {
    pub fn factor(a: &Mat) -> Result<Self> {
        let n = a.rows();
        if n != a.cols() {
            return Err(Error::Numerical(format!(
                "cholesky of non-square {}x{} matrix",
                a.rows(),
                a.cols()
            )));
        }
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)] - dot(&l.row(j)[..j], &l.row(j)[..j]);
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Numerical(format!(
                    "matrix not positive definite at pivot {j} (value {d:e})"
                )));
            }
            d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
                l[(i, j)] = s / d;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        // L y = b
        for i in 0..n {
            let s = b[i] - dot(&self.l.row(i)[..i], &b[..i]);
            b[i] = s / self.l[(i, i)];
        }
        // L^T x = y
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    /// Solves `A X = B` column by column.
    pub fn solve(&self, b: &Mat) -> Mat {
        assert_eq!(b.rows(), self.dim());
        let bt = b.transpose();
        let mut xt = bt.clone();
        for c in 0..bt.rows() {
            self.solve_in_place(xt.row_mut(c));
        }
        xt.transpose()
    }
}
