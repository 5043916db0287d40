//! Small dense matrices with Gaussian elimination.
//!
//! Systems in this crate have at most a few dozen rows, so a row-major `Vec`
//! with partial pivoting is all that is needed.

use std::fmt;

use crate::scalar::Scalar;

#[derive(Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend(r.iter().cloned());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self[(r, c)].clone()).collect()
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut out = Self::zeros(self.rows, cols.len());
        for r in 0..self.rows {
            for (j, &c) in cols.iter().enumerate() {
                out[(r, j)] = self[(r, c)].clone();
            }
        }
        out
    }

    /// Drops a single row.
    pub fn without_row(&self, skip: usize) -> Self {
        let kept: Vec<Vec<T>> = (0..self.rows)
            .filter(|&r| r != skip)
            .map(|r| self.row(r).to_vec())
            .collect();
        if kept.is_empty() {
            return Self::zeros(0, self.cols);
        }
        Self::from_rows(&kept)
    }

    /// Concatenates `other` to the right of `self`.
    pub fn hstack(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows);
        let mut out = Self::zeros(self.rows, self.cols + other.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(r, c)] = self[(r, c)].clone();
            }
            for c in 0..other.cols {
                out[(r, self.cols + c)] = other[(r, c)].clone();
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)].clone();
            }
        }
        out
    }

    pub fn neg(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| -v.clone()).collect(),
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .fold(T::zero(), |acc, (a, b)| acc + a.clone() * b.clone())
            })
            .collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)].clone();
                if a.is_zero() {
                    continue;
                }
                for c in 0..other.cols {
                    out[(r, c)] = out[(r, c)].clone() + a.clone() * other[(k, c)].clone();
                }
            }
        }
        out
    }

    fn max_abs(&self) -> T {
        self.data
            .iter()
            .map(|v| v.abs())
            .fold(T::zero(), |m, v| if v > m { v } else { m })
    }

    /// Rank by row reduction with partial pivoting.
    pub fn rank(&self) -> usize {
        let mut m = self.clone();
        let tol = T::pivot_tolerance(&self.max_abs());
        let mut rank = 0;
        for c in 0..m.cols {
            if rank == m.rows {
                break;
            }
            let Some(p) = m.pivot_row(rank, c, &tol) else {
                continue;
            };
            m.swap_rows(rank, p);
            m.eliminate_below(rank, c);
            rank += 1;
        }
        rank
    }

    pub fn has_full_column_rank(&self) -> bool {
        self.rank() == self.cols
    }

    fn pivot_row(&self, from: usize, col: usize, tol: &T) -> Option<usize> {
        let mut best: Option<(usize, T)> = None;
        for r in from..self.rows {
            let v = self[(r, col)].abs();
            if v > *tol && best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((r, v));
            }
        }
        best.map(|(r, _)| r)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for c in 0..self.cols {
            self.data.swap(a * self.cols + c, b * self.cols + c);
        }
    }

    fn eliminate_below(&mut self, pivot_row: usize, col: usize) {
        let pivot = self[(pivot_row, col)].clone();
        for r in pivot_row + 1..self.rows {
            let f = self[(r, col)].clone() / pivot.clone();
            if f.is_zero() {
                continue;
            }
            for c in col..self.cols {
                let v = self[(r, c)].clone() - f.clone() * self[(pivot_row, c)].clone();
                self[(r, c)] = v;
            }
        }
    }

    /// LU factorization of a square matrix; `None` when singular.
    pub fn lu(&self) -> Option<Lu<T>> {
        assert_eq!(self.rows, self.cols, "LU needs a square matrix");
        let n = self.rows;
        let mut m = self.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let tol = T::pivot_tolerance(&self.max_abs());
        for c in 0..n {
            let p = m.pivot_row(c, c, &tol)?;
            m.swap_rows(c, p);
            perm.swap(c, p);
            let pivot = m[(c, c)].clone();
            for r in c + 1..n {
                let f = m[(r, c)].clone() / pivot.clone();
                m[(r, c)] = f.clone();
                if f.is_zero() {
                    continue;
                }
                for k in c + 1..n {
                    let v = m[(r, k)].clone() - f.clone() * m[(c, k)].clone();
                    m[(r, k)] = v;
                }
            }
        }
        Some(Lu { lu: m, perm })
    }

    pub fn solve(&self, b: &[T]) -> Option<Vec<T>> {
        self.lu().map(|lu| lu.solve(b))
    }

    pub fn inverse(&self) -> Option<Self> {
        let lu = self.lu()?;
        let n = self.rows;
        let mut inv = Self::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for c in 0..n {
            e.iter_mut().for_each(|v| *v = T::zero());
            e[c] = T::one();
            for (r, v) in lu.solve(&e).into_iter().enumerate() {
                inv[(r, c)] = v;
            }
        }
        Some(inv)
    }

    /// Least-squares solution of `self * x ≈ b` via the normal equations.
    ///
    /// Requires full column rank.
    pub fn least_squares(&self, b: &[T]) -> Option<Vec<T>> {
        let at = self.transpose();
        let ata = at.matmul(self);
        let atb = at.mul_vec(b);
        ata.solve(&atb)
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

impl<T: fmt::Debug> fmt::Debug for DenseMatrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", &self.data[r * self.cols..(r + 1) * self.cols])?;
        }
        write!(f, "]")
    }
}

/// Packed LU factors with the row permutation applied during pivoting.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: DenseMatrix<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.perm.len();
        assert_eq!(b.len(), n);
        let mut y: Vec<T> = self.perm.iter().map(|&p| b[p].clone()).collect();
        for r in 0..n {
            for k in 0..r {
                let v = y[r].clone() - self.lu[(r, k)].clone() * y[k].clone();
                y[r] = v;
            }
        }
        for r in (0..n).rev() {
            for k in r + 1..n {
                let v = y[r].clone() - self.lu[(r, k)].clone() * y[k].clone();
                y[r] = v;
            }
            y[r] = y[r].clone() / self.lu[(r, r)].clone();
        }
        y
    }
}
