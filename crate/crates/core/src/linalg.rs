//! Minimal dense linear algebra: row-major matrices, vector helpers, and an
//! unpivoted LDL^T factorization for the quasi-definite KKT systems used by
//! the QP oracle. Problem sizes stay in the low thousands, so dense storage
//! is the simple and adequate choice.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        assert_eq!(y.len(), self.rows, "matvec dimension mismatch");
        for (r, yr) in y.iter_mut().enumerate() {
            let row = self.row(r);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            *yr = acc;
        }
    }

    /// y = A^T x, accumulating row-by-row so the summation order over rows is
    /// the natural ascending one.
    pub fn matvec_t(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.rows, "matvec_t dimension mismatch");
        assert_eq!(y.len(), self.cols, "matvec_t dimension mismatch");
        y.fill(0.0);
        for (r, &xr) in x.iter().enumerate() {
            let row = self.row(r);
            for (yc, a) in y.iter_mut().zip(row.iter()) {
                *yc += a * xr;
            }
        }
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                if math::abs(self[(r, c)] - self[(c, r)]) > tol {
                    return false;
                }
            }
        }
        true
    }
}

impl core::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// max_i |x_i|
pub fn norm_inf(x: &[f64]) -> f64 {
    let mut m = 0.0;
    for &v in x {
        let a = math::abs(v);
        if a > m {
            m = a;
        }
    }
    m
}

pub fn norm2(x: &[f64]) -> f64 {
    math::sqrt(dot(x, x))
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        acc += a * b;
    }
    acc
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * xi;
    }
}

/// Error from [`ldlt_factor`]: the pivot at the reported column vanished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingularPivot(pub usize);

impl core::fmt::Display for SingularPivot {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "LDL^T factorization hit a vanishing pivot at column {}", self.0)
    }
}

impl core::error::Error for SingularPivot {}

/// LDL^T factorization of a symmetric matrix.
///
/// No pivoting: intended for quasi-definite KKT matrices, where the
/// factorization exists for any symmetric permutation. The factor L (unit
/// lower triangular, diagonal implicitly 1) and D are packed into the lower
/// triangle / diagonal of the returned matrix.
pub struct Ldlt {
    packed: Mat,
}

pub fn ldlt_factor(a: &Mat) -> Result<Ldlt, SingularPivot> {
    assert_eq!(a.rows(), a.cols(), "LDL^T needs a square matrix");
    let n = a.rows();
    let mut m = a.clone();
    for j in 0..n {
        // d_j = a_jj - sum_k l_jk^2 d_k
        let mut dj = m[(j, j)];
        for k in 0..j {
            let ljk = m[(j, k)];
            dj -= ljk * ljk * m[(k, k)];
        }
        if dj == 0.0 || !dj.is_finite() {
            return Err(SingularPivot(j));
        }
        m[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut lij = m[(i, j)];
            for k in 0..j {
                lij -= m[(i, k)] * m[(j, k)] * m[(k, k)];
            }
            m[(i, j)] = lij / dj;
        }
    }
    Ok(Ldlt { packed: m })
}

impl Ldlt {
    /// Solve A x = b in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.packed.rows();
        assert_eq!(b.len(), n, "LDL^T solve dimension mismatch");
        // forward: L y = b
        for i in 0..n {
            let row = self.packed.row(i);
            let mut acc = b[i];
            for k in 0..i {
                acc -= row[k] * b[k];
            }
            b[i] = acc;
        }
        // diagonal
        for i in 0..n {
            b[i] /= self.packed[(i, i)];
        }
        // backward: L^T x = y
        for i in (0..n).rev() {
            let mut acc = b[i];
            for k in (i + 1)..n {
                acc -= self.packed[(k, i)] * b[k];
            }
            b[i] = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matvec_identity() {
        let m = Mat::identity(3);
        let x = [1.0, -2.0, 3.0];
        let mut y = [0.0; 3];
        m.matvec(&x, &mut y);
        assert_eq!(y, x);
        m.matvec_t(&x, &mut y);
        assert_eq!(y, x);
    }

    #[test]
    fn transpose_roundtrip() {
        let mut m = Mat::zeros(2, 3);
        for r in 0..2 {
            for c in 0..3 {
                m[(r, c)] = (r * 3 + c) as f64;
            }
        }
        assert_eq!(m.transpose().transpose(), m);
    }

    #[test]
    fn ldlt_solves_spd_system() {
        // A = [[4,1,0],[1,3,1],[0,1,2]], x = (1,2,3)
        let mut a = Mat::zeros(3, 3);
        let vals = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        for r in 0..3 {
            for c in 0..3 {
                a[(r, c)] = vals[r][c];
            }
        }
        let x = [1.0, 2.0, 3.0];
        let mut b = [0.0; 3];
        a.matvec(&x, &mut b);
        let f = ldlt_factor(&a).unwrap();
        f.solve_in_place(&mut b);
        for i in 0..3 {
            assert_abs_diff_eq!(b[i], x[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn ldlt_solves_quasi_definite_kkt() {
        // [[P, A^T], [A, -I]] with P = I, A = [1 1]
        let mut k = Mat::zeros(3, 3);
        k[(0, 0)] = 1.0;
        k[(1, 1)] = 1.0;
        k[(0, 2)] = 1.0;
        k[(2, 0)] = 1.0;
        k[(1, 2)] = 1.0;
        k[(2, 1)] = 1.0;
        k[(2, 2)] = -1.0;
        let x = [0.5, -1.5, 2.0];
        let mut b = [0.0; 3];
        k.matvec(&x, &mut b);
        let f = ldlt_factor(&k).unwrap();
        f.solve_in_place(&mut b);
        for i in 0..3 {
            assert_abs_diff_eq!(b[i], x[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn ldlt_reports_singularity() {
        let a = Mat::zeros(2, 2);
        assert!(ldlt_factor(&a).is_err());
    }
}
