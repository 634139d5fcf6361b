//! Small dense complex linear algebra: column-major matrices, Hermitian
//! inner products and a Cholesky solver for Hermitian positive definite
//! systems. Sizes here are at most a few hundred, so nothing is blocked.

use num_complex::Complex;

use crate::scalar::Scalar;

/// `Σ conj(a_i) · b_i`, i.e. `aᴴ b`.
pub fn dot_h<T: Scalar>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = Complex::new(T::zero(), T::zero());
    for (x, y) in a.iter().zip(b) {
        acc += x.conj() * y;
    }
    acc
}

pub fn norm_sq<T: Scalar>(a: &[Complex<T>]) -> T {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Column-major complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex::new(T::zero(), T::zero()); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::new(T::one(), T::zero());
        }
        m
    }

    /// Builds a matrix whose `j`-th column is `columns[j]`. All columns must
    /// have the same length.
    pub fn from_columns(columns: &[Vec<Complex<T>>]) -> Self {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows * cols);
        for c in columns {
            assert_eq!(c.len(), rows, "ragged column set");
            data.extend_from_slice(c);
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn col(&self, j: usize) -> &[Complex<T>] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [Complex<T>] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[Complex<T>]> {
        self.data.chunks(self.rows.max(1)).take(self.cols)
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    /// `‖M‖_F² = Tr(M Mᴴ)`.
    pub fn frobenius_sq(&self) -> T {
        norm_sq(&self.data)
    }

    pub fn scale(&mut self, s: T) {
        for z in &mut self.data {
            *z = *z * s;
        }
    }

    pub fn conj_transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            for l in 0..self.cols {
                let b = other[(l, j)];
                let a_col = self.col(l);
                let o_col = out.col_mut(j);
                for (o, a) in o_col.iter_mut().zip(a_col) {
                    *o += *a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(self.cols, x.len());
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.rows];
        for (j, xj) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.col(j)) {
                *o += *a * xj;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl<T> std::ops::Index<(usize, usize)> for CMatrix<T> {
    type Output = Complex<T>;
    fn index(&self, (i, j): (usize, usize)) -> &Complex<T> {
        &self.data[j * self.rows + i]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for CMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[j * self.rows + i]
    }
}

/// Lower-triangular Cholesky factor `A = L Lᴴ` of a Hermitian positive
/// definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: CMatrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factorizes `a`. Returns `None` when a pivot falls below
    /// `rel_tol · max|a_ii|`, which flags (numerical) rank deficiency.
    pub fn new(a: &CMatrix<T>, rel_tol: T) -> Option<Self> {
        let n = a.rows();
        assert_eq!(n, a.cols(), "Cholesky needs a square matrix");
        let scale = (0..n)
            .map(|i| a[(i, i)].re.abs())
            .fold(T::zero(), T::max);
        if !(scale > T::zero()) {
            return None;
        }
        let floor = rel_tol * scale;
        let mut l = CMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for p in 0..j {
                d -= l[(j, p)].norm_sqr();
            }
            if !(d > floor) {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = Complex::new(djj, T::zero());
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for p in 0..j {
                    s -= l[(i, p)] * l[(j, p)].conj();
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(Self { l })
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[Complex<T>]) -> Vec<Complex<T>> {
        let n = self.l.rows();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for p in 0..i {
                s -= self.l[(i, p)] * y[p];
            }
            y[i] = s / self.l[(i, i)].re;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for p in (i + 1)..n {
                s -= self.l[(p, i)].conj() * y[p];
            }
            y[i] = s / self.l[(i, i)].re;
        }
        y
    }
}

/// Eigen-decomposition of a real symmetric `n×n` matrix (row-major) by
/// cyclic Jacobi rotations. Returns the eigenvalues and the eigenvectors
/// as columns of a row-major matrix.
pub fn sym_eigen<T: Scalar>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    assert_eq!(a.len(), n * n, "sym_eigen needs an n×n matrix");
    let mut a = a.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let total: T = a.iter().map(|x| *x * *x).sum();
    let floor = total * T::epsilon() * T::epsilon();
    for _ in 0..100 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off + a[p * n + q] * a[p * n + q];
            }
        }
        if off <= floor {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

/// Real `2n×2n` form `[[Re A, −Im A], [Im A, Re A]]` of a complex matrix.
pub fn real_embedding<T: Scalar>(a: &CMatrix<T>) -> Vec<T> {
    let n = a.rows();
    let m = 2 * n;
    let mut r = vec![T::zero(); m * m];
    for i in 0..n {
        for j in 0..n {
            let z = a[(i, j)];
            r[i * m + j] = z.re;
            r[i * m + n + j] = -z.im;
            r[(n + i) * m + j] = z.im;
            r[(n + i) * m + n + j] = z.re;
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn cholesky_solves_hermitian_system() {
        // A = B Bᴴ + I, B fixed.
        let b = CMatrix::from_columns(&[
            vec![c(1.0, 0.5), c(0.2, -0.1), c(0.0, 1.0)],
            vec![c(-0.3, 0.0), c(1.1, 0.4), c(0.5, 0.5)],
        ]);
        let mut a = b.matmul(&b.conj_transpose());
        for i in 0..3 {
            a[(i, i)] += c(1.0, 0.0);
        }
        let x_true = vec![c(1.0, -2.0), c(0.5, 0.25), c(-1.0, 0.0)];
        let rhs = a.matvec(&x_true);
        let x = Cholesky::new(&a, 1e-14).unwrap().solve(&rhs);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).norm() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_rank_deficient() {
        let h = vec![c(1.0, 1.0), c(2.0, 0.0)];
        let a = CMatrix::from_columns(&[h.clone()]).matmul(&CMatrix::from_columns(&[h]).conj_transpose());
        assert!(Cholesky::new(&a, 1e-12).is_none());
    }

    #[test]
    fn dot_h_conjugates_left() {
        let a = [c(0.0, 1.0)];
        let b = [c(0.0, 1.0)];
        assert_eq!(dot_h(&a, &b), c(1.0, 0.0));
    }

    #[test]
    fn jacobi_reconstructs_symmetric_matrix() {
        let n = 5;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let x = ((i * 7 + j * 3) % 11) as f64 - 5.0;
                a[i * n + j] = x;
                a[j * n + i] = x;
            }
        }
        let (w, v) = sym_eigen(&a, n);
        for i in 0..n {
            for j in 0..n {
                let r: f64 = (0..n).map(|k| v[i * n + k] * w[k] * v[j * n + k]).sum();
                assert!((r - a[i * n + j]).abs() < 1e-12);
                let o: f64 = (0..n).map(|k| v[k * n + i] * v[k * n + j]).sum();
                assert!((o - (i == j) as u8 as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hermitian_embedding_doubles_the_spectrum() {
        let mut a = CMatrix::zeros(2, 2);
        a[(0, 0)] = c(2.0, 0.0);
        a[(0, 1)] = c(0.0, 1.0);
        a[(1, 0)] = c(0.0, -1.0);
        a[(1, 1)] = c(2.0, 0.0);
        let (mut w, _) = sym_eigen(&real_embedding(&a), 4);
        w.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (got, want) in w.iter().zip([1.0, 1.0, 3.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }
}
