//! Dense complex-matrix arithmetic and Hermitian positive-definite
//! factorizations.
//!
//! Everything here is double precision, row-major, and sized for the
//! problem dimensions in this crate (Gram matrices up to 24x24); no
//! sparse or banded paths.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Dense complex matrix, row-major storage.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMat {
    /// Build from row-major entries. Panics on length mismatch or
    /// non-finite entries; matrices are immutable value types after this.
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> CMat {
        assert_eq!(
            data.len(),
            rows * cols,
            "CMat::new: {}x{} needs {} entries, got {}",
            rows,
            cols,
            rows * cols,
            data.len()
        );
        assert!(
            data.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
            "CMat::new: non-finite entry"
        );
        CMat { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> CMat {
        CMat {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn eye(n: usize) -> CMat {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> CMat {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMat::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> CMat {
        CMat::from_fn(self.rows, self.cols, |i, j| self[(i, j)].conj())
    }

    pub fn add(&self, other: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        CMat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        CMat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, s: f64) -> CMat {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_c(&self, s: C64) -> CMat {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    /// Matrix product self * other.
    pub fn mul(&self, other: &CMat) -> CMat {
        assert_eq!(
            self.cols, other.rows,
            "mul: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![C64::new(0.0, 0.0); m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let row = &other.data[p * n..(p + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        CMat {
            rows: m,
            cols: n,
            data: out,
        }
    }

    /// self * other.adjoint() without materializing the adjoint.
    pub fn mul_adjoint(&self, other: &CMat) -> CMat {
        assert_eq!(self.cols, other.cols, "mul_adjoint: inner dims");
        let (m, k, n) = (self.rows, self.cols, other.rows);
        CMat::from_fn(m, n, |i, j| {
            let mut s = C64::new(0.0, 0.0);
            for p in 0..k {
                s += self.data[i * k + p] * other.data[j * k + p].conj();
            }
            s
        })
    }

    /// self.adjoint() * other without materializing the adjoint.
    pub fn adjoint_mul(&self, other: &CMat) -> CMat {
        assert_eq!(self.rows, other.rows, "adjoint_mul: inner dims");
        let (m, k, n) = (self.cols, self.rows, other.cols);
        CMat::from_fn(m, n, |i, j| {
            let mut s = C64::new(0.0, 0.0);
            for p in 0..k {
                s += self.data[p * m + i].conj() * other.data[p * n + j];
            }
            s
        })
    }

    /// Rows [r0, r1) as a new matrix.
    pub fn row_block(&self, r0: usize, r1: usize) -> CMat {
        assert!(r0 <= r1 && r1 <= self.rows);
        CMat {
            rows: r1 - r0,
            cols: self.cols,
            data: self.data[r0 * self.cols..r1 * self.cols].to_vec(),
        }
    }

    /// Columns [c0, c1) as a new matrix.
    pub fn col_block(&self, c0: usize, c1: usize) -> CMat {
        assert!(c0 <= c1 && c1 <= self.cols);
        CMat::from_fn(self.rows, c1 - c0, |i, j| self[(i, c0 + j)])
    }

    pub fn column(&self, j: usize) -> CMat {
        self.col_block(j, j + 1)
    }

    /// Stack vertically: self on top of other.
    pub fn vstack(&self, other: &CMat) -> CMat {
        assert_eq!(self.cols, other.cols);
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        CMat {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// (A + A^H) / 2. Iterates accumulate asymmetry of order 1e-14; this
    /// absorbs it before factorization.
    pub fn symmetrize(&self) -> CMat {
        assert!(self.is_square(), "symmetrize: square input required");
        CMat::from_fn(self.rows, self.rows, |i, j| {
            (self[(i, j)] + self[(j, i)].conj()) * 0.5
        })
    }

    /// Max deviation from Hermitian symmetry.
    pub fn hermitian_deviation(&self) -> f64 {
        assert!(self.is_square());
        let mut dev: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.rows {
                dev = dev.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        dev
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square() && self.hermitian_deviation() <= tol
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn approx_eq(&self, other: &CMat, tol: f64) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| (a - b).norm() <= tol)
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// H * H^H. Hermitian PSD with real non-negative diagonal.
pub fn gram(h: &CMat) -> CMat {
    h.mul_adjoint(h)
}

/// Real part of the trace. Hermitian arguments have a real trace; the
/// imaginary residue is asserted small in debug builds.
pub fn trace_real(a: &CMat) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let mut re = 0.0;
    let mut im = 0.0;
    for i in 0..a.rows {
        re += a[(i, i)].re;
        im += a[(i, i)].im;
    }
    debug_assert!(
        im.abs() <= 1e-12 * (1.0 + re.abs()),
        "trace_real: imaginary residue {im:e}"
    );
    Ok(re)
}

/// Cholesky factor L (lower triangular) of a Hermitian positive-definite
/// matrix, A = L L^H. Input is symmetrized before factorization.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: CMat,
}

impl Cholesky {
    pub fn new(a: &CMat) -> Result<Cholesky> {
        assert!(a.is_square(), "cholesky: square input required");
        let n = a.rows;
        let a = a.symmetrize();
        let mut l = CMat::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { index: j, pivot: d });
            }
            let ljj = d.sqrt();
            l[(j, j)] = C64::new(ljj, 0.0);
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows
    }

    /// Solve A X = B for all columns of B.
    pub fn solve(&self, b: &CMat) -> CMat {
        let n = self.dim();
        assert_eq!(b.rows, n, "cholesky solve: rhs has {} rows, need {n}", b.rows);
        let m = b.cols;
        // forward: L y = b
        let mut x = b.clone();
        for i in 0..n {
            for k in 0..i {
                let lik = self.l[(i, k)];
                for c in 0..m {
                    let t = lik * x[(k, c)];
                    x[(i, c)] -= t;
                }
            }
            let d = self.l[(i, i)].re;
            for c in 0..m {
                x[(i, c)] /= d;
            }
        }
        // backward: L^H x = y
        for i in (0..n).rev() {
            for k in i + 1..n {
                let lki = self.l[(k, i)].conj();
                for c in 0..m {
                    let t = lki * x[(k, c)];
                    x[(i, c)] -= t;
                }
            }
            let d = self.l[(i, i)].re;
            for c in 0..m {
                x[(i, c)] /= d;
            }
        }
        x
    }

    /// log det A in nats (A = L L^H, so log det = 2 sum log L_ii).
    pub fn logdet(&self) -> f64 {
        (0..self.dim()).map(|i| 2.0 * self.l[(i, i)].re.ln()).sum()
    }
}

/// Solve A X = B for Hermitian positive-definite A via Cholesky; never
/// forms A^{-1} explicitly.
pub fn herm_solve(a: &CMat, b: &CMat) -> Result<CMat> {
    Ok(Cholesky::new(a)?.solve(b))
}

/// Natural-log determinant of a Hermitian positive-definite matrix.
pub fn logdet_hpd(a: &CMat) -> Result<f64> {
    Ok(Cholesky::new(a)?.logdet())
}
