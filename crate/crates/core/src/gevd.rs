//! Cholesky factorization, Hermitian eigendecomposition and the generalized
//! eigendecomposition of a Hermitian pencil `{R_yy, R_nn}`.
//!
//! The pencil is reduced to a standard problem by whitening with the Cholesky
//! factor of `R_nn` and diagonalized with a cyclic complex Jacobi sweep. Array
//! sizes here are at most a few dozen channels, where Jacobi is accurate and
//! fully deterministic.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

const HERMITIAN_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 10_000;

pub(crate) fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

fn check_square_hermitian(a: &CMatrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Shape(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let norm = frobenius(a);
    let skew = frobenius(&(a - a.adjoint()));
    if skew > HERMITIAN_TOL * norm.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidParam(format!(
            "matrix is not Hermitian (relative skew {:e})",
            skew / norm
        )));
    }
    Ok(())
}

/// Lower-triangular `L` with positive real diagonal and `L·L^H = a`.
///
/// Only the lower triangle of `a` is read.
pub fn cholesky(a: &CMatrix) -> Result<CMatrix> {
    check_square_hermitian(a)?;
    let n = a.nrows();
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = Complex64::new(djj, 0.0);
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L·X = B` for lower-triangular `L`.
pub fn solve_lower(l: &CMatrix, b: &CMatrix) -> CMatrix {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..x.ncols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Solves `L^H·X = B` for lower-triangular `L`.
pub fn solve_lower_adjoint(l: &CMatrix, b: &CMatrix) -> CMatrix {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..x.ncols() {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)].conj() * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)].conj();
        }
    }
    x
}

/// Solves `A·X = B` given the Cholesky factor `L` of `A`.
pub fn cholesky_solve(l: &CMatrix, b: &CMatrix) -> CMatrix {
    solve_lower_adjoint(l, &solve_lower(l, b))
}

/// Eigenvalues (descending) and unitary eigenvectors of a Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianEig {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

/// Rotates the largest-magnitude entry of every column onto the positive real axis.
fn fix_column_phases(v: &mut CMatrix) {
    for c in 0..v.ncols() {
        let mut best = 0;
        let mut best_mag = -1.0;
        for r in 0..v.nrows() {
            let m = v[(r, c)].norm();
            if m > best_mag {
                best_mag = m;
                best = r;
            }
        }
        if best_mag > 0.0 {
            let phase = v[(best, c)].conj() / best_mag;
            for r in 0..v.nrows() {
                v[(r, c)] *= phase;
            }
            v[(best, c)].im = 0.0;
        }
    }
}

/// Cyclic Jacobi eigensolver for Hermitian matrices.
pub fn hermitian_eig(a: &CMatrix) -> Result<HermitianEig> {
    check_square_hermitian(a)?;
    let n = a.nrows();
    let mut m = hermitian_part(a);
    let mut v = CMatrix::identity(n, n);
    let scale = frobenius(&m);

    let mut converged = n <= 1 || scale == 0.0;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            let residual = off_diagonal(&m);
            return Err(Error::NoConvergence { sweeps, residual });
        }
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[(p, q)];
                let mag = apq.norm();
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let negligible = mag <= 1e-20 * scale
                    || (app.abs() + 100.0 * mag == app.abs()
                        && aqq.abs() + 100.0 * mag == aqq.abs());
                if negligible {
                    if mag != 0.0 {
                        m[(p, q)] = Complex64::new(0.0, 0.0);
                        m[(q, p)] = Complex64::new(0.0, 0.0);
                    }
                    continue;
                }
                rotated = true;
                rotate(&mut m, &mut v, p, q, apq / mag, (aqq - app) / (2.0 * mag));
            }
        }
        converged = !rotated;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].re.total_cmp(&m[(i, i)].re));
    let values = order.iter().map(|&i| m[(i, i)].re).collect();
    let mut vectors = v.select_columns(order.iter());
    fix_column_phases(&mut vectors);
    Ok(HermitianEig { values, vectors })
}

fn off_diagonal(m: &CMatrix) -> f64 {
    let mut s = 0.0;
    for ((r, c), v) in m.iter().enumerate().map(|(i, v)| ((i % m.nrows(), i / m.nrows()), v)) {
        if r != c {
            s += v.norm_sqr();
        }
    }
    s.sqrt()
}

/// Applies the unitary rotation zeroing `m[p, q]`, accumulating it into `v`.
fn rotate(m: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize, phase: Complex64, theta: f64) {
    let n = m.nrows();
    let t = if theta >= 0.0 {
        1.0 / (theta + (theta * theta + 1.0).sqrt())
    } else {
        -1.0 / (-theta + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    // R = [[c, s·e], [-s·conj(e), c]] on the (p, q) plane
    let r_pq = phase * s;
    let r_qp = -phase.conj() * s;

    for k in 0..n {
        let akp = m[(k, p)];
        let akq = m[(k, q)];
        m[(k, p)] = akp * c + akq * r_qp;
        m[(k, q)] = akp * r_pq + akq * c;
    }
    for k in 0..n {
        let apk = m[(p, k)];
        let aqk = m[(q, k)];
        m[(p, k)] = apk * c + aqk * r_qp.conj();
        m[(q, k)] = apk * r_pq.conj() + aqk * c;
    }
    m[(p, q)] = Complex64::new(0.0, 0.0);
    m[(q, p)] = Complex64::new(0.0, 0.0);
    m[(p, p)].im = 0.0;
    m[(q, q)].im = 0.0;

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * c + vkq * r_qp;
        v[(k, q)] = vkp * r_pq + vkq * c;
    }
}

/// Joint diagonalization `R_yy = Q·diag(σ_y)·Q^H`, `R_nn = Q·diag(σ_n)·Q^H`,
/// ordered by descending `σ_y/σ_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PencilDecomposition {
    pub q: CMatrix,
    pub sigma_y: Vec<f64>,
    pub sigma_n: Vec<f64>,
    /// Cholesky factor of `R_nn`.
    chol: CMatrix,
}

impl PencilDecomposition {
    pub fn dim(&self) -> usize {
        self.sigma_y.len()
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.sigma_y
            .iter()
            .zip(&self.sigma_n)
            .map(|(y, n)| y / n)
            .collect()
    }

    /// `Q^{-H}`, evaluated as `R_nn^{-1}·Q·diag(σ_n)` through the stored factor.
    ///
    /// Stays exact if the columns of `q` are rephased after decomposition.
    pub fn q_inv_h(&self) -> CMatrix {
        let mut scaled = self.q.clone();
        for (c, s) in self.sigma_n.iter().enumerate() {
            scaled.column_mut(c).scale_mut(*s);
        }
        cholesky_solve(&self.chol, &scaled)
    }

    pub fn cholesky_factor(&self) -> &CMatrix {
        &self.chol
    }
}

/// Generalized eigendecomposition of `{r_yy, r_nn}` via Cholesky whitening.
///
/// With this normalization `σ_n ≡ 1`, `Q·Q^H = r_nn` and `σ_y` are the
/// eigenvalues of `L^{-1}·r_yy·L^{-H}`.
pub fn gevd(r_yy: &CMatrix, r_nn: &CMatrix) -> Result<PencilDecomposition> {
    if r_yy.shape() != r_nn.shape() {
        return Err(Error::Shape(format!(
            "pencil dimensions differ: {:?} vs {:?}",
            r_yy.shape(),
            r_nn.shape()
        )));
    }
    check_square_hermitian(r_yy)?;
    let l = cholesky(r_nn)?;
    let half = solve_lower(&l, r_yy);
    let whitened = hermitian_part(&solve_lower(&l, &half.adjoint()));
    let eig = hermitian_eig(&whitened)?;
    let q = &l * &eig.vectors;
    let n = eig.values.len();
    Ok(PencilDecomposition {
        q,
        sigma_y: eig.values,
        sigma_n: vec![1.0; n],
        chol: l,
    })
}
