#![allow(dead_code)]

use egomwf::gevd::{CMatrix, CVector};
use num_complex::Complex64;
use rand::Rng;

pub fn c(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

pub fn herm(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()) * c(0.5)
}

pub fn random_pd(rng: &mut impl Rng, n: usize) -> CMatrix {
    let b = random_matrix(rng, n, n);
    herm(&(&b * b.adjoint() + CMatrix::identity(n, n) * c(0.1)))
}

pub fn random_hermitian(rng: &mut impl Rng, n: usize) -> CMatrix {
    herm(&random_matrix(rng, n, n))
}

/// Noise covariance plus a rank-1 speech term.
pub fn speech_pencil(rng: &mut impl Rng, m: usize) -> (CMatrix, CMatrix) {
    let rnn = random_pd(rng, m);
    let a = random_matrix(rng, m, 1);
    let ryy = herm(&(&rnn + &a * a.adjoint() * c(rng.gen_range(0.5..5.0))));
    (ryy, rnn)
}

pub fn fro(a: &CMatrix) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn diag(v: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_iterator(v.len(), v.iter().map(|x| c(*x))))
}

pub fn unit(m: usize, i: usize) -> CVector {
    let mut e = CVector::zeros(m);
    e[i] = c(1.0);
    e
}

/// Eigenvalues of a Hermitian matrix, ascending, from nalgebra's solver.
pub fn hermitian_eigenvalues(a: &CMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}
