#![allow(dead_code)]

use bpca_core::cavi::VariationalState;
use bpca_core::model::{DataMatrix, Hyper, Provenance};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal_matrix<R: Rng>(rng: &mut R, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
}

/// SPD matrix with eigenvalues in roughly [lo, lo + spread].
pub fn spd<R: Rng>(rng: &mut R, k: usize, lo: f64, spread: f64) -> DMatrix<f64> {
    let m = normal_matrix(rng, k, k, 1.0);
    let q = m.qr().q();
    let diag: Vec<f64> = (0..k).map(|_| lo + spread * rng.random::<f64>()).collect();
    let s = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag)) * q.transpose();
    (&s + s.transpose()) * 0.5
}

pub fn random_state<R: Rng>(rng: &mut R, n: usize, d: usize, k: usize) -> VariationalState {
    VariationalState::new(
        normal_matrix(rng, d, k, 1.0),
        spd(rng, k, 0.2, 2.0),
        normal_matrix(rng, n, k, 1.0),
        spd(rng, k, 0.2, 2.0),
    )
    .unwrap()
}

pub fn random_data<R: Rng>(rng: &mut R, n: usize, d: usize) -> DataMatrix {
    DataMatrix::new(normal_matrix(rng, n, d, 1.0), Provenance::Loaded { path: "<random>".into() }).unwrap()
}

pub fn random_hyper<R: Rng>(rng: &mut R, n: usize, d: usize, k: usize) -> Hyper {
    let lambda = (0..k).map(|_| 0.5 + 2.0 * rng.random::<f64>()).collect();
    Hyper::new(n, d, k, 0.5 + 20.0 * rng.random::<f64>(), lambda).unwrap()
}

/// Uniformly random orthogonal matrix, reflections included.
pub fn random_orthogonal<R: Rng>(rng: &mut R, k: usize) -> DMatrix<f64> {
    let qr = normal_matrix(rng, k, k, 1.0).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            let c = -q.column(j);
            q.set_column(j, &c);
        }
    }
    q
}
