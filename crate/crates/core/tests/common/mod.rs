#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use vshelving::hilbert::{StateVector, DIM};
use vshelving::C64;

pub fn random_density(rng: &mut impl Rng) -> DMatrix<C64> {
    let m = DMatrix::from_fn(DIM, DIM, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let rho = &m * m.adjoint();
    let tr = rho.trace();
    rho / tr
}

pub fn random_hermitian(rng: &mut impl Rng) -> DMatrix<C64> {
    let m = DMatrix::from_fn(DIM, DIM, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    (&m + m.adjoint()) * C64::new(0.5, 0.0)
}

pub fn random_state(rng: &mut impl Rng) -> StateVector {
    let v: Vec<C64> = (0..DIM)
        .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    StateVector::from_slice(&v).normalized().unwrap()
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}
