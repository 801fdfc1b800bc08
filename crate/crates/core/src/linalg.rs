//! Dense complex eigendecomposition and matrix exponential for the small
//! generators used throughout the crate.

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::C64;

/// `m = V diag(values) V^{-1}` with unit-norm columns in `V`.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub values: DVector<C64>,
    pub vectors: DMatrix<C64>,
    pub inverse: DMatrix<C64>,
    /// Frobenius-norm condition number of `vectors`.
    pub condition: f64,
}

pub fn schur(m: &DMatrix<C64>) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .map(Schur::unpack)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))
}

pub fn eigenvalues(m: &DMatrix<C64>) -> Result<DVector<C64>> {
    let (_, t) = schur(m)?;
    Ok(t.diagonal())
}

/// Eigenvectors are obtained by back substitution on the triangular Schur
/// factor. Exactly degenerate eigenvalues with a defective block produce a
/// nearly singular eigenvector matrix, which shows up in `condition`.
pub fn eigen_decompose(m: &DMatrix<C64>) -> Result<EigenDecomposition> {
    let n = m.nrows();
    let (q, t) = schur(m)?;
    let scale = t.norm().max(f64::MIN_POSITIVE);
    let small = f64::EPSILON * scale;

    let mut y = DMatrix::<C64>::zeros(n, n);
    for k in 0..n {
        let lambda = t[(k, k)];
        y[(k, k)] = C64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let mut rhs = C64::new(0.0, 0.0);
            for l in j + 1..=k {
                rhs -= t[(j, l)] * y[(l, k)];
            }
            let mut den = t[(j, j)] - lambda;
            if den.norm() < small {
                if rhs.norm() == 0.0 {
                    continue;
                }
                den = C64::new(small, 0.0);
            }
            y[(j, k)] = rhs / den;
        }
    }

    let mut vectors = q * y;
    for mut col in vectors.column_iter_mut() {
        let nrm = col.norm();
        col /= C64::new(nrm, 0.0);
    }
    let inverse = vectors
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("eigenvector matrix is singular".into()))?;
    let condition = vectors.norm() * inverse.norm();
    Ok(EigenDecomposition {
        values: t.diagonal(),
        vectors,
        inverse,
        condition,
    })
}

/// Padé scaling-and-squaring exponential.
pub fn expm(m: &DMatrix<C64>) -> DMatrix<C64> {
    m.exp()
}
