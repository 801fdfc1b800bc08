//! Conditional (no-emission) dynamics.
//!
//! Between photon emissions a state evolves with `U(t) = exp(-i H t)`, where
//! `H = H_L - (i/2) Gamma` is the non-Hermitian conditional Hamiltonian. The
//! squared norm of the evolved state is the probability `P0(t)` of seeing no
//! photon up to `t`, and `w1(t) = -dP0/dt = <psi(t)| Gamma |psi(t)>` is the
//! waiting-time density of the next emission.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{DickeState, StateVector, DIM};
use crate::linalg::{self, EigenDecomposition};
use crate::model::{ModelParams, C64};

/// Distances below this are rejected by the trajectory engine: the level
/// shift `Im C3` diverges like `kr^-3`.
pub const MIN_KR: f64 = 0.1;

/// Above this eigenvector condition number the spectral route is abandoned in
/// favour of the scaled-squaring exponential.
pub const CONDITION_LIMIT: f64 = 1e8;

/// Largest generator dimension handled by the stack-allocated hot loops.
pub const MAX_DIM: usize = DIM;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagationMethod {
    Spectral,
    ScaledSquaring,
}

/// `H_cond` together with its decay operator and spectral cache.
#[derive(Clone, Debug)]
pub struct ConditionalGenerator {
    h: DMatrix<C64>,
    decay: DMatrix<C64>,
    decay_diag: Option<Vec<f64>>,
    spectral: Option<EigenDecomposition>,
    condition: f64,
}

impl ConditionalGenerator {
    pub fn new(h: DMatrix<C64>) -> Result<Self> {
        let n = h.nrows();
        if n == 0 || n != h.ncols() || n > MAX_DIM {
            return Err(Error::domain(format!("generator must be square with dim <= {MAX_DIM}")));
        }
        // Gamma = i (H - H^dagger)
        let decay = (&h - h.adjoint()) * C64::i();
        let is_diag = decay
            .iter()
            .enumerate()
            .all(|(k, z)| k % (n + 1) == 0 || z.norm() == 0.0);
        let decay_diag = is_diag.then(|| (0..n).map(|k| decay[(k, k)].re).collect());

        let (spectral, condition) = match linalg::eigen_decompose(&h) {
            Ok(e) if e.condition <= CONDITION_LIMIT => {
                let c = e.condition;
                (Some(e), c)
            }
            Ok(e) => {
                log::warn!(
                    "eigenvector condition number {:e} exceeds {:e}; using scaled squaring",
                    e.condition,
                    CONDITION_LIMIT
                );
                (None, e.condition)
            }
            Err(err) => {
                log::warn!("spectral decomposition failed ({err}); using scaled squaring");
                (None, f64::INFINITY)
            }
        };
        Ok(ConditionalGenerator {
            h,
            decay,
            decay_diag,
            spectral,
            condition,
        })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.h
    }

    /// The Hermitian decay operator `Gamma = i (H - H^dagger)`.
    pub fn decay_operator(&self) -> &DMatrix<C64> {
        &self.decay
    }

    pub fn is_diagonalizable(&self) -> bool {
        self.spectral.is_some()
    }

    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    pub fn eigenvalues(&self) -> Result<Vec<C64>> {
        match &self.spectral {
            Some(e) => Ok(e.values.iter().copied().collect()),
            None => Ok(linalg::eigenvalues(&self.h)?.iter().copied().collect()),
        }
    }

    /// Default propagator: spectral when the cache is usable.
    pub fn propagator(&self) -> Propagator<'_> {
        let method = if self.spectral.is_some() {
            PropagationMethod::Spectral
        } else {
            PropagationMethod::ScaledSquaring
        };
        Propagator { gen: self, method }
    }

    pub fn propagator_with(&self, method: PropagationMethod) -> Result<Propagator<'_>> {
        if method == PropagationMethod::Spectral && self.spectral.is_none() {
            return Err(Error::Numerical("generator has no usable spectral decomposition".into()));
        }
        Ok(Propagator { gen: self, method })
    }

    pub fn evolution(&self, psi: &StateVector) -> Result<ConditionalEvolution<'_>> {
        self.propagator().evolution(psi)
    }

    /// `U_cond(t) |psi>`, not renormalized.
    pub fn propagate(&self, psi: &StateVector, t: f64) -> Result<StateVector> {
        check_time(t)?;
        self.evolution(psi)?.state_at(t)
    }

    /// `P0(t) = ||U_cond(t) psi||^2`.
    pub fn no_photon_probability(&self, psi: &StateVector, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.evolution(psi)?.survival(t))
    }

    /// `w1(t) = -dP0/dt`.
    pub fn waiting_time_density(&self, psi: &StateVector, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.evolution(psi)?.density(t))
    }

    /// Instantaneous emission rate `<psi|Gamma|psi>` of an unnormalized state.
    pub fn emission_rate(&self, amp: &[C64]) -> f64 {
        match &self.decay_diag {
            Some(d) => amp.iter().zip(d).map(|(a, g)| g * a.norm_sqr()).sum(),
            None => {
                let v = DVector::from_column_slice(amp);
                v.dotc(&(&self.decay * &v)).re
            }
        }
    }

    pub fn dump(&self) -> Result<GeneratorDump> {
        let n = self.dim();
        let basis = if n == DIM {
            DickeState::ALL.iter().map(|d| d.label().to_string()).collect()
        } else {
            (1..=n).map(|k| k.to_string()).collect()
        };
        Ok(GeneratorDump {
            basis,
            h_re: (0..n).map(|i| (0..n).map(|j| self.h[(i, j)].re).collect()).collect(),
            h_im: (0..n).map(|i| (0..n).map(|j| self.h[(i, j)].im).collect()).collect(),
            eigenvalues: self.eigenvalues()?.iter().map(|z| (z.re, z.im)).collect(),
            condition_number: self.condition,
            method: self.propagator().method(),
        })
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("propagation time must be finite and >= 0, got {t}")))
    }
}

/// JSON debug dump of `H_cond` and its spectrum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorDump {
    pub basis: Vec<String>,
    pub h_re: Vec<Vec<f64>>,
    pub h_im: Vec<Vec<f64>>,
    pub eigenvalues: Vec<(f64, f64)>,
    pub condition_number: f64,
    pub method: PropagationMethod,
}

#[derive(Clone, Copy, Debug)]
pub struct Propagator<'a> {
    gen: &'a ConditionalGenerator,
    method: PropagationMethod,
}

impl<'a> Propagator<'a> {
    pub fn method(&self) -> PropagationMethod {
        self.method
    }

    /// The full matrix `U_cond(t)`.
    pub fn matrix(&self, t: f64) -> Result<DMatrix<C64>> {
        check_time(t)?;
        match (self.method, &self.gen.spectral) {
            (PropagationMethod::Spectral, Some(e)) => {
                let phases = e.values.map(|l| (-C64::i() * l * t).exp());
                Ok(&e.vectors * DMatrix::from_diagonal(&phases) * &e.inverse)
            }
            _ => Ok(linalg::expm(&(&self.gen.h * (-C64::i() * t)))),
        }
    }

    pub fn apply(&self, psi: &StateVector, t: f64) -> Result<StateVector> {
        check_time(t)?;
        self.evolution(psi)?.state_at(t)
    }

    pub fn evolution(&self, psi: &StateVector) -> Result<ConditionalEvolution<'a>> {
        let n = self.gen.dim();
        if psi.dim() != n {
            return Err(Error::domain(format!(
                "state has dimension {}, generator {}",
                psi.dim(),
                n
            )));
        }
        let mut coeffs = [C64::new(0.0, 0.0); MAX_DIM];
        if let (PropagationMethod::Spectral, Some(e)) = (self.method, &self.gen.spectral) {
            let c = &e.inverse * psi.amplitudes();
            coeffs[..n].copy_from_slice(c.as_slice());
        }
        Ok(ConditionalEvolution {
            gen: self.gen,
            method: self.method,
            initial: psi.amplitudes().clone(),
            coeffs,
        })
    }
}

/// Conditional evolution of one initial state, with the eigen-amplitudes
/// precomputed so that `P0(t)` and `w1(t)` cost `O(n^2)` per evaluation.
#[derive(Clone, Debug)]
pub struct ConditionalEvolution<'a> {
    gen: &'a ConditionalGenerator,
    method: PropagationMethod,
    initial: DVector<C64>,
    coeffs: [C64; MAX_DIM],
}

impl ConditionalEvolution<'_> {
    pub fn generator(&self) -> &ConditionalGenerator {
        self.gen
    }

    /// Writes the amplitudes of `U_cond(t) psi` into `out[..dim]`.
    pub fn amplitudes_into(&self, t: f64, out: &mut [C64; MAX_DIM]) {
        let n = self.gen.dim();
        match (self.method, &self.gen.spectral) {
            (PropagationMethod::Spectral, Some(e)) => {
                out[..n].fill(C64::new(0.0, 0.0));
                let v = e.vectors.as_slice();
                for m in 0..n {
                    let c = self.coeffs[m];
                    if c.re == 0.0 && c.im == 0.0 {
                        continue;
                    }
                    let lambda = e.values[m];
                    let mag = (lambda.im * t).exp();
                    if mag == 0.0 {
                        continue;
                    }
                    let (s, co) = (lambda.re * t).sin_cos();
                    let z = c * C64::new(mag * co, -mag * s);
                    let col = &v[m * n..(m + 1) * n];
                    for (o, vi) in out[..n].iter_mut().zip(col) {
                        *o += z * vi;
                    }
                }
            }
            _ => {
                let u = linalg::expm(&(&self.gen.h * (-C64::i() * t)));
                let phi = u * &self.initial;
                out[..n].copy_from_slice(phi.as_slice());
            }
        }
    }

    pub fn state_at(&self, t: f64) -> Result<StateVector> {
        check_time(t)?;
        let mut buf = [C64::new(0.0, 0.0); MAX_DIM];
        self.amplitudes_into(t, &mut buf);
        Ok(StateVector::from_slice(&buf[..self.gen.dim()]))
    }

    /// `P0(t)`.
    pub fn survival(&self, t: f64) -> f64 {
        let mut buf = [C64::new(0.0, 0.0); MAX_DIM];
        self.amplitudes_into(t, &mut buf);
        buf[..self.gen.dim()].iter().map(|z| z.norm_sqr()).sum()
    }

    /// `w1(t)`.
    pub fn density(&self, t: f64) -> f64 {
        let mut buf = [C64::new(0.0, 0.0); MAX_DIM];
        self.amplitudes_into(t, &mut buf);
        self.gen.emission_rate(&buf[..self.gen.dim()])
    }

    /// `(P0(t), w1(t))` from a single propagation.
    pub fn survival_and_density(&self, t: f64) -> (f64, f64) {
        let mut buf = [C64::new(0.0, 0.0); MAX_DIM];
        self.amplitudes_into(t, &mut buf);
        let amp = &buf[..self.gen.dim()];
        (amp.iter().map(|z| z.norm_sqr()).sum(), self.gen.emission_rate(amp))
    }
}

/// Adds `v/2 (|a><b| + |b><a|)` to a Hermitian laser matrix.
fn couple(h: &mut DMatrix<C64>, a: DickeState, b: DickeState, v: f64) {
    h[(a.index(), b.index())] += C64::new(0.5 * v, 0.0);
    h[(b.index(), a.index())] += C64::new(0.5 * v, 0.0);
}

/// Two-atom conditional Hamiltonian in the Dicke basis.
pub fn h_cond_matrix(params: &ModelParams, c3: C64) -> DMatrix<C64> {
    use DickeState::*;
    let a3 = C64::new(params.a3, 0.0);
    let mut h = DMatrix::<C64>::zeros(DIM, DIM);
    let dissipative = [
        (S23, a3),
        (A23, a3),
        (S13, a3 + c3),
        (A13, a3 - c3),
        (E3, 2.0 * a3),
    ];
    for (d, rate) in dissipative {
        h[(d.index(), d.index())] = -0.5 * C64::i() * rate;
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    let (o2, o3) = (params.omega2, params.omega3);
    couple(&mut h, G, S12, sqrt2 * o2);
    couple(&mut h, S12, E2, sqrt2 * o2);
    couple(&mut h, G, S13, sqrt2 * o3);
    couple(&mut h, S13, E3, sqrt2 * o3);
    couple(&mut h, S13, S23, o2);
    couple(&mut h, A13, A23, o2);
    couple(&mut h, S12, S23, o3);
    couple(&mut h, A12, A23, -o3);
    h
}

pub(crate) fn check_engine_params(params: &ModelParams) -> Result<C64> {
    params.validate()?;
    if params.a2 != 0.0 {
        return Err(Error::InvalidParams(
            "a2 > 0 is not supported: the reset operation exists only for the strong transition"
                .into(),
        ));
    }
    if params.include_c3 && params.kr < MIN_KR {
        return Err(Error::InvalidParams(format!(
            "kr = {} is below {MIN_KR}: level shifts diverge",
            params.kr
        )));
    }
    for w in params.regime_warnings() {
        log::warn!("{w}");
    }
    let c3 = params.c3()?;
    if c3.re.abs() > params.a3 {
        return Err(Error::InvalidParams(format!(
            "|Re C3| = {} exceeds a3: negative collective decay rate",
            c3.re.abs()
        )));
    }
    Ok(c3)
}

pub fn build_h_cond(params: &ModelParams) -> Result<ConditionalGenerator> {
    let c3 = check_engine_params(params)?;
    ConditionalGenerator::new(h_cond_matrix(params, c3))
}

/// Single V-system conditional Hamiltonian over levels `(1, 2, 3)`.
pub fn single_atom_h_cond_matrix(params: &ModelParams) -> DMatrix<C64> {
    let mut h = DMatrix::<C64>::zeros(3, 3);
    h[(2, 2)] = -0.5 * C64::i() * params.a3;
    h[(0, 1)] = C64::new(0.5 * params.omega2, 0.0);
    h[(1, 0)] = h[(0, 1)];
    h[(0, 2)] = C64::new(0.5 * params.omega3, 0.0);
    h[(2, 0)] = h[(0, 2)];
    h
}

pub fn build_single_atom_h_cond(params: &ModelParams) -> Result<ConditionalGenerator> {
    params.validate()?;
    ConditionalGenerator::new(single_atom_h_cond_matrix(params))
}
