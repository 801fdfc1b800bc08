//! Master-equation reference for the trajectory engine: the vectorized
//! Liouvillian `L(rho) = -i(H rho - rho H^dagger) + R(rho)`, adaptive
//! integration, steady states and ensemble comparison.

use nalgebra::{DMatrix, DVector, SVD};
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{build_h_cond, build_single_atom_h_cond};
use crate::error::{Error, Result};
use crate::hilbert::{dicke_basis, DickeState, StateVector, Subspace};
use crate::linalg::eigenvalues;
use crate::model::{ModelParams, C64};
use crate::trajectory::{EmissionRecord, ResetChannels, TrajectoryEngine};

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-10;
const EIGEN_FLOOR: f64 = -1e-10;
/// Integration aborts when an eigenvalue falls below `-POSITIVITY_ABORT`.
pub const POSITIVITY_ABORT: f64 = 1e-8;
pub const STEADY_RESIDUAL: f64 = 1e-10;

/// Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(DMatrix<C64>);

impl DensityMatrix {
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::domain("density matrix must be square"));
        }
        let rho = DensityMatrix(m);
        let herm = rho.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::domain(format!("not Hermitian: deviation {herm:e}")));
        }
        let tr = rho.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::domain(format!("trace {tr} differs from 1")));
        }
        let min = rho.min_eigenvalue();
        if min < EIGEN_FLOOR {
            return Err(Error::domain(format!("negative eigenvalue {min:e}")));
        }
        Ok(rho)
    }

    /// Wraps `m` without checking; used for integrator output, whose
    /// invariants are monitored separately.
    pub fn new_unchecked(m: DMatrix<C64>) -> Self {
        DensityMatrix(m)
    }

    pub fn pure(psi: &StateVector) -> Result<Self> {
        DensityMatrix::new(psi.normalized()?.outer())
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.0 - self.0.adjoint()).camax()
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0);
        h.symmetric_eigenvalues().min()
    }

    pub fn population(&self, state: DickeState) -> f64 {
        self.0[(state.index(), state.index())].re
    }

    pub fn subspace_population(&self, subspace: Subspace) -> f64 {
        subspace.members().map(|d| self.population(d)).sum()
    }
}

/// The Lindblad generator as an explicit `n^2 x n^2` matrix acting on
/// column-major `vec(rho)`.
#[derive(Clone, Debug)]
pub struct Liouvillian {
    h: DMatrix<C64>,
    channels: ResetChannels,
    matrix: DMatrix<C64>,
}

impl Liouvillian {
    pub fn new(h: DMatrix<C64>, channels: ResetChannels) -> Result<Self> {
        let n = h.nrows();
        if !h.is_square() || channels.jumps().iter().any(|j| j.op.shape() != (n, n)) {
            return Err(Error::domain("Liouvillian operators must share one square shape"));
        }
        let id = DMatrix::<C64>::identity(n, n);
        let minus_i = C64::new(0.0, -1.0);
        // vec(A rho B) = (B^T kron A) vec(rho)
        let mut matrix = (id.kronecker(&h) - h.conjugate().kronecker(&id)) * minus_i;
        for j in channels.jumps() {
            matrix += j.op.conjugate().kronecker(&j.op) * C64::new(j.rate, 0.0);
        }
        Ok(Liouvillian { h, channels, matrix })
    }

    pub fn two_atom(params: &ModelParams) -> Result<Self> {
        Liouvillian::new(build_h_cond(params)?.matrix().clone(), ResetChannels::two_atom(params)?)
    }

    pub fn single_atom(params: &ModelParams) -> Result<Self> {
        Liouvillian::new(
            build_single_atom_h_cond(params)?.matrix().clone(),
            ResetChannels::single_atom(params)?,
        )
    }

    /// Same generator and reset channels the engine samples from.
    pub fn from_engine(engine: &TrajectoryEngine) -> Result<Self> {
        Liouvillian::new(engine.generator().matrix().clone(), engine.channels().clone())
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn channels(&self) -> &ResetChannels {
        &self.channels
    }

    pub fn apply(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let coherent = (&self.h * rho - rho * self.h.adjoint()) * C64::new(0.0, -1.0);
        coherent + self.channels.reset_density(rho)
    }

    /// Photon emission rate `tr R(rho)`.
    pub fn emission_rate(&self, rho: &DMatrix<C64>) -> f64 {
        self.channels.reset_density(rho).trace().re
    }

    pub fn eigenvalues(&self) -> Result<Vec<C64>> {
        Ok(eigenvalues(&self.matrix)?.iter().copied().collect())
    }

    /// Second-smallest `|Re lambda|`: the slowest relaxation rate.
    pub fn gap(&self) -> Result<f64> {
        let mut re: Vec<f64> = self.eigenvalues()?.iter().map(|z| z.re.abs()).collect();
        re.sort_by(f64::total_cmp);
        re.get(1)
            .copied()
            .ok_or_else(|| Error::domain("Liouvillian gap needs at least two eigenvalues"))
    }

    pub fn steady_state(&self, restriction: Option<&[usize]>) -> Result<DensityMatrix> {
        steady_state(self, restriction)
    }
}

/// Basis indices of a Dicke sector, for [`steady_state`] restrictions.
pub fn sector_indices(subspace: Subspace) -> Vec<usize> {
    subspace.members().map(|d| d.index()).collect()
}

/// Trace-one null vector of `L`, optionally restricted to operators
/// supported on the basis states in `restriction`.
pub fn steady_state(l: &Liouvillian, restriction: Option<&[usize]>) -> Result<DensityMatrix> {
    let n = l.dim();
    let support: Vec<usize> = match restriction {
        Some(idx) => {
            if idx.is_empty() || idx.iter().any(|&i| i >= n) {
                return Err(Error::domain("restriction indices out of range"));
            }
            idx.to_vec()
        }
        None => (0..n).collect(),
    };
    let m = support.len();
    let vec_index = |i: usize, j: usize| i + n * j;
    let pairs: Vec<(usize, usize)> = (0..m * m).map(|k| (support[k % m], support[k / m])).collect();
    let sub = DMatrix::from_fn(m * m, m * m, |r, c| {
        let (ri, rj) = pairs[r];
        let (ci, cj) = pairs[c];
        l.matrix[(vec_index(ri, rj), vec_index(ci, cj))]
    });

    let svd = SVD::try_new(sub, true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("SVD of the Liouvillian did not converge".into()))?;
    let sv = &svd.singular_values;
    let smax = sv.max();
    let zero: Vec<usize> = (0..sv.len()).filter(|&k| sv[k] <= 1e-9 * smax).collect();
    let null: DVector<C64> = match (zero.len(), restriction) {
        (0, _) => svd.v_t.as_ref().expect("requested").row(sv.imin()).adjoint(),
        (1, _) => svd.v_t.as_ref().expect("requested").row(zero[0]).adjoint(),
        (near_zero, None) => return Err(Error::DegenerateNullSpace { near_zero }),
        (_, Some(_)) => {
            // Several stationary states inside the sector: take the
            // long-time limit from the sector's maximally mixed state,
            // i.e. the spectral projection V (W V)^-1 W onto the kernel.
            let v_t = svd.v_t.as_ref().expect("requested");
            let u = svd.u.as_ref().expect("requested");
            let v = DMatrix::from_fn(m * m, zero.len(), |r, c| v_t[(zero[c], r)].conj());
            let w = DMatrix::from_fn(zero.len(), m * m, |r, c| u[(c, zero[r])].conj());
            let start = DVector::from_fn(m * m, |k, _| {
                let (i, j) = pairs[k];
                C64::new(if i == j { 1.0 / m as f64 } else { 0.0 }, 0.0)
            });
            let gram = (&w * &v)
                .try_inverse()
                .ok_or_else(|| Error::Numerical("defective Liouvillian kernel".into()))?;
            &v * (gram * (&w * start))
        }
    };

    let mut rho = DMatrix::<C64>::zeros(n, n);
    for (idx, &(i, j)) in pairs.iter().enumerate() {
        rho[(i, j)] = null[idx];
    }
    let tr = rho.trace();
    if tr.norm() < 1e-12 {
        return Err(Error::Numerical("steady-state null vector is traceless".into()));
    }
    rho /= tr;
    rho = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
    let residual = l.apply(&rho).norm();
    if residual > STEADY_RESIDUAL {
        return Err(Error::Numerical(format!("steady-state residual {residual:e}")));
    }
    DensityMatrix::new(rho)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorOptions {
    /// Local error tolerance, applied as both absolute and relative.
    pub tol: f64,
    pub initial_step: f64,
    pub min_step: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            tol: 1e-9,
            initial_step: 1e-3,
            min_step: 1e-12,
        }
    }
}

/// Densities at the requested times plus integrator diagnostics.
#[derive(Clone, Debug)]
pub struct DensityEvolution {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// Lowest eigenvalue seen over all accepted steps.
    pub min_eigenvalue: f64,
    pub max_trace_error: f64,
    pub steps: usize,
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `d rho/dt = L(rho)` to each of the sorted `times`.
pub fn evolve_density_grid(
    l: &Liouvillian,
    rho0: &DensityMatrix,
    times: &[f64],
    opts: IntegratorOptions,
) -> Result<DensityEvolution> {
    let n = l.dim();
    if rho0.dim() != n {
        return Err(Error::domain("initial density has the wrong dimension"));
    }
    if times.iter().any(|&t| !(t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("times must be sorted and non-negative"));
    }
    let f = |y: &DVector<C64>| &l.matrix * y;
    let mut y = DVector::from_column_slice(rho0.matrix().as_slice());
    let mut t = 0.0;
    let mut h = opts.initial_step;
    let mut k0 = f(&y);
    let mut out = DensityEvolution {
        times: times.to_vec(),
        states: Vec::with_capacity(times.len()),
        min_eigenvalue: rho0.min_eigenvalue(),
        max_trace_error: 0.0,
        steps: 0,
    };
    let as_matrix = |y: &DVector<C64>| DMatrix::from_column_slice(n, n, y.as_slice());

    for &target in times {
        while t < target {
            let step = h.min(target - t);
            let mut k: Vec<DVector<C64>> = Vec::with_capacity(7);
            k.push(k0.clone());
            for s in 1..7 {
                let mut ys = y.clone();
                for (r, kr) in k.iter().enumerate() {
                    if A[s][r] != 0.0 {
                        ys.axpy(C64::new(step * A[s][r], 0.0), kr, C64::new(1.0, 0.0));
                    }
                }
                debug_assert!(C[s] > 0.0);
                k.push(f(&ys));
            }
            let mut y_new = y.clone();
            for (r, kr) in k.iter().enumerate().take(6) {
                if A[6][r] != 0.0 {
                    y_new.axpy(C64::new(step * A[6][r], 0.0), kr, C64::new(1.0, 0.0));
                }
            }
            let mut err_sq = 0.0;
            for i in 0..y.len() {
                let mut e = C64::new(0.0, 0.0);
                for (r, kr) in k.iter().enumerate() {
                    e += kr[i] * E[r];
                }
                let scale = opts.tol + opts.tol * y[i].norm().max(y_new[i].norm());
                err_sq += (e * step).norm_sqr() / (scale * scale);
            }
            let err = (err_sq / y.len() as f64).sqrt();
            if err <= 1.0 {
                t += step;
                y = y_new;
                k0 = k.pop().expect("seven stages");
                out.steps += 1;
                let rho = DensityMatrix::new_unchecked(as_matrix(&y));
                let min = rho.min_eigenvalue();
                out.min_eigenvalue = out.min_eigenvalue.min(min);
                out.max_trace_error = out.max_trace_error.max((rho.trace() - 1.0).abs());
                if min < -POSITIVITY_ABORT {
                    return Err(Error::PositivityViolation { time: t, min_eigenvalue: min });
                }
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            // Do not let the shortened last step before an output time
            // shrink the proposal for the next interval.
            if err <= 1.0 && step < h {
                h = h.max(step * factor);
            } else {
                h = step * factor;
            }
            if h < opts.min_step {
                return Err(Error::Numerical(format!(
                    "step size underflow ({h:e}) at t = {t} with error estimate {err:e}"
                )));
            }
        }
        out.states.push(DensityMatrix::new_unchecked(as_matrix(&y)));
    }
    Ok(out)
}

pub fn evolve_density(l: &Liouvillian, rho0: &DensityMatrix, t: f64, opts: IntegratorOptions) -> Result<DensityMatrix> {
    let mut ev = evolve_density_grid(l, rho0, &[t], opts)?;
    Ok(ev.states.pop().expect("one requested time"))
}

/// Steady emission rate of one resonantly driven two-level atom (levels 1
/// and 3), from the single-atom oracle with the weak laser off.
pub fn two_level_rate(a3: f64, omega3: f64) -> Result<f64> {
    let params = ModelParams {
        a3,
        omega2: 0.0,
        omega3,
        ..Default::default()
    };
    let l = Liouvillian::single_atom(&params)?;
    if omega3 == 0.0 {
        return Ok(0.0);
    }
    let rho = l.steady_state(Some(&[0, 2]))?;
    Ok(l.emission_rate(rho.matrix()))
}

/// Two-atom density `rho_A(t) kron rho_A(t)` in the Dicke basis, with each
/// atom evolved by the single-atom oracle from its ground state.
pub fn independent_atoms_density(params: &ModelParams, times: &[f64]) -> Result<Vec<DensityMatrix>> {
    let l = Liouvillian::single_atom(params)?;
    let ground = StateVector::from_slice(&[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
    let ev = evolve_density_grid(&l, &DensityMatrix::pure(&ground)?, times, IntegratorOptions::default())?;
    let b = dicke_basis();
    Ok(ev
        .states
        .iter()
        .map(|r| DensityMatrix::new_unchecked(b.adjoint() * r.matrix().kronecker(r.matrix()) * &b))
        .collect())
}

/// Minimum ensemble size for which [`ensemble_check`] issues a verdict.
pub const MIN_ENSEMBLE: usize = 100;
pub const Z_LIMIT: f64 = 4.0;
/// Added in quadrature to the standard error so entries with no sampling
/// spread are compared against integrator accuracy.
pub const SIGMA_FLOOR: f64 = 1e-7;
/// Below this expected number of visiting trajectories an entry's variance
/// is taken from the reference bound instead of the sample.
pub const RARE_VISITS: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    InsufficientStatistics,
}

#[derive(Clone, Debug, Serialize)]
pub struct WorstEntry {
    pub time: f64,
    pub row: String,
    pub col: String,
    pub part: &'static str,
    pub deviation: f64,
    pub sigma: f64,
    pub z: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnsembleReport {
    pub trajectories: usize,
    pub times: Vec<f64>,
    pub max_deviation: f64,
    pub max_z: f64,
    pub worst: Option<WorstEntry>,
    /// `z[t][i][j]`: larger of the real and imaginary z-scores.
    pub z_scores: Vec<Vec<Vec<f64>>>,
    pub status: CheckStatus,
}

impl EnsembleReport {
    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }
}

/// Compares the trajectory average of `|psi><psi|` against the
/// master-equation solution started from the records' common initial state.
pub fn ensemble_check(
    records: &[EmissionRecord],
    engine: &TrajectoryEngine,
    times: &[f64],
) -> Result<EnsembleReport> {
    let first = records
        .first()
        .ok_or_else(|| Error::InsufficientData("no records".into()))?;
    let l = Liouvillian::from_engine(engine)?;
    let rho0 = DensityMatrix::pure(&first.initial.ket())?;
    let reference = evolve_density_grid(&l, &rho0, times, IntegratorOptions::default())?.states;
    ensemble_check_against(records, engine, times, &reference)
}

pub fn ensemble_check_against(
    records: &[EmissionRecord],
    engine: &TrajectoryEngine,
    times: &[f64],
    reference: &[DensityMatrix],
) -> Result<EnsembleReport> {
    let first = records
        .first()
        .ok_or_else(|| Error::InsufficientData("no records".into()))?;
    if reference.len() != times.len() {
        return Err(Error::domain("one reference density per time is required"));
    }
    for (k, r) in records.iter().enumerate() {
        if r.params != first.params || r.params != *engine.params() {
            return Err(Error::RecordMismatch(format!("record {k} has different parameters")));
        }
        if r.initial != first.initial {
            return Err(Error::RecordMismatch(format!("record {k} has a different initial state")));
        }
        if let Some(&t) = times.last() {
            if t > r.duration {
                return Err(Error::RecordMismatch(format!(
                    "record {k} ends at {} before grid time {t}",
                    r.duration
                )));
            }
        }
    }
    let replayed: Vec<Vec<StateVector>> = records
        .par_iter()
        .map(|r| r.replay(engine, times))
        .collect::<Result<_>>()?;

    let n = engine.generator().dim();
    let nt = times.len();
    let count = records.len() as f64;
    let mut sum = vec![[0.0f64; 2]; nt * n * n];
    let mut sum_sq = vec![[0.0f64; 2]; nt * n * n];
    for states in &replayed {
        for (ti, psi) in states.iter().enumerate() {
            let a = psi.amplitudes();
            for i in 0..n {
                for j in 0..n {
                    let z = a[i] * a[j].conj();
                    let slot = (ti * n + i) * n + j;
                    sum[slot][0] += z.re;
                    sum[slot][1] += z.im;
                    sum_sq[slot][0] += z.re * z.re;
                    sum_sq[slot][1] += z.im * z.im;
                }
            }
        }
    }

    let mut report = EnsembleReport {
        trajectories: records.len(),
        times: times.to_vec(),
        max_deviation: 0.0,
        max_z: 0.0,
        worst: None,
        z_scores: vec![vec![vec![0.0; n]; n]; nt],
        status: CheckStatus::Pass,
    };
    for ti in 0..nt {
        let exact = reference[ti].matrix();
        for i in 0..n {
            for j in 0..n {
                let slot = (ti * n + i) * n + j;
                for (part, target) in [("re", exact[(i, j)].re), ("im", exact[(i, j)].im)] {
                    let p = usize::from(part == "im");
                    let mean = sum[slot][p] / count;
                    let sample_var = (sum_sq[slot][p] / count - mean * mean).max(0.0) * count / (count - 1.0).max(1.0);
                    // |rho_ij| <= sqrt(rho_ii rho_jj) per trajectory bounds the
                    // variance by min(rho_ii, rho_jj); used when too few
                    // trajectories visit the entry for the sample variance.
                    let bound = exact[(i, i)].re.min(exact[(j, j)].re).max(0.0);
                    let var = if count * bound < RARE_VISITS { sample_var.max(bound) } else { sample_var };
                    let sigma = (var / count + SIGMA_FLOOR * SIGMA_FLOOR).sqrt();
                    let deviation = (mean - target).abs();
                    let z = deviation / sigma;
                    report.max_deviation = report.max_deviation.max(deviation);
                    let cell = &mut report.z_scores[ti][i][j];
                    *cell = cell.max(z);
                    if z > report.max_z {
                        report.max_z = z;
                        report.worst = Some(WorstEntry {
                            time: times[ti],
                            row: label(i, n),
                            col: label(j, n),
                            part,
                            deviation,
                            sigma,
                            z,
                        });
                    }
                }
            }
        }
    }
    report.status = if records.len() < MIN_ENSEMBLE {
        CheckStatus::InsufficientStatistics
    } else if report.max_z <= Z_LIMIT {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    };
    Ok(report)
}

fn label(i: usize, n: usize) -> String {
    if n == DickeState::ALL.len() {
        DickeState::ALL[i].label().to_string()
    } else {
        format!("{}", i + 1)
    }
}
