//! Two-atom state space in the Dicke basis.
//!
//! Product states `|j>|k>` of atom 1 in level `j` and atom 2 in level `k` are
//! indexed `3(j-1) + (k-1)`. The Dicke basis orders its nine vectors as
//! `g, e2, e3, s12, a12, s13, a13, s23, a23` with
//! `|s_jk> = (|j>|k> + |k>|j>)/sqrt2` and `i|a_jk> = (|j>|k> - |k>|j>)/sqrt2`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::C64;

pub const DIM: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DickeState {
    G,
    E2,
    E3,
    S12,
    A12,
    S13,
    A13,
    S23,
    A23,
}

impl DickeState {
    pub const ALL: [DickeState; DIM] = [
        DickeState::G,
        DickeState::E2,
        DickeState::E3,
        DickeState::S12,
        DickeState::A12,
        DickeState::S13,
        DickeState::A13,
        DickeState::S23,
        DickeState::A23,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            DickeState::G => "g",
            DickeState::E2 => "e2",
            DickeState::E3 => "e3",
            DickeState::S12 => "s12",
            DickeState::A12 => "a12",
            DickeState::S13 => "s13",
            DickeState::A13 => "a13",
            DickeState::S23 => "s23",
            DickeState::A23 => "a23",
        }
    }

    pub fn subspace(self) -> Subspace {
        match self {
            DickeState::E2 => Subspace::Dark,
            DickeState::S12 | DickeState::A12 | DickeState::S23 | DickeState::A23 => {
                Subspace::Single
            }
            DickeState::G | DickeState::S13 | DickeState::A13 | DickeState::E3 => Subspace::Double,
        }
    }

    pub fn ket(self) -> StateVector {
        let mut amp = DVector::zeros(DIM);
        amp[self.index()] = C64::new(1.0, 0.0);
        StateVector::new(amp)
    }
}

impl fmt::Display for DickeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DickeState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DickeState::ALL
            .into_iter()
            .find(|d| d.label() == s)
            .ok_or_else(|| Error::domain(format!("unknown Dicke state label {s:?}")))
    }
}

/// The three sectors that decouple when the weak laser is off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subspace {
    /// `{e2}`: both atoms shelved.
    Dark = 0,
    /// `{s12, a12, s23, a23}`: one atom shelved.
    Single = 1,
    /// `{g, s13, a13, e3}`: both atoms on the strong transition.
    Double = 2,
}

impl Subspace {
    pub const ALL: [Subspace; 3] = [Subspace::Dark, Subspace::Single, Subspace::Double];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(k: usize) -> Result<Self> {
        Subspace::ALL
            .get(k)
            .copied()
            .ok_or_else(|| Error::domain(format!("subspace index must be 0, 1 or 2, got {k}")))
    }

    pub fn members(self) -> impl Iterator<Item = DickeState> {
        DickeState::ALL.into_iter().filter(move |d| d.subspace() == self)
    }

    pub fn projector(self) -> DMatrix<C64> {
        let mut p = DMatrix::zeros(DIM, DIM);
        for d in self.members() {
            p[(d.index(), d.index())] = C64::new(1.0, 0.0);
        }
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Atom {
    First,
    Second,
}

/// Levels of a single V system: ground 1, metastable 2, strongly decaying 3.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    One = 0,
    Two = 1,
    Three = 2,
}

/// Excited levels that have a lowering operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Excited {
    Two,
    Three,
}

impl From<Excited> for Level {
    fn from(e: Excited) -> Level {
        match e {
            Excited::Two => Level::Two,
            Excited::Three => Level::Three,
        }
    }
}

pub fn product_index(first: Level, second: Level) -> usize {
    3 * first as usize + second as usize
}

/// Unitary whose columns are the Dicke vectors written in the product basis.
pub fn dicke_basis() -> DMatrix<C64> {
    use Level::*;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut b = DMatrix::zeros(DIM, DIM);
    let mut set = |d: DickeState, j: Level, k: Level, c: C64| {
        b[(product_index(j, k), d.index())] += c;
    };
    let one = C64::new(1.0, 0.0);
    set(DickeState::G, One, One, one);
    set(DickeState::E2, Two, Two, one);
    set(DickeState::E3, Three, Three, one);
    for (sym, anti, j, k) in [
        (DickeState::S12, DickeState::A12, One, Two),
        (DickeState::S13, DickeState::A13, One, Three),
        (DickeState::S23, DickeState::A23, Two, Three),
    ] {
        set(sym, j, k, C64::new(s, 0.0));
        set(sym, k, j, C64::new(s, 0.0));
        // |a> = (|jk> - |kj>) / (i sqrt2)
        set(anti, j, k, C64::new(0.0, -s));
        set(anti, k, j, C64::new(0.0, s));
    }
    b
}

/// Conjugates a product-basis operator into the Dicke basis.
pub fn operator_to_dicke(op: &DMatrix<C64>) -> DMatrix<C64> {
    let b = dicke_basis();
    b.adjoint() * op * b
}

pub fn operator_to_product(op: &DMatrix<C64>) -> DMatrix<C64> {
    let b = dicke_basis();
    &b * op * b.adjoint()
}

/// Single-atom `|a><b|` on the three-level space.
pub(crate) fn single_atom_ket_bra(a: Level, b: Level) -> DMatrix<C64> {
    let mut m = DMatrix::zeros(3, 3);
    m[(a as usize, b as usize)] = C64::new(1.0, 0.0);
    m
}

/// Embeds a single-atom operator acting on `atom` into the two-atom product
/// space.
pub fn embed(atom: Atom, op: &DMatrix<C64>) -> DMatrix<C64> {
    let id = DMatrix::<C64>::identity(3, 3);
    match atom {
        Atom::First => op.kronecker(&id),
        Atom::Second => id.kronecker(op),
    }
}

/// `S_ij^- = |1>_i <j|` in the Dicke basis.
pub fn sigma_minus(atom: Atom, level: Excited) -> DMatrix<C64> {
    operator_to_dicke(&embed(atom, &single_atom_ket_bra(Level::One, level.into())))
}

pub fn sigma_plus(atom: Atom, level: Excited) -> DMatrix<C64> {
    sigma_minus(atom, level).adjoint()
}

/// Possibly unnormalized amplitude vector with a cached squared norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    amp: DVector<C64>,
    norm_sqr: f64,
}

impl StateVector {
    pub fn new(amp: DVector<C64>) -> Self {
        let norm_sqr = amp.norm_squared();
        StateVector { amp, norm_sqr }
    }

    pub fn from_slice(amp: &[C64]) -> Self {
        Self::new(DVector::from_column_slice(amp))
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amp
    }

    pub fn into_amplitudes(self) -> DVector<C64> {
        self.amp
    }

    pub fn dim(&self) -> usize {
        self.amp.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.norm_sqr
    }

    pub fn normalized(&self) -> Result<StateVector> {
        if !(self.norm_sqr > 0.0) {
            return Err(Error::domain("cannot normalize a zero-norm state"));
        }
        let amp = &self.amp * C64::new(1.0 / self.norm_sqr.sqrt(), 0.0);
        Ok(StateVector { amp, norm_sqr: 1.0 })
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.norm_sqr - 1.0).abs() <= tol
    }

    /// Projector `|psi><psi|` (unnormalized if the state is).
    pub fn outer(&self) -> DMatrix<C64> {
        &self.amp * self.amp.adjoint()
    }

    pub fn dump(&self) -> StateDump {
        let labels: Vec<String> = if self.dim() == DIM {
            DickeState::ALL.iter().map(|d| d.label().to_string()).collect()
        } else {
            (1..=self.dim()).map(|k| k.to_string()).collect()
        };
        StateDump {
            basis: labels,
            amplitudes: self.amp.iter().map(|c| (c.re, c.im)).collect(),
        }
    }
}

/// Serializable state: `(re, im)` pairs in fixed basis order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateDump {
    pub basis: Vec<String>,
    pub amplitudes: Vec<(f64, f64)>,
}

impl StateDump {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "re", "im"])?;
        for (label, (re, im)) in self.basis.iter().zip(&self.amplitudes) {
            w.write_record([label.clone(), re.to_string(), im.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Changes a product-ordered amplitude vector into the Dicke basis.
pub fn product_to_dicke(v: &DVector<C64>) -> Result<StateVector> {
    if v.len() != DIM {
        return Err(Error::domain(format!("expected {DIM} amplitudes, got {}", v.len())));
    }
    Ok(StateVector::new(dicke_basis().adjoint() * v))
}

pub fn dicke_to_product(psi: &StateVector) -> Result<DVector<C64>> {
    if psi.dim() != DIM {
        return Err(Error::domain(format!("expected {DIM} amplitudes, got {}", psi.dim())));
    }
    Ok(dicke_basis() * psi.amplitudes())
}

/// Probability of finding `psi` in `subspace`.
pub fn subspace_projection(psi: &StateVector, subspace: Subspace) -> Result<f64> {
    Ok(subspace_populations(psi)?[subspace.index()])
}

/// Normalized populations of the three sectors `(dark, single, double)`.
pub fn subspace_populations(psi: &StateVector) -> Result<[f64; 3]> {
    if psi.dim() != DIM {
        return Err(Error::domain(format!("expected {DIM} amplitudes, got {}", psi.dim())));
    }
    if !(psi.norm_sqr() > 0.0) {
        return Err(Error::domain("subspace projection of a zero-norm state"));
    }
    let mut p = [0.0; 3];
    for d in DickeState::ALL {
        p[d.subspace().index()] += psi.amplitudes()[d.index()].norm_sqr();
    }
    let total: f64 = p.iter().sum();
    Ok(p.map(|x| x / total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use DickeState::*;

    fn close(a: &DMatrix<C64>, b: &DMatrix<C64>, tol: f64) -> bool {
        (a - b).iter().all(|z| z.norm() <= tol)
    }

    #[test]
    fn basis_is_unitary() {
        let b = dicke_basis();
        assert!(close(&(b.adjoint() * &b), &DMatrix::identity(DIM, DIM), 1e-15));
    }

    #[test]
    fn collective_lowering_maps_e3_to_s13() {
        let r_plus = (sigma_minus(Atom::First, Excited::Three) + sigma_minus(Atom::Second, Excited::Three))
            / C64::new(2f64.sqrt(), 0.0);
        let out = &r_plus * E3.ket().amplitudes();
        assert!((out - S13.ket().amplitudes()).norm() < 1e-15);
    }

    #[test]
    fn lowering_annihilates_ground_and_is_nilpotent() {
        let s12 = sigma_minus(Atom::First, Excited::Two);
        assert!((&s12 * G.ket().amplitudes()).norm() < 1e-15);
        let s13 = sigma_minus(Atom::First, Excited::Three);
        assert!((&s13 * &s13).norm() < 1e-15);
    }

    #[test]
    fn raising_is_adjoint_of_lowering() {
        for atom in [Atom::First, Atom::Second] {
            for lvl in [Excited::Two, Excited::Three] {
                let m = sigma_minus(atom, lvl);
                let p = sigma_plus(atom, lvl);
                assert_eq!(m.adjoint(), p);
            }
        }
    }

    #[test]
    fn product_states_map_to_labels() {
        let mut v = DVector::zeros(DIM);
        v[product_index(Level::One, Level::One)] = C64::new(1.0, 0.0);
        let d = product_to_dicke(&v).unwrap();
        assert!((d.amplitudes() - G.ket().amplitudes()).norm() < 1e-15);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut v = DVector::zeros(DIM);
        v[product_index(Level::One, Level::Three)] = C64::new(s, 0.0);
        v[product_index(Level::Three, Level::One)] = C64::new(s, 0.0);
        let d = product_to_dicke(&v).unwrap();
        assert!((d.amplitudes() - S13.ket().amplitudes()).norm() < 1e-15);
    }

    #[test]
    fn antisymmetric_phase_convention() {
        // i|a12> = (|12> - |21>)/sqrt2
        let prod = dicke_to_product(&A12.ket()).unwrap() * C64::i();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((prod[product_index(Level::One, Level::Two)] - C64::new(s, 0.0)).norm() < 1e-15);
        assert!((prod[product_index(Level::Two, Level::One)] - C64::new(-s, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn subspace_examples() {
        let p = subspace_populations(&E2.ket()).unwrap();
        assert_eq!(p, [1.0, 0.0, 0.0]);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mix = StateVector::new(
            (G.ket().into_amplitudes() + E3.ket().into_amplitudes()) * C64::new(s, 0.0),
        );
        assert!((subspace_projection(&mix, Subspace::Double).unwrap() - 1.0).abs() < 1e-15);

        let flat = StateVector::new(DVector::from_element(DIM, C64::new(1.0, 0.0)));
        let p = subspace_populations(&flat).unwrap();
        assert!((p[0] - 1.0 / 9.0).abs() < 1e-15);
        assert!((p[1] - 4.0 / 9.0).abs() < 1e-15);
        assert!((p[2] - 4.0 / 9.0).abs() < 1e-15);

        let zero = StateVector::new(DVector::zeros(DIM));
        assert!(subspace_populations(&zero).is_err());
    }

    #[test]
    fn projectors_resolve_identity() {
        let sum = Subspace::ALL
            .iter()
            .fold(DMatrix::<C64>::zeros(DIM, DIM), |acc, s| acc + s.projector());
        assert_eq!(sum, DMatrix::identity(DIM, DIM));
    }

    #[test]
    fn labels_round_trip() {
        for d in DickeState::ALL {
            assert_eq!(d.label().parse::<DickeState>().unwrap(), d);
        }
        assert!("x".parse::<DickeState>().is_err());
    }
}
