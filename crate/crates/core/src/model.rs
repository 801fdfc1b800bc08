//! Physical parameters of the two-atom V system and the dipole-dipole
//! coupling constant.
//!
//! Units: hbar = 1 and every rate is expressed in units of the strong-line
//! Einstein coefficient, so times are in units of `1/A3`.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Configuration of two identical V-system atoms driven on both transitions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Einstein coefficient of the strong 1-3 transition.
    pub a3: f64,
    /// Einstein coefficient of the metastable level 2. Only `0` is simulated.
    pub a2: f64,
    /// Rabi frequency of the weak 1-2 laser.
    pub omega2: f64,
    /// Rabi frequency of the strong 1-3 laser.
    pub omega3: f64,
    /// Interatomic distance times the wavenumber of the strong transition.
    pub kr: f64,
    /// Angle between the 1-3 dipole moment and the interatomic axis.
    pub theta3: f64,
    /// When false the atoms do not interact (C3 = 0).
    pub include_c3: bool,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            a3: 1.0,
            a2: 0.0,
            omega2: 0.01,
            omega3: 0.5,
            kr: 10.0,
            theta3: FRAC_PI_2,
            include_c3: true,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.a3 > 0.0 && self.a3.is_finite()) {
            return bad(format!("a3 must be positive, got {}", self.a3));
        }
        if !(self.a2 >= 0.0) {
            return bad(format!("a2 must be non-negative, got {}", self.a2));
        }
        if !(self.omega2 >= 0.0 && self.omega2.is_finite()) {
            return bad(format!("omega2 must be non-negative, got {}", self.omega2));
        }
        if !(self.omega3 >= 0.0 && self.omega3.is_finite()) {
            return bad(format!("omega3 must be non-negative, got {}", self.omega3));
        }
        if !(self.kr > 0.0 && self.kr.is_finite()) {
            return bad(format!("kr must be positive, got {}", self.kr));
        }
        if !(0.0..=FRAC_PI_2 + 1e-12).contains(&self.theta3) {
            return bad(format!("theta3 must lie in [0, pi/2], got {}", self.theta3));
        }
        Ok(())
    }

    /// Human-readable notes for parameters outside the shelving regime
    /// `omega2 << omega3`, `omega2 << omega3^2/a3`, `a2 ~ 0`.
    pub fn regime_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.omega2 > 0.1 * self.omega3 {
            out.push(format!(
                "omega2 = {} is not small compared to omega3 = {}",
                self.omega2, self.omega3
            ));
        }
        if self.omega2 > 0.1 * self.omega3 * self.omega3 / self.a3 {
            out.push(format!(
                "omega2 = {} is not small compared to omega3^2/a3 = {}",
                self.omega2,
                self.omega3 * self.omega3 / self.a3
            ));
        }
        if self.a2 > 0.0 {
            out.push(format!("a2 = {} is neglected by the model", self.a2));
        }
        out
    }

    pub fn with_kr(mut self, kr: f64) -> Self {
        self.kr = kr;
        self
    }

    /// Coupling constant C3 entering the conditional Hamiltonian; zero for the
    /// noninteracting reference model.
    pub fn c3(&self) -> Result<C64> {
        if self.include_c3 {
            coupling_constant(self.kr, self.theta3, self.a3)
        } else {
            Ok(C64::new(0.0, 0.0))
        }
    }

    /// `key=value` pairs for metadata headers.
    pub fn metadata(&self) -> Vec<(&'static str, String)> {
        vec![
            ("a3", self.a3.to_string()),
            ("a2", self.a2.to_string()),
            ("omega2", self.omega2.to_string()),
            ("omega3", self.omega3.to_string()),
            ("kr", self.kr.to_string()),
            ("theta3", self.theta3.to_string()),
            ("include_c3", self.include_c3.to_string()),
        ]
    }

    pub(crate) fn set_metadata(&mut self, key: &str, value: &str) -> Result<bool> {
        let num = || {
            value
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("{key}={value}: {e}")))
        };
        match key {
            "a3" => self.a3 = num()?,
            "a2" => self.a2 = num()?,
            "omega2" => self.omega2 = num()?,
            "omega3" => self.omega3 = num()?,
            "kr" => self.kr = num()?,
            "theta3" => self.theta3 = num()?,
            "include_c3" => {
                self.include_c3 = value
                    .parse()
                    .map_err(|e| Error::Config(format!("{key}={value}: {e}")))?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Dipole-dipole coupling constant for transition wavenumber times distance
/// `kr`, dipole angle `theta` and Einstein coefficient `a`:
///
/// ```text
/// C = (3a/2) e^{i kr} [ (1 - cos^2) / (i kr) + (1/kr^2 - 1/(i kr^3)) (1 - 3 cos^2) ]
/// ```
pub fn coupling_constant(kr: f64, theta: f64, a: f64) -> Result<C64> {
    if !(kr > 0.0) || !kr.is_finite() {
        return Err(Error::domain(format!("coupling constant needs kr > 0, got {kr}")));
    }
    let i = C64::i();
    let cos2 = theta.cos().powi(2);
    let x = C64::new(kr, 0.0);
    let bracket = (1.0 - cos2) / (i * x) + (1.0 / (x * x) - 1.0 / (i * x * x * x)) * (1.0 - 3.0 * cos2);
    Ok(1.5 * a * (i * kr).exp() * bracket)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    pub kr: f64,
    pub re_c_over_a: f64,
    pub im_c_over_a: f64,
}

/// Tabulates `C/A` on a strictly increasing grid of positive distances.
pub fn coupling_curve(kr_grid: &[f64], theta: f64) -> Result<Vec<CouplingRow>> {
    if kr_grid.is_empty() {
        return Err(Error::domain("coupling curve needs a non-empty grid"));
    }
    if kr_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("coupling curve grid must be strictly increasing"));
    }
    kr_grid
        .iter()
        .map(|&kr| {
            let c = coupling_constant(kr, theta, 1.0)?;
            Ok(CouplingRow {
                kr,
                re_c_over_a: c.re,
                im_c_over_a: c.im,
            })
        })
        .collect()
}

/// Zeros of `Re C(kr, theta)` in `[lo, hi]`, bracketed on a grid of spacing
/// `step` and refined by bisection to machine precision.
pub fn coupling_real_zeros(theta: f64, lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && step > 0.0) {
        return Err(Error::domain("need 0 < lo < hi and step > 0"));
    }
    let re = |x: f64| coupling_constant(x, theta, 1.0).map(|c| c.re);
    let n = ((hi - lo) / step).ceil() as usize;
    let mut zeros = Vec::new();
    let mut a = lo;
    let mut fa = re(a)?;
    for k in 1..=n {
        let b = (lo + k as f64 * step).min(hi);
        let fb = re(b)?;
        if fa == 0.0 {
            zeros.push(a);
        } else if fa.signum() != fb.signum() && fb != 0.0 {
            let (mut x0, mut x1, mut f0) = (a, b, fa);
            while x1 - x0 > 4.0 * f64::EPSILON * x1 {
                let mid = 0.5 * (x0 + x1);
                let fm = re(mid)?;
                if fm == 0.0 {
                    x0 = mid;
                    x1 = mid;
                    break;
                }
                if fm.signum() == f0.signum() {
                    x0 = mid;
                    f0 = fm;
                } else {
                    x1 = mid;
                }
            }
            zeros.push(0.5 * (x0 + x1));
        }
        a = b;
        fa = fb;
    }
    if fa == 0.0 {
        zeros.push(a);
    }
    Ok(zeros)
}

pub fn write_coupling_csv<W: Write>(rows: &[CouplingRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kr", "re_c_over_a", "im_c_over_a"])?;
    for r in rows {
        w.write_record([
            r.kr.to_string(),
            r.re_c_over_a.to_string(),
            r.im_c_over_a.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
