//! Small descriptive and test statistics used by the analysis and the
//! acceptance checks.

use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> Option<f64> {
    (!x.is_empty()).then(|| x.iter().sum::<f64>() / x.len() as f64)
}

/// Sample standard deviation (`n - 1` denominator).
pub fn sample_std(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let m = mean(x)?;
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    Some((ss / (x.len() - 1) as f64).sqrt())
}

pub fn standard_error(x: &[f64]) -> Option<f64> {
    Some(sample_std(x)? / (x.len() as f64).sqrt())
}

/// `(x - mean) / std`.
pub fn standardize(x: &[f64]) -> Result<Vec<f64>> {
    let (m, s) = mean(x)
        .zip(sample_std(x))
        .ok_or_else(|| Error::InsufficientData("standardizing needs two values".into()))?;
    if !(s > 0.0) {
        return Err(Error::InsufficientData("series has zero spread".into()));
    }
    Ok(x.iter().map(|v| (v - m) / s).collect())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::domain("pearson needs series of equal length"));
    }
    let (zx, zy) = (standardize(x)?, standardize(y)?);
    Ok(zx.iter().zip(&zy).map(|(a, b)| a * b).sum::<f64>() / (x.len() - 1) as f64)
}

/// Centered moving average; the window shrinks at the edges.
pub fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Interior indices that exceed the left neighbour and are not exceeded by
/// the right one, so a plateau reports its first point.
pub fn local_maxima(x: &[f64]) -> Vec<usize> {
    (1..x.len().saturating_sub(1))
        .filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1])
        .collect()
}

/// For each index in `reference`, the distance to the nearest index in
/// `other` (`None` if `other` is empty).
pub fn nearest_offsets(reference: &[usize], other: &[usize]) -> Vec<Option<usize>> {
    reference
        .iter()
        .map(|&r| other.iter().map(|&o| r.abs_diff(o)).min())
        .collect()
}

/// Asymptotic coefficient `c(alpha)` of the two-sample KS critical value at
/// `alpha = 0.01`.
pub const KS_C_1PCT: f64 = 1.628;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsTest {
    pub statistic: f64,
    pub n: usize,
    pub m: usize,
    pub critical_1pct: f64,
    pub p_value: f64,
}

impl KsTest {
    pub fn rejects_at_1pct(&self) -> bool {
        self.statistic > self.critical_1pct
    }
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic distribution.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsTest> {
    if a.is_empty() || b.is_empty() || a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InsufficientData("KS test needs two non-empty samples without NaN".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = (n as f64 * m as f64 / (n + m) as f64).sqrt();
    Ok(KsTest {
        statistic: d,
        n,
        m,
        critical_1pct: KS_C_1PCT / en,
        p_value: kolmogorov_q((en + 0.12 + 0.11 / en) * d),
    })
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1.0f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}
