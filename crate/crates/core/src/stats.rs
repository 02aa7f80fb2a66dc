//! Summary statistics and goodness-of-fit tests used by the verification suites.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Count, sum and sum of outer products of k-vectors. Merging is exact
/// reassociation of sums, so a fixed merge order gives fixed results.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    count: usize,
    sum: DVector<f64>,
    outer: DMatrix<f64>,
}

impl MomentAccumulator {
    pub fn new(k: usize) -> Self {
        Self {
            count: 0,
            sum: DVector::zeros(k),
            outer: DMatrix::zeros(k, k),
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.sum.len());
        let v = DVector::from_column_slice(x);
        self.sum += &v;
        self.outer += &v * v.transpose();
        self.count += 1;
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        self.count += other.count;
        self.sum += &other.sum;
        self.outer += &other.outer;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> DVector<f64> {
        &self.sum / self.count as f64
    }

    /// Uncentred second moment `E[x' x]`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.outer / self.count as f64
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.count as f64;
        let m = self.mean();
        let c = (&self.outer - &m * m.transpose() * n) / (n - 1.0);
        (&c + c.transpose()) * 0.5
    }
}

impl FromIterator<Vec<f64>> for MomentAccumulator {
    fn from_iter<I: IntoIterator<Item = Vec<f64>>>(iter: I) -> Self {
        let mut it = iter.into_iter().peekable();
        let k = it.peek().map_or(0, Vec::len);
        let mut acc = MomentAccumulator::new(k);
        for x in it {
            acc.push(&x);
        }
        acc
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Sample variance with its large-sample standard error `sqrt((m4 - s^4) / R)`.
pub fn variance_with_se(x: &[f64]) -> (f64, f64) {
    let m = mean(x);
    let n = x.len() as f64;
    let v = variance(x);
    let m4 = x.iter().map(|t| (t - m).powi(4)).sum::<f64>() / n;
    (v, ((m4 - v * v).max(0.0) / n).sqrt())
}

/// Linear-interpolation quantile of unsorted data, `p` in `[0, 1]`.
pub fn quantile(x: &[f64], p: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let h = p.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

/// Ordinary least squares `y = a + b x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_se = if n > 2.0 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    LinearFit {
        slope,
        intercept,
        slope_se,
    }
}

/// `||A - B||_F / ||B||_F`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Upper tail `P(K > x)` of the Kolmogorov distribution.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // Theta-function form converges fast for small x.
        let c = std::f64::consts::PI.powi(2) / (8.0 * x * x);
        let s: f64 = (1..=10)
            .map(|j| {
                let m = (2 * j - 1) as f64;
                (-m * m * c).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|j| {
                let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (j * j) as f64 * x * x).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let sq = n_eff.sqrt();
    kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d)
}

/// One-sample two-sided Kolmogorov-Smirnov test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(x: &[f64], cdf: F) -> KsResult {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in s.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
    }
}

/// Standard normal one-sample KS test.
pub fn ks_normal(x: &[f64]) -> KsResult {
    let z = Normal::standard();
    ks_one_sample(x, |v| z.cdf(v))
}

/// Two-sample two-sided Kolmogorov-Smirnov test; ties are handled by
/// comparing the empirical CDFs only after each distinct value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let n_eff = (n * m) as f64 / (n + m) as f64;
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, n_eff),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Number of cells after pooling.
    pub cells: usize,
}

/// Chi-square test that two samples of lattice points share one law.
/// Cells whose expected count is below `min_expected` in either sample are
/// pooled into a single cell.
pub fn chi_square_homogeneity<K: Ord + Clone>(a: &[K], b: &[K], min_expected: f64) -> Result<ChiSquareResult> {
    let mut table: BTreeMap<K, [f64; 2]> = BTreeMap::new();
    for x in a {
        table.entry(x.clone()).or_default()[0] += 1.0;
    }
    for x in b {
        table.entry(x.clone()).or_default()[1] += 1.0;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let total = na + nb;
    let mut cells: Vec<[f64; 2]> = Vec::new();
    let mut pooled = [0.0; 2];
    for c in table.values() {
        let col = c[0] + c[1];
        if col * na.min(nb) / total < min_expected {
            pooled[0] += c[0];
            pooled[1] += c[1];
        } else {
            cells.push(*c);
        }
    }
    if pooled[0] + pooled[1] > 0.0 {
        cells.push(pooled);
    }
    if cells.len() < 2 {
        return Err(Error::InvalidParameter(
            "chi-square test needs at least two cells".into(),
        ));
    }
    let statistic: f64 = cells
        .iter()
        .map(|c| {
            let col = c[0] + c[1];
            let ea = col * na / total;
            let eb = col * nb / total;
            (c[0] - ea).powi(2) / ea + (c[1] - eb).powi(2) / eb
        })
        .sum();
    let dof = cells.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(ChiSquareResult {
        statistic,
        dof,
        p_value: dist.sf(statistic),
        cells: cells.len(),
    })
}
