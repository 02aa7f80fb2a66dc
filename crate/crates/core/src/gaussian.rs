//! Gaussian comparison processes and the deterministic product bounds behind them.
//!
//! Iterating `S_{n+1} = S_n (I + B/n) + dM_{n+1}` back to time 1 writes `S_n`
//! as `sum_j dM_j C_{j,n} / j`-type sums with
//! `C_{j,n} = prod_{l=j+1}^n ((l-1)/l I + B/l)`. The comparison process
//! replaces the martingale increments by standard normal vectors:
//! `G_n = sum_{j=1}^n Y_j (j/n)^{-B}`.
//!
//! Only distributional consequences are checked here; pathwise couplings on an
//! enlarged probability space cannot be recovered from simulation output.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MemoryMatrix;
use crate::linalg::{operator_norm, symmetrize, PowerFamily};
use crate::rng::{derive_seed, map_replicas, rng_from_seed};
use crate::special::C64;
use crate::spectral::{analyze, classify_value, Regime, DEFAULT_REGIME_TOL};

/// `C_{j,n} = prod_{l=j+1}^n ((l-1)/l I + B/l)`, accumulated left to right.
pub fn c_product(j: usize, n: usize, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(1 <= j && j <= n, "c_product requires 1 <= j <= n");
    let k = b.nrows();
    let id = DMatrix::<f64>::identity(k, k);
    let mut acc = id.clone();
    for l in j + 1..=n {
        let lf = l as f64;
        acc *= &id * ((lf - 1.0) / lf) + b / lf;
    }
    acc
}

/// `prod_{l=j+1}^n ((l-1+lambda)/l)` by direct multiplication.
pub fn scalar_product(lambda: C64, j: usize, n: usize) -> C64 {
    (j + 1..=n).fold(C64::new(1.0, 0.0), |acc, l| {
        acc * ((lambda + (l - 1) as f64) / l as f64)
    })
}

/// Same product via a Kahan-compensated sum of logarithms.
pub fn scalar_product_compensated(lambda: C64, j: usize, n: usize) -> C64 {
    let mut sum = C64::new(0.0, 0.0);
    let mut carry = C64::new(0.0, 0.0);
    for l in j + 1..=n {
        let f = (lambda + (l - 1) as f64) / l as f64;
        if f == C64::new(0.0, 0.0) {
            return f;
        }
        let y = f.ln() - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum.exp()
}

/// One draw of `G_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSample {
    pub n: usize,
    pub seed: u64,
    pub value: Vec<f64>,
}

/// `R` independent draws of `G_n = sum_j Y_j (j/n)^{-B}` with i.i.d. standard
/// normal row vectors `Y_j`; replica `r` uses seed `derive_seed(master, r)`.
pub fn gaussian_comparison(
    b: &MemoryMatrix,
    n: usize,
    replicas: usize,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<Vec<ComparisonSample>> {
    let eta = analyze(b).eta;
    if classify_value(eta, DEFAULT_REGIME_TOL) == Regime::Superdiffusive {
        return Err(Error::RegimeMismatch(format!(
            "comparison process needs eta <= 1/2, got {eta}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let k = b.k();
    let family = PowerFamily::new(&-b.matrix());
    let nf = n as f64;
    let powers: Vec<DMatrix<f64>> = (1..=n).map(|j| family.at(j as f64 / nf)).collect();
    map_replicas(replicas, workers, |r| {
        let seed = derive_seed(master_seed, r as u64);
        let mut rng = rng_from_seed(seed);
        let mut g = vec![0.0; k];
        let mut y = vec![0.0; k];
        for p in &powers {
            for v in y.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            for (c, gc) in g.iter_mut().enumerate() {
                *gc += (0..k).map(|i| y[i] * p[(i, c)]).sum::<f64>();
            }
        }
        Ok(ComparisonSample { n, seed, value: g })
    })
}

/// `W(v_n) = sum_{j <= n} b_j xi_j` at times `v_n = sum_{j <= n} b_j^2`, where
/// `xi_j = Z(j) - Z(j-1)` are increments of a standard Brownian motion.
pub fn brownian_rescale(b: &[f64], increments: &[f64]) -> Result<Vec<(f64, f64)>> {
    if b.len() != increments.len() {
        return Err(Error::InvalidParameter(
            "weights and increments differ in length".into(),
        ));
    }
    if let Some(x) = b.iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("weights must be positive, got {x}")));
    }
    let mut v = 0.0;
    let mut w = 0.0;
    Ok(b.iter()
        .zip(increments)
        .map(|(&bj, &xi)| {
            v += bj * bj;
            w += bj * xi;
            (v, w)
        })
        .collect())
}

/// `n` standard normal increments of a Brownian motion on unit time steps.
pub fn brownian_increments<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Empirical covariance of the comparison draws scaled by `1/scale`.
pub fn sample_covariance(samples: &[ComparisonSample], scale: f64) -> DMatrix<f64> {
    let k = samples.first().map_or(0, |s| s.value.len());
    let rows: Vec<DVector<f64>> = samples
        .iter()
        .map(|s| DVector::from_iterator(k, s.value.iter().map(|x| x / scale)))
        .collect();
    let r = rows.len() as f64;
    let mean = rows.iter().fold(DVector::zeros(k), |acc, x| acc + x) / r;
    let cov = rows.iter().fold(DMatrix::zeros(k, k), |acc, x| {
        acc + (x - &mean) * (x - &mean).transpose()
    }) / (r - 1.0);
    symmetrize(&cov)
}

/// Which product bound a row refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// `|P_{j,n}| <= c (j/n)^{1 - Re lambda}`.
    ProductEnvelope,
    /// `|P_{j,n} - (j/n)^{1-lambda}| <= c j^{-2} (j/n)^{1 - Re lambda}`.
    ProductVsPower,
    /// The same difference against the envelope `c j^{-1} (j/n)^{1 - Re lambda}`.
    ProductVsPowerFirstOrder,
    /// `sup_{x in [j, j+1]} |(j/n)^{-lambda} - (x/n)^{-lambda}| <= c j^{-1} (j/n)^{-Re lambda}`.
    PowerIncrement,
    /// `|C_{j,n}| <= c (j/n)^{1 - eta}`.
    MatrixProductEnvelope,
    /// `|C_{j,n} - (j/n)^{I-B}| <= c j^{-2} (j/n)^{1 - eta}`.
    MatrixProductVsPower,
    /// The same difference against `c j^{-1} (j/n)^{1 - eta}`.
    MatrixProductVsPowerFirstOrder,
    /// `sup_{x in [j, j+1]} |(j/n)^{-B} - (x/n)^{-B}| <= c j^{-1} (j/n)^{-eta}`.
    MatrixPowerIncrement,
}

impl BoundKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundKind::ProductEnvelope => "product_envelope",
            BoundKind::ProductVsPower => "product_vs_power",
            BoundKind::ProductVsPowerFirstOrder => "product_vs_power_first_order",
            BoundKind::PowerIncrement => "power_increment",
            BoundKind::MatrixProductEnvelope => "matrix_product_envelope",
            BoundKind::MatrixProductVsPower => "matrix_product_vs_power",
            BoundKind::MatrixProductVsPowerFirstOrder => "matrix_product_vs_power_first_order",
            BoundKind::MatrixPowerIncrement => "matrix_power_increment",
        }
    }

    /// Bounds as stated; the first-order rows are diagnostics.
    pub fn is_stated(self) -> bool {
        !matches!(
            self,
            BoundKind::ProductVsPowerFirstOrder | BoundKind::MatrixProductVsPowerFirstOrder
        )
    }
}

/// Fitted constants below this are treated as exact zeros.
pub const NEGLIGIBLE_CONSTANT: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    /// `lambda` for scalar rows, a matrix label for matrix rows.
    pub subject: String,
    pub lambda: Option<[f64; 2]>,
    pub bound: BoundKind,
    /// Smallest constant valid for all `n <= n_small`.
    pub constant_small: f64,
    /// Smallest constant valid for all `n <= n_large`.
    pub constant_large: f64,
    pub relative_change: f64,
    pub finite: bool,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub n_small: usize,
    pub n_large: usize,
    pub stability_tolerance: f64,
    pub rows: Vec<BoundRow>,
    /// Largest relative gap between direct and compensated products at `j = 1`.
    pub guard_error: f64,
}

impl BoundsReport {
    /// Stated bounds whose constant is infinite or not stable.
    pub fn failures(&self) -> Vec<&BoundRow> {
        self.rows
            .iter()
            .filter(|r| r.bound.is_stated() && !(r.finite && r.stable))
            .collect()
    }

    /// CSV: subject, lambda_re, lambda_im, bound, constant_small, constant_large, relative_change, stable.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "subject",
            "lambda_re",
            "lambda_im",
            "bound",
            "constant_small",
            "constant_large",
            "relative_change",
            "stable",
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
        for r in &self.rows {
            let (re, im) = r
                .lambda
                .map_or((String::new(), String::new()), |l| (l[0].to_string(), l[1].to_string()));
            w.write_record([
                r.subject.clone(),
                re,
                im,
                r.bound.as_str().to_string(),
                r.constant_small.to_string(),
                r.constant_large.to_string(),
                r.relative_change.to_string(),
                r.stable.to_string(),
            ])
            .map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `lambda = a + ib` on a square grid of the given step inside the closed unit
/// disk, keeping `Im(lambda) >= 0` since conjugation leaves every modulus unchanged.
pub fn lambda_grid(step: f64) -> Vec<C64> {
    let m = (1.0 / step).round() as i64;
    let mut out = Vec::new();
    for a in -m..=m {
        for b in 0..=m {
            let z = C64::new(a as f64 * step, b as f64 * step);
            if z.norm() <= 1.0 + 1e-9 {
                out.push(z);
            }
        }
    }
    out
}

/// Times `n` at which every `j < n` is examined: all of `2..=50`, then
/// multiples of 25, then `n_max`.
pub fn bound_time_grid(n_max: usize) -> Vec<usize> {
    let mut g: Vec<usize> = (2..=n_max.min(50)).collect();
    g.extend((3..).map(|m| 25 * m).take_while(|&n| n < n_max).filter(|&n| n > 50));
    if g.last() != Some(&n_max) && n_max >= 2 {
        g.push(n_max);
    }
    g
}

/// Memory matrices exercised by the matrix bounds: two-elephant matrices for
/// `p = 0, 0.1, ..., 1` and the full-memory 3-cycle.
pub fn default_bound_matrices() -> Vec<(String, DMatrix<f64>)> {
    let mut out: Vec<(String, DMatrix<f64>)> = (0..=10)
        .map(|i| {
            let p = i as f64 / 10.0;
            let l = 2.0 * p - 1.0;
            (
                format!("two elephants p={p}"),
                DMatrix::from_row_slice(2, 2, &[0.0, l, l, 0.0]),
            )
        })
        .collect();
    out.push((
        "3-cycle p=1".into(),
        DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]),
    ));
    out
}

/// Running maxima of the ratio `lhs / envelope` for the small and large grids.
#[derive(Default, Clone, Copy)]
struct Fit {
    small: f64,
    large: f64,
}

impl Fit {
    fn update(&mut self, n: usize, n_small: usize, ratio: f64) {
        let ratio = if ratio.is_nan() { f64::INFINITY } else { ratio };
        if n <= n_small {
            self.small = self.small.max(ratio);
        }
        self.large = self.large.max(ratio);
    }

    fn row(self, subject: String, lambda: Option<[f64; 2]>, bound: BoundKind, tol: f64) -> BoundRow {
        let finite = self.small.is_finite() && self.large.is_finite();
        let relative_change = if self.small > 0.0 {
            (self.large - self.small).abs() / self.small
        } else if self.large > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        let stable = finite && (self.large < NEGLIGIBLE_CONSTANT || relative_change <= tol);
        BoundRow {
            subject,
            lambda,
            bound,
            constant_small: self.small,
            constant_large: self.large,
            relative_change,
            finite,
            stable,
        }
    }
}

/// Points sampled in `[j, j+1]` for the supremum over `x`.
const SUP_POINTS: usize = 8;

fn scalar_rows(lambda: C64, grid: &[usize], n_small: usize, tol: f64) -> (Vec<BoundRow>, f64) {
    let mut env = Fit::default();
    let mut second = Fit::default();
    let mut first = Fit::default();
    let mut incr = Fit::default();
    let mut guard: f64 = 0.0;
    let one_minus = C64::new(1.0, 0.0) - lambda;
    for &n in grid {
        let nf = n as f64;
        // P_{j,n} for j = n-1 down to 1 by prepending factors
        let mut p = C64::new(1.0, 0.0);
        for j in (1..n).rev() {
            let l = (j + 1) as f64;
            p *= (lambda + (l - 1.0)) / l;
            let ratio = j as f64 / nf;
            let envelope = ratio.powf(1.0 - lambda.re);
            env.update(n, n_small, p.norm() / envelope);
            let diff = (p - C64::new(ratio, 0.0).powc(one_minus)).norm();
            let jf = j as f64;
            second.update(n, n_small, diff * jf * jf / envelope);
            first.update(n, n_small, diff * jf / envelope);
            if j == 1 {
                let comp = scalar_product_compensated(lambda, 1, n);
                let scale = comp.norm().max(p.norm());
                if scale > 0.0 {
                    guard = guard.max((p - comp).norm() / scale);
                }
            }
            let base = C64::new(ratio, 0.0).powc(-lambda);
            let sup = (0..=SUP_POINTS)
                .map(|i| {
                    let x = jf + i as f64 / SUP_POINTS as f64;
                    (base - C64::new(x / nf, 0.0).powc(-lambda)).norm()
                })
                .fold(0.0, f64::max);
            incr.update(n, n_small, sup * jf / ratio.powf(-lambda.re));
        }
    }
    let subject = format!("{}{:+}i", lambda.re, lambda.im);
    let l = Some([lambda.re, lambda.im]);
    let rows = vec![
        env.row(subject.clone(), l, BoundKind::ProductEnvelope, tol),
        second.row(subject.clone(), l, BoundKind::ProductVsPower, tol),
        first.row(subject.clone(), l, BoundKind::ProductVsPowerFirstOrder, tol),
        incr.row(subject, l, BoundKind::PowerIncrement, tol),
    ];
    (rows, guard)
}

fn matrix_rows(label: &str, b: &DMatrix<f64>, grid: &[usize], n_small: usize, tol: f64) -> Vec<BoundRow> {
    let k = b.nrows();
    let eta = crate::linalg::eigenvalues(b)
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let id = DMatrix::<f64>::identity(k, k);
    let i_minus_b = PowerFamily::new(&(&id - b));
    let minus_b = PowerFamily::new(&-b);
    let mut env = Fit::default();
    let mut second = Fit::default();
    let mut first = Fit::default();
    let mut incr = Fit::default();
    for &n in grid {
        let nf = n as f64;
        env.update(n, n_small, 1.0);
        let mut c = id.clone();
        for j in (1..n).rev() {
            let l = (j + 1) as f64;
            c = (&id * ((l - 1.0) / l) + b / l) * c;
            let ratio = j as f64 / nf;
            let envelope = ratio.powf(1.0 - eta);
            env.update(n, n_small, operator_norm(&c) / envelope);
            let diff = operator_norm(&(&c - i_minus_b.at(ratio)));
            let jf = j as f64;
            second.update(n, n_small, diff * jf * jf / envelope);
            first.update(n, n_small, diff * jf / envelope);
            let base = minus_b.at(ratio);
            let sup = (1..=SUP_POINTS)
                .map(|i| {
                    let x = jf + i as f64 / SUP_POINTS as f64;
                    operator_norm(&(&base - minus_b.at(x / nf)))
                })
                .fold(0.0, f64::max);
            incr.update(n, n_small, sup * jf / ratio.powf(-eta));
        }
    }
    vec![
        env.row(label.into(), None, BoundKind::MatrixProductEnvelope, tol),
        second.row(label.into(), None, BoundKind::MatrixProductVsPower, tol),
        first.row(label.into(), None, BoundKind::MatrixProductVsPowerFirstOrder, tol),
        incr.row(label.into(), None, BoundKind::MatrixPowerIncrement, tol),
    ]
}

/// Fits the smallest constants for every product bound on the grids
/// `n <= n_small` and `n <= n_large` and flags constants that move by more
/// than `stability_tolerance` (relative) between the two.
pub fn product_bounds_check(
    lambdas: &[C64],
    matrices: &[(String, DMatrix<f64>)],
    n_small: usize,
    n_large: usize,
    stability_tolerance: f64,
) -> Result<BoundsReport> {
    if !(2 <= n_small && n_small < n_large) {
        return Err(Error::InvalidParameter("need 2 <= n_small < n_large".into()));
    }
    if let Some(z) = lambdas.iter().find(|z| z.norm() > 1.0 + 1e-9) {
        return Err(Error::InvalidParameter(format!("|lambda| must be at most 1, got {z}")));
    }
    let grid = bound_time_grid(n_large);
    let mut rows = Vec::new();
    let mut guard_error: f64 = 0.0;
    let scalar = map_replicas(lambdas.len(), None, |i| {
        Ok(scalar_rows(lambdas[i], &grid, n_small, stability_tolerance))
    })?;
    for (r, g) in scalar {
        rows.extend(r);
        guard_error = guard_error.max(g);
    }
    let matrix = map_replicas(matrices.len(), None, |i| {
        Ok(matrix_rows(
            &matrices[i].0,
            &matrices[i].1,
            &grid,
            n_small,
            stability_tolerance,
        ))
    })?;
    rows.extend(matrix.into_iter().flatten());
    Ok(BoundsReport {
        n_small,
        n_large,
        stability_tolerance,
        rows,
        guard_error,
    })
}
