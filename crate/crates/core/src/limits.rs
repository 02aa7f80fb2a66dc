//! Limiting covariances, scalings and iterated-logarithm ellipsoids.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{memory_matrix, MemoryMatrix, WalkConfig};
use crate::linalg::{expm, is_symmetric, lyapunov, symmetrize, PowerFamily};
use crate::moments::mean_recursion;
use crate::special::{gamma, C64};
use crate::spectral::{analyze, classify, classify_value, Regime, RegimeLabel, Spectrum, DEFAULT_REGIME_TOL};

/// `Sigma1`: the solution of `A' S + S A = -I` with `A = B - I/2`, i.e.
/// `int_0^inf exp(A' t) exp(A t) dt`.
pub fn sigma1(b: &MemoryMatrix) -> Result<DMatrix<f64>> {
    sigma1_with_tol(b, DEFAULT_REGIME_TOL)
}

pub fn sigma1_with_tol(b: &MemoryMatrix, tol: f64) -> Result<DMatrix<f64>> {
    let eta = analyze(b).eta;
    if eta >= 0.5 - tol {
        return Err(Error::NotDiffusive(eta));
    }
    let k = b.k();
    let a = b.matrix() - DMatrix::identity(k, k) * 0.5;
    let id = DMatrix::identity(k, k);
    let s = lyapunov(&a, &id)?;
    let residual = (a.transpose() * &s + &s * &a + &id).norm();
    if residual > 1e-10 {
        return Err(Error::InvariantViolation(format!("Lyapunov residual {residual:e}")));
    }
    Ok(s)
}

/// Composite Simpson rule for `int_0^t_max exp(A' t) exp(A t) dt`, `A = B - I/2`.
pub fn sigma1_quadrature(b: &DMatrix<f64>, t_max: f64, intervals: usize) -> DMatrix<f64> {
    let intervals = intervals + intervals % 2;
    let k = b.nrows();
    let a = b - DMatrix::identity(k, k) * 0.5;
    let h = t_max / intervals as f64;
    let step = expm(&(&a * h));
    let mut e = DMatrix::<f64>::identity(k, k);
    let mut acc = DMatrix::<f64>::zeros(k, k);
    for i in 0..=intervals {
        let w = if i == 0 || i == intervals {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += e.transpose() * &e * w;
        e = &e * &step;
    }
    symmetrize(&(acc * (h / 3.0)))
}

/// `Sigma2 = T^{-T} G T^{-1}` with `G_pq = (T'T)_pq 1{lambda_p + lambda_q = 1}`.
pub fn sigma2(spectrum: &Spectrum) -> Result<DMatrix<f64>> {
    sigma2_with_tol(spectrum, DEFAULT_REGIME_TOL)
}

pub fn sigma2_with_tol(spectrum: &Spectrum, tol: f64) -> Result<DMatrix<f64>> {
    if classify_value(spectrum.eta, tol) != Regime::Critical {
        return Err(Error::NotCritical(spectrum.eta));
    }
    let t = spectrum.real_transform().ok_or(Error::NotRealDiagonalizable)?;
    let gram = t.transpose() * &t;
    let lambda: Vec<f64> = spectrum.eigenvalues.iter().map(|z| z.re).collect();
    let k = lambda.len();
    let g = DMatrix::from_fn(k, k, |p, q| {
        if (lambda[p] + lambda[q] - 1.0).abs() <= tol {
            gram[(p, q)]
        } else {
            0.0
        }
    });
    let inv = t.try_inverse().ok_or(Error::Singular)?;
    Ok(symmetrize(&(inv.transpose() * g * inv)))
}

/// `sigma^2(lambda_j)`: `(1 - 2 lambda)^{-1} (T'T)_jj` below 1/2, `(T'T)_jj` at 1/2,
/// and `(2 lambda - 1)^{-1} Gamma(lambda + 2)^2 (T'T)_jj` above.
pub fn sigma_lambda(spectrum: &Spectrum, j: usize) -> Result<f64> {
    sigma_lambda_with_tol(spectrum, j, DEFAULT_REGIME_TOL)
}

pub fn sigma_lambda_with_tol(spectrum: &Spectrum, j: usize, tol: f64) -> Result<f64> {
    let gram = spectrum.gram().ok_or(Error::NotRealDiagonalizable)?;
    if spectrum.eta >= 1.0 {
        return Err(Error::RegimeMismatch(format!("eta = {} must be below 1", spectrum.eta)));
    }
    let lambda = spectrum.eigenvalues[j].re;
    let w = gram[(j, j)];
    Ok(match classify_value(lambda, tol) {
        Regime::Diffusive => w / (1.0 - 2.0 * lambda),
        Regime::Critical => w,
        Regime::Superdiffusive => gamma(lambda + 2.0).powi(2) * w / (2.0 * lambda - 1.0),
    })
}

/// Covariances of the diffusive and critical projections, in the layout
/// "diffusive indices first, then critical".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubBlocks {
    /// Eigen-indices of the diffusive projections.
    pub diffusive: Vec<usize>,
    /// Eigen-indices of the critical projections.
    pub critical: Vec<usize>,
    /// `(T'T)_pq / (1 - lambda_p - lambda_q)` over diffusive pairs.
    #[serde(with = "row_major")]
    pub tilde1: DMatrix<f64>,
    /// `1{lambda_p + lambda_q = 1} (T'T)_pq` over critical pairs.
    #[serde(with = "row_major")]
    pub tilde2: DMatrix<f64>,
    /// `(T'T)_pq / (1 - lambda_p - lambda_q)` over diffusive pairs, the limit
    /// covariance of the diffusive projections even when critical ones exist.
    #[serde(with = "row_major")]
    pub star1: DMatrix<f64>,
    /// Critical pairs whose indicator was judged to be one, with the tolerance used.
    pub indicator_pairs: Vec<(usize, usize)>,
    pub indicator_tolerance: f64,
}

impl SubBlocks {
    /// Permutation putting diffusive projections first, then critical ones.
    pub fn layout(&self) -> Vec<usize> {
        self.diffusive.iter().chain(&self.critical).copied().collect()
    }

    /// Gram block `(T'T)` restricted to the critical projections.
    pub fn critical_gram(&self, spectrum: &Spectrum) -> Option<DMatrix<f64>> {
        let gram = spectrum.gram()?;
        let c = &self.critical;
        Some(DMatrix::from_fn(c.len(), c.len(), |a, b| gram[(c[a], c[b])]))
    }
}

pub fn sub_block_covariances(spectrum: &Spectrum, tol: f64) -> Result<SubBlocks> {
    let gram = spectrum.gram().ok_or(Error::NotRealDiagonalizable)?;
    let lambda: Vec<f64> = spectrum.eigenvalues.iter().map(|z| z.re).collect();
    let mut diffusive = Vec::new();
    let mut critical = Vec::new();
    for (j, &l) in lambda.iter().enumerate() {
        match classify_value(l, tol) {
            Regime::Diffusive => diffusive.push(j),
            Regime::Critical => critical.push(j),
            Regime::Superdiffusive => {}
        }
    }
    if diffusive.is_empty() && critical.is_empty() {
        return Err(Error::NoSubCriticalProjections);
    }
    let d = &diffusive;
    let tilde1 = DMatrix::from_fn(d.len(), d.len(), |a, b| {
        gram[(d[a], d[b])] / (1.0 - lambda[d[a]] - lambda[d[b]])
    });
    let star1 = tilde1.clone();
    let c = &critical;
    let mut indicator_pairs = Vec::new();
    let tilde2 = DMatrix::from_fn(c.len(), c.len(), |a, b| {
        if (lambda[c[a]] + lambda[c[b]] - 1.0).abs() <= tol {
            indicator_pairs.push((c[a], c[b]));
            gram[(c[a], c[b])]
        } else {
            0.0
        }
    });
    Ok(SubBlocks {
        diffusive,
        critical,
        tilde1,
        tilde2,
        star1,
        indicator_pairs,
        indicator_tolerance: tol,
    })
}

/// Quadratic form `Q = Sigma^{-1}` of the limit-point ellipsoid `{x : x Q x' <= 1}`.
pub fn lil_ellipsoid(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = symmetrize(sigma);
    let chol = s.clone().cholesky().ok_or(Error::Singular)?;
    let q = symmetrize(&chol.inverse());
    let k = s.nrows();
    if (&s * &q - DMatrix::identity(k, k)).amax() > 1e-9 {
        return Err(Error::Singular);
    }
    Ok(q)
}

/// `sqrt(2 n log log n)`.
pub fn lil_scale(n: f64) -> f64 {
    (2.0 * n * n.ln().ln()).sqrt()
}

/// `sqrt(2 n log n log log log n)`.
pub fn lil_scale_critical(n: f64) -> f64 {
    (2.0 * n * n.ln() * n.ln().ln().ln()).sqrt()
}

/// `sum_{j=1}^n (j/n)^{-B'} (j/n)^{-B}`, the exact covariance of the Gaussian
/// comparison sum at time `n`.
pub fn comparison_covariance(b: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let k = b.nrows();
    let family = PowerFamily::new(&-b);
    let nf = n as f64;
    let mut acc = DMatrix::zeros(k, k);
    for j in 1..=n {
        let p = family.at(j as f64 / nf);
        acc += p.transpose() * &p;
    }
    symmetrize(&acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperProjection {
    pub index: usize,
    pub lambda: [f64; 2],
    /// `E[hat S_2^(j)]`, the mean of the almost-sure limit of `hat S_n^(j) / d_n`.
    pub limit_mean: [f64; 2],
    /// Variance of `n^{lambda - 1/2} (hat S_inf - hat S_n / d_n)`, when `lambda` is real.
    pub fluctuation_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoElephantConstants {
    pub p: f64,
    /// `E[lim s_n^(j) / d_n(2p - 1)]` when `p > 3/4`.
    pub limit_mean_sum: Option<f64>,
    /// `E[lim s_n^(1) / d_n(1 - 2p)]` when `p < 1/4`.
    pub limit_mean_difference: Option<f64>,
    /// `Gamma(2p + 1) / sqrt(4p - 3)` when `p > 3/4`.
    pub sigma_1: Option<f64>,
    /// `Gamma(3 - 2p) / sqrt(1 - 4p)` when `p < 1/4`.
    pub sigma_2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperdiffusiveProfile {
    pub projections: Vec<SuperProjection>,
    /// Mean of `lim S_n / d_n(eta)` when the leading eigenvalues are real.
    pub coordinate_limit_mean: Option<Vec<f64>>,
    pub two_elephants: Option<TwoElephantConstants>,
}

pub fn superdiffusive_profile(config: &WalkConfig, spectrum: &Spectrum, tol: f64) -> Result<SuperdiffusiveProfile> {
    if classify_value(spectrum.eta, tol) != Regime::Superdiffusive {
        return Err(Error::NotSuperdiffusive(spectrum.eta));
    }
    let t = spectrum.transform.as_ref().ok_or(Error::NotDiagonalizable)?;
    let b = memory_matrix(config);
    let mean2 = mean_recursion(b.matrix(), config.q(), 2)?.pop().expect("two terms");
    let hat: Vec<C64> = (0..t.ncols())
        .map(|j| (0..t.nrows()).map(|i| t[(i, j)] * mean2[i]).sum())
        .collect();
    let mut projections = Vec::new();
    for (j, &lambda) in spectrum.eigenvalues.iter().enumerate() {
        if classify_value(lambda.re, tol) != Regime::Superdiffusive {
            continue;
        }
        let fluctuation_variance = if lambda.im == 0.0 && spectrum.real_diagonalizable && spectrum.eta < 1.0 {
            Some(sigma_lambda_with_tol(spectrum, j, tol)?)
        } else {
            None
        };
        projections.push(SuperProjection {
            index: j,
            lambda: [lambda.re, lambda.im],
            limit_mean: [hat[j].re, hat[j].im],
            fluctuation_variance,
        });
    }
    let top: Vec<usize> = (0..spectrum.k())
        .filter(|&j| (spectrum.eigenvalues[j].re - spectrum.eta).abs() <= tol)
        .collect();
    let coordinate_limit_mean = if top.iter().all(|&j| spectrum.eigenvalues[j].im == 0.0) {
        let inv = spectrum.inverse_transform().ok_or(Error::Singular)?;
        Some(
            (0..spectrum.k())
                .map(|i| top.iter().map(|&j| hat[j] * inv[(j, i)]).sum::<C64>().re)
                .collect(),
        )
    } else {
        None
    };
    let two_elephants = config.two_elephant_memory().map(|p| {
        let (q1, q2) = (config.q()[0], config.q()[1]);
        let high = p > 0.75;
        let low = p < 0.25;
        TwoElephantConstants {
            p,
            limit_mean_sum: high.then_some(2.0 * p * (q1 + q2 - 1.0)),
            limit_mean_difference: low.then_some(2.0 * (1.0 - p) * (q1 - q2)),
            sigma_1: high.then(|| gamma(2.0 * p + 1.0) / (4.0 * p - 3.0).sqrt()),
            sigma_2: low.then(|| gamma(3.0 - 2.0 * p) / (1.0 - 4.0 * p).sqrt()),
        }
    });
    Ok(SuperdiffusiveProfile {
        projections,
        coordinate_limit_mean,
        two_elephants,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub name: String,
    /// Normaliser applied to the walk before evaluating the quadratic form.
    pub scaling: String,
    /// Eigen-indices the quadratic form acts on; empty means the coordinates of `S_n`.
    pub projections: Vec<usize>,
    #[serde(with = "row_major")]
    pub form: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub regime: RegimeLabel,
    pub eta: f64,
    pub regime_tolerance: f64,
    #[serde(with = "row_major_opt")]
    pub sigma1: Option<DMatrix<f64>>,
    #[serde(with = "row_major_opt")]
    pub sigma2: Option<DMatrix<f64>>,
    pub sigma_lambda: Vec<Option<f64>>,
    pub sub_blocks: Option<SubBlocks>,
    pub superdiffusive: Option<SuperdiffusiveProfile>,
    pub ellipsoids: Vec<Ellipsoid>,
    /// Quantities that exist in theory but are not computed for this matrix.
    pub unsupported: Vec<String>,
}

pub fn limit_report(config: &WalkConfig, tol: f64) -> Result<LimitReport> {
    let b = memory_matrix(config);
    let spectrum = analyze(&b);
    let regime = classify(&spectrum, tol);
    let mut unsupported = Vec::new();
    let mut ellipsoids = Vec::new();

    let sigma1 = match regime.global {
        Regime::Diffusive => Some(sigma1_with_tol(&b, tol)?),
        _ => None,
    };
    if let Some(s) = &sigma1 {
        if let Ok(form) = lil_ellipsoid(s) {
            ellipsoids.push(Ellipsoid {
                name: "walk".into(),
                scaling: "sqrt(2 n log log n)".into(),
                projections: Vec::new(),
                form,
            });
        }
    }
    let sigma2 = if regime.global == Regime::Critical {
        match sigma2_with_tol(&spectrum, tol) {
            Ok(s) => Some(s),
            Err(Error::NotRealDiagonalizable) => {
                unsupported
                    .push("critical covariance when the memory matrix is not diagonalisable over the reals".into());
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    if !spectrum.diagonalizable {
        unsupported.push("projection covariances and limit laws of a non-diagonalisable memory matrix".into());
    }
    let sigma_lambda = (0..spectrum.k())
        .map(|j| {
            (spectrum.eigenvalues[j].im == 0.0)
                .then(|| sigma_lambda_with_tol(&spectrum, j, tol).ok())
                .flatten()
        })
        .collect();
    let sub_blocks = if spectrum.real_diagonalizable && spectrum.eta < 1.0 {
        sub_block_covariances(&spectrum, tol).ok()
    } else {
        None
    };
    if let Some(sb) = &sub_blocks {
        if !sb.diffusive.is_empty() {
            if let Ok(form) = lil_ellipsoid(&sb.star1) {
                ellipsoids.push(Ellipsoid {
                    name: "diffusive projections".into(),
                    scaling: "sqrt(2 n log log n)".into(),
                    projections: sb.diffusive.clone(),
                    form,
                });
            }
        }
        if let Some(gram) = sb.critical_gram(&spectrum).filter(|g| g.nrows() > 0) {
            if let Ok(form) = lil_ellipsoid(&gram) {
                ellipsoids.push(Ellipsoid {
                    name: "critical projections".into(),
                    scaling: "sqrt(2 n log n log log log n)".into(),
                    projections: sb.critical.clone(),
                    form,
                });
            }
        }
    }
    let superdiffusive = if regime.global == Regime::Superdiffusive && spectrum.diagonalizable {
        Some(superdiffusive_profile(config, &spectrum, tol)?)
    } else {
        None
    };
    Ok(LimitReport {
        regime,
        eta: spectrum.eta,
        regime_tolerance: tol,
        sigma1,
        sigma2,
        sigma_lambda,
        sub_blocks,
        superdiffusive,
        ellipsoids,
        unsupported,
    })
}

impl LimitReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("limit report serializes")
    }
}

/// `(I - 2B)^{-1}`, which equals `Sigma1` when `B` is symmetric.
pub fn symmetric_sigma1(b: &MemoryMatrix) -> Option<DMatrix<f64>> {
    let m = b.matrix();
    if !is_symmetric(m, 0.0) {
        return None;
    }
    let k = m.nrows();
    (DMatrix::identity(k, k) - m * 2.0).try_inverse()
}

pub(crate) mod row_major {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<DMatrix<f64>, String> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err("ragged matrix".into());
        }
        Ok(DMatrix::from_row_iterator(r, c, rows.into_iter().flatten()))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        from_rows(Vec::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

pub(crate) mod row_major_opt {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(super::row_major::rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        Option::<Vec<Vec<f64>>>::deserialize(d)?
            .map(super::row_major::from_rows)
            .transpose()
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two(p: f64) -> (WalkConfig, MemoryMatrix, Spectrum) {
        let c = WalkConfig::two_elephants(p, 0.5, 0.5).unwrap();
        let b = memory_matrix(&c);
        let s = analyze(&b);
        (c, b, s)
    }

    fn mat(k: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(k, k, v)
    }

    #[test]
    fn sigma1_two_elephants() {
        let (_, b, _) = two(0.6);
        let s = sigma1(&b).unwrap();
        let want = mat(2, &[1.0, 0.4, 0.4, 1.0]) / 0.84;
        assert!((&s - &want).amax() < 1e-12, "{s}");
        assert!((&s - symmetric_sigma1(&b).unwrap()).amax() < 1e-12);
        assert!((sigma1_quadrature(b.matrix(), 80.0, 16000) - &want).amax() < 1e-6);
    }

    #[test]
    fn sigma1_zero_matrix_is_identity() {
        let (_, b, _) = two(0.5);
        assert!((sigma1(&b).unwrap() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn sigma1_rejects_non_diffusive() {
        let (_, b, _) = two(0.75);
        assert!(matches!(sigma1(&b), Err(Error::NotDiffusive(_))));
    }

    #[test]
    fn sigma2_two_elephants() {
        let (_, _, s) = two(0.75);
        assert!((sigma2(&s).unwrap() - mat(2, &[0.5, 0.5, 0.5, 0.5])).amax() < 1e-14);
        let (_, _, s) = two(0.25);
        assert!((sigma2(&s).unwrap() - mat(2, &[0.5, -0.5, -0.5, 0.5])).amax() < 1e-14);
        let (_, _, s) = two(0.6);
        assert!(matches!(sigma2(&s), Err(Error::NotCritical(_))));
    }

    #[test]
    fn sigma_lambda_branches() {
        let (_, _, s) = two(0.9);
        assert!((sigma_lambda(&s, 1).unwrap() - 1.0 / 2.6).abs() < 1e-12);
        let s1 = gamma(2.8).powi(2) / 0.6;
        assert!((sigma_lambda(&s, 0).unwrap() - s1).abs() < 1e-10);
        let (_, _, s) = two(0.75);
        assert!((sigma_lambda(&s, 0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sub_blocks_two_elephants() {
        let (_, _, s) = two(0.9);
        let sb = sub_block_covariances(&s, 1e-9).unwrap();
        assert_eq!(sb.diffusive, vec![1]);
        assert!(sb.critical.is_empty());
        assert!((sb.star1[(0, 0)] - 1.0 / 2.6).abs() < 1e-12);
        let (_, _, s) = two(0.75);
        let sb = sub_block_covariances(&s, 1e-9).unwrap();
        assert_eq!(sb.layout(), vec![1, 0]);
        assert!((sb.tilde2[(0, 0)] - 1.0).abs() < 1e-12);
        assert_eq!(sb.indicator_pairs, vec![(0, 0)]);
    }

    #[test]
    fn sub_blocks_match_sigma1_in_eigenbasis() {
        let (_, b, s) = two(0.6);
        let sb = sub_block_covariances(&s, 1e-9).unwrap();
        let t = s.real_transform().unwrap();
        let conj = t.transpose() * sigma1(&b).unwrap() * &t;
        // both diffusive indices, in eigen order
        assert_eq!(sb.layout(), vec![0, 1]);
        assert!((&conj - &sb.tilde1).amax() < 1e-12);
        assert!((conj - &sb.star1).amax() < 1e-12);
    }

    #[test]
    fn no_sub_critical_projection() {
        let c = WalkConfig::self_loop(1.0, 0.5).unwrap();
        let s = analyze(&memory_matrix(&c));
        assert_eq!(sub_block_covariances(&s, 1e-9), Err(Error::NoSubCriticalProjections));
    }

    #[test]
    fn ellipsoid_forms() {
        let (_, b, _) = two(0.6);
        let q = lil_ellipsoid(&sigma1(&b).unwrap()).unwrap();
        // x^2 - 4(2p-1) x y + y^2 <= 1
        assert!((q - mat(2, &[1.0, -0.4, -0.4, 1.0])).amax() < 1e-12);
        assert_eq!(
            lil_ellipsoid(&DMatrix::identity(3, 3)).unwrap(),
            DMatrix::<f64>::identity(3, 3)
        );
        assert_eq!(lil_ellipsoid(&mat(2, &[0.5, 0.5, 0.5, 0.5])), Err(Error::Singular));
    }

    #[test]
    fn superdiffusive_limit_means() {
        let c = WalkConfig::two_elephants(0.9, 1.0, 1.0).unwrap();
        let s = analyze(&memory_matrix(&c));
        let prof = superdiffusive_profile(&c, &s, 1e-9).unwrap();
        let m = prof.coordinate_limit_mean.unwrap();
        assert!((m[0] - 1.8).abs() < 1e-12 && (m[1] - 1.8).abs() < 1e-12);
        let te = prof.two_elephants.unwrap();
        assert!((te.limit_mean_sum.unwrap() - 1.8).abs() < 1e-15);
        assert!((te.sigma_1.unwrap().powi(2) - gamma(2.8).powi(2) / 0.6).abs() < 1e-10);

        let c = WalkConfig::two_elephants(0.1, 1.0, 0.0).unwrap();
        let s = analyze(&memory_matrix(&c));
        let prof = superdiffusive_profile(&c, &s, 1e-9).unwrap();
        let m = prof.coordinate_limit_mean.unwrap();
        assert!((m[0] - 1.8).abs() < 1e-12 && (m[1] + 1.8).abs() < 1e-12);

        let c = WalkConfig::two_elephants(0.9, 0.5, 0.5).unwrap();
        let s = analyze(&memory_matrix(&c));
        let prof = superdiffusive_profile(&c, &s, 1e-9).unwrap();
        assert!(prof.coordinate_limit_mean.unwrap().iter().all(|x| x.abs() < 1e-15));
        let (_, _, s) = two(0.6);
        assert!(matches!(
            superdiffusive_profile(&c, &s, 1e-9),
            Err(Error::NotSuperdiffusive(_))
        ));
    }

    #[test]
    fn comparison_covariance_converges_to_sigma1() {
        // the leading error is zeta(2 eta) n^{2 eta - 1} from the singular Riemann sum
        let (_, b, _) = two(0.6);
        let s1 = sigma1(&b).unwrap();
        let ns = [500usize, 1000, 2000, 4000, 8000];
        let errs: Vec<f64> = ns
            .iter()
            .map(|&n| (comparison_covariance(b.matrix(), n) / n as f64 - &s1).norm() / s1.norm())
            .collect();
        let slope = (errs[4].ln() - errs[0].ln()) / ((ns[4] as f64).ln() - (ns[0] as f64).ln());
        assert!((slope + 0.6).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn report_json_round_trip() {
        let (c, _, _) = two(0.6);
        let r = limit_report(&c, 1e-9).unwrap();
        assert!(r.sigma1.is_some() && r.sigma2.is_none());
        let back: LimitReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let (c, _, _) = two(0.75);
        let r = limit_report(&c, 1e-9).unwrap();
        assert!(r.sigma1.is_none() && r.sigma2.is_some());
        assert_eq!(r.ellipsoids.len(), 2);
    }

    #[test]
    fn non_diagonalisable_critical_is_flagged() {
        // B = [[1/2, 1/2], [0, 1/2]]: a Jordan block at the critical value
        let g = crate::graph::DirectedGraph::new(2, &[(1, 1), (1, 2), (2, 2)]).unwrap();
        let c = WalkConfig::new(g, vec![0.75, 1.0], vec![0.5, 0.5]).unwrap();
        let r = limit_report(&c, 1e-9).unwrap();
        assert_eq!(r.regime.global, Regime::Critical);
        assert!(r.sigma2.is_none());
        assert!(!r.unsupported.is_empty());
    }
}
