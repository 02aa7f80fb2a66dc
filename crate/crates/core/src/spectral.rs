//! Eigen-analysis of the memory matrix and regime classification.
//!
//! The transformation `T` satisfies `T^{-1} B T = diag(lambda_1, ..., lambda_k)`,
//! so its columns are right eigenvectors of `B` and the projected walk is the
//! row vector `S_n T`. Symmetric matrices use an orthogonal eigen-solve.
//! Otherwise eigenvalues come from the Schur form, are clustered, and each
//! cluster's eigenspace is taken from the null space of `B - mu I`. A cluster
//! whose null space is too small, or an eigenvector matrix with condition
//! number above [`COND_LIMIT`], marks the matrix non-diagonalisable.

use nalgebra::{Complex, DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::graph::MemoryMatrix;
use crate::linalg::{is_symmetric, right_singular, to_complex, CMatrix};

pub use crate::linalg::matrix_power;
pub use crate::special::{d_scale, d_scale_real};

pub type C64 = Complex<f64>;

/// Eigenvector matrices with a larger condition number are treated as defective.
pub const COND_LIMIT: f64 = 1e8;
/// Default absolute tolerance on `|eta - 1/2|` for critical detection.
pub const DEFAULT_REGIME_TOL: f64 = 1e-9;

const CLUSTER_TOL: f64 = 1e-6;
const NULL_TOL: f64 = 1e-8;
const REAL_TOL: f64 = 1e-10;
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Sorted by descending real part, ties by descending imaginary part.
    pub eigenvalues: Vec<C64>,
    /// Columns are eigenvectors in the order of `eigenvalues`; unset when
    /// the matrix is not (numerically) diagonalisable.
    pub transform: Option<CMatrix>,
    pub diagonalizable: bool,
    pub real_diagonalizable: bool,
    pub symmetric: bool,
    pub eta: f64,
    pub rho: f64,
    pub nu: Option<usize>,
    pub condition_number: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Diffusive,
    Critical,
    Superdiffusive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub global: Regime,
    pub per_projection: Vec<Regime>,
}

fn cmp_eigen(a: &C64, b: &C64) -> std::cmp::Ordering {
    if (a.re - b.re).abs() > TIE_TOL {
        b.re.total_cmp(&a.re)
    } else {
        b.im.total_cmp(&a.im)
    }
}

/// Scales `v` to unit norm and rotates it so that its first component of
/// maximal modulus is real and positive.
fn normalize_column(v: &mut nalgebra::DVector<C64>) {
    let norm = v.norm();
    if norm == 0.0 {
        return;
    }
    *v /= C64::new(norm, 0.0);
    let max = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let pivot = v
        .iter()
        .find(|z| z.norm() >= max * (1.0 - 1e-9))
        .copied()
        .expect("nonzero vector has a pivot");
    let phase = pivot.conj() / pivot.norm();
    *v *= phase;
    for z in v.iter_mut() {
        if z.im.abs() < 1e-15 {
            z.im = 0.0;
        }
    }
}

/// Right singular vectors for the `count` smallest singular values, together
/// with the number of singular values below `tol`.
fn null_space(m: &CMatrix, count: usize, tol: f64) -> (usize, Vec<nalgebra::DVector<C64>>) {
    let (values, v) = right_singular(m);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let rank_deficiency = order.iter().filter(|&&i| values[i] <= tol).count();
    let vectors = order.iter().take(count).map(|&i| v.column(i).into_owned()).collect();
    (rank_deficiency, vectors)
}

fn real_null_space(m: &DMatrix<f64>, count: usize, tol: f64) -> (usize, Vec<nalgebra::DVector<C64>>) {
    let (values, v) = right_singular(m);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let rank_deficiency = order.iter().filter(|&&i| values[i] <= tol).count();
    let vectors = order
        .iter()
        .take(count)
        .map(|&i| v.column(i).map(|x| C64::new(x, 0.0)))
        .collect();
    (rank_deficiency, vectors)
}

fn condition_number(t: &CMatrix) -> f64 {
    let sv = right_singular(t).0;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Eigen-analysis with no multiplicity annotation.
pub fn analyze(b: &MemoryMatrix) -> Spectrum {
    analyze_with_multiplicity(b, None)
}

/// Eigen-analysis; `nu_hint` is an exact-multiplicity annotation used for
/// `nu` when the matrix is not numerically diagonalisable.
pub fn analyze_with_multiplicity(b: &MemoryMatrix, nu_hint: Option<usize>) -> Spectrum {
    let m = b.matrix();
    let (eigenvalues, transform, symmetric, clusters) = if is_symmetric(m, 0.0) {
        let (vals, t) = symmetric_eigen(m);
        let clusters = cluster(&vals);
        (vals, Some(t), true, clusters)
    } else {
        general_eigen(m)
    };

    let eta = eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let mut transform = transform;
    let mut condition = None;
    if let Some(t) = &transform {
        let cond = if symmetric { 1.0 } else { condition_number(t) };
        let residual = t
            .clone()
            .try_inverse()
            .map(|inv| {
                let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eigenvalues.clone()));
                (inv * to_complex(m) * t - lambda).norm()
            })
            .unwrap_or(f64::INFINITY);
        if cond > COND_LIMIT || !(residual <= 1e-9) {
            transform = None;
        } else {
            condition = Some(cond);
        }
    }
    let diagonalizable = transform.is_some();
    let real = eigenvalues.iter().all(|z| z.im == 0.0);
    let nu = if diagonalizable {
        clusters
            .iter()
            .filter(|c| (eigenvalues[c[0]].re - eta).abs() <= DEFAULT_REGIME_TOL)
            .map(Vec::len)
            .max()
    } else {
        nu_hint
    };
    Spectrum {
        eigenvalues,
        transform,
        diagonalizable,
        real_diagonalizable: diagonalizable && real,
        symmetric,
        eta,
        rho: 1.0 - eta,
        nu,
        condition_number: condition,
    }
}

fn symmetric_eigen(m: &DMatrix<f64>) -> (Vec<C64>, CMatrix) {
    let k = m.nrows();
    let is_diagonal = (0..k).all(|i| (0..k).all(|j| i == j || m[(i, j)] == 0.0));
    let (values, vectors) = if is_diagonal {
        (m.diagonal(), DMatrix::identity(k, k))
    } else {
        let eig = SymmetricEigen::new(m.clone());
        (eig.eigenvalues, eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        if (values[a] - values[b]).abs() > TIE_TOL {
            values[b].total_cmp(&values[a])
        } else {
            a.cmp(&b)
        }
    });
    let vals = order.iter().map(|&i| C64::new(values[i], 0.0)).collect();
    let mut t = CMatrix::zeros(k, k);
    for (col, &i) in order.iter().enumerate() {
        let mut v = vectors.column(i).map(|x| C64::new(x, 0.0));
        normalize_column(&mut v);
        t.set_column(col, &v);
    }
    (vals, t)
}

/// Groups indices of (sorted) eigenvalues lying within `CLUSTER_TOL` of each other.
fn cluster(values: &[C64]) -> Vec<Vec<usize>> {
    let n = values.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        parent[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if (values[i] - values[j]).norm() <= CLUSTER_TOL {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        match groups.iter_mut().find(|g| find(&mut parent.clone(), g[0]) == root) {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

type EigenParts = (Vec<C64>, Option<CMatrix>, bool, Vec<Vec<usize>>);

fn general_eigen(m: &DMatrix<f64>) -> EigenParts {
    let k = m.nrows();
    let scale = m.amax().max(1.0);
    let mut values: Vec<C64> = crate::linalg::eigenvalues(m)
        .iter()
        .map(|&z| {
            if z.im.abs() <= REAL_TOL * z.norm().max(1.0) {
                C64::new(z.re, 0.0)
            } else {
                z
            }
        })
        .collect();
    values.sort_by(cmp_eigen);
    let clusters = cluster(&values);

    let mut columns: Vec<Option<nalgebra::DVector<C64>>> = vec![None; k];
    let mut ok = true;
    for group in &clusters {
        let size = group.len();
        let mean = group.iter().map(|&i| values[i]).sum::<C64>() / size as f64;
        let real = group.iter().all(|&i| values[i].im == 0.0);
        let (deficiency, vectors) = if real {
            real_null_space(&(m - DMatrix::identity(k, k) * mean.re), size, NULL_TOL * scale)
        } else {
            let shifted = to_complex(m) - CMatrix::identity(k, k) * mean;
            null_space(&shifted, size, NULL_TOL * scale)
        };
        if deficiency < size {
            ok = false;
            break;
        }
        if size > 1 {
            for &i in group {
                values[i] = if real { C64::new(mean.re, 0.0) } else { mean };
            }
        }
        for (&i, mut v) in group.iter().zip(vectors) {
            normalize_column(&mut v);
            columns[i] = Some(v);
        }
    }
    let transform = ok.then(|| {
        let mut t = CMatrix::zeros(k, k);
        for (j, col) in columns.into_iter().enumerate() {
            t.set_column(j, &col.expect("every eigenvalue assigned a vector"));
        }
        t
    });
    (values, transform, false, clusters)
}

impl Spectrum {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Real eigenvalue `j`, if it is real.
    pub fn real_eigenvalue(&self, j: usize) -> Option<f64> {
        let z = self.eigenvalues[j];
        (z.im == 0.0).then_some(z.re)
    }

    /// Real transformation matrix when `B` is diagonalisable over the reals.
    pub fn real_transform(&self) -> Option<DMatrix<f64>> {
        if !self.real_diagonalizable {
            return None;
        }
        self.transform.as_ref().map(|t| t.map(|z| z.re))
    }

    pub fn inverse_transform(&self) -> Option<CMatrix> {
        self.transform.as_ref().and_then(|t| t.clone().try_inverse())
    }

    /// `T' T` for real-diagonalisable matrices.
    pub fn gram(&self) -> Option<DMatrix<f64>> {
        self.real_transform().map(|t| t.transpose() * &t)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(SpectrumJson::from(self)).expect("spectrum serializes")
    }
}

/// Serialized layout: eigenvalues as `[re, im]` pairs, `T` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumJson {
    pub eigenvalues: Vec<[f64; 2]>,
    pub transform: Option<Vec<Vec<[f64; 2]>>>,
    pub diagonalizable: bool,
    pub real_diagonalizable: bool,
    pub symmetric: bool,
    pub eta: f64,
    pub rho: f64,
    pub nu: Option<usize>,
    pub condition_number: Option<f64>,
}

impl From<&Spectrum> for SpectrumJson {
    fn from(s: &Spectrum) -> Self {
        SpectrumJson {
            eigenvalues: s.eigenvalues.iter().map(|z| [z.re, z.im]).collect(),
            transform: s.transform.as_ref().map(|t| {
                t.row_iter()
                    .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
                    .collect()
            }),
            diagonalizable: s.diagonalizable,
            real_diagonalizable: s.real_diagonalizable,
            symmetric: s.symmetric,
            eta: s.eta,
            rho: s.rho,
            nu: s.nu,
            condition_number: s.condition_number,
        }
    }
}

pub fn classify_value(x: f64, tol: f64) -> Regime {
    if (x - 0.5).abs() <= tol {
        Regime::Critical
    } else if x < 0.5 - tol {
        Regime::Diffusive
    } else {
        Regime::Superdiffusive
    }
}

/// Global label from `eta`, per-projection labels from `Re(lambda_j)`.
pub fn classify(spectrum: &Spectrum, tol: f64) -> RegimeLabel {
    assert!(tol > 0.0, "regime tolerance must be positive");
    RegimeLabel {
        global: classify_value(spectrum.eta, tol),
        per_projection: spectrum.eigenvalues.iter().map(|z| classify_value(z.re, tol)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{memory_matrix, DirectedGraph, WalkConfig};

    fn two(p: f64) -> Spectrum {
        analyze(&memory_matrix(&WalkConfig::two_elephants(p, 0.5, 0.5).unwrap()))
    }

    #[test]
    fn two_elephant_spectrum() {
        let s = two(0.75);
        assert!(s.symmetric && s.real_diagonalizable);
        assert_eq!(s.eigenvalues, vec![C64::new(0.5, 0.0), C64::new(-0.5, 0.0)]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let want = DMatrix::from_row_slice(2, 2, &[h, h, h, -h]);
        assert!((s.real_transform().unwrap() - want).amax() < 1e-15);
        assert_eq!(s.eta, 0.5);
        assert_eq!(s.nu, Some(1));
    }

    #[test]
    fn zero_matrix_spectrum() {
        let s = two(0.5);
        assert!(s.eigenvalues.iter().all(|z| *z == C64::new(0.0, 0.0)));
        assert_eq!(s.real_transform().unwrap(), DMatrix::identity(2, 2));
        assert_eq!(s.eta, 0.0);
        assert_eq!(s.rho, 1.0);
    }

    #[test]
    fn three_cycle_spectrum() {
        let c = WalkConfig::new(DirectedGraph::cycle(3).unwrap(), vec![1.0; 3], vec![0.5; 3]).unwrap();
        let b = memory_matrix(&c);
        let s = analyze(&b);
        assert!(s.diagonalizable && !s.real_diagonalizable && !s.symmetric);
        assert!((s.eta - 1.0).abs() < 1e-12);
        assert!((s.eigenvalues[1].re + 0.5).abs() < 1e-12 && s.eigenvalues[1].im > 0.0);
        assert!((s.eigenvalues[2].re + 0.5).abs() < 1e-12 && s.eigenvalues[2].im < 0.0);
        let t = s.transform.as_ref().unwrap();
        let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s.eigenvalues.clone()));
        let res = s.inverse_transform().unwrap() * to_complex(b.matrix()) * t - lambda;
        assert!(res.norm() < 1e-9);
    }

    #[test]
    fn nilpotent_memory_matrix_is_not_diagonalizable() {
        // vertex 1 reads itself with p = 1/2, vertex 2 reads vertex 1 with p = 1
        let g = DirectedGraph::new(2, &[(1, 1), (1, 2)]).unwrap();
        let c = WalkConfig::new(g, vec![0.5, 1.0], vec![0.5, 0.5]).unwrap();
        let s = analyze(&memory_matrix(&c));
        assert!(!s.diagonalizable);
        assert!(s.transform.is_none());
        assert_eq!(s.nu, None);
        let s = analyze_with_multiplicity(&memory_matrix(&c), Some(2));
        assert_eq!(s.nu, Some(2));
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify(&two(0.6), 1e-9).global, Regime::Diffusive);
        assert_eq!(classify(&two(0.75), 1e-9).global, Regime::Critical);
        let label = classify(&two(0.9), 1e-9);
        assert_eq!(label.global, Regime::Superdiffusive);
        assert_eq!(label.per_projection, vec![Regime::Superdiffusive, Regime::Diffusive]);
        assert_eq!(
            classify(&two(0.25), 1e-9).per_projection,
            vec![Regime::Critical, Regime::Diffusive]
        );
    }

    #[test]
    fn spectrum_json_layout() {
        let v = two(0.75).to_json();
        assert_eq!(v["eigenvalues"][0], serde_json::json!([0.5, 0.0]));
        assert!((v["transform"][1][1][0].as_f64().unwrap() + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(v["eta"], serde_json::json!(0.5));
    }
}
