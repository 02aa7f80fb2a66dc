//! Dense linear-algebra kernels for small matrices: matrix exponential,
//! real matrix powers `x^A`, and the continuous Lyapunov solver.

use nalgebra::linalg::Schur;
use nalgebra::{Complex, ComplexField, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex<f64>>;

/// Padé(13) coefficients for the scaling-and-squaring exponential.
const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371_920_351_148_152;

/// Eigenvalues of a real square matrix.
///
/// The unshifted QR iteration can stall on nilpotent inputs or return
/// non-finite values, so a bounded attempt is followed by retries on
/// `A + sI` with the shift removed.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let k = a.nrows();
    let max_iter = 200 * k.max(1);
    let scale = a.amax().max(1.0);
    for shift in [0.0, 0.5, -0.375, 0.8125] {
        let shifted = a + DMatrix::identity(k, k) * (shift * scale);
        if let Some(schur) = Schur::try_new(shifted, f64::EPSILON, max_iter) {
            let values: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().map(|z| z - shift * scale).collect();
            // 2x2 blocks with a vanishing discriminant can come back as NaN
            if values.iter().all(|z| z.is_finite()) {
                return values;
            }
        }
    }
    panic!("QR iteration failed to converge for every shift")
}

pub fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Singular values and right singular vectors (as columns) of a square matrix.
///
/// Golub-Kahan sweeps can stall on some rank-deficient inputs; the adjoint is
/// tried next, then the eigen-decomposition of the Gram matrix `AᴴA`, whose
/// small singular values are only accurate to about `sqrt(eps)`.
pub fn right_singular<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> (DVector<f64>, DMatrix<T>) {
    let max_iter = 500 * a.nrows().max(1);
    if let Some(svd) = a.clone().try_svd(false, true, f64::EPSILON, max_iter) {
        return (svd.singular_values, svd.v_t.expect("requested V").adjoint());
    }
    if let Some(svd) = a.adjoint().try_svd(true, false, f64::EPSILON, max_iter) {
        return (svd.singular_values, svd.u.expect("requested U"));
    }
    let eig = SymmetricEigen::try_new(a.adjoint() * a, f64::EPSILON, max_iter)
        .expect("Hermitian eigen-decomposition converges");
    (eig.eigenvalues.map(|x| x.max(0.0).sqrt()), eig.eigenvectors)
}

/// Largest singular value.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    right_singular(a).0.iter().copied().fold(0.0, f64::max)
}

pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    a.is_square() && (a - a.transpose()).amax() <= tol
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn to_complex(a: &DMatrix<f64>) -> CMatrix {
    a.map(|x| Complex::new(x, 0.0))
}

/// `exp(A)` by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm requires a square matrix");
    let k = a.nrows();
    let id = DMatrix::<f64>::identity(k, k);
    let norm = norm1(a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a / 2f64.powi(squarings);
    let b = &PADE13;
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    let numer = &v + &u;
    let denom = &v - &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .expect("Padé denominator is nonsingular after scaling");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// `x^A = exp(log(x) A)` through the Padé route, regardless of symmetry.
pub fn matrix_power_pade(x: f64, a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(x > 0.0, "matrix_power requires x > 0");
    expm(&(a * x.ln()))
}

/// `x^A` for symmetric `A` through its orthogonal eigendecomposition.
pub fn matrix_power_symmetric(x: f64, a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(x > 0.0, "matrix_power requires x > 0");
    let eig = SymmetricEigen::new(symmetrize(a));
    let diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| x.powf(l)));
    &eig.eigenvectors * diag * eig.eigenvectors.transpose()
}

/// `x^A` for `x > 0`; symmetric matrices go through the eigendecomposition.
pub fn matrix_power(x: f64, a: &DMatrix<f64>) -> DMatrix<f64> {
    if is_symmetric(a, 0.0) {
        matrix_power_symmetric(x, a)
    } else {
        matrix_power_pade(x, a)
    }
}

/// `x -> x^A` for a fixed `A`, reusing one eigendecomposition when `A` is symmetric.
pub struct PowerFamily {
    a: DMatrix<f64>,
    eig: Option<SymmetricEigen<f64, nalgebra::Dyn>>,
}

impl PowerFamily {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let eig = is_symmetric(a, 0.0).then(|| SymmetricEigen::new(a.clone()));
        Self { a: a.clone(), eig }
    }

    pub fn at(&self, x: f64) -> DMatrix<f64> {
        match &self.eig {
            Some(eig) => {
                assert!(x > 0.0, "matrix_power requires x > 0");
                let diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| x.powf(l)));
                &eig.eigenvectors * diag * eig.eigenvectors.transpose()
            }
            None => matrix_power_pade(x, &self.a),
        }
    }
}

/// Solves `A' X + X A = -C` for real `A` whose eigenvalues all have negative
/// real part, by reducing `A` to complex Schur form and back-substituting the
/// triangular Sylvester system.
pub fn lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = a.nrows();
    let (q, r) = to_complex(a).schur().unpack();
    let f = -(q.adjoint() * to_complex(c) * &q);
    // R^H Y + Y R = F, with R upper triangular: solve entries in row-major order.
    let mut y = CMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let mut rhs = f[(i, j)];
            for m in 0..i {
                rhs -= r[(m, i)].conj() * y[(m, j)];
            }
            for l in 0..j {
                rhs -= y[(i, l)] * r[(l, j)];
            }
            let denom = r[(i, i)].conj() + r[(j, j)];
            if denom.norm() < 1e-14 {
                return Err(Error::Singular);
            }
            y[(i, j)] = rhs / denom;
        }
    }
    let x = &q * y * q.adjoint();
    Ok(symmetrize(&x.map(|z| z.re)))
}

/// Relative Frobenius distance `|a - b| / |b|`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
