//! Complex log-gamma and the gamma-ratio scaling sequence.

use nalgebra::Complex;

pub type C64 = Complex<f64>;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Stirling coefficients B_{2m} / (2m (2m - 1)).
const STIRLING: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
    -3617.0 / 122_400.0,
];

/// Principal-branch-free log-gamma for `Re(z) > 0`.
///
/// The imaginary part is only defined modulo 2*pi, which is all callers need
/// since the result is exponentiated.
pub fn ln_gamma(z: C64) -> C64 {
    debug_assert!(z.re > 0.0, "ln_gamma requires Re(z) > 0, got {z}");
    let mut shift = C64::new(0.0, 0.0);
    let mut w = z;
    while w.re < 16.0 {
        shift += w.ln();
        w += 1.0;
    }
    let inv = w.inv();
    let inv2 = inv * inv;
    let mut series = C64::new(0.0, 0.0);
    let mut pow = inv;
    for c in STIRLING {
        series += pow * c;
        pow *= inv2;
    }
    (w - 0.5) * w.ln() - w + HALF_LN_TWO_PI + series - shift
}

/// `d_n(lambda) = prod_{l=2}^{n-1} (1 + lambda / l) = Gamma(lambda + n) / (Gamma(lambda + 2) Gamma(n))`.
///
/// Evaluated through log-gamma differences; `d_2 = 1` (empty product).
pub fn d_scale(lambda: C64, n: u64) -> C64 {
    assert!(n >= 2, "d_scale requires n >= 2");
    if n == 2 {
        return C64::new(1.0, 0.0);
    }
    let nf = n as f64;
    let log = ln_gamma(lambda + nf) - ln_gamma(lambda + 2.0) - ln_gamma(C64::new(nf, 0.0));
    log.exp()
}

/// Real-argument convenience wrapper for [`d_scale`].
pub fn d_scale_real(lambda: f64, n: u64) -> f64 {
    d_scale(C64::new(lambda, 0.0), n).re
}

/// Real gamma function for `x > 0`.
pub fn gamma(x: f64) -> f64 {
    ln_gamma(C64::new(x, 0.0)).re.exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn product(lambda: C64, n: u64) -> C64 {
        (2..n).fold(C64::new(1.0, 0.0), |acc, l| acc * (lambda / l as f64 + 1.0))
    }

    #[test]
    fn ln_gamma_matches_known_values() {
        let cases = [
            (1.0, 0.0),
            (2.0, 0.0),
            (0.5, 0.5 * std::f64::consts::PI.ln()),
            (10.0, 362_880f64.ln()),
        ];
        for (x, want) in cases {
            let got = ln_gamma(C64::new(x, 0.0));
            assert!((got.re - want).abs() < 1e-13, "{x}: {got}");
            assert!(got.im.abs() < 1e-15);
        }
    }

    #[test]
    fn ln_gamma_satisfies_recurrence_off_axis() {
        for &(re, im) in &[(0.3, 0.7), (1.5, -2.0), (3.0, 0.9), (0.05, 1.0)] {
            let z = C64::new(re, im);
            let lhs = (ln_gamma(z + 1.0) - ln_gamma(z)).exp();
            assert!((lhs - z).norm() < 1e-12 * z.norm(), "{z}");
        }
    }

    #[test]
    fn d_scale_examples() {
        assert!((d_scale_real(1.0, 10) - 5.0).abs() < 1e-12);
        for n in [2, 3, 50, 1000] {
            assert!((d_scale_real(0.0, n) - 1.0).abs() < 1e-12);
        }
        assert!((d_scale_real(0.5, 4) - 1.458_333_333_333_333_3).abs() < 1e-12);
    }

    #[test]
    fn d_scale_at_minus_one_is_reciprocal() {
        // prod_{l=2}^{n-1} (1 - 1/l) telescopes to 1/(n-1).
        for n in [3u64, 4, 10, 1000] {
            assert!((d_scale_real(-1.0, n) - 1.0 / (n - 1) as f64).abs() < 1e-13);
        }
    }

    #[test]
    fn d_scale_agrees_with_direct_product() {
        let mut grid = Vec::new();
        for i in -10..=10 {
            for j in -10..=10 {
                let z = C64::new(i as f64 / 10.0, j as f64 / 10.0);
                if z.norm() <= 1.0 {
                    grid.push(z);
                }
            }
        }
        for &z in &grid {
            let mut direct = C64::new(1.0, 0.0);
            for n in 3..=1000u64 {
                direct *= z / (n - 1) as f64 + 1.0;
                let fast = d_scale(z, n);
                let scale = direct.norm().max(1e-300);
                assert!((fast - direct).norm() / scale <= 1e-10, "lambda={z} n={n}");
            }
            assert_eq!(product(z, 2), C64::new(1.0, 0.0));
        }
    }

    #[test]
    fn d_scale_asymptotics() {
        for lambda in [-0.9, -0.5, 0.0, 0.3, 0.5, 0.8, 1.0] {
            let n = 1_000_000u64;
            let ratio = d_scale_real(lambda, n) * gamma(lambda + 2.0) / (n as f64).powf(lambda);
            assert!((ratio - 1.0).abs() <= 0.01, "lambda={lambda}: {ratio}");
        }
    }
}
