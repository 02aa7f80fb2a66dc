//! Exact first and second moments of `S_n`.
//!
//! Taking expectations in `S_{n+1} = S_n (I + B/n) + dM_{n+1}` gives
//! `E[S_{n+1}] = E[S_n] (I + B/n)`. Because the coordinates of `X_{n+1}` are
//! conditionally independent with means `S_n B / n`,
//!
//! ```text
//! M_{n+1} = (I + B/n)' M_n (I + B/n) + I - Diag(B' M_n B) / n^2,   M_n = E[S_n' S_n].
//! ```
//!
//! Both recursions are checked against [`brute_force_distribution`], which
//! enumerates every step history under the literal memory mechanism.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::graph::WalkConfig;
use crate::special::d_scale_real;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub n: usize,
    /// `E[S_n]`.
    pub mean: DVector<f64>,
    /// `M_n = E[S_n' S_n]`.
    pub second: DMatrix<f64>,
}

impl MomentState {
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.second - &self.mean * self.mean.transpose()
    }
}

fn first_mean(q: &[f64]) -> DVector<f64> {
    DVector::from_iterator(q.len(), q.iter().map(|q| 2.0 * q - 1.0))
}

fn first_second(q: &[f64]) -> DMatrix<f64> {
    let m = first_mean(q);
    let mut s = &m * m.transpose();
    s.fill_diagonal(1.0);
    s
}

fn check_dims(b: &DMatrix<f64>, q: &[f64], n_max: usize) -> Result<()> {
    if n_max == 0 {
        return Err(Error::InvalidParameter("n_max must be at least 1".into()));
    }
    if !b.is_square() || b.nrows() != q.len() {
        return Err(Error::InvalidParameter("matrix and q dimensions differ".into()));
    }
    Ok(())
}

/// `E[S_1], ..., E[S_{n_max}]`.
pub fn mean_recursion(b: &DMatrix<f64>, q: &[f64], n_max: usize) -> Result<Vec<DVector<f64>>> {
    check_dims(b, q, n_max)?;
    let k = q.len();
    let id = DMatrix::<f64>::identity(k, k);
    let mut out = Vec::with_capacity(n_max);
    let mut m = first_mean(q);
    out.push(m.clone());
    for n in 1..n_max {
        let step = &id + b / n as f64;
        m = step.transpose() * m;
        out.push(m.clone());
    }
    Ok(out)
}

/// `M_1, ..., M_{n_max}`.
pub fn second_moment_recursion(b: &DMatrix<f64>, q: &[f64], n_max: usize) -> Result<Vec<DMatrix<f64>>> {
    Ok(moment_states(b, q, n_max)?.into_iter().map(|s| s.second).collect())
}

/// One step `n -> n + 1` of both recursions.
fn advance(b: &DMatrix<f64>, id: &DMatrix<f64>, n: usize, mean: &mut DVector<f64>, second: &mut DMatrix<f64>) {
    let nf = n as f64;
    let step = id + b / nf;
    let correction = DMatrix::from_diagonal(&(b.transpose() * &*second * b).diagonal()) / (nf * nf);
    let next = step.transpose() * &*second * &step + id - correction;
    *second = (&next + next.transpose()) * 0.5;
    *mean = step.transpose() * &*mean;
}

/// Joint mean and second-moment recursion.
pub fn moment_states(b: &DMatrix<f64>, q: &[f64], n_max: usize) -> Result<Vec<MomentState>> {
    check_dims(b, q, n_max)?;
    let k = q.len();
    let id = DMatrix::<f64>::identity(k, k);
    let mut mean = first_mean(q);
    let mut second = first_second(q);
    let mut out = Vec::with_capacity(n_max);
    out.push(MomentState {
        n: 1,
        mean: mean.clone(),
        second: second.clone(),
    });
    for n in 1..n_max {
        advance(b, &id, n, &mut mean, &mut second);
        out.push(MomentState {
            n: n + 1,
            mean: mean.clone(),
            second: second.clone(),
        });
    }
    Ok(out)
}

/// Only the final state `M_{n_max}`, without storing the sequence.
pub fn moment_state_at(b: &DMatrix<f64>, q: &[f64], n_max: usize) -> Result<MomentState> {
    check_dims(b, q, n_max)?;
    let k = q.len();
    let id = DMatrix::<f64>::identity(k, k);
    let mut mean = first_mean(q);
    let mut second = first_second(q);
    for n in 1..n_max {
        advance(b, &id, n, &mut mean, &mut second);
    }
    Ok(MomentState { n: n_max, mean, second })
}

/// Exact rational version of [`moment_states`], returning the final state.
pub fn exact_moment_state(
    b: &[Vec<BigRational>],
    q: &[BigRational],
    n_max: usize,
) -> Result<(Vec<BigRational>, Vec<Vec<BigRational>>)> {
    let k = q.len();
    if n_max == 0 || b.len() != k || b.iter().any(|row| row.len() != k) {
        return Err(Error::InvalidParameter("matrix and q dimensions differ".into()));
    }
    let two = BigRational::from_integer(BigInt::from(2));
    let one = BigRational::one();
    let mut mean: Vec<BigRational> = q.iter().map(|q| &two * q - &one).collect();
    let mut second: Vec<Vec<BigRational>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| if i == j { one.clone() } else { &mean[i] * &mean[j] })
                .collect()
        })
        .collect();
    for n in 1..n_max {
        let nr = BigRational::from_integer(BigInt::from(n));
        // step = I + B/n
        let step: Vec<Vec<BigRational>> = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        let e = &b[i][j] / &nr;
                        if i == j {
                            e + &one
                        } else {
                            e
                        }
                    })
                    .collect()
            })
            .collect();
        let mul = |a: &Vec<Vec<BigRational>>, c: &Vec<Vec<BigRational>>, ta: bool| -> Vec<Vec<BigRational>> {
            (0..k)
                .map(|i| {
                    (0..k)
                        .map(|j| {
                            (0..k).fold(BigRational::zero(), |acc, l| {
                                let x = if ta { &a[l][i] } else { &a[i][l] };
                                acc + x * &c[l][j]
                            })
                        })
                        .collect()
                })
                .collect()
        };
        let b_owned: Vec<Vec<BigRational>> = b.to_vec();
        let bmb = mul(&b_owned, &mul(&second, &b_owned, false), true);
        let inner = mul(&second, &step, false);
        let mut next = mul(&step, &inner, true);
        let n2 = &nr * &nr;
        for i in 0..k {
            next[i][i] = &next[i][i] + &one - &bmb[i][i] / &n2;
        }
        second = next;
        mean = (0..k)
            .map(|j| (0..k).fold(BigRational::zero(), |acc, i| acc + &mean[i] * &step[i][j]))
            .collect();
    }
    Ok((mean, second))
}

/// Exact rational conversion of every finite double.
pub fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite value")
}

/// Law of `S_n` obtained by enumerating all step histories.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactLaw {
    pub n: usize,
    /// Probability of each reachable position.
    pub law: BTreeMap<Vec<i64>, f64>,
    pub mean: DVector<f64>,
    pub second: DMatrix<f64>,
}

impl ExactLaw {
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.second - &self.mean * self.mean.transpose()
    }

    pub fn total_probability(&self) -> f64 {
        self.law.values().sum()
    }
}

pub const BRUTE_FORCE_MAX_N: usize = 8;
pub const BRUTE_FORCE_MAX_K: usize = 3;

/// Enumerates every history of `n` steps under the literal mechanism: the
/// first step from `Rad(q)`, then per elephant every in-neighbour `U`, past
/// time `D` and repeat/flip outcome `Y`.
pub fn brute_force_distribution(config: &WalkConfig, n: usize) -> Result<ExactLaw> {
    let k = config.k();
    if n == 0 || n > BRUTE_FORCE_MAX_N || k > BRUTE_FORCE_MAX_K {
        return Err(Error::TooLarge(format!(
            "enumeration needs 1 <= n <= {BRUTE_FORCE_MAX_N} and k <= {BRUTE_FORCE_MAX_K} (got n = {n}, k = {k})"
        )));
    }
    let mut law = BTreeMap::new();
    let mut history: Vec<Vec<i8>> = Vec::with_capacity(n);
    for first in 0..(1usize << k) {
        let x = step_from_bits(first, k);
        let prob: f64 = x
            .iter()
            .zip(config.q())
            .map(|(&s, &q)| if s == 1 { q } else { 1.0 - q })
            .product();
        if prob == 0.0 {
            continue;
        }
        history.push(x);
        extend(config, n, prob, &mut history, &mut law);
        history.pop();
    }
    let mut mean = DVector::zeros(k);
    let mut second = DMatrix::zeros(k, k);
    for (s, &p) in &law {
        let v = DVector::from_iterator(k, s.iter().map(|&x| x as f64));
        mean += &v * p;
        second += &v * v.transpose() * p;
    }
    Ok(ExactLaw { n, law, mean, second })
}

fn step_from_bits(bits: usize, k: usize) -> Vec<i8> {
    (0..k).map(|j| if bits >> j & 1 == 1 { 1 } else { -1 }).collect()
}

/// Probability that elephant `v` steps `+1` after history `h`, summed over
/// every `(U, D, Y)` outcome.
fn literal_up_probability(config: &WalkConfig, v: usize, h: &[Vec<i8>]) -> f64 {
    let nb = config.graph().in_neighbours(v);
    let p = config.p()[v];
    let weight = 1.0 / (nb.len() * h.len()) as f64;
    let mut up = 0.0;
    for &u in nb {
        for past in h {
            for (repeat, py) in [(true, p), (false, 1.0 - p)] {
                let x = if repeat { past[u] } else { -past[u] };
                if x == 1 {
                    up += weight * py;
                }
            }
        }
    }
    up
}

fn extend(config: &WalkConfig, n: usize, prob: f64, history: &mut Vec<Vec<i8>>, law: &mut BTreeMap<Vec<i64>, f64>) {
    let k = config.k();
    if history.len() == n {
        let s: Vec<i64> = (0..k).map(|j| history.iter().map(|x| i64::from(x[j])).sum()).collect();
        *law.entry(s).or_insert(0.0) += prob;
        return;
    }
    let up: Vec<f64> = (0..k).map(|v| literal_up_probability(config, v, history)).collect();
    for bits in 0..(1usize << k) {
        let x = step_from_bits(bits, k);
        let p: f64 = x
            .iter()
            .zip(&up)
            .map(|(&s, &u)| if s == 1 { u } else { 1.0 - u })
            .product();
        if p == 0.0 {
            continue;
        }
        history.push(x);
        extend(config, n, prob * p, history, law);
        history.pop();
    }
}

/// Closed form of `E[s_n^(1) + s_n^(2)]` for two elephants, `n >= 2`.
pub fn two_elephant_mean_sum(p: f64, q1: f64, q2: f64, n: usize) -> f64 {
    4.0 * p * (q1 + q2 - 1.0) * d_scale_real(2.0 * p - 1.0, n as u64)
}

/// Closed form of `E[s_n^(1) - s_n^(2)]` for two elephants, `n >= 2`.
pub fn two_elephant_mean_difference(p: f64, q1: f64, q2: f64, n: usize) -> f64 {
    4.0 * (1.0 - p) * (q1 - q2) * d_scale_real(1.0 - 2.0 * p, n as u64)
}

/// Moment table CSV: `n, mean_1..mean_k, M_11, M_12, ..., M_kk`.
pub fn write_moment_table<W: Write>(states: &[MomentState], writer: W) -> Result<()> {
    let k = states.first().map_or(0, |s| s.mean.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["n".to_string()];
    header.extend((1..=k).map(|j| format!("mean_{j}")));
    for i in 1..=k {
        header.extend((1..=k).map(|j| format!("M_{i}{j}")));
    }
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for s in states {
        let mut rec = vec![s.n.to_string()];
        rec.extend(s.mean.iter().map(|x| x.to_string()));
        for i in 0..k {
            rec.extend((0..k).map(|j| s.second[(i, j)].to_string()));
        }
        w.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
