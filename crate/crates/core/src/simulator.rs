//! Trajectory generation.
//!
//! Two samplers share one stepping engine:
//!
//! * the literal mechanism: elephant `v` picks a uniform in-neighbour `U`, a
//!   uniform past time `D` in `1..=n`, and repeats `X_D^(U)` with probability
//!   `p_v` or flips it;
//! * the conditional mechanism: given `S_n`, the coordinates of `X_{n+1}` are
//!   independent with `P(X_{n+1}^(j) = 1) = 1/2 + (S_n B)_j / (2n)`.
//!
//! Both draw the first step from `Rad(q)` unless it is forced.

use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{MemoryMatrix, WalkConfig};
use crate::linalg::CMatrix;
use crate::rng::{derive_seed, map_replicas, rng_from_seed, ReplicaRng};
use crate::special::{d_scale, C64};
use crate::spectral::Spectrum;

const PROB_TOL: f64 = 1e-12;
const TWO_POW_53: f64 = 9_007_199_254_740_992.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Literal,
    Conditional,
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(Mechanism::Literal),
            "conditional" => Ok(Mechanism::Conditional),
            other => Err(Error::InvalidParameter(format!("unknown mechanism {other:?}"))),
        }
    }
}

/// How the first step `X_1` is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialSteps {
    /// Independent `Rad(q_v)` draws.
    Random,
    /// A fixed vector of `+1` / `-1` entries.
    Forced(Vec<i8>),
    /// `Rad(q)` draws repeated until not all coordinates agree.
    RejectConsensus,
}

/// One-step engine holding `S_n` (and the step history for the literal mechanism).
struct Stepper {
    k: usize,
    mechanism: Mechanism,
    columns: Vec<Vec<(usize, f64)>>,
    in_neighbours: Vec<Vec<usize>>,
    p: Vec<f64>,
    q: Vec<f64>,
    n: usize,
    s: Vec<i64>,
    history: Vec<i8>,
    next: Vec<i8>,
}

impl Stepper {
    fn new(config: &WalkConfig, mechanism: Mechanism) -> Self {
        let k = config.k();
        let b = crate::graph::memory_matrix(config);
        Self {
            k,
            mechanism,
            columns: (0..k).map(|j| b.column_support(j)).collect(),
            in_neighbours: (0..k).map(|v| config.graph().in_neighbours(v).to_vec()).collect(),
            p: config.p().to_vec(),
            q: config.q().to_vec(),
            n: 0,
            s: vec![0; k],
            history: Vec::new(),
            next: vec![0; k],
        }
    }

    /// Conditional-mechanism engine driven by an arbitrary (unchecked) matrix.
    fn from_matrix(b: &DMatrix<f64>, q: &[f64]) -> Self {
        let k = b.nrows();
        let columns = (0..k)
            .map(|j| (0..k).filter(|&i| b[(i, j)] != 0.0).map(|i| (i, b[(i, j)])).collect())
            .collect();
        Self {
            k,
            mechanism: Mechanism::Conditional,
            columns,
            in_neighbours: Vec::new(),
            p: Vec::new(),
            q: q.to_vec(),
            n: 0,
            s: vec![0; k],
            history: Vec::new(),
            next: vec![0; k],
        }
    }

    fn commit(&mut self) {
        for j in 0..self.k {
            self.s[j] += i64::from(self.next[j]);
        }
        if self.mechanism == Mechanism::Literal {
            self.history.extend_from_slice(&self.next);
        }
        self.n += 1;
    }

    fn first(&mut self, rng: &mut ReplicaRng, initial: &InitialSteps) -> Result<()> {
        debug_assert_eq!(self.n, 0);
        match initial {
            InitialSteps::Random => self.draw_first(rng),
            InitialSteps::Forced(x) => {
                if x.len() != self.k || x.iter().any(|&v| v != 1 && v != -1) {
                    return Err(Error::InvalidParameter(format!(
                        "forced first step must be {} entries of +1/-1",
                        self.k
                    )));
                }
                self.next.copy_from_slice(x);
            }
            InitialSteps::RejectConsensus => {
                let all_up: f64 = self.q.iter().product();
                let all_down: f64 = self.q.iter().map(|q| 1.0 - q).product();
                if self.k < 2 || all_up + all_down >= 1.0 - 1e-15 {
                    return Err(Error::InvalidParameter(
                        "first steps cannot avoid consensus under this q".into(),
                    ));
                }
                loop {
                    self.draw_first(rng);
                    if self.next.iter().any(|&x| x != self.next[0]) {
                        break;
                    }
                }
            }
        }
        self.commit();
        Ok(())
    }

    fn draw_first(&mut self, rng: &mut ReplicaRng) {
        for j in 0..self.k {
            self.next[j] = if rng.random_bool(self.q[j]) { 1 } else { -1 };
        }
    }

    fn step(&mut self, rng: &mut ReplicaRng) -> Result<()> {
        let n = self.n;
        match self.mechanism {
            Mechanism::Literal => {
                for v in 0..self.k {
                    let nb = &self.in_neighbours[v];
                    let u = nb[rng.random_range(0..nb.len())];
                    let d = rng.random_range(0..n);
                    let remembered = self.history[d * self.k + u];
                    self.next[v] = if rng.random_bool(self.p[v]) {
                        remembered
                    } else {
                        -remembered
                    };
                }
            }
            Mechanism::Conditional => {
                let nf = n as f64;
                for j in 0..self.k {
                    let drift: f64 = self.columns[j].iter().map(|&(i, b)| self.s[i] as f64 * b).sum();
                    let mut prob = 0.5 + drift * (0.5 / nf);
                    if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&prob) {
                        return Err(Error::ProbabilityOutOfRange {
                            elephant: j + 1,
                            n: n + 1,
                            prob,
                        });
                    }
                    prob = prob.clamp(0.0, 1.0);
                    self.next[j] = if rng.random::<f64>() < prob { 1 } else { -1 };
                }
            }
        }
        self.commit();
        Ok(())
    }
}

impl Stepper {
    /// Steps until `n == target`. Same draws as repeated `step` calls.
    fn advance_to(&mut self, rng: &mut ReplicaRng, target: usize) -> Result<()> {
        if self.mechanism == Mechanism::Literal || self.k > 4 {
            while self.n < target {
                self.step(rng)?;
            }
            return Ok(());
        }
        let k = self.k;
        let mut s = [0.0f64; 4];
        for (x, &v) in s.iter_mut().zip(&self.s) {
            *x = v as f64;
        }
        let mut next = [0.0f64; 4];
        for n in self.n..target {
            let half_inv = 0.5 / n as f64;
            for j in 0..k {
                let drift: f64 = self.columns[j].iter().map(|&(i, b)| s[i] * b).sum();
                let prob = 0.5 + drift * half_inv;
                if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&prob) {
                    return Err(Error::ProbabilityOutOfRange {
                        elephant: j + 1,
                        n: n + 1,
                        prob,
                    });
                }
                // Same event as `random::<f64>() < prob`, without the branch.
                let u = (rng.next_u64() >> 11) as f64;
                next[j] = f64::from(u8::from(u < prob.clamp(0.0, 1.0) * TWO_POW_53)) * 2.0 - 1.0;
            }
            for j in 0..k {
                s[j] += next[j];
            }
        }
        for (v, &x) in self.s.iter_mut().zip(&s) {
            *v = x as i64;
        }
        self.n = target;
        Ok(())
    }
}

/// A full path `S_0, ..., S_horizon`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub seed: u64,
    pub k: usize,
    pub horizon: usize,
    positions: Vec<i64>,
}

impl Trajectory {
    pub fn position(&self, n: usize) -> &[i64] {
        &self.positions[n * self.k..(n + 1) * self.k]
    }

    /// `X_n = S_n - S_{n-1}` for `1 <= n <= horizon`.
    pub fn step(&self, n: usize) -> Vec<i64> {
        assert!(n >= 1 && n <= self.horizon);
        self.position(n)
            .iter()
            .zip(self.position(n - 1))
            .map(|(a, b)| a - b)
            .collect()
    }

    /// `S_0 = 0`, unit steps, `|S_n| <= n` and parity of `S_n + n`.
    pub fn check_invariants(&self) -> Result<()> {
        if self.position(0).iter().any(|&x| x != 0) {
            return Err(Error::InvariantViolation("S_0 must vanish".into()));
        }
        for n in 1..=self.horizon {
            if self.step(n).iter().any(|x| x.abs() != 1) {
                return Err(Error::InvariantViolation(format!("non-unit step at n = {n}")));
            }
            for &s in self.position(n) {
                if s.unsigned_abs() > n as u64 || (s + n as i64).rem_euclid(2) != 0 {
                    return Err(Error::InvariantViolation(format!("position {s} impossible at n = {n}")));
                }
            }
        }
        Ok(())
    }
}

fn run_full(mut stepper: Stepper, seed: u64, horizon: usize, initial: &InitialSteps) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let k = stepper.k;
    let mut rng = rng_from_seed(seed);
    let mut positions = Vec::with_capacity((horizon + 1) * k);
    positions.extend_from_slice(&stepper.s);
    stepper.first(&mut rng, initial)?;
    positions.extend_from_slice(&stepper.s);
    for _ in 1..horizon {
        stepper.step(&mut rng)?;
        positions.extend_from_slice(&stepper.s);
    }
    Ok(Trajectory {
        seed,
        k,
        horizon,
        positions,
    })
}

pub fn simulate(
    config: &WalkConfig,
    mechanism: Mechanism,
    initial: &InitialSteps,
    seed: u64,
    horizon: usize,
) -> Result<Trajectory> {
    run_full(Stepper::new(config, mechanism), seed, horizon, initial)
}

/// Literal memory mechanism with `Rad(q)` first steps.
pub fn simulate_literal(config: &WalkConfig, seed: u64, horizon: usize) -> Result<Trajectory> {
    simulate(config, Mechanism::Literal, &InitialSteps::Random, seed, horizon)
}

/// Conditionally equivalent Rademacher mechanism with `Rad(q)` first steps.
pub fn simulate_conditional(config: &WalkConfig, seed: u64, horizon: usize) -> Result<Trajectory> {
    simulate(config, Mechanism::Conditional, &InitialSteps::Random, seed, horizon)
}

/// Conditional mechanism for an arbitrary matrix; fails with
/// `ProbabilityOutOfRange` when `B` lets a step probability leave `[0, 1]`.
pub fn simulate_conditional_matrix(b: &DMatrix<f64>, q: &[f64], seed: u64, horizon: usize) -> Result<Trajectory> {
    if !b.is_square() || b.nrows() != q.len() {
        return Err(Error::InvalidParameter("matrix and q dimensions differ".into()));
    }
    run_full(Stepper::from_matrix(b, q), seed, horizon, &InitialSteps::Random)
}

/// Geometric grid `floor(c * 1.25^m)` restricted to `[1, horizon)`, plus `horizon`.
pub fn geometric_grid(c: f64, horizon: usize) -> Vec<usize> {
    assert!(c >= 1.0, "grid start must be at least 1");
    let mut grid = Vec::new();
    let mut x = c;
    while (x.floor() as usize) < horizon {
        let t = x.floor() as usize;
        if grid.last() != Some(&t) {
            grid.push(t);
        }
        x *= 1.25;
    }
    grid.push(horizon);
    grid
}

/// Everything that determines one replica apart from its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub mechanism: Mechanism,
    pub initial: InitialSteps,
    pub horizon: usize,
    pub checkpoints: Vec<usize>,
}

impl RunSpec {
    /// Conditional mechanism, random start, geometric checkpoints from 10.
    pub fn new(horizon: usize) -> Self {
        Self {
            mechanism: Mechanism::Conditional,
            initial: InitialSteps::Random,
            horizon,
            checkpoints: geometric_grid(10.0, horizon),
        }
    }

    pub fn with_checkpoints(mut self, checkpoints: Vec<usize>) -> Self {
        self.checkpoints = checkpoints;
        self
    }

    pub fn with_mechanism(mut self, mechanism: Mechanism) -> Self {
        self.mechanism = mechanism;
        self
    }

    pub fn with_initial(mut self, initial: InitialSteps) -> Self {
        self.initial = initial;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        let ok = !self.checkpoints.is_empty()
            && self.checkpoints[0] >= 1
            && self.checkpoints.windows(2).all(|w| w[0] < w[1])
            && *self.checkpoints.last().unwrap() <= self.horizon;
        if !ok {
            return Err(Error::InvalidParameter(
                "checkpoints must be strictly increasing within 1..=horizon".into(),
            ));
        }
        Ok(())
    }
}

/// Runs one replica and returns `S_n` at each checkpoint.
pub fn run_checkpoints(config: &WalkConfig, plan: &RunSpec, seed: u64) -> Result<Vec<Vec<i64>>> {
    plan.validate()?;
    let mut stepper = Stepper::new(config, plan.mechanism);
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(plan.checkpoints.len());
    stepper.first(&mut rng, &plan.initial)?;
    for &c in &plan.checkpoints {
        stepper.advance_to(&mut rng, c)?;
        out.push(stepper.s.clone());
    }
    Ok(out)
}

/// Checkpointed positions of `R` replicas.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub master_seed: u64,
    pub k: usize,
    pub checkpoints: Vec<usize>,
    /// `positions[r][c]` is `S_n` of replica `r` at `checkpoints[c]`.
    pub positions: Vec<Vec<Vec<i64>>>,
}

/// Run metadata written next to the checkpoint CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub master_seed: u64,
    pub replicas: usize,
    pub horizon: usize,
    pub mechanism: Mechanism,
    pub initial: InitialSteps,
    pub checkpoints: Vec<usize>,
    pub code_version: String,
}

pub fn run_ensemble(
    config: &WalkConfig,
    plan: &RunSpec,
    master_seed: u64,
    replicas: usize,
    workers: Option<usize>,
) -> Result<Ensemble> {
    plan.validate()?;
    let positions = map_replicas(replicas, workers, |r| {
        run_checkpoints(config, plan, derive_seed(master_seed, r as u64))
    })?;
    Ok(Ensemble {
        master_seed,
        k: config.k(),
        checkpoints: plan.checkpoints.clone(),
        positions,
    })
}

impl Ensemble {
    pub fn replicas(&self) -> usize {
        self.positions.len()
    }

    /// Positions of every replica at checkpoint index `c`.
    pub fn at(&self, c: usize) -> impl Iterator<Item = &[i64]> + '_ {
        self.positions.iter().map(move |p| p[c].as_slice())
    }

    pub fn checkpoint_index(&self, n: usize) -> Option<usize> {
        self.checkpoints.iter().position(|&t| t == n)
    }

    /// CSV with columns `replica, n, S_1, ..., S_k`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["replica".to_string(), "n".to_string()];
        header.extend((1..=self.k).map(|j| format!("S_{j}")));
        w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for (r, rows) in self.positions.iter().enumerate() {
            for (&n, s) in self.checkpoints.iter().zip(rows) {
                let mut rec = vec![r.to_string(), n.to_string()];
                rec.extend(s.iter().map(i64::to_string));
                w.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn metadata(&self, config: &WalkConfig, plan: &RunSpec) -> RunMetadata {
        RunMetadata {
            config_hash: config.hash(),
            master_seed: self.master_seed,
            replicas: self.replicas(),
            horizon: plan.horizon,
            mechanism: plan.mechanism,
            initial: plan.initial.clone(),
            checkpoints: self.checkpoints.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// `S_n B / n`, the conditional mean of the next step.
pub fn drift(s: &[i64], n: usize, b: &DMatrix<f64>) -> Vec<f64> {
    let nf = n as f64;
    (0..b.ncols())
        .map(|j| (0..b.nrows()).map(|i| s[i] as f64 * b[(i, j)]).sum::<f64>() / nf)
        .collect()
}

/// Row vector `s T`.
pub fn project_point(s: &[i64], t: &CMatrix) -> Vec<C64> {
    (0..t.ncols())
        .map(|j| (0..t.nrows()).map(|i| t[(i, j)] * s[i] as f64).sum())
        .collect()
}

/// Projected walk `S_n T` and projection martingales `L_n = S_n T / d_n - S_2 T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedTrajectory {
    pub times: Vec<usize>,
    pub projected: Vec<Vec<C64>>,
    /// Unset for `n < 2`.
    pub martingale: Vec<Option<Vec<C64>>>,
}

pub fn project(traj: &Trajectory, spectrum: &Spectrum, times: &[usize]) -> Result<ProjectedTrajectory> {
    let t = spectrum.transform.as_ref().ok_or(Error::NotDiagonalizable)?;
    if let Some(&n) = times.iter().find(|&&n| n > traj.horizon) {
        return Err(Error::InvalidParameter(format!(
            "time {n} beyond horizon {}",
            traj.horizon
        )));
    }
    let base = (traj.horizon >= 2).then(|| project_point(traj.position(2), t));
    let projected: Vec<Vec<C64>> = times.iter().map(|&n| project_point(traj.position(n), t)).collect();
    let martingale = times
        .iter()
        .zip(&projected)
        .map(|(&n, hat)| {
            let base = base.as_ref().filter(|_| n >= 2)?;
            Some(
                hat.iter()
                    .zip(&spectrum.eigenvalues)
                    .zip(base)
                    .map(|((h, &lambda), b)| h / d_scale(lambda, n as u64) - b)
                    .collect(),
            )
        })
        .collect();
    Ok(ProjectedTrajectory {
        times: times.to_vec(),
        projected,
        martingale,
    })
}

/// Stochastic-approximation form `Z_{n+1} = Z_n - h(Z_n)/(n+1) + dM_{n+1}/(n+1)`
/// with `Z_n = S_n / n` and `h(z) = z (I - B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaReport {
    pub max_residual: f64,
    /// Largest `|dM_{n+1}|_inf`.
    pub max_increment: f64,
    /// `dM_{n+1} = X_{n+1} - S_n B / n` for `n = 1..horizon-1`.
    pub increments: Vec<Vec<f64>>,
}

pub fn sa_view(traj: &Trajectory, b: &MemoryMatrix) -> Result<SaReport> {
    let b = b.matrix();
    let k = traj.k;
    let mut max_residual: f64 = 0.0;
    let mut max_increment: f64 = 0.0;
    let mut increments = Vec::with_capacity(traj.horizon.saturating_sub(1));
    for n in 1..traj.horizon {
        let nf = n as f64;
        let s = traj.position(n);
        let z: Vec<f64> = s.iter().map(|&x| x as f64 / nf).collect();
        let zb: Vec<f64> = (0..k).map(|j| (0..k).map(|i| z[i] * b[(i, j)]).sum()).collect();
        let x = traj.step(n + 1);
        let dm: Vec<f64> = (0..k).map(|j| x[j] as f64 - zb[j]).collect();
        for j in 0..k {
            let h = z[j] - zb[j];
            let predicted = z[j] - h / (nf + 1.0) + dm[j] / (nf + 1.0);
            let actual = traj.position(n + 1)[j] as f64 / (nf + 1.0);
            max_residual = max_residual.max((predicted - actual).abs());
            max_increment = max_increment.max(dm[j].abs());
        }
        increments.push(dm);
    }
    if max_residual > 1e-12 {
        return Err(Error::InvariantViolation(format!(
            "stochastic-approximation residual {max_residual:e}"
        )));
    }
    Ok(SaReport {
        max_residual,
        max_increment,
        increments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::memory_matrix;
    use crate::spectral::analyze;

    #[test]
    fn deterministic_self_loop() {
        let c = WalkConfig::self_loop(1.0, 1.0).unwrap();
        for t in [
            simulate_literal(&c, 3, 50).unwrap(),
            simulate_conditional(&c, 3, 50).unwrap(),
        ] {
            for n in 0..=50 {
                assert_eq!(t.position(n), &[n as i64]);
            }
        }
    }

    #[test]
    fn two_elephants_full_memory_disagreeing_start() {
        let c = WalkConfig::two_elephants(1.0, 1.0, 0.0).unwrap();
        for seed in 0..20 {
            for t in [
                simulate_literal(&c, seed, 2).unwrap(),
                simulate_conditional(&c, seed, 2).unwrap(),
            ] {
                assert_eq!(t.step(1), vec![1, -1]);
                assert_eq!(t.step(2), vec![-1, 1]);
                assert_eq!(t.position(2), &[0, 0]);
            }
        }
    }

    #[test]
    fn two_elephants_full_memory_agreeing_start_runs_ballistically() {
        let c = WalkConfig::two_elephants(1.0, 0.5, 0.5).unwrap();
        let start = InitialSteps::Forced(vec![1, 1]);
        for m in [Mechanism::Literal, Mechanism::Conditional] {
            let t = simulate(&c, m, &start, 9, 100).unwrap();
            assert_eq!(t.position(100), &[100, 100]);
        }
    }

    #[test]
    fn trajectories_are_reproducible_and_valid() {
        let c = WalkConfig::two_elephants(0.75, 1.0, 0.0).unwrap();
        let a = simulate_literal(&c, 11, 300).unwrap();
        assert_eq!(a, simulate_literal(&c, 11, 300).unwrap());
        a.check_invariants().unwrap();
        let b = simulate_conditional(&c, 11, 300).unwrap();
        assert_eq!(b, simulate_conditional(&c, 11, 300).unwrap());
        b.check_invariants().unwrap();
    }

    #[test]
    fn drift_at_consensus_equals_memory() {
        let c = WalkConfig::two_elephants(0.8, 0.5, 0.5).unwrap();
        let d = drift(&[7, 7], 7, memory_matrix(&c).matrix());
        for x in d {
            assert!((0.5 + x / 2.0 - 0.8).abs() < 1e-15);
        }
    }

    #[test]
    fn probability_outside_unit_interval_is_reported() {
        let b = DMatrix::from_row_slice(1, 1, &[1.5]);
        let err = simulate_conditional_matrix(&b, &[1.0], 0, 3).unwrap_err();
        assert!(
            matches!(err, Error::ProbabilityOutOfRange { elephant: 1, n: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn checkpoint_runner_matches_full_path() {
        let c = WalkConfig::two_elephants(0.6, 0.3, 0.9).unwrap();
        for m in [Mechanism::Literal, Mechanism::Conditional] {
            let plan = RunSpec::new(500).with_mechanism(m);
            let full = simulate(&c, m, &InitialSteps::Random, 77, 500).unwrap();
            let cps = run_checkpoints(&c, &plan, 77).unwrap();
            for (&n, s) in plan.checkpoints.iter().zip(&cps) {
                assert_eq!(full.position(n), s.as_slice());
            }
        }
    }

    #[test]
    fn geometric_grid_shape() {
        let g = geometric_grid(10.0, 100);
        assert_eq!(g, vec![10, 12, 15, 19, 24, 30, 38, 47, 59, 74, 93, 100]);
        assert_eq!(geometric_grid(1.0, 1), vec![1]);
    }

    #[test]
    fn reject_consensus_never_agrees() {
        let c = WalkConfig::two_elephants(0.7, 0.5, 0.5).unwrap();
        let plan = RunSpec::new(1)
            .with_checkpoints(vec![1])
            .with_initial(InitialSteps::RejectConsensus);
        for seed in 0..200 {
            let s = &run_checkpoints(&c, &plan, seed).unwrap()[0];
            assert_ne!(s[0], s[1]);
        }
        let stuck = WalkConfig::two_elephants(0.7, 1.0, 1.0).unwrap();
        assert!(run_checkpoints(&stuck, &plan, 0).is_err());
    }

    #[test]
    fn ensemble_csv_layout() {
        let c = WalkConfig::two_elephants(0.6, 0.5, 0.5).unwrap();
        let plan = RunSpec::new(20).with_checkpoints(vec![5, 20]);
        let e = run_ensemble(&c, &plan, 1, 3, Some(2)).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "replica,n,S_1,S_2");
        assert_eq!(lines.len(), 1 + 3 * 2);
        assert!(lines[2].starts_with("0,20,"));
    }

    #[test]
    fn projection_of_two_elephants() {
        let c = WalkConfig::two_elephants(0.9, 0.5, 0.5).unwrap();
        let plan = analyze(&memory_matrix(&c));
        let t = simulate_conditional(&c, 5, 40).unwrap();
        let p = project(&t, &plan, &[1, 10, 40]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for (i, &n) in [1usize, 10, 40].iter().enumerate() {
            let s = t.position(n);
            assert!((p.projected[i][0].re - h * (s[0] + s[1]) as f64).abs() < 1e-12);
            assert!((p.projected[i][1].re - h * (s[0] - s[1]) as f64).abs() < 1e-12);
        }
        assert!(p.martingale[0].is_none());
    }

    #[test]
    fn projection_with_zero_memory_matrix() {
        let c = WalkConfig::two_elephants(0.5, 0.2, 0.7).unwrap();
        let plan = analyze(&memory_matrix(&c));
        let t = simulate_conditional(&c, 8, 30).unwrap();
        let p = project(&t, &plan, &[2, 30]).unwrap();
        for j in 0..2 {
            assert_eq!(p.projected[1][j].re, t.position(30)[j] as f64);
            let want = (t.position(30)[j] - t.position(2)[j]) as f64;
            assert!((p.martingale[1].as_ref().unwrap()[j].re - want).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_martingale_at_unit_eigenvalue() {
        // d_n(1) = n/2, so L_n + hat S_2 = (2/n) hat S_n
        let c = WalkConfig::two_elephants(1.0, 0.5, 0.5).unwrap();
        let plan = analyze(&memory_matrix(&c));
        let t = simulate_conditional(&c, 4, 64).unwrap();
        let p = project(&t, &plan, &[64]).unwrap();
        let l = p.martingale[0].as_ref().unwrap()[0];
        let base = project_point(t.position(2), plan.transform.as_ref().unwrap())[0];
        assert!((l + base - p.projected[0][0] * (2.0 / 64.0)).norm() < 1e-12);
    }

    #[test]
    fn stochastic_approximation_identity() {
        let c = WalkConfig::two_elephants(0.9, 0.5, 0.5).unwrap();
        let b = memory_matrix(&c);
        let t = simulate_literal(&c, 2, 2000).unwrap();
        let r = sa_view(&t, &b).unwrap();
        assert!(r.max_residual <= 1e-12);
        assert!(r.max_increment <= 2.0);
        assert_eq!(r.increments.len(), 1999);
    }
}
