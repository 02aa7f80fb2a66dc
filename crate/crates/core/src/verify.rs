//! Monte Carlo and deterministic checks of the limit theorems, grouped into suites.
//!
//! Each check produces [`CheckRecord`]s carrying the claim in words, the
//! normaliser applied to the walk, the statistic and its threshold. Records
//! marked `hard` decide the exit status of a suite; soft records are
//! diagnostics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{default_bound_matrices, lambda_grid, product_bounds_check, BoundKind, BoundsReport};
use crate::graph::{memory_matrix, WalkConfig};
use crate::limits::{
    lil_scale, lil_scale_critical, limit_report, sigma1_quadrature, sigma1_with_tol, sigma2_with_tol,
    superdiffusive_profile, symmetric_sigma1,
};
use crate::moments::{
    brute_force_distribution, mean_recursion, moment_state_at, moment_states, two_elephant_mean_difference,
    two_elephant_mean_sum,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::simulator::{geometric_grid, run_checkpoints, run_ensemble, Ensemble, InitialSteps, Mechanism, RunSpec};
use crate::special::d_scale_real;
use crate::spectral::{analyze, classify, classify_value, Regime, Spectrum};
use crate::stats::{
    chi_square_homogeneity, ks_normal, ks_two_sample, linear_fit, mean, quantile, relative_frobenius, variance_with_se,
    MomentAccumulator,
};

/// Frozen default thresholds. Every field can be overridden by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Absolute tolerance on `eta` around 1/2 for the critical regime.
    pub regime: f64,
    /// Enumeration vs recursion, and closed forms vs recursion.
    pub oracle: f64,
    pub quadrature: f64,
    /// Relative Frobenius error of a Monte Carlo covariance vs a limit covariance.
    pub clt_covariance: f64,
    /// Relative Frobenius error of a Monte Carlo covariance vs the exact finite-n covariance.
    pub oracle_covariance: f64,
    /// Relative gap between the exact finite-n covariance and the critical limit.
    pub critical_limit: f64,
    pub ks_alpha: f64,
    pub se_multiplier: f64,
    /// Exponent slack in the law-of-large-numbers envelope.
    pub slln_margin: f64,
    /// 99th percentile of the synchronisation spread at n = 10^4.
    pub sync_spread: f64,
    pub lil_hard: f64,
    pub lil_soft: f64,
    pub fluctuation: f64,
    pub bounds_stability: f64,
    pub equivalence_alpha: f64,
    pub symmetry_alpha: f64,
    pub moment_slope: f64,
    pub moment_slope_critical: f64,
    pub full_memory_mean: f64,
    pub full_memory_variance: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            regime: 1e-9,
            oracle: 1e-10,
            quadrature: 1e-6,
            clt_covariance: 0.1,
            oracle_covariance: 0.05,
            critical_limit: 0.25,
            ks_alpha: 0.01,
            se_multiplier: 4.0,
            slln_margin: 0.2,
            sync_spread: 0.05,
            lil_hard: 1.5,
            lil_soft: 0.5,
            fluctuation: 0.2,
            bounds_stability: 0.05,
            equivalence_alpha: 0.001,
            symmetry_alpha: 0.001,
            moment_slope: 0.1,
            moment_slope_critical: 0.15,
            full_memory_mean: 0.02,
            full_memory_variance: 0.01,
        }
    }
}

impl Tolerances {
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::InvalidParameter(format!("tolerance {key} must be finite")));
        }
        let mut map = match serde_json::to_value(&*self)? {
            serde_json::Value::Object(m) => m,
            _ => unreachable!("tolerances serialize to an object"),
        };
        match map.get_mut(key) {
            Some(slot) => *slot = serde_json::json!(value),
            None => {
                let known: Vec<&String> = map.keys().collect();
                return Err(Error::InvalidParameter(format!(
                    "unknown tolerance {key}; known: {known:?}"
                )));
            }
        }
        *self = serde_json::from_value(serde_json::Value::Object(map))?;
        Ok(())
    }

    pub fn with_overrides(overrides: &BTreeMap<String, f64>) -> Result<Self> {
        let mut t = Self::default();
        for (k, &v) in overrides {
            t.set(k, v)?;
        }
        Ok(t)
    }
}

/// How a statistic is compared with its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtMost,
    Below,
    AtLeast,
    Above,
}

impl Comparison {
    fn holds(self, statistic: f64, threshold: f64) -> bool {
        match self {
            Comparison::AtMost => statistic <= threshold,
            Comparison::Below => statistic < threshold,
            Comparison::AtLeast => statistic >= threshold,
            Comparison::Above => statistic > threshold,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparison::AtMost => "<=",
            Comparison::Below => "<",
            Comparison::AtLeast => ">=",
            Comparison::Above => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    /// The statement being tested, in words.
    pub claim: String,
    /// Normaliser applied to the walk.
    pub scaling: String,
    pub statistic: f64,
    pub comparison: Comparison,
    pub threshold: f64,
    pub pass: bool,
    pub standard_error: Option<f64>,
    pub hard: bool,
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub metrics: BTreeMap<String, f64>,
    pub note: Option<String>,
}

impl CheckRecord {
    pub fn new(name: &str, claim: &str, scaling: &str, statistic: f64, comparison: Comparison, threshold: f64) -> Self {
        Self {
            name: name.into(),
            claim: claim.into(),
            scaling: scaling.into(),
            statistic,
            comparison,
            threshold,
            pass: comparison.holds(statistic, threshold),
            standard_error: None,
            hard: true,
            seed: None,
            replicas: None,
            metrics: BTreeMap::new(),
            note: None,
        }
    }

    pub fn soft(mut self) -> Self {
        self.hard = false;
        self
    }

    pub fn se(mut self, se: f64) -> Self {
        self.standard_error = Some(se);
        self
    }

    pub fn seeded(mut self, seed: u64, replicas: usize) -> Self {
        self.seed = Some(seed);
        self.replicas = Some(replicas);
        self
    }

    pub fn metric(mut self, key: &str, value: f64) -> Self {
        self.metrics.insert(key.into(), value);
        self
    }

    pub fn note(mut self, note: &str) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn hard_failure(&self) -> bool {
        self.hard && !self.pass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Oracle,
    DiffusiveClt,
    CriticalClt,
    Superdiffusive,
    Lil,
    Synchronization,
    Bounds,
    All,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Oracle,
        Suite::DiffusiveClt,
        Suite::CriticalClt,
        Suite::Superdiffusive,
        Suite::Lil,
        Suite::Synchronization,
        Suite::Bounds,
        Suite::All,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Oracle => "oracle",
            Suite::DiffusiveClt => "diffusive-clt",
            Suite::CriticalClt => "critical-clt",
            Suite::Superdiffusive => "superdiffusive",
            Suite::Lil => "lil",
            Suite::Synchronization => "synchronization",
            Suite::Bounds => "bounds",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown suite {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub suite: Suite,
    pub config_hash: String,
    pub master_seed: u64,
    pub replicas: usize,
    pub horizon: usize,
    pub tolerances: Tolerances,
    pub records: Vec<CheckRecord>,
    /// The bound grid, when the suite ran it; exported as CSV.
    #[serde(skip)]
    pub bounds: Option<BoundsReport>,
    /// Wall-clock time; kept out of the JSON so reports are reproducible byte for byte.
    #[serde(skip)]
    pub runtime: Duration,
}

impl VerificationReport {
    pub fn hard_failures(&self) -> Vec<&CheckRecord> {
        self.records.iter().filter(|r| r.hard_failure()).collect()
    }

    pub fn passed(&self) -> bool {
        self.hard_failures().is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width text table, one line per record.
    pub fn table(&self) -> String {
        let mut out = format!(
            "suite {}  config {}  seed {}  replicas {}  horizon {}\n",
            self.suite,
            &self.config_hash[..12.min(self.config_hash.len())],
            self.master_seed,
            self.replicas,
            self.horizon
        );
        let width = self.records.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        for r in &self.records {
            let status = match (r.pass, r.hard) {
                (true, _) => "PASS",
                (false, true) => "FAIL",
                (false, false) => "fail (soft)",
            };
            out.push_str(&format!(
                "{:<width$}  {:>14.6e} {:>2} {:<12.6e}  {}\n",
                r.name,
                r.statistic,
                r.comparison.symbol(),
                r.threshold,
                status
            ));
        }
        out.push_str(&format!(
            "{} records, {} hard failures",
            self.records.len(),
            self.hard_failures().len()
        ));
        // runtime is not persisted, so a reloaded report has none
        if !self.runtime.is_zero() {
            out.push_str(&format!(", {:.2} s", self.runtime.as_secs_f64()));
        }
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub master_seed: u64,
    pub replicas: usize,
    pub horizon: usize,
    pub workers: Option<usize>,
    pub tolerances: Tolerances,
}

impl VerifyOptions {
    pub fn new(master_seed: u64, replicas: usize, horizon: usize) -> Self {
        Self {
            master_seed,
            replicas,
            horizon,
            workers: None,
            tolerances: Tolerances::default(),
        }
    }

    /// Master seed of one check, so that adding checks never shifts the others.
    pub fn seed_for(&self, stream: u64) -> u64 {
        derive_seed(self.master_seed, stream)
    }
}

// Stream ids for `VerifyOptions::seed_for`.
const STREAM_EQUIV_LITERAL: u64 = 1 << 40;
const STREAM_EQUIV_CONDITIONAL: u64 = (1 << 40) + 1;
const STREAM_CLT: u64 = (1 << 40) + 2;
const STREAM_SLLN: u64 = (1 << 40) + 3;
const STREAM_SUPER: u64 = (1 << 40) + 4;
const STREAM_FULL_MEMORY: u64 = (1 << 40) + 5;
const STREAM_FULL_MEMORY_MIRROR: u64 = (1 << 40) + 6;
const STREAM_SYNC: u64 = (1 << 40) + 7;
const STREAM_LIL: u64 = (1 << 40) + 8;
const STREAM_MOMENTS: u64 = (1 << 40) + 9;
const STREAM_JITTER: u64 = u64::MAX;

fn require_regime(spectrum: &Spectrum, want: Regime, tol: f64) -> Result<()> {
    let got = classify_value(spectrum.eta, tol);
    if got != want {
        return Err(Error::RegimeMismatch(format!(
            "expected {want:?} walk, eta = {} is {got:?}",
            spectrum.eta
        )));
    }
    Ok(())
}

fn as_f64(s: &[i64]) -> Vec<f64> {
    s.iter().map(|&x| x as f64).collect()
}

fn dot(s: &[i64], t: &[f64]) -> f64 {
    s.iter().zip(t).map(|(&a, b)| a as f64 * b).sum()
}

/// Brute-force enumeration against the mean and second-moment recursions for `n <= n_max`.
pub fn oracle_check(config: &WalkConfig, n_max: usize, tol: &Tolerances) -> Result<CheckRecord> {
    let b = memory_matrix(config);
    let states = moment_states(b.matrix(), config.q(), n_max)?;
    let mut worst: f64 = 0.0;
    for state in &states {
        let law = brute_force_distribution(config, state.n)?;
        worst = worst
            .max((&law.mean - &state.mean).amax())
            .max((&law.second - &state.second).amax());
    }
    Ok(CheckRecord::new(
        "oracle.enumeration_vs_recursion",
        "the mean and second-moment recursions equal the moments of the enumerated law",
        "S_n",
        worst,
        Comparison::AtMost,
        tol.oracle,
    )
    .metric("n_max", n_max as f64))
}

/// Which closed form for the two-elephant means is tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanForm {
    /// `E[s1 + s2] = 2(2p-1)(q1+q2-1) d_n(2p-1)`, `E[s1 - s2] = 2(1-2p)(q1-q2) d_n(1-2p)`.
    Stated,
    /// `E[s1 + s2] = 4p(q1+q2-1) d_n(2p-1)`, `E[s1 - s2] = 4(1-p)(q1-q2) d_n(1-2p)`.
    Corrected,
}

/// Largest relative deviation `|a - b| / max(1, |b|)` between the mean
/// recursion and a two-elephant closed form over `2 <= n <= n_max`.
pub fn closed_form_mean_deviation(config: &WalkConfig, n_max: usize, form: MeanForm) -> Result<f64> {
    let p = config
        .two_elephant_memory()
        .ok_or_else(|| Error::InvalidParameter("closed-form means need the two-elephant graph".into()))?;
    let (q1, q2) = (config.q()[0], config.q()[1]);
    let means = mean_recursion(memory_matrix(config).matrix(), config.q(), n_max)?;
    let mut worst: f64 = 0.0;
    for (i, m) in means.iter().enumerate().skip(1) {
        let n = i + 1;
        let (sum, diff) = match form {
            MeanForm::Stated => (
                2.0 * (2.0 * p - 1.0) * (q1 + q2 - 1.0) * d_scale_real(2.0 * p - 1.0, n as u64),
                2.0 * (1.0 - 2.0 * p) * (q1 - q2) * d_scale_real(1.0 - 2.0 * p, n as u64),
            ),
            MeanForm::Corrected => (
                two_elephant_mean_sum(p, q1, q2, n),
                two_elephant_mean_difference(p, q1, q2, n),
            ),
        };
        worst = worst
            .max((m[0] + m[1] - sum).abs() / sum.abs().max(1.0))
            .max((m[0] - m[1] - diff).abs() / diff.abs().max(1.0));
    }
    Ok(worst)
}

pub fn closed_form_mean_check(
    config: &WalkConfig,
    n_max: usize,
    form: MeanForm,
    tol: &Tolerances,
) -> Result<CheckRecord> {
    let worst = closed_form_mean_deviation(config, n_max, form)?;
    let rec = match form {
        MeanForm::Stated => CheckRecord::new(
            "oracle.closed_form_mean_stated",
            "E[s1+s2] = 2(2p-1)(q1+q2-1) d_n(2p-1) and E[s1-s2] = 2(1-2p)(q1-q2) d_n(1-2p)",
            "S_n",
            worst,
            Comparison::AtMost,
            tol.oracle,
        )
        .soft()
        .note("stated prefactors disagree with E[S_2] = E[S_1](I + B); see oracle.closed_form_mean"),
        MeanForm::Corrected => CheckRecord::new(
            "oracle.closed_form_mean",
            "E[s1+s2] = 4p(q1+q2-1) d_n(2p-1) and E[s1-s2] = 4(1-p)(q1-q2) d_n(1-2p)",
            "S_n",
            worst,
            Comparison::AtMost,
            tol.oracle,
        ),
    };
    Ok(rec.metric("n_max", n_max as f64))
}

/// Lyapunov solution of the diffusive covariance against `(I - 2B)^{-1}`
/// (symmetric `B` only) and against quadrature of its integral form.
pub fn lyapunov_check(config: &WalkConfig, tol: &Tolerances) -> Result<Vec<CheckRecord>> {
    let b = memory_matrix(config);
    let spectrum = analyze(&b);
    require_regime(&spectrum, Regime::Diffusive, tol.regime)?;
    let sigma = sigma1_with_tol(&b, tol.regime)?;
    let mut out = Vec::new();
    if let Some(direct) = symmetric_sigma1(&b) {
        out.push(CheckRecord::new(
            "oracle.lyapunov_vs_inverse",
            "for symmetric B the diffusive covariance equals (I - 2B)^{-1}",
            "sqrt(n)",
            (&sigma - direct).amax(),
            Comparison::AtMost,
            tol.oracle,
        ));
    }
    let t_max = (40.0 / (1.0 - 2.0 * spectrum.eta)).max(80.0);
    let quad = sigma1_quadrature(b.matrix(), t_max, 8000);
    out.push(
        CheckRecord::new(
            "oracle.lyapunov_vs_quadrature",
            "the diffusive covariance equals the integral of exp(tA') exp(tA), A = B - I/2",
            "sqrt(n)",
            (&sigma - quad).amax(),
            Comparison::AtMost,
            tol.quadrature,
        )
        .metric("t_max", t_max),
    );
    Ok(out)
}

/// `(estimate, standard error)` pairs.
type Estimates = Vec<(f64, f64)>;

/// Per-entry mean and covariance of a sample, with standard errors.
fn moments_with_se(x: &[Vec<i64>]) -> (Estimates, Estimates) {
    let k = x[0].len();
    let r = x.len() as f64;
    let cols: Vec<Vec<f64>> = (0..k).map(|i| x.iter().map(|s| s[i] as f64).collect()).collect();
    let means: Vec<f64> = cols.iter().map(|c| mean(c)).collect();
    let mut m = Vec::new();
    for (c, &mu) in cols.iter().zip(&means) {
        let (v, _) = variance_with_se(c);
        m.push((mu, (v / r).sqrt()));
    }
    let mut cov = Vec::new();
    for i in 0..k {
        for j in i..k {
            let prod: Vec<f64> = cols[i]
                .iter()
                .zip(&cols[j])
                .map(|(a, b)| (a - means[i]) * (b - means[j]))
                .collect();
            let (v, _) = variance_with_se(&prod);
            cov.push((mean(&prod), (v / r).sqrt()));
        }
    }
    (m, cov)
}

/// Chi-square homogeneity of the joint law of `S_n` under the literal and
/// conditional samplers, plus agreement of means and covariances within
/// `se_multiplier` standard errors.
pub fn mechanism_equivalence_check(config: &WalkConfig, n: usize, opts: &VerifyOptions) -> Result<Vec<CheckRecord>> {
    let plan = RunSpec::new(n).with_checkpoints(vec![n]);
    let lit_seed = opts.seed_for(STREAM_EQUIV_LITERAL);
    let cond_seed = opts.seed_for(STREAM_EQUIV_CONDITIONAL);
    let lit = run_ensemble(
        config,
        &plan.clone().with_mechanism(Mechanism::Literal),
        lit_seed,
        opts.replicas,
        opts.workers,
    )?;
    let cond = run_ensemble(
        config,
        &plan.with_mechanism(Mechanism::Conditional),
        cond_seed,
        opts.replicas,
        opts.workers,
    )?;
    let a: Vec<Vec<i64>> = lit.at(0).map(<[i64]>::to_vec).collect();
    let c: Vec<Vec<i64>> = cond.at(0).map(<[i64]>::to_vec).collect();
    let claim = "the literal memory mechanism and the conditional Bernoulli sampler give the same law of S_n";
    let mut out = Vec::new();
    let rec = match chi_square_homogeneity(&a, &c, 5.0) {
        Ok(chi) => CheckRecord::new(
            "oracle.mechanism_equivalence",
            claim,
            "S_n",
            chi.p_value,
            Comparison::Above,
            opts.tolerances.equivalence_alpha,
        )
        .metric("chi_square", chi.statistic)
        .metric("dof", chi.dof as f64),
        Err(Error::InvalidParameter(msg)) => CheckRecord::new(
            "oracle.mechanism_equivalence",
            claim,
            "S_n",
            f64::NAN,
            Comparison::Above,
            opts.tolerances.equivalence_alpha,
        )
        .soft()
        .note(&format!("too few replicas for the chi-square test: {msg}")),
        Err(e) => return Err(e),
    };
    out.push(
        rec.seeded(lit_seed, opts.replicas)
            .metric("n", n as f64)
            .metric("conditional_seed", cond_seed as f64),
    );
    let (ma, ca) = moments_with_se(&a);
    let (mc, cc) = moments_with_se(&c);
    let z = |x: &[(f64, f64)], y: &[(f64, f64)]| {
        x.iter()
            .zip(y)
            .map(|(&(u, su), &(v, sv))| (u - v).abs() / (su * su + sv * sv).sqrt().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    };
    for (name, x, y) in [("mean", &ma, &mc), ("covariance", &ca, &cc)] {
        out.push(
            CheckRecord::new(
                &format!("oracle.mechanism_equivalence_{name}"),
                claim,
                "S_n, largest two-sample z-score over entries",
                z(x, y),
                Comparison::AtMost,
                opts.tolerances.se_multiplier,
            )
            .seeded(lit_seed, opts.replicas),
        );
    }
    Ok(out)
}

/// Normaliser of a central limit theorem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CltScaling {
    /// `sqrt(n)`.
    Diffusive,
    /// `sqrt(n log n)`.
    Critical,
}

impl CltScaling {
    pub fn scale(self, n: usize) -> f64 {
        let nf = n as f64;
        match self {
            CltScaling::Diffusive => nf.sqrt(),
            CltScaling::Critical => (nf * nf.ln()).sqrt(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CltScaling::Diffusive => "sqrt(n)",
            CltScaling::Critical => "sqrt(n log n)",
        }
    }

    fn regime(self) -> Regime {
        match self {
            CltScaling::Diffusive => Regime::Diffusive,
            CltScaling::Critical => Regime::Critical,
        }
    }
}

/// `R` independent copies of `S_n`, kept as integers.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointSample {
    pub n: usize,
    pub master_seed: u64,
    pub positions: Vec<Vec<i64>>,
}

pub fn endpoint_sample(
    config: &WalkConfig,
    n: usize,
    master_seed: u64,
    opts: &VerifyOptions,
) -> Result<EndpointSample> {
    let plan = RunSpec::new(n).with_checkpoints(vec![n]);
    let ens = run_ensemble(config, &plan, master_seed, opts.replicas, opts.workers)?;
    Ok(EndpointSample {
        n,
        master_seed,
        positions: ens.at(0).map(<[i64]>::to_vec).collect(),
    })
}

impl EndpointSample {
    /// Sample covariance of `S_n / scale`.
    pub fn covariance(&self, scale: f64) -> DMatrix<f64> {
        let acc: MomentAccumulator = self.positions.iter().map(|s| as_f64(s)).collect();
        acc.covariance() / (scale * scale)
    }
}

/// Exact covariance of `S_n` from the moment recursions.
pub fn oracle_covariance(config: &WalkConfig, n: usize) -> Result<DMatrix<f64>> {
    Ok(moment_state_at(memory_matrix(config).matrix(), config.q(), n)?.covariance())
}

/// Relative Frobenius error of the sample covariance of `S_n / a_n` against `target`.
pub fn covariance_record(
    name: &str,
    claim: &str,
    sample: &EndpointSample,
    scaling: CltScaling,
    target: &DMatrix<f64>,
    tol: f64,
) -> CheckRecord {
    let emp = sample.covariance(scaling.scale(sample.n));
    let r = sample.positions.len() as f64;
    CheckRecord::new(
        name,
        claim,
        scaling.label(),
        relative_frobenius(&emp, target),
        Comparison::AtMost,
        tol,
    )
    .se((2.0 / r).sqrt())
    .seeded(sample.master_seed, sample.positions.len())
    .metric("n", sample.n as f64)
    .metric("empirical_11", emp[(0, 0)])
    .metric("target_11", target[(0, 0)])
}

/// Kolmogorov-Smirnov normality of each standardised projection of `S_n / a_n`,
/// Bonferroni-corrected over projections. Eigenvectors of `B` are used when
/// `B` is real-diagonalisable, principal axes of `target` otherwise.
///
/// `S_n` lives on a lattice of spacing 2 per coordinate; each coordinate is
/// spread uniformly over its cell before projecting so that the law is continuous.
pub fn normality_record(
    config: &WalkConfig,
    sample: &EndpointSample,
    scaling: CltScaling,
    target: &DMatrix<f64>,
    alpha: f64,
) -> Result<CheckRecord> {
    let k = config.k();
    let b = memory_matrix(config);
    let spectrum = analyze(&b);
    let directions = match spectrum.real_transform() {
        Some(t) => t,
        None => SymmetricEigen::new(target.clone()).eigenvectors,
    };
    let mean_n = mean_recursion(b.matrix(), config.q(), sample.n)?.pop().expect("n >= 1");
    let a = scaling.scale(sample.n);
    let mut rng = rng_from_seed(derive_seed(sample.master_seed, STREAM_JITTER));
    let jittered: Vec<Vec<f64>> = sample
        .positions
        .iter()
        .map(|s| s.iter().map(|&x| x as f64 + rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut min_p: f64 = 1.0;
    let mut max_d: f64 = 0.0;
    for j in 0..k {
        let t = directions.column(j);
        let sd = (t.transpose() * target * t)[(0, 0)].sqrt();
        let centre = mean_n.dot(&t);
        let z: Vec<f64> = jittered
            .iter()
            .map(|x| (DVector::from_column_slice(x).dot(&t) - centre) / (a * sd))
            .collect();
        let ks = ks_normal(&z);
        min_p = min_p.min(ks.p_value);
        max_d = max_d.max(ks.statistic);
    }
    Ok(CheckRecord::new(
        &format!("{}.normality", scaling_prefix(scaling)),
        "each eigen-projection of the normalised walk is asymptotically normal with the target variance",
        scaling.label(),
        min_p,
        Comparison::AtLeast,
        alpha / k as f64,
    )
    .seeded(sample.master_seed, sample.positions.len())
    .metric("max_ks_statistic", max_d)
    .metric("projections", k as f64)
    .note("two-sided KS per projection at alpha / k (Bonferroni); lattice jitter uniform on each cell"))
}

fn scaling_prefix(scaling: CltScaling) -> &'static str {
    match scaling {
        CltScaling::Diffusive => "diffusive_clt",
        CltScaling::Critical => "critical_clt",
    }
}

/// Sample covariance of `S_n / a_n` against `sigma_theory` plus projection normality.
pub fn clt_covariance_check(
    config: &WalkConfig,
    scaling: CltScaling,
    sigma_theory: &DMatrix<f64>,
    n: usize,
    tol: f64,
    opts: &VerifyOptions,
) -> Result<Vec<CheckRecord>> {
    let spectrum = analyze(&memory_matrix(config));
    require_regime(&spectrum, scaling.regime(), opts.tolerances.regime)?;
    let sample = endpoint_sample(config, n, opts.seed_for(STREAM_CLT), opts)?;
    Ok(vec![
        covariance_record(
            &format!("{}.covariance", scaling_prefix(scaling)),
            "the covariance of the normalised walk matches the target covariance",
            &sample,
            scaling,
            sigma_theory,
            tol,
        ),
        normality_record(config, &sample, scaling, sigma_theory, opts.tolerances.ks_alpha)?,
    ])
}

/// Relative gap between the exact covariance of `S_n / a_n` and its limit,
/// at `n` and along a geometric grid; the log-log slope of the gap must be negative.
pub fn covariance_convergence_check(
    config: &WalkConfig,
    scaling: CltScaling,
    limit: &DMatrix<f64>,
    n: usize,
    tol: f64,
) -> Result<Vec<CheckRecord>> {
    let b = memory_matrix(config);
    let states = moment_states(b.matrix(), config.q(), n)?;
    let grid: Vec<usize> = geometric_grid(10.0, n).into_iter().filter(|&m| m >= 10).collect();
    let gaps: Vec<f64> = grid
        .iter()
        .map(|&m| {
            let a = scaling.scale(m);
            relative_frobenius(&(states[m - 1].covariance() / (a * a)), limit)
        })
        .collect();
    let gap = *gaps.last().expect("grid ends at n");
    let prefix = scaling_prefix(scaling);
    let mut out = vec![CheckRecord::new(
        &format!("{prefix}.oracle_vs_limit"),
        "the exact finite-n covariance of the normalised walk is close to the limit covariance",
        scaling.label(),
        gap,
        Comparison::AtMost,
        tol,
    )
    .metric("n", n as f64)];
    if grid.len() >= 3 {
        let x: Vec<f64> = grid.iter().map(|&m| (m as f64).ln()).collect();
        let y: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
        let half = x.len() / 2;
        let fit = linear_fit(&x[half..], &y[half..]);
        out.push(
            CheckRecord::new(
                &format!("{prefix}.oracle_gap_slope"),
                "the gap between the exact covariance and the limit shrinks with n",
                "log-log slope over the upper half of the grid",
                fit.slope,
                Comparison::Below,
                0.0,
            )
            .se(fit.slope_se),
        );
    }
    Ok(out)
}

/// `S_n / n -> 0` at a power rate: over the last two decades the log-log
/// slope of the 99th percentile of `|S_n| / n` is at most `max(eta, 1/2) - 1 + margin`.
pub fn slln_check(config: &WalkConfig, horizon: usize, opts: &VerifyOptions) -> Result<CheckRecord> {
    let tol = &opts.tolerances;
    let spectrum = analyze(&memory_matrix(config));
    let grid: Vec<usize> = geometric_grid(10.0, horizon)
        .into_iter()
        .filter(|&n| n * 100 >= horizon)
        .collect();
    if grid.len() < 3 {
        return Err(Error::InvalidParameter("horizon too short for a rate".into()));
    }
    let seed = opts.seed_for(STREAM_SLLN);
    let ens = run_ensemble(
        config,
        &RunSpec::new(horizon).with_checkpoints(grid.clone()),
        seed,
        opts.replicas,
        opts.workers,
    )?;
    let exponent = spectrum.eta.max(0.5) - 1.0 + tol.slln_margin;
    let mut x = Vec::with_capacity(grid.len());
    let mut y = Vec::with_capacity(grid.len());
    for (c, &n) in grid.iter().enumerate() {
        let norms: Vec<f64> = ens
            .at(c)
            .map(|s| as_f64(s).iter().map(|x| x * x).sum::<f64>().sqrt() / n as f64)
            .collect();
        x.push((n as f64).ln());
        y.push(quantile(&norms, 0.99).max(f64::MIN_POSITIVE).ln());
    }
    let fit = linear_fit(&x, &y);
    let rec = CheckRecord::new(
        "slln.rate",
        "S_n / n tends to zero at the power rate set by max(eta, 1/2)",
        "log-log slope of the 99th percentile of |S_n| / n",
        fit.slope,
        Comparison::AtMost,
        exponent,
    )
    .se(fit.slope_se)
    .seeded(seed, opts.replicas)
    .metric("q99_at_horizon", y.last().expect("non-empty").exp());
    if spectrum.eta >= 1.0 - tol.regime {
        return Ok(rec
            .soft()
            .note("eta = 1: S_n / n has a random non-zero limit, rate reported only"));
    }
    Ok(rec)
}

/// Geometric grid with ratio `sqrt(10)` from `start`, within `horizon`.
fn half_decade_grid(start: usize, horizon: usize) -> Vec<usize> {
    (0..)
        .map(|i| (start as f64 * 10f64.powf(i as f64 / 2.0)).round() as usize)
        .take_while(|&n| n <= horizon)
        .collect()
}

/// Almost-sure limit of `S_n / d_n(eta)`: Cauchy behaviour of the leading
/// projection martingale, its mean and a positive variance. For real
/// leading eigenvalues with `eta < 1` the fluctuation variance of the
/// martingale is checked as well.
pub fn superdiffusive_limit_check(
    config: &WalkConfig,
    horizon: usize,
    opts: &VerifyOptions,
) -> Result<Vec<CheckRecord>> {
    let tol = &opts.tolerances;
    let b = memory_matrix(config);
    let spectrum = analyze(&b);
    if classify_value(spectrum.eta, tol.regime) != Regime::Superdiffusive {
        return Err(Error::NotSuperdiffusive(spectrum.eta));
    }
    let profile = superdiffusive_profile(config, &spectrum, tol.regime)?;
    let lambda = spectrum
        .real_eigenvalue(0)
        .ok_or_else(|| Error::Unsupported("limit checks need a real leading eigenvalue".into()))?;
    let t = spectrum.transform.as_ref().ok_or(Error::NotDiagonalizable)?;
    let t0: Vec<f64> = t.column(0).iter().map(|z| z.re).collect();
    let cauchy = half_decade_grid((horizon / 100).max(10), horizon);
    let fluct_n = horizon / 100;
    let mut grid: Vec<usize> = cauchy.clone();
    grid.push(horizon);
    if fluct_n >= 2 {
        grid.push(fluct_n);
    }
    grid.sort_unstable();
    grid.dedup();
    let seed = opts.seed_for(STREAM_SUPER);
    let ens = run_ensemble(
        config,
        &RunSpec::new(horizon).with_checkpoints(grid.clone()),
        seed,
        opts.replicas,
        opts.workers,
    )?;
    let r = ens.replicas();
    let idx = |n: usize| ens.checkpoint_index(n).expect("checkpoint present");
    let martingale = |c: usize, n: usize| -> Vec<f64> {
        let d = d_scale_real(lambda, n as u64);
        ens.at(c).map(|s| dot(s, &t0) / d).collect()
    };
    let mut out = Vec::new();

    let ms: Vec<f64> = cauchy
        .windows(2)
        .map(|w| {
            let a = martingale(idx(w[0]), w[0]);
            let b = martingale(idx(w[1]), w[1]);
            mean(&a.iter().zip(&b).map(|(x, y)| (y - x).powi(2)).collect::<Vec<_>>())
        })
        .collect();
    let worst_ratio = ms.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    let mut rec = CheckRecord::new(
        "superdiffusive.cauchy",
        "mean-square increments of the leading projection martingale decrease along half-decade checkpoints",
        "hat S_n / d_n(lambda_1)",
        worst_ratio,
        Comparison::Below,
        1.0,
    )
    .seeded(seed, r);
    for (i, v) in ms.iter().enumerate() {
        rec = rec.metric(&format!("increment_ms_{i}"), *v);
    }
    if ms.len() < 2 {
        rec = rec.soft().note("horizon too short for two increments");
    }
    out.push(rec);

    let n_last = horizon;
    let c_last = idx(n_last);
    let d_eta = d_scale_real(spectrum.eta, n_last as u64);
    if let Some(target) = &profile.coordinate_limit_mean {
        let mut worst_z: f64 = 0.0;
        let mut rec_metrics = Vec::new();
        for (i, &want) in target.iter().enumerate() {
            let x: Vec<f64> = ens.at(c_last).map(|s| s[i] as f64 / d_eta).collect();
            let m = mean(&x);
            let (v, _) = variance_with_se(&x);
            let se = (v / r as f64).sqrt();
            worst_z = worst_z.max((m - want).abs() / se);
            rec_metrics.push((format!("mean_{}", i + 1), m));
            rec_metrics.push((format!("target_{}", i + 1), want));
            rec_metrics.push((format!("se_{}", i + 1), se));
        }
        let mut rec = CheckRecord::new(
            "superdiffusive.limit_mean",
            "each coordinate of S_n / d_n(eta) converges to a limit with the predicted mean",
            "S_n / d_n(eta)",
            worst_z,
            Comparison::AtMost,
            tol.se_multiplier,
        )
        .seeded(seed, r);
        for (k, v) in rec_metrics {
            rec = rec.metric(&k, v);
        }
        out.push(rec.note("statistic is max |mean - target| / SE over coordinates"));
    }

    let proxy = martingale(c_last, n_last);
    let (v, se) = variance_with_se(&proxy);
    out.push(
        CheckRecord::new(
            "superdiffusive.limit_variance",
            "the limit of the leading projection martingale is non-degenerate",
            "hat S_n / d_n(lambda_1), lower confidence bound of the variance",
            v - tol.se_multiplier * se,
            Comparison::Above,
            0.0,
        )
        .se(se)
        .seeded(seed, r)
        .metric("variance", v),
    );

    if fluct_n >= 2 {
        let c_f = idx(fluct_n);
        let nf = fluct_n as f64;
        let ratio = nf / horizon as f64;
        for sp in &profile.projections {
            let (Some(var_limit), true) = (sp.fluctuation_variance, sp.lambda[1] == 0.0) else {
                continue;
            };
            let l = sp.lambda[0];
            let tj: Vec<f64> = t.column(sp.index).iter().map(|z| z.re).collect();
            let dn = d_scale_real(l, fluct_n as u64);
            let dn_last = d_scale_real(l, horizon as u64);
            let w = nf.powf(l - 0.5);
            let x: Vec<f64> = ens
                .at(c_f)
                .zip(ens.at(c_last))
                .map(|(a, b)| w * (dot(a, &tj) / dn - dot(b, &tj) / dn_last))
                .collect();
            let (emp, se) = variance_with_se(&x);
            let target = var_limit * (1.0 - ratio.powf(2.0 * l - 1.0));
            out.push(
                CheckRecord::new(
                    &format!("superdiffusive.fluctuation_projection_{}", sp.index + 1),
                    "the fluctuation of the projection martingale around its limit has the predicted variance",
                    "n^{lambda - 1/2} (hat S_n / d_n - hat S_N / d_N), N = 100 n",
                    (emp - target).abs() / target,
                    Comparison::AtMost,
                    tol.fluctuation,
                )
                .se(se / target)
                .seeded(seed, r)
                .metric("empirical", emp)
                .metric("target", target)
                .metric("sigma_lambda_sq", var_limit)
                .note("target is sigma^2(lambda) (1 - (n/N)^{2 lambda - 1}) since the limit is proxied at N"),
            );
        }
        if let Some(te) = profile.two_elephants.as_ref().filter(|te| te.sigma_1.is_some()) {
            let sigma_1 = te.sigma_1.expect("filtered");
            let w = nf.powf(spectrum.eta - 0.5);
            let dn = d_scale_real(spectrum.eta, fluct_n as u64);
            let acc: MomentAccumulator = ens
                .at(c_f)
                .zip(ens.at(c_last))
                .map(|(a, b)| {
                    let limit = (b[0] + b[1]) as f64 / (2.0 * d_eta);
                    vec![w * (a[0] as f64 / dn - limit), w * (a[1] as f64 / dn - limit)]
                })
                .collect();
            let emp = acc.covariance();
            let target = DMatrix::from_element(2, 2, sigma_1 * sigma_1 / 2.0);
            out.push(
                CheckRecord::new(
                    "superdiffusive.fluctuation_coordinates_stated",
                    "n^{2p-3/2}(S_n / d_n - S_inf (1,1)) has covariance (sigma_1^2 / 2) ones",
                    "n^{2p-3/2} (S_n / d_n - S_N (1,1) / (2 d_N)), N = 100 n",
                    relative_frobenius(&emp, &target),
                    Comparison::AtMost,
                    tol.fluctuation,
                )
                .soft()
                .seeded(seed, r)
                .metric("empirical_11", emp[(0, 0)])
                .metric("empirical_12", emp[(0, 1)])
                .metric("empirical_22", emp[(1, 1)])
                .metric("target_entry", sigma_1 * sigma_1 / 2.0)
                .note("the diffusive projection contributes at the same order; see the projection check"),
            );
        }
    }
    Ok(out)
}

/// Full memory (`p = 1`) on two elephants started from disagreeing steps:
/// `V_n = (s1 + s2) / (2n)` approaches `U_1` with mean zero, positive
/// variance, values inside `(-1, 1)`, and the law from the mirrored start is
/// the negated law.
pub fn full_memory_disagreement_check(horizon: usize, opts: &VerifyOptions) -> Result<Vec<CheckRecord>> {
    let tol = &opts.tolerances;
    let config = WalkConfig::two_elephants(1.0, 0.5, 0.5)?;
    let plan = RunSpec::new(horizon).with_checkpoints(vec![horizon]);
    let seed = opts.seed_for(STREAM_FULL_MEMORY);
    let mirror_seed = opts.seed_for(STREAM_FULL_MEMORY_MIRROR);
    let ens = run_ensemble(
        &config,
        &plan.clone().with_initial(InitialSteps::Forced(vec![1, -1])),
        seed,
        opts.replicas,
        opts.workers,
    )?;
    let mirror = run_ensemble(
        &config,
        &plan.with_initial(InitialSteps::Forced(vec![-1, 1])),
        mirror_seed,
        opts.replicas,
        opts.workers,
    )?;
    let two_n = 2.0 * horizon as f64;
    let v: Vec<f64> = ens.at(0).map(|s| (s[0] + s[1]) as f64 / two_n).collect();
    let w: Vec<f64> = mirror.at(0).map(|s| -((s[0] + s[1]) as f64) / two_n).collect();
    let r = v.len();
    let m = mean(&v);
    let (var, var_se) = variance_with_se(&v);
    let se = (var / r as f64).sqrt();
    let scaling = "(s1 + s2) / (2n)";
    let ks = ks_two_sample(&v, &w);
    Ok(vec![
        CheckRecord::new(
            "full_memory.mean_se",
            "the limit U_1 has mean zero",
            scaling,
            m.abs() / se,
            Comparison::AtMost,
            tol.se_multiplier,
        )
        .se(se)
        .seeded(seed, r)
        .metric("mean", m),
        CheckRecord::new(
            "full_memory.mean_band",
            "the limit U_1 has mean zero",
            scaling,
            m.abs(),
            Comparison::AtMost,
            tol.full_memory_mean,
        )
        .se(se)
        .seeded(seed, r),
        CheckRecord::new(
            "full_memory.open_interval",
            "U_1 lies strictly inside (-1, 1)",
            scaling,
            v.iter().fold(0.0f64, |a, x| a.max(x.abs())),
            Comparison::Below,
            1.0,
        )
        .seeded(seed, r),
        CheckRecord::new(
            "full_memory.variance",
            "U_1 has positive variance",
            scaling,
            var,
            Comparison::Above,
            tol.full_memory_variance,
        )
        .se(var_se)
        .seeded(seed, r),
        CheckRecord::new(
            "full_memory.variance_lcb",
            "U_1 has positive variance",
            "lower confidence bound of the variance",
            var - tol.se_multiplier * var_se,
            Comparison::Above,
            0.0,
        )
        .seeded(seed, r),
        CheckRecord::new(
            "full_memory.symmetry",
            "the law from start (1,-1) equals the negated law from start (-1,1)",
            scaling,
            ks.p_value,
            Comparison::Above,
            tol.symmetry_alpha,
        )
        .seeded(seed, r)
        .metric("ks_statistic", ks.statistic)
        .metric("mirror_seed", mirror_seed as f64),
    ])
}

/// Synchronisation for `p_j = 1` on a strongly connected graph: the spread
/// `max_j |S^j_n / n - mean_i S^i_n / n|` falls below a decreasing envelope,
/// and the common limit lies in `(-1, 1)` away from consensus starts.
pub fn synchronization_check(config: &WalkConfig, horizon: usize, opts: &VerifyOptions) -> Result<Vec<CheckRecord>> {
    let tol = &opts.tolerances;
    if !config.graph().is_strongly_connected() {
        return Err(Error::NotStronglyConnected);
    }
    if config.p().iter().any(|&p| p != 1.0) {
        return Err(Error::MemoryNotOne);
    }
    let k = config.k();
    let spectrum = analyze(&memory_matrix(config));
    let second = spectrum
        .eigenvalues
        .iter()
        .skip(1)
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let exponent = second.max(0.5) - 1.0 + 0.1;
    let envelope = tol.sync_spread * (horizon as f64 / 1e4).powf(exponent);
    let branches: Vec<(&str, InitialSteps)> = match k {
        1 => vec![("unconditioned", InitialSteps::Random)],
        2 => vec![("no_consensus_start", InitialSteps::RejectConsensus)],
        _ => vec![
            ("unconditioned", InitialSteps::Random),
            ("no_consensus_start", InitialSteps::RejectConsensus),
        ],
    };
    let mut out = Vec::new();
    for (i, (label, initial)) in branches.into_iter().enumerate() {
        let conditioned = initial == InitialSteps::RejectConsensus;
        let seed = derive_seed(opts.seed_for(STREAM_SYNC), i as u64);
        let plan = RunSpec::new(horizon)
            .with_checkpoints(vec![horizon])
            .with_initial(initial);
        let ens = run_ensemble(config, &plan, seed, opts.replicas, opts.workers)?;
        let nf = horizon as f64;
        let mut spreads = Vec::with_capacity(ens.replicas());
        let mut limits = Vec::with_capacity(ens.replicas());
        for s in ens.at(0) {
            let z: Vec<f64> = s.iter().map(|&x| x as f64 / nf).collect();
            let m = mean(&z);
            spreads.push(z.iter().fold(0.0f64, |a, x| a.max((x - m).abs())));
            limits.push(m);
        }
        let edge = limits.iter().filter(|m| m.abs() >= 1.0).count() as f64 / limits.len() as f64;
        out.push(
            CheckRecord::new(
                &format!("synchronization.spread_{label}"),
                "all elephants share one limiting speed",
                "max_j |S_n^j / n - mean_i S_n^i / n|, 99th percentile",
                quantile(&spreads, 0.99),
                Comparison::AtMost,
                envelope,
            )
            .seeded(seed, ens.replicas())
            .metric("envelope_exponent", exponent)
            .metric("fraction_at_consensus", edge),
        );
        if conditioned {
            out.push(
                CheckRecord::new(
                    &format!("synchronization.limit_interior_{label}"),
                    "away from consensus starts the common limit lies in (-1, 1)",
                    "mean_i S_n^i / n, largest modulus",
                    limits.iter().fold(0.0f64, |a, x| a.max(x.abs())),
                    Comparison::Below,
                    1.0,
                )
                .seeded(seed, ens.replicas()),
            );
        }
    }
    Ok(out)
}

/// Normaliser of a law of the iterated logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LilScaling {
    /// `sqrt(2 n log log n)`.
    Walk,
    /// `sqrt(2 n log n log log log n)`.
    Critical,
}

impl LilScaling {
    pub fn scale(self, n: f64) -> f64 {
        match self {
            LilScaling::Walk => lil_scale(n),
            LilScaling::Critical => lil_scale_critical(n),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LilScaling::Walk => "sqrt(2 n log log n)",
            LilScaling::Critical => "sqrt(2 n log n log log log n)",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        [LilScaling::Walk, LilScaling::Critical]
            .into_iter()
            .find(|x| x.label() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LilParams {
    pub horizon: usize,
    /// First checkpoint; must exceed `e^e` for the critical normaliser.
    pub first: usize,
    /// Hard envelope is asserted for checkpoints `n >= hard_from`.
    pub hard_from: usize,
    pub seed: u64,
    pub hard_bound: f64,
    pub soft_bound: f64,
}

/// `r_n = x_n Q x_n'` along one long trajectory, `x_n = S_n P / a_n`, on a
/// geometric grid of ratio 1.01.
pub fn lil_path(
    config: &WalkConfig,
    form: &DMatrix<f64>,
    projections: Option<&DMatrix<f64>>,
    scaling: LilScaling,
    params: &LilParams,
) -> Result<Vec<(usize, f64)>> {
    let k = config.k();
    let p = projections.cloned().unwrap_or_else(|| DMatrix::identity(k, k));
    if p.nrows() != k || p.ncols() != form.nrows() || !form.is_square() {
        return Err(Error::InvalidParameter(
            "projection and quadratic form dimensions differ".into(),
        ));
    }
    if params.first < 16 || params.first > params.horizon {
        return Err(Error::InvalidParameter("need 16 <= first <= horizon".into()));
    }
    let mut grid = Vec::new();
    let mut x = params.first as f64;
    while (x as usize) < params.horizon {
        let n = x as usize;
        if grid.last() != Some(&n) {
            grid.push(n);
        }
        x *= 1.01;
    }
    grid.push(params.horizon);
    let plan = RunSpec::new(params.horizon).with_checkpoints(grid.clone());
    let path = run_checkpoints(config, &plan, params.seed)?;
    Ok(grid
        .iter()
        .zip(&path)
        .map(|(&n, s)| {
            let row = DMatrix::from_row_slice(1, k, &as_f64(s)) * &p / scaling.scale(n as f64);
            (n, (&row * form * row.transpose())[(0, 0)])
        })
        .collect())
}

/// Hard upper envelope `max r_n <= hard_bound` for `n >= hard_from`, and the
/// soft coverage diagnostic `max r_n >= soft_bound`.
pub fn lil_envelope_diagnostic(
    config: &WalkConfig,
    form: &DMatrix<f64>,
    projections: Option<&DMatrix<f64>>,
    scaling: LilScaling,
    params: &LilParams,
    name: &str,
) -> Result<Vec<CheckRecord>> {
    if projections.is_none() {
        let spectrum = analyze(&memory_matrix(config));
        if scaling != LilScaling::Walk || classify_value(spectrum.eta, 1e-9) != Regime::Diffusive {
            return Err(Error::RegimeMismatch(
                "the walk ellipsoid needs a diffusive walk and the sqrt(2 n log log n) scaling".into(),
            ));
        }
    }
    let path = lil_path(config, form, projections, scaling, params)?;
    let late = path
        .iter()
        .filter(|(n, _)| *n >= params.hard_from)
        .map(|&(_, r)| r)
        .fold(0.0, f64::max);
    let all = path.iter().map(|&(_, r)| r).fold(0.0, f64::max);
    let mut upper = CheckRecord::new(
        &format!("lil.{name}.upper_envelope"),
        "the normalised walk eventually stays inside the limit-point ellipsoid (with margin)",
        scaling.label(),
        late,
        Comparison::AtMost,
        params.hard_bound,
    )
    .seeded(params.seed, 1)
    .metric("hard_from", params.hard_from as f64)
    .metric("horizon", params.horizon as f64);
    if scaling == LilScaling::Critical {
        upper = upper
            .soft()
            .note("log log log n < 1.1 for every n below 10^10, so this normaliser cannot separate scalings at a reachable horizon");
    }
    Ok(vec![
        upper,
        CheckRecord::new(
            &format!("lil.{name}.coverage"),
            "the normalised walk comes close to the boundary of the ellipsoid",
            scaling.label(),
            all,
            Comparison::AtLeast,
            params.soft_bound,
        )
        .soft()
        .seeded(params.seed, 1)
        .note("log log n grows too slowly to reach the boundary at this horizon; reported only"),
    ])
}

/// Log-log slope of `E|hat S_n^(j)|^m` over geometric checkpoints, which
/// should be `m/2`; for a critical projection the moment is first divided
/// by `(log n)^{m/2}`.
pub fn moment_slope_check(
    config: &WalkConfig,
    m: u32,
    j: usize,
    horizon: usize,
    opts: &VerifyOptions,
) -> Result<CheckRecord> {
    if ![1, 2, 4].contains(&m) {
        return Err(Error::InvalidParameter("moment order must be 1, 2 or 4".into()));
    }
    let tol = &opts.tolerances;
    let spectrum = analyze(&memory_matrix(config));
    if j >= spectrum.k() {
        return Err(Error::InvalidParameter(format!("projection {j} out of range")));
    }
    let t = spectrum.transform.as_ref().ok_or(Error::NotDiagonalizable)?;
    let regime = classify_value(spectrum.eigenvalues[j].re, tol.regime);
    if regime == Regime::Superdiffusive {
        return Err(Error::RegimeMismatch(format!("projection {j} is super-diffusive")));
    }
    let grid: Vec<usize> = geometric_grid(10.0, horizon)
        .into_iter()
        .filter(|&n| n >= 100)
        .collect();
    if grid.len() < 3 {
        return Err(Error::InvalidParameter("horizon too short for a slope".into()));
    }
    let seed = opts.seed_for(STREAM_MOMENTS);
    let ens: Ensemble = run_ensemble(
        config,
        &RunSpec::new(horizon).with_checkpoints(grid.clone()),
        seed,
        opts.replicas,
        opts.workers,
    )?;
    let col = t.column(j);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (c, &n) in grid.iter().enumerate() {
        let mom = mean(
            &ens.at(c)
                .map(|s| {
                    s.iter()
                        .zip(col.iter())
                        .map(|(&a, z)| *z * a as f64)
                        .sum::<crate::special::C64>()
                        .norm()
                        .powi(m as i32)
                })
                .collect::<Vec<_>>(),
        );
        let ln = (n as f64).ln();
        let adj = if regime == Regime::Critical {
            ln.powf(m as f64 / 2.0)
        } else {
            1.0
        };
        x.push(ln);
        y.push((mom / adj).ln());
    }
    let fit = linear_fit(&x, &y);
    let (thr, scaling) = match regime {
        Regime::Critical => (tol.moment_slope_critical, "E|hat S_n|^m / (log n)^{m/2}"),
        _ => (tol.moment_slope, "E|hat S_n|^m"),
    };
    Ok(CheckRecord::new(
        &format!("moments.slope_m{m}_projection_{}", j + 1),
        "the m-th absolute moment of the projection grows like n^{m/2}",
        scaling,
        (fit.slope - m as f64 / 2.0).abs(),
        Comparison::AtMost,
        thr,
    )
    .se(fit.slope_se)
    .seeded(seed, opts.replicas)
    .metric("slope", fit.slope))
}

/// Product bounds on the full `|lambda| <= 1` grid (step 0.1) and the default
/// matrices, fitted on `n <= 1000` and `n <= 2000`.
pub fn bounds_check(tol: &Tolerances) -> Result<(Vec<CheckRecord>, BoundsReport)> {
    let report = product_bounds_check(
        &lambda_grid(0.1),
        &default_bound_matrices(),
        1000,
        2000,
        tol.bounds_stability,
    )?;
    let kinds = [
        BoundKind::ProductEnvelope,
        BoundKind::ProductVsPower,
        BoundKind::ProductVsPowerFirstOrder,
        BoundKind::PowerIncrement,
        BoundKind::MatrixProductEnvelope,
        BoundKind::MatrixProductVsPower,
        BoundKind::MatrixProductVsPowerFirstOrder,
        BoundKind::MatrixPowerIncrement,
    ];
    let mut out = Vec::new();
    for kind in kinds {
        let rows: Vec<_> = report.rows.iter().filter(|r| r.bound == kind).collect();
        let worst = rows
            .iter()
            .map(|r| if r.finite { r.relative_change } else { f64::INFINITY })
            .fold(0.0, f64::max);
        let unstable = rows.iter().filter(|r| !(r.finite && r.stable)).count();
        let mut rec = CheckRecord::new(
            &format!("bounds.{}", kind.as_str()),
            "the fitted constant of the product bound is finite and stable as the grid grows",
            "rows whose constant is infinite or changes by more than the stability tolerance from n <= 1000 to n <= 2000",
            unstable as f64,
            Comparison::AtMost,
            0.0,
        )
        .metric("rows", rows.len() as f64)
        .metric("worst_relative_change", worst)
        .metric("stability_tolerance", tol.bounds_stability);
        if matches!(kind, BoundKind::ProductVsPower | BoundKind::MatrixProductVsPower) {
            rec = rec
                .soft()
                .note("the stated j^-2 rate is first order 1/j; see the first_order rows");
        }
        out.push(rec);
    }
    Ok((out, report))
}

fn oracle_suite(config: &WalkConfig, opts: &VerifyOptions) -> Result<Vec<CheckRecord>> {
    let tol = &opts.tolerances;
    let mut out = Vec::new();
    match oracle_check(config, 6, tol) {
        Ok(r) => out.push(r),
        Err(Error::TooLarge(msg)) => out.push(
            CheckRecord::new(
                "oracle.enumeration_vs_recursion",
                "the mean and second-moment recursions equal the moments of the enumerated law",
                "S_n",
                f64::NAN,
                Comparison::AtMost,
                tol.oracle,
            )
            .soft()
            .note(&msg),
        ),
        Err(e) => return Err(e),
    }
    if config.two_elephant_memory().is_some() {
        out.push(closed_form_mean_check(config, 1000, MeanForm::Corrected, tol)?);
        out.push(closed_form_mean_check(config, 1000, MeanForm::Stated, tol)?);
    }
    let spectrum = analyze(&memory_matrix(config));
    if classify_value(spectrum.eta, tol.regime) == Regime::Diffusive {
        out.extend(lyapunov_check(config, tol)?);
    }
    out.extend(mechanism_equivalence_check(config, opts.horizon.min(200), opts)?);
    Ok(out)
}

fn clt_suite(config: &WalkConfig, scaling: CltScaling, opts: &VerifyOptions) -> Result<Vec<CheckRecord>> {
    let tol = &opts.tolerances;
    let b = memory_matrix(config);
    let spectrum = analyze(&b);
    require_regime(&spectrum, scaling.regime(), tol.regime)?;
    let n = opts.horizon;
    let limit = match scaling {
        CltScaling::Diffusive => sigma1_with_tol(&b, tol.regime)?,
        CltScaling::Critical => sigma2_with_tol(&spectrum, tol.regime)?,
    };
    let a = scaling.scale(n);
    let oracle = oracle_covariance(config, n)? / (a * a);
    let sample = endpoint_sample(config, n, opts.seed_for(STREAM_CLT), opts)?;
    let prefix = scaling_prefix(scaling);
    let mut out = vec![covariance_record(
        &format!("{prefix}.covariance_vs_oracle"),
        "the Monte Carlo covariance matches the exact finite-n covariance",
        &sample,
        scaling,
        &oracle,
        tol.oracle_covariance,
    )];
    let limit_tol = match scaling {
        CltScaling::Diffusive => tol.clt_covariance,
        CltScaling::Critical => tol.critical_limit,
    };
    if scaling == CltScaling::Diffusive {
        out.push(covariance_record(
            &format!("{prefix}.covariance"),
            "the covariance of S_n / sqrt(n) approaches the diffusive limit covariance",
            &sample,
            scaling,
            &limit,
            tol.clt_covariance,
        ));
    }
    out.push(normality_record(config, &sample, scaling, &oracle, tol.ks_alpha)?);
    out.extend(covariance_convergence_check(config, scaling, &limit, n, limit_tol)?);
    out.push(slln_check(config, n, opts)?);
    let j = match scaling {
        CltScaling::Diffusive => 0,
        CltScaling::Critical => (0..spectrum.k())
            .find(|&j| classify_value(spectrum.eigenvalues[j].re, tol.regime) == Regime::Critical)
            .expect("critical walk has a critical projection"),
    };
    if spectrum.diagonalizable {
        out.push(moment_slope_check(config, 2, j, n, opts)?);
    }
    Ok(out)
}

fn superdiffusive_suite(config: &WalkConfig, opts: &VerifyOptions) -> Result<Vec<CheckRecord>> {
    let mut out = superdiffusive_limit_check(config, opts.horizon, opts)?;
    out.push(slln_check(config, opts.horizon, opts)?);
    if config.two_elephant_memory() == Some(1.0) {
        out.extend(full_memory_disagreement_check(opts.horizon, opts)?);
    }
    Ok(out)
}

fn lil_suite(config: &WalkConfig, opts: &VerifyOptions) -> Result<Vec<CheckRecord>> {
    let tol = &opts.tolerances;
    let report = limit_report(config, tol.regime)?;
    if report.ellipsoids.is_empty() {
        return Err(Error::RegimeMismatch("no limit-point ellipsoid for this walk".into()));
    }
    let spectrum = analyze(&memory_matrix(config));
    let t = spectrum.real_transform();
    let horizon = opts.horizon;
    let params = LilParams {
        horizon,
        first: 1000.min(horizon / 10).max(16),
        hard_from: (horizon / 10).max(16),
        seed: opts.seed_for(STREAM_LIL),
        hard_bound: tol.lil_hard,
        soft_bound: tol.lil_soft,
    };
    let mut out = Vec::new();
    for e in &report.ellipsoids {
        let scaling =
            LilScaling::from_label(&e.scaling).ok_or_else(|| Error::Unsupported(format!("scaling {}", e.scaling)))?;
        let proj = if e.projections.is_empty() {
            None
        } else {
            let t = t.as_ref().ok_or(Error::NotRealDiagonalizable)?;
            Some(t.select_columns(&e.projections))
        };
        let name = e.name.replace(' ', "_");
        out.extend(lil_envelope_diagnostic(
            config,
            &e.form,
            proj.as_ref(),
            scaling,
            &params,
            &name,
        )?);
    }
    Ok(out)
}

fn suite_records(
    suite: Suite,
    config: &WalkConfig,
    opts: &VerifyOptions,
    grid: &mut Option<BoundsReport>,
) -> Result<Vec<CheckRecord>> {
    match suite {
        Suite::Oracle => oracle_suite(config, opts),
        Suite::DiffusiveClt => clt_suite(config, CltScaling::Diffusive, opts),
        Suite::CriticalClt => clt_suite(config, CltScaling::Critical, opts),
        Suite::Superdiffusive => superdiffusive_suite(config, opts),
        Suite::Lil => lil_suite(config, opts),
        Suite::Synchronization => synchronization_check(config, opts.horizon, opts),
        Suite::Bounds => {
            let (records, report) = bounds_check(&opts.tolerances)?;
            *grid = Some(report);
            Ok(records)
        }
        Suite::All => {
            let label = classify(&analyze(&memory_matrix(config)), opts.tolerances.regime);
            let mut suites = vec![Suite::Oracle];
            match label.global {
                Regime::Diffusive => suites.extend([Suite::DiffusiveClt, Suite::Lil]),
                Regime::Critical => suites.extend([Suite::CriticalClt, Suite::Lil]),
                Regime::Superdiffusive => suites.push(Suite::Superdiffusive),
            }
            if config.graph().is_strongly_connected() && config.p().iter().all(|&p| p == 1.0) {
                suites.push(Suite::Synchronization);
            }
            suites.push(Suite::Bounds);
            let mut out = Vec::new();
            for s in suites {
                out.extend(suite_records(s, config, opts, grid)?);
            }
            Ok(out)
        }
    }
}

/// Runs a suite. The report depends only on `(config, opts)` apart from its runtime.
pub fn run_suite(suite: Suite, config: &WalkConfig, opts: &VerifyOptions) -> Result<VerificationReport> {
    let start = Instant::now();
    let mut bounds = None;
    let records = suite_records(suite, config, opts, &mut bounds)?;
    Ok(VerificationReport {
        suite,
        config_hash: config.hash(),
        master_seed: opts.master_seed,
        replicas: opts.replicas,
        horizon: opts.horizon,
        tolerances: opts.tolerances.clone(),
        records,
        bounds,
        runtime: start.elapsed(),
    })
}
