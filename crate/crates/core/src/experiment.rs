//! Experiment files and the artifacts each command writes.
//!
//! The command-line tool only parses flags into an [`ExperimentConfig`] and
//! calls the functions here, so its output is the output of the library.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{memory_matrix, WalkConfig};
use crate::limits::{limit_report, LimitReport};
use crate::moments::{moment_states, write_moment_table, MomentState};
use crate::simulator::{geometric_grid, run_ensemble, Ensemble, InitialSteps, Mechanism, RunMetadata, RunSpec};
use crate::spectral::{analyze, classify, RegimeLabel, SpectrumJson};
use crate::verify::{run_suite, Suite, Tolerances, VerificationReport, VerifyOptions};

pub const SCHEMA_VERSION: u32 = 1;

/// Checkpoint layout of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Checkpoints {
    /// `floor(start * 1.25^m)` below the horizon, plus the horizon.
    Geometric {
        start: f64,
    },
    Explicit {
        times: Vec<usize>,
    },
}

impl Default for Checkpoints {
    fn default() -> Self {
        Checkpoints::Geometric { start: 10.0 }
    }
}

impl Checkpoints {
    pub fn resolve(&self, horizon: usize) -> Result<Vec<usize>> {
        match self {
            Checkpoints::Geometric { start } => {
                if !(*start >= 1.0) {
                    return Err(Error::InvalidParameter("geometric checkpoints need start >= 1".into()));
                }
                Ok(geometric_grid(*start, horizon))
            }
            Checkpoints::Explicit { times } => Ok(times.clone()),
        }
    }
}

fn default_horizon() -> usize {
    1000
}

fn default_replicas() -> usize {
    1000
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_mechanism() -> Mechanism {
    Mechanism::Conditional
}

fn default_initial() -> InitialSteps {
    InitialSteps::Random
}

fn default_suite() -> Suite {
    Suite::All
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub walk: WalkConfig,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub checkpoints: Checkpoints,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_mechanism")]
    pub mechanism: Mechanism,
    #[serde(default = "default_initial")]
    pub initial: InitialSteps,
    #[serde(default = "default_suite")]
    pub suite: Suite,
    /// Where artifacts go; not part of the hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
}

impl ExperimentConfig {
    pub fn new(walk: WalkConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            walk,
            horizon: default_horizon(),
            replicas: default_replicas(),
            checkpoints: Checkpoints::default(),
            master_seed: 0,
            mechanism: default_mechanism(),
            initial: default_initial(),
            suite: default_suite(),
            output_dir: None,
            tolerances: BTreeMap::new(),
        }
    }

    /// Accepts an experiment file, or a bare walk file (`k`, `edges`, `p`, `q`)
    /// which gets default settings.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let cfg = if value.get("walk").is_some() {
            serde_json::from_value::<ExperimentConfig>(value)?
        } else {
            ExperimentConfig::new(serde_json::from_value(value)?)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("experiment serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "schema_version {} not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.horizon == 0 || self.replicas == 0 {
            return Err(Error::InvalidParameter("horizon and replicas must be positive".into()));
        }
        self.tolerances()?;
        self.run_spec()?.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON with `output_dir` removed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let text = serde_json::to_string(&c).expect("experiment serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn tolerances(&self) -> Result<Tolerances> {
        Tolerances::with_overrides(&self.tolerances)
    }

    pub fn run_spec(&self) -> Result<RunSpec> {
        Ok(RunSpec::new(self.horizon)
            .with_checkpoints(self.checkpoints.resolve(self.horizon)?)
            .with_mechanism(self.mechanism)
            .with_initial(self.initial.clone()))
    }

    pub fn verify_options(&self, workers: Option<usize>) -> Result<VerifyOptions> {
        Ok(VerifyOptions {
            master_seed: self.master_seed,
            replicas: self.replicas,
            horizon: self.horizon,
            workers,
            tolerances: self.tolerances()?,
        })
    }
}

/// Output of `analyze`: spectrum, regime and limiting quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub experiment_hash: String,
    pub config_hash: String,
    pub spectrum: SpectrumJson,
    pub regime: RegimeLabel,
    pub limits: Option<LimitReport>,
    /// Why `limits` is missing.
    pub limits_error: Option<String>,
}

pub fn analysis(cfg: &ExperimentConfig) -> Result<Analysis> {
    let tol = cfg.tolerances()?.regime;
    let spectrum = analyze(&memory_matrix(&cfg.walk));
    let (limits, limits_error) = match limit_report(&cfg.walk, tol) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(Analysis {
        experiment_hash: cfg.hash(),
        config_hash: cfg.walk.hash(),
        regime: classify(&spectrum, tol),
        spectrum: SpectrumJson::from(&spectrum),
        limits,
        limits_error,
    })
}

fn fmt_matrix(m: &[Vec<f64>]) -> String {
    m.iter()
        .map(|r| r.iter().map(|x| format!("{x:>12.6}")).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Analysis {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("analysis serializes")
    }

    pub fn table(&self) -> String {
        let mut out = format!("config    {}\n", self.config_hash);
        let eig: Vec<String> = self
            .spectrum
            .eigenvalues
            .iter()
            .map(|[re, im]| {
                if *im == 0.0 {
                    format!("{re:.6}")
                } else {
                    format!("{re:.6}{im:+.6}i")
                }
            })
            .collect();
        out.push_str(&format!("eigenvalues {}\n", eig.join(", ")));
        out.push_str(&format!(
            "regime    {:?}  per projection {:?}\n",
            self.regime.global, self.regime.per_projection
        ));
        if let Some(l) = &self.limits {
            out.push_str(&format!("eta       {:.6}\n", l.eta));
            let rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
                m.row_iter().map(|r| r.iter().copied().collect()).collect()
            };
            if let Some(s) = &l.sigma1 {
                out.push_str(&format!("Sigma1\n{}\n", fmt_matrix(&rows(s))));
            }
            if let Some(s) = &l.sigma2 {
                out.push_str(&format!("Sigma2\n{}\n", fmt_matrix(&rows(s))));
            }
            if let Some(sd) = &l.superdiffusive {
                if let Some(m) = &sd.coordinate_limit_mean {
                    out.push_str(&format!("limit mean of S_n / d_n(eta): {m:?}\n"));
                }
                for p in &sd.projections {
                    out.push_str(&format!(
                        "projection {}: lambda {:.6}{:+.6}i  limit mean {:?}  fluctuation variance {:?}\n",
                        p.index + 1,
                        p.lambda[0],
                        p.lambda[1],
                        p.limit_mean,
                        p.fluctuation_variance
                    ));
                }
            }
            for u in &l.unsupported {
                out.push_str(&format!("not computed: {u}\n"));
            }
        }
        if let Some(e) = &self.limits_error {
            out.push_str(&format!("limits unavailable: {e}\n"));
        }
        out
    }
}

/// Output of `limits`: the limit report plus exact moments at the checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitsOutput {
    pub report: LimitReport,
    pub moments: Vec<MomentState>,
}

pub fn limits_output(cfg: &ExperimentConfig) -> Result<LimitsOutput> {
    let report = limit_report(&cfg.walk, cfg.tolerances()?.regime)?;
    let times = cfg.checkpoints.resolve(cfg.horizon)?;
    let states = moment_states(memory_matrix(&cfg.walk).matrix(), cfg.walk.q(), cfg.horizon)?;
    let moments = times
        .iter()
        .filter(|&&n| n >= 1 && n <= states.len())
        .map(|&n| states[n - 1].clone())
        .collect();
    Ok(LimitsOutput { report, moments })
}

/// Output of `simulate`.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub ensemble: Ensemble,
    pub metadata: RunMetadata,
}

pub fn simulation(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<Simulation> {
    let plan = cfg.run_spec()?;
    let ensemble = run_ensemble(&cfg.walk, &plan, cfg.master_seed, cfg.replicas, workers)?;
    let metadata = ensemble.metadata(&cfg.walk, &plan);
    Ok(Simulation { ensemble, metadata })
}

pub fn verification(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<VerificationReport> {
    run_suite(cfg.suite, &cfg.walk, &cfg.verify_options(workers)?)
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

/// Writes `experiment.json`, `analysis.json`; returns the paths.
pub fn write_analysis(cfg: &ExperimentConfig, a: &Analysis, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    Ok(vec![
        write_file(dir, "experiment.json", cfg.to_json().as_bytes())?,
        write_file(dir, "analysis.json", a.to_json().as_bytes())?,
    ])
}

/// Writes `experiment.json`, `limits.json` and `moments.csv`.
pub fn write_limits(cfg: &ExperimentConfig, l: &LimitsOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut csv = Vec::new();
    write_moment_table(&l.moments, &mut csv)?;
    Ok(vec![
        write_file(dir, "experiment.json", cfg.to_json().as_bytes())?,
        write_file(dir, "limits.json", l.report.to_json().as_bytes())?,
        write_file(dir, "moments.csv", &csv)?,
    ])
}

/// Writes `experiment.json`, `checkpoints.csv` and `run.json`.
pub fn write_simulation(cfg: &ExperimentConfig, s: &Simulation, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut csv = Vec::new();
    s.ensemble.write_csv(&mut csv)?;
    let meta = serde_json::to_string_pretty(&s.metadata)?;
    Ok(vec![
        write_file(dir, "experiment.json", cfg.to_json().as_bytes())?,
        write_file(dir, "checkpoints.csv", &csv)?,
        write_file(dir, "run.json", meta.as_bytes())?,
    ])
}

/// Writes `experiment.json`, `report.json`, `report.txt`, and `bounds.csv`
/// when the suite ran the bound grid.
pub fn write_verification(cfg: &ExperimentConfig, r: &VerificationReport, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut out = vec![
        write_file(dir, "experiment.json", cfg.to_json().as_bytes())?,
        write_file(dir, "report.json", r.to_json().as_bytes())?,
        write_file(dir, "report.txt", r.table().as_bytes())?,
    ];
    if let Some(grid) = &r.bounds {
        let mut csv = Vec::new();
        grid.write_csv(&mut csv)?;
        out.push(write_file(dir, "bounds.csv", &csv)?);
    }
    Ok(out)
}

pub fn read_report(path: &Path) -> Result<VerificationReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_walk_file_gets_defaults() {
        let c = ExperimentConfig::from_json(r#"{"k":2,"edges":[[1,2],[2,1]],"p":[0.6,0.6],"q":[0.5,0.5]}"#).unwrap();
        assert_eq!(c.horizon, 1000);
        assert_eq!(c.suite, Suite::All);
        assert_eq!(c, ExperimentConfig::from_json(&c.to_json()).unwrap());
    }

    #[test]
    fn rejects_bad_files() {
        let walk = r#"{"k":1,"edges":[[1,1]],"p":[1],"q":[0.5]}"#;
        assert!(ExperimentConfig::from_json(&format!(r#"{{"walk":{walk},"schema_version":2}}"#)).is_err());
        assert!(ExperimentConfig::from_json(&format!(r#"{{"walk":{walk},"bogus":1}}"#)).is_err());
        assert!(ExperimentConfig::from_json(&format!(r#"{{"walk":{walk},"tolerances":{{"nope":1}}}}"#)).is_err());
        assert!(ExperimentConfig::from_json(&format!(
            r#"{{"walk":{walk},"horizon":10,"checkpoints":{{"kind":"explicit","times":[5,20]}}}}"#
        ))
        .is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let mut c = ExperimentConfig::new(WalkConfig::two_elephants(0.6, 0.5, 0.5).unwrap());
        let h = c.hash();
        c.output_dir = Some("elsewhere".into());
        assert_eq!(c.hash(), h);
        c.master_seed = 1;
        assert_ne!(c.hash(), h);
    }

    #[test]
    fn limits_moments_follow_checkpoints() {
        let mut c = ExperimentConfig::new(WalkConfig::two_elephants(0.6, 0.5, 0.5).unwrap());
        c.horizon = 50;
        c.checkpoints = Checkpoints::Explicit { times: vec![1, 10, 50] };
        let l = limits_output(&c).unwrap();
        assert_eq!(l.moments.iter().map(|m| m.n).collect::<Vec<_>>(), vec![1, 10, 50]);
    }
}
