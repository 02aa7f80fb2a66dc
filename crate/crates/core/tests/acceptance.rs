//! Acceptance criteria 1 to 10, at the stated sizes and tolerances.
//!
//! Prints one PASS/FAIL line per criterion. The process fails when a
//! criterion outside `DOCUMENTED_FAILURES` fails. Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 3 8`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use erwg::limits::{lil_ellipsoid, sigma1, sigma2};
use erwg::special::gamma;
use erwg::verify::{
    bounds_check, closed_form_mean_deviation, covariance_convergence_check, covariance_record, endpoint_sample,
    full_memory_disagreement_check, lil_envelope_diagnostic, lyapunov_check, mechanism_equivalence_check,
    normality_record, oracle_check, oracle_covariance, superdiffusive_limit_check, CheckRecord, CltScaling, LilParams,
    LilScaling, MeanForm, Tolerances, VerifyOptions,
};
use erwg::{analyze, memory_matrix, DirectedGraph, WalkConfig};
use nalgebra::DMatrix;

/// Criteria whose stated form disagrees with an independent oracle; the
/// analysis is in the decisions ledger and in each record's note.
const DOCUMENTED_FAILURES: [u32; 3] = [2, 6, 9];

const P_GRID: [f64; 7] = [0.0, 0.25, 0.5, 0.6, 0.75, 0.9, 1.0];
const Q_VALUES: [f64; 3] = [0.0, 0.5, 1.0];

struct Outcome {
    pass: bool,
    lines: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            pass: true,
            lines: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.lines.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }

    fn record(&mut self, r: &CheckRecord) {
        let se = r.standard_error.map(|s| format!(" (se {s:.3e})")).unwrap_or_default();
        self.check(
            r.pass,
            format!("{}: {:.6e} vs {:.6e}{se}", r.name, r.statistic, r.threshold),
        );
    }

    fn runtime(&mut self, elapsed: Duration, limit: Duration) {
        self.check(
            elapsed < limit,
            format!("runtime {:.2} s < {:.0} s", elapsed.as_secs_f64(), limit.as_secs_f64()),
        );
    }
}

fn two_elephant_grid() -> Vec<WalkConfig> {
    let mut out = Vec::new();
    for &p in &P_GRID {
        for &q1 in &Q_VALUES {
            for &q2 in &Q_VALUES {
                out.push(WalkConfig::two_elephants(p, q1, q2).unwrap());
            }
        }
    }
    out
}

fn opts(seed: u64, replicas: usize, horizon: usize) -> VerifyOptions {
    VerifyOptions::new(seed, replicas, horizon)
}

fn criterion_1() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let tol = Tolerances::default();
    let mut worst: f64 = 0.0;
    let mut failed = 0;
    let grid = two_elephant_grid();
    for c in &grid {
        let r = oracle_check(c, 6, &tol).unwrap();
        worst = worst.max(r.statistic);
        failed += usize::from(!r.pass);
    }
    o.check(
        failed == 0,
        format!(
            "{} configs, n <= 6: max |enumeration - recursion| = {worst:.3e} <= 1e-10",
            grid.len()
        ),
    );
    o.runtime(start.elapsed(), Duration::from_secs(5));
    o
}

fn criterion_2() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let (mut stated, mut corrected): (f64, f64) = (0.0, 0.0);
    for c in &two_elephant_grid() {
        stated = stated.max(closed_form_mean_deviation(c, 1000, MeanForm::Stated).unwrap());
        corrected = corrected.max(closed_form_mean_deviation(c, 1000, MeanForm::Corrected).unwrap());
    }
    o.check(
        stated <= 1e-10,
        format!("stated form 2(2p-1)(q1+q2-1) d_n, n <= 1000: max rel. deviation {stated:.3e} <= 1e-10"),
    );
    o.lines.push(format!(
        "info corrected form 4p(q1+q2-1) d_n: max rel. deviation {corrected:.3e} (the stated prefactor misses E[S_2] = E[S_1](I + B))"
    ));
    o.runtime(start.elapsed(), Duration::from_secs(1));
    o
}

fn criterion_3() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let tol = Tolerances::default();
    let triangle = DirectedGraph::new(3, &[(1, 2), (2, 1), (2, 3), (3, 2), (1, 3), (3, 1)]).unwrap();
    let mut configs = vec![
        WalkConfig::two_elephants(0.5, 0.5, 0.5).unwrap(),
        WalkConfig::two_elephants(0.6, 0.5, 0.5).unwrap(),
        WalkConfig::two_elephants(0.3, 1.0, 0.0).unwrap(),
        WalkConfig::new(triangle, vec![0.6; 3], vec![0.5; 3]).unwrap(),
    ];
    for p in [0.0, 0.25, 0.5, 0.7] {
        configs.push(WalkConfig::self_loop(p, 0.5).unwrap());
    }
    for c in &configs {
        let recs = lyapunov_check(c, &tol).unwrap();
        assert_eq!(recs.len(), 2, "every configuration here has a symmetric memory matrix");
        for r in &recs {
            o.record(r);
        }
    }
    let c = WalkConfig::two_elephants(0.6, 0.5, 0.5).unwrap();
    let got = sigma1(&memory_matrix(&c)).unwrap();
    let want = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]) / 0.84;
    let err = (&got - &want).amax();
    o.check(
        err <= 1e-12,
        format!("p = 0.6: |Sigma1 - (1/0.84)[[1, 0.4], [0.4, 1]]|_max = {err:.3e}"),
    );
    o.runtime(start.elapsed(), Duration::from_secs(1));
    o
}

fn criterion_4() -> Outcome {
    let mut o = Outcome::new();
    let c = WalkConfig::two_elephants(0.6, 0.5, 0.5).unwrap();
    let target = sigma1(&memory_matrix(&c)).unwrap();
    let op = opts(4, 20_000, 5000);
    let sample = endpoint_sample(&c, 5000, op.seed_for(4), &op).unwrap();
    o.record(&covariance_record(
        "cov(S_n / sqrt(n)) vs Sigma1, relative Frobenius",
        "",
        &sample,
        CltScaling::Diffusive,
        &target,
        0.1,
    ));
    o.record(&normality_record(&c, &sample, CltScaling::Diffusive, &target, 0.01).unwrap());
    o
}

fn criterion_5() -> Outcome {
    let mut o = Outcome::new();
    let c = WalkConfig::two_elephants(0.75, 0.5, 0.5).unwrap();
    let n = 10_000;
    let limit = sigma2(&analyze(&memory_matrix(&c))).unwrap();
    let half_ones = DMatrix::from_element(2, 2, 0.5);
    o.check((&limit - &half_ones).amax() < 1e-12, "Sigma2 = (1/2) ones".into());
    let scale = n as f64 * (n as f64).ln();
    let oracle = oracle_covariance(&c, n).unwrap() / scale;
    let op = opts(5, 20_000, n);
    let sample = endpoint_sample(&c, n, op.seed_for(5), &op).unwrap();
    o.record(&covariance_record(
        "cov(S_n / sqrt(n log n)) vs exact M_n / (n log n)",
        "",
        &sample,
        CltScaling::Critical,
        &oracle,
        0.05,
    ));
    for r in covariance_convergence_check(&c, CltScaling::Critical, &half_ones, n, 0.25).unwrap() {
        o.record(&r);
    }
    o
}

fn criterion_6() -> Outcome {
    let mut o = Outcome::new();
    let c = WalkConfig::two_elephants(0.9, 1.0, 1.0).unwrap();
    let recs = superdiffusive_limit_check(&c, 100_000, &opts(6, 20_000, 100_000)).unwrap();
    let find = |name: &str| {
        recs.iter()
            .find(|r| r.name == name)
            .unwrap_or_else(|| panic!("missing {name}"))
    };
    let mean = find("superdiffusive.limit_mean");
    for (k, v) in &mean.metrics {
        if k.starts_with("target") {
            o.check((v - 1.8).abs() < 1e-12, format!("predicted limit mean {k} = {v} = 1.8"));
        }
    }
    o.record(mean);
    o.record(find("superdiffusive.limit_variance"));
    let stated = find("superdiffusive.fluctuation_coordinates_stated");
    let sigma_1 = gamma(2.8) / 0.6f64.sqrt();
    let entry = stated.metrics["target_entry"];
    o.check(
        (entry - sigma_1 * sigma_1 / 2.0).abs() < 1e-9 * entry,
        format!("target entry sigma_1^2 / 2 = {entry:.6} with sigma_1 = Gamma(2.8)/sqrt(0.6)"),
    );
    o.record(stated);
    o.lines.push(format!(
        "info empirical fluctuation covariance [[{:.3}, {:.3}], [{:.3}, {:.3}]]",
        stated.metrics["empirical_11"],
        stated.metrics["empirical_12"],
        stated.metrics["empirical_12"],
        stated.metrics["empirical_22"]
    ));
    for r in recs
        .iter()
        .filter(|r| r.name.starts_with("superdiffusive.fluctuation_projection"))
    {
        o.lines.push(format!(
            "info {} (projected form): {:.4} vs {}",
            r.name, r.statistic, r.threshold
        ));
    }
    o
}

fn criterion_7() -> Outcome {
    let mut o = Outcome::new();
    for r in &full_memory_disagreement_check(5000, &opts(7, 50_000, 5000)).unwrap() {
        if r.name != "full_memory.variance_lcb" && r.name != "full_memory.mean_se" {
            o.record(r);
        }
    }
    o
}

fn criterion_8() -> Outcome {
    let mut o = Outcome::new();
    let c = WalkConfig::two_elephants(0.75, 1.0, 0.0).unwrap();
    for r in &mechanism_equivalence_check(&c, 200, &opts(8, 200_000, 200)).unwrap() {
        o.record(r);
    }
    o
}

fn criterion_9() -> Outcome {
    let mut o = Outcome::new();
    let (records, report) = bounds_check(&Tolerances::default()).unwrap();
    for r in &records {
        if r.hard || r.note.is_some() {
            let rows = r.metrics["rows"];
            let line = format!("{}: {} of {rows} rows unstable", r.name, r.statistic);
            if r.name.ends_with("first_order") {
                o.lines
                    .push(format!("info {line} (first-order rate, not a stated bound)"));
            } else {
                o.check(r.pass, line);
            }
        }
    }
    o.check(
        report.guard_error < 1e-9,
        format!("direct vs compensated products agree: {:.3e}", report.guard_error),
    );
    o
}

fn criterion_10() -> Outcome {
    let mut o = Outcome::new();
    let c = WalkConfig::two_elephants(0.6, 0.5, 0.5).unwrap();
    let sigma = sigma1(&memory_matrix(&c)).unwrap();
    let params = LilParams {
        horizon: 10_000_000,
        first: 1000,
        hard_from: 100_000,
        seed: 0,
        hard_bound: 1.5,
        soft_bound: 0.5,
    };
    let q = lil_ellipsoid(&sigma).unwrap();
    let real = lil_envelope_diagnostic(&c, &q, None, LilScaling::Walk, &params, "walk").unwrap();
    o.record(&real[0]);
    let halved = lil_ellipsoid(&(sigma / 2.0)).unwrap();
    let control = lil_envelope_diagnostic(&c, &halved, None, LilScaling::Walk, &params, "halved_sigma").unwrap();
    o.check(
        !control[0].pass,
        format!(
            "negative control with Sigma / 2 fails: max r = {:.4} > 1.5",
            control[0].statistic
        ),
    );
    o
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "oracle exactness", criterion_1),
        (2, "closed-form means", criterion_2),
        (3, "Sigma1 correctness", criterion_3),
        (4, "diffusive CLT", criterion_4),
        (5, "critical CLT", criterion_5),
        (6, "super-diffusive limit", criterion_6),
        (7, "full memory, disagreeing start", criterion_7),
        (8, "mechanism equivalence", criterion_8),
        (9, "deterministic product bounds", criterion_9),
        (10, "LIL hard envelope", criterion_10),
    ];
    let mut unexpected = Vec::new();
    let mut summary = Vec::new();
    for (id, title, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let secs = start.elapsed().as_secs_f64();
        let status = if out.pass { "PASS" } else { "FAIL" };
        let line = format!("criterion {id:>2} {status} {title} ({secs:.1} s)");
        println!("{line}");
        for l in &out.lines {
            println!("    {l}");
        }
        if !out.pass && !DOCUMENTED_FAILURES.contains(&id) {
            unexpected.push(id);
        }
        summary.push(line);
    }
    println!();
    for l in &summary {
        println!("{l}");
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
