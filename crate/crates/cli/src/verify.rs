//! The property suite behind `klap verify`.
//!
//! Each property runs a fixed, seeded corpus and reports the number of cases
//! and the worst observed error. The suite is single-threaded and its
//! artifacts are byte-identical across runs.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use klap::matrix_io::format_f64;
use klap::oracle::{small_lambda_path, solution_set_projection_from, ProjectionOptions};
use klap::solver::{solve_with_rule, Monitors, UpdateRule};
use klap::{
    apply, brute_force_minimizer, cost_matrix, empirical_distribution, grayscale_kernel, inner_coupling,
    kl_divergence, objective_j, posterior, sample_corrupted, support_floor, total_variation, verify_dv_identity,
    Coupling, CorruptionKernel, FiniteDistribution, Klap, SolverConfig, Trajectory,
};
use rand::Rng;

use crate::corpus::{random_kernel, random_simplex, rng, three_by_two, two_state};
use crate::{write_atomic, CliError};

pub const REPORT_FILE: &str = "verify_report.csv";
pub const RATE_FILE: &str = "rate_bound.csv";
pub const REPORT_HEADER: &str = "property,passed,cases,worst,tolerance";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Scale {
    Quick,
    /// Adds the million-draw sampling checks and larger corpora.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    /// Largest error metric seen; compare with `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    /// First failure, if any.
    pub detail: Option<String>,
}

impl fmt::Display for PropertyOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} cases={} worst={:.3e} tolerance={:.0e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.worst,
            self.tolerance
        )?;
        if let Some(d) = &self.detail {
            write!(f, " ({d})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub outcomes: Vec<PropertyOutcome>,
    /// `instance,k,min_kl_q_trp,bound` for every rate-bound run.
    pub rate_csv: String,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn outcome(&self, name: &str) -> Option<&PropertyOutcome> {
        self.outcomes.iter().find(|o| o.name == name)
    }

    pub fn report_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for o in &self.outcomes {
            let _ = writeln!(out, "{},{},{},{},{}", o.name, o.passed, o.cases, format_f64(o.worst), format_f64(o.tolerance));
        }
        out
    }
}

pub fn write_artifacts(report: &SuiteReport, out: &Path) -> Result<(), CliError> {
    write_atomic(&out.join(REPORT_FILE), report.report_csv().as_bytes())?;
    write_atomic(&out.join(RATE_FILE), report.rate_csv.as_bytes())
}

/// Tracks one property: every case contributes an error value and a verdict.
struct Tally {
    name: &'static str,
    tolerance: f64,
    cases: usize,
    worst: f64,
    detail: Option<String>,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            cases: 0,
            worst: 0.0,
            detail: None,
        }
    }

    fn check(&mut self, value: f64, ok: bool, describe: impl FnOnce() -> String) {
        self.cases += 1;
        if value.is_nan() || value > self.worst {
            self.worst = value;
        }
        if (!ok || value.is_nan()) && self.detail.is_none() {
            self.detail = Some(describe());
        }
    }

    fn error(&mut self, e: impl fmt::Display) {
        self.check(f64::INFINITY, false, || e.to_string());
    }

    fn finish(self) -> PropertyOutcome {
        PropertyOutcome {
            name: self.name,
            passed: self.detail.is_none() && self.cases > 0,
            cases: self.cases,
            worst: self.worst,
            tolerance: self.tolerance,
            detail: self.detail,
        }
    }
}

/// Labelled trajectories whose descent is audited.
type Audited = Vec<(String, Trajectory)>;

/// Runs every property; `rule` drives all solver runs of the fixed-point and
/// rate-bound properties.
pub fn run_suite(scale: Scale, rule: &UpdateRule) -> SuiteReport {
    let mut audited = Audited::new();
    let mut outcomes = vec![fixed_point(rule, &mut audited)];
    let (rate, rate_csv) = rate_bound(rule, &mut audited);
    outcomes.push(rate);
    outcomes.push(monotone_descent(&audited));
    outcomes.push(dv_identity(scale));
    outcomes.push(online_batch_equivalence());
    outcomes.push(lambda_limit());
    outcomes.push(bayes_consistency());
    outcomes.push(oracle_agreement(scale));
    if scale == Scale::Full {
        outcomes.push(sampling_consistency());
    }
    SuiteReport { outcomes, rate_csv }
}

/// Independent evaluation of `(Σ_y q(y) u_y + λ h)/(1 + λ)`.
fn stationarity_image(k: &CorruptionKernel, q: &FiniteDistribution, h: &FiniteDistribution, lambda: f64, p: &FiniteDistribution) -> Vec<f64> {
    let (nx, ny) = (k.input_size(), k.output_size());
    let mut m = vec![0.0; nx];
    for y in 0..ny {
        let tp: f64 = (0..nx).map(|x| k.get(y, x) * p[x]).sum();
        if tp > 0.0 {
            for (x, mx) in m.iter_mut().enumerate() {
                *mx += q[y] * p[x] * k.get(y, x) / tp;
            }
        }
    }
    (0..nx).map(|x| (m[x] + lambda * h[x]) / (1.0 + lambda)).collect()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn fixed_point(rule: &UpdateRule, audited: &mut Audited) -> PropertyOutcome {
    let mut tally = Tally::new("fixed_point", 1e-10);
    let mut r = rng(101);
    for case in 0..20 {
        let nx = r.random_range(2..=8);
        let ny = r.random_range(nx..=16);
        let k = support_floor(&random_kernel(&mut r, nx, ny), 1e-3).expect("valid floor");
        let q = apply(&k, &random_simplex(&mut r, nx)).expect("sizes match");
        let h = random_simplex(&mut r, nx);
        let lambda = [0.0, 0.25, 1.0][case % 3];
        let gamma = [1.0, 0.1][case % 2];
        let config = SolverConfig {
            lambda,
            gamma,
            max_iterations: 200_000,
            ..SolverConfig::default()
        };
        let p0 = FiniteDistribution::uniform(nx).expect("nonempty");
        match solve_with_rule(&k, &q, Some(&h), &config, &p0, &Monitors::default(), rule) {
            Ok(run) => {
                let gap = l1(&stationarity_image(&k, &q, &h, lambda, &run.final_p), run.final_p.weights());
                let residual = run.final_residual();
                tally.check(gap.max(residual), run.converged && gap < 1e-10, || {
                    format!("case {case}: converged={} residual={residual:.3e} stationarity gap={gap:.3e}", run.converged)
                });
                audited.push((format!("fixed_point case {case}"), run));
            }
            Err(e) => tally.error(e),
        }
    }
    tally.finish()
}

/// Instances with a certified `h†`, covering injective, deterministic and
/// one-dimensional solution sets.
fn rate_instances() -> Vec<(CorruptionKernel, FiniteDistribution, FiniteDistribution, f64)> {
    let mut r = rng(102);
    let mut out = Vec::new();
    for i in 0..5 {
        let nx = r.random_range(2..=6);
        let k = support_floor(&random_kernel(&mut r, nx, nx + 2), 1e-3).expect("valid floor");
        let q = apply(&k, &random_simplex(&mut r, nx)).expect("sizes match");
        out.push((k, q, random_simplex(&mut r, nx), [1.0, 0.5][i % 2]));
    }
    let k = grayscale_kernel();
    for gamma in [1.0, 0.5, 0.3] {
        let q = apply(&k, &random_simplex(&mut r, 4)).expect("sizes match");
        out.push((k.clone(), q, random_simplex(&mut r, 4), gamma));
    }
    let k = three_by_two();
    for gamma in [1.0, 0.5] {
        let q = apply(&k, &random_simplex(&mut r, 3)).expect("sizes match");
        out.push((k.clone(), q, random_simplex(&mut r, 3), gamma));
    }
    out
}

fn rate_bound(rule: &UpdateRule, audited: &mut Audited) -> (PropertyOutcome, String) {
    // Worst ratio of the running minimum to the bound.
    let mut tally = Tally::new("rate_bound", 1.0);
    let mut csv = String::from("instance,k,min_kl_q_trp,bound\n");
    for (i, (k, q, p0, gamma)) in rate_instances().into_iter().enumerate() {
        let certified = match solution_set_projection_from(&k, &q, &p0, &p0, &ProjectionOptions::default()) {
            Ok(res) if res.certification_gap.is_some() => res.h_dagger,
            Ok(_) => {
                tally.check(f64::INFINITY, false, || format!("instance {i}: h† could not be certified"));
                continue;
            }
            Err(e) => {
                tally.error(format!("instance {i}: {e}"));
                continue;
            }
        };
        let config = SolverConfig {
            gamma,
            max_iterations: 2000,
            ..SolverConfig::default()
        };
        let monitors = Monitors {
            h_dagger: Some(certified.clone()),
            reference: None,
        };
        let run = match solve_with_rule(&k, &q, None, &config, &p0, &monitors, rule) {
            Ok(run) => run,
            Err(e) => {
                tally.error(format!("instance {i}: {e}"));
                continue;
            }
        };
        let d0 = kl_divergence(&certified, &p0).expect("sizes match").value();
        let mut best = f64::INFINITY;
        let mut ratio = 0.0f64;
        for rec in run.records.iter().skip(1) {
            best = best.min(rec.kl_q_trp);
            let bound = d0 / (gamma * rec.k as f64);
            ratio = ratio.max(best / bound);
            let _ = writeln!(csv, "{i},{},{},{}", rec.k, format_f64(best), format_f64(bound));
        }
        tally.check(ratio, ratio <= 1.0, || format!("instance {i}: running minimum reaches {ratio:.3e} of the bound"));
        audited.push((format!("rate_bound instance {i}"), run));
    }
    (tally.finish(), csv)
}

fn monotone_descent(audited: &Audited) -> PropertyOutcome {
    let mut tally = Tally::new("monotone_descent", 1e-10);
    for (label, run) in audited {
        let mut ascent = f64::NEG_INFINITY;
        for w in run.records.windows(2) {
            ascent = ascent.max(w[1].j_lambda - w[0].j_lambda);
            if let (Some(a), Some(b)) = (w[0].kl_hdagger_p, w[1].kl_hdagger_p) {
                ascent = ascent.max(b - a);
            }
        }
        tally.check(ascent.max(0.0), ascent <= 1e-10, || format!("{label}: ascent {ascent:.3e}"));
    }
    tally.finish()
}

/// A coupling with `y`-marginal `q` and random conditionals.
pub fn random_coupling(r: &mut rand_chacha::ChaCha8Rng, nx: usize, q: &FiniteDistribution) -> Coupling {
    let conditionals: Vec<FiniteDistribution> = (0..q.len()).map(|_| random_simplex(r, nx)).collect();
    Coupling::from_conditionals(&conditionals, q).expect("sizes match")
}

fn dv_identity(scale: Scale) -> PropertyOutcome {
    let mut tally = Tally::new("dv_identity", 1e-10);
    let couplings = match scale {
        Scale::Quick => 100,
        Scale::Full => 1000,
    };
    let mut r = rng(103);
    for case in 0..100 {
        let nx = r.random_range(2..=8);
        let ny = r.random_range(2..=16);
        let k = support_floor(&random_kernel(&mut r, nx, ny), 1e-6).expect("valid floor");
        let q = random_simplex(&mut r, ny);
        let p = random_simplex(&mut r, nx);
        let identity = verify_dv_identity(&k, &q, &p).unwrap_or(f64::INFINITY);
        let cost = cost_matrix(&k).expect("floored kernel");
        let best = inner_coupling(&p, &q, &cost)
            .and_then(|c| c.transport_objective(&p, &q, &cost))
            .unwrap_or(f64::INFINITY);
        let mut slack = f64::NEG_INFINITY;
        for _ in 0..couplings {
            let other = random_coupling(&mut r, nx, &q).transport_objective(&p, &q, &cost).unwrap_or(f64::NEG_INFINITY);
            slack = slack.max(best - other);
        }
        tally.check(identity.max(slack), identity < 1e-10 && slack <= 1e-12, || {
            format!("case {case}: identity error {identity:.3e}, closed form exceeds a random coupling by {slack:.3e}")
        });
    }
    tally.finish()
}

fn online_batch_equivalence() -> PropertyOutcome {
    let mut tally = Tally::new("online_batch_equivalence", 1e-14);
    let mut r = rng(104);
    for case in 0..200 {
        let nx = r.random_range(2..=8);
        let ny = r.random_range(2..=16);
        let k = support_floor(&random_kernel(&mut r, nx, ny), 1e-6).expect("valid floor");
        let q = random_simplex(&mut r, ny);
        let h = random_simplex(&mut r, nx);
        let lambda = [0.0, 0.25, 1.0, 3.0][case % 4];
        let problem = Klap::new(&k, &q, Some(&h), lambda).expect("valid instance");
        let mut state = problem.initial_state(&random_simplex(&mut r, nx)).expect("valid start");
        for step in 0..50 {
            let (Ok(batch), Ok(online)) = (problem.sfbd_step(&state), problem.online_step(1.0, &state)) else {
                tally.error(format!("case {case}: step {step} failed"));
                break;
            };
            let diff = batch.p().iter().zip(online.p().iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            tally.check(diff, diff < 1e-14, || format!("case {case} step {step}: L∞ difference {diff:.3e}"));
            state = batch;
        }
    }
    tally.finish()
}

fn lambda_limit() -> PropertyOutcome {
    let mut tally = Tally::new("lambda_limit", 1e-4);
    let k = grayscale_kernel();
    let mut r = rng(105);
    for case in 0..3 {
        let q = apply(&k, &random_simplex(&mut r, 4)).expect("sizes match");
        let h = random_simplex(&mut r, 4);
        // h†(s, c) = q(s) h(c | s) on the fibres {0, 1} and {2, 3}.
        let (a, b) = (h[0] + h[1], h[2] + h[3]);
        let closed = FiniteDistribution::new(vec![q[0] * h[0] / a, q[0] * h[1] / a, q[1] * h[2] / b, q[1] * h[3] / b])
            .expect("valid distribution");
        let lambdas = [1e-1, 1e-2, 1e-3, 1e-4];
        let start = FiniteDistribution::uniform(4).expect("nonempty");
        match small_lambda_path(&k, &q, &h, &lambdas, &start, &ProjectionOptions::default()) {
            Ok(path) => {
                let gaps: Vec<f64> = path.iter().map(|p| kl_divergence(&closed, p).expect("sizes").value()).collect();
                let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
                let last = gaps[gaps.len() - 1];
                tally.check(last, monotone && last < 1e-4, || format!("case {case}: gaps {gaps:?}"));
            }
            Err(e) => tally.error(e),
        }
    }
    tally.finish()
}

fn bayes_consistency() -> PropertyOutcome {
    let mut tally = Tally::new("bayes_consistency", 1e-10);
    let mut r = rng(106);
    for case in 0..200 {
        let nx = r.random_range(2..=8);
        let ny = r.random_range(2..=16);
        let k = random_kernel(&mut r, nx, ny);
        let p = random_simplex(&mut r, nx);
        let q = apply(&k, &p).expect("sizes match");
        let err = posterior(&k, &p)
            .and_then(|post| post.mixture(&q))
            .map(|m| l1(m.weights(), p.weights()))
            .unwrap_or(f64::INFINITY);
        tally.check(err, err < 1e-10, || format!("case {case}: posterior mixture off by {err:.3e}"));
    }
    tally.finish()
}

fn oracle_agreement(scale: Scale) -> PropertyOutcome {
    let mut tally = Tally::new("oracle_agreement", 1e-4);
    let cases = match scale {
        Scale::Quick => 12,
        Scale::Full => 60,
    };
    let mut r = rng(107);
    for case in 0..cases {
        let ny = r.random_range(2..=4);
        let k = if case == 0 {
            two_state()
        } else {
            support_floor(&random_kernel(&mut r, 2, ny), 1e-3).expect("valid floor")
        };
        let q = random_simplex(&mut r, k.output_size());
        let h = random_simplex(&mut r, 2);
        let lambda = if case % 3 == 0 { 0.0 } else { r.random_range(0.05..2.0) };
        let config = SolverConfig {
            lambda,
            max_iterations: 1_000_000,
            ..SolverConfig::default()
        };
        let prior = (lambda > 0.0).then_some(&h);
        let result = solve_with_rule(&k, &q, prior, &config, &h, &Monitors::default(), &klap::solver::standard_update)
            .and_then(|run| {
                let grid = brute_force_minimizer(&k, &q, prior, lambda, 1e-4)?;
                let tv = total_variation(&run.final_p, &grid)?;
                let gap = objective_j(&k, &q, prior, lambda, &run.final_p)? - objective_j(&k, &q, prior, lambda, &grid)?;
                Ok((tv, gap))
            });
        match result {
            Ok((tv, gap)) => tally.check(tv, tv <= 1e-4 && gap.abs() <= 1e-3, || {
                format!("case {case}: TV {tv:.3e}, objective gap {gap:.3e}")
            }),
            Err(e) => tally.error(e),
        }
    }
    tally.finish()
}

fn sampling_consistency() -> PropertyOutcome {
    let mut tally = Tally::new("sampling_consistency", 5e-3);
    let k = two_state();
    let p = FiniteDistribution::new(vec![0.3, 0.7]).expect("valid distribution");
    let q = apply(&k, &p).expect("sizes match");
    for seed in 0..3 {
        let tv = sample_corrupted(&k, &p, 1_000_000, seed)
            .and_then(|b| empirical_distribution(&b, 2, 0.0))
            .and_then(|q_hat| total_variation(&q_hat, &q))
            .unwrap_or(f64::INFINITY);
        tally.check(tv, tv < 5e-3, || format!("seed {seed}: TV {tv:.3e}"));
    }
    tally.finish()
}
