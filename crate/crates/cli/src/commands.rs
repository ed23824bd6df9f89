use std::fmt::Write as _;
use std::path::Path;

use klap::empirical::{sort_rows, Experiment, RunKey};
use klap::matrix_io::format_f64;
use klap::solver::Monitors;
use klap::{
    empirical_distribution, is_identifiable, kl_divergence, read_kernel, report_csv, sample_clean, sample_corrupted,
    total_variation, CorruptionKernel, ExperimentConfig, FiniteDistribution, IdentifiabilityReport, InitPolicy,
    ReportRow, SampleBatch, SolverConfig, Trajectory,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{InitSpec, ObservationSpec, PriorSpec, Scenario};
use crate::verify::{run_suite, write_artifacts, Scale};
use crate::{write_atomic, CliError, EXIT_NOT_CONVERGED, EXIT_NOT_IDENTIFIABLE, EXIT_OK, EXIT_VERIFY_FAILED};

/// Relative rank tolerance used by `identify` and the solve summary.
pub const RANK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifiabilityJson {
    pub label: String,
    pub input_size: usize,
    pub output_size: usize,
    pub injective: bool,
    pub nullspace_dimension_on_zero_sum_subspace: usize,
    pub smallest_restricted_singular_value: f64,
    pub tolerance_used: f64,
}

impl IdentifiabilityJson {
    fn new(kernel: &CorruptionKernel, report: &IdentifiabilityReport) -> Self {
        Self {
            label: kernel.label().to_string(),
            input_size: kernel.input_size(),
            output_size: kernel.output_size(),
            injective: report.injective,
            nullspace_dimension_on_zero_sum_subspace: report.nullspace_dimension_on_zero_sum_subspace,
            smallest_restricted_singular_value: report.smallest_restricted_singular_value,
            tolerance_used: report.tolerance_used,
        }
    }
}

/// The `solve` summary record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    pub converged: bool,
    pub iterations: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub support_floor: f64,
    pub final_residual: f64,
    pub j_lambda: f64,
    pub kl_to_pdata: f64,
    pub tv_to_pdata: f64,
    pub p0_support_repaired: bool,
    pub final_p: Vec<f64>,
    pub identifiability: IdentifiabilityJson,
}

/// A scenario with its kernel, `p_data` and observations in place.
pub struct Prepared {
    pub scenario: Scenario,
    pub p_data: FiniteDistribution,
    pub experiment: Experiment,
}

impl Prepared {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let scenario = Scenario::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::new(scenario, base)
    }

    /// `base` resolves relative kernel file paths.
    pub fn new(scenario: Scenario, base: &Path) -> Result<Self, CliError> {
        let kernel = scenario.kernel.build(base)?;
        scenario.check_against(&kernel)?;
        let n = kernel.input_size();
        let p_data = scenario.p_data(n)?;
        let (clean_counts, prior_smoothing, fixed_prior) = match &scenario.prior {
            None => (vec![0], 0.0, None),
            Some(PriorSpec::Samples(s)) => {
                let counts = if scenario.sweep.clean_counts.is_empty() {
                    vec![s.count]
                } else {
                    scenario.sweep.clean_counts.clone()
                };
                (counts, s.smoothing, None)
            }
            Some(PriorSpec::Weights(w)) => (vec![0], 0.0, Some(FiniteDistribution::new(w.clone())?)),
        };
        let (noisy_count, observation_smoothing) = match &scenario.observations {
            ObservationSpec::Exact => (0, 0.0),
            ObservationSpec::Samples(s) => (s.count, s.smoothing),
        };
        let (init, fixed_start) = match &scenario.solver.init {
            InitSpec::Prior => (InitPolicy::Prior, None),
            InitSpec::Uniform => (InitPolicy::Uniform, None),
            InitSpec::Weights(w) => (InitPolicy::Uniform, Some(FiniteDistribution::new(w.clone())?)),
        };
        let weight = clean_weight(scenario.lambda);
        let config = ExperimentConfig {
            clean_counts,
            noisy_count,
            clean_weights: axis(&scenario.sweep.weights, weight),
            gammas: axis(&scenario.sweep.gammas, scenario.solver.gamma),
            seed: scenario.solver.seed,
            prior_smoothing,
            observation_smoothing,
            support_floor: scenario.support_floor,
            init,
            fixed_prior,
            fixed_start,
            max_iterations: scenario.solver.max_iterations,
            tolerance: scenario.solver.tolerance,
            record_every: scenario.solver.record_every,
        };
        let experiment = Experiment::new(&kernel, &p_data, config)?;
        Ok(Self {
            scenario,
            p_data,
            experiment,
        })
    }

    /// The scenario's own configuration, ignoring sweep axes.
    pub fn base_key(&self) -> RunKey {
        let clean_count = match &self.scenario.prior {
            Some(PriorSpec::Samples(s)) => s.count,
            _ => 0,
        };
        RunKey {
            clean_count,
            clean_weight: clean_weight(self.scenario.lambda),
            gamma: self.scenario.solver.gamma,
        }
    }

    pub fn solve(&self) -> Result<(Trajectory, SolveSummary), CliError> {
        let monitors = Monitors {
            h_dagger: None,
            reference: Some(self.p_data.clone()),
        };
        let key = self.base_key();
        let run = self.experiment.trajectory_with(key, &monitors)?;
        let last = run.records.last().expect("a run records its final state");
        let summary = SolveSummary {
            converged: run.converged,
            iterations: run.iterations_run,
            lambda: SolverConfig::lambda_from_clean_weight(key.clean_weight)?,
            gamma: key.gamma,
            support_floor: self.scenario.support_floor,
            final_residual: last.residual,
            j_lambda: last.j_lambda,
            kl_to_pdata: kl_divergence(&self.p_data, &run.final_p)?.value(),
            tv_to_pdata: total_variation(&self.p_data, &run.final_p)?,
            p0_support_repaired: run.p0_support_repaired,
            final_p: run.final_p.weights().to_vec(),
            identifiability: IdentifiabilityJson::new(self.experiment.kernel(), &run.identifiability),
        };
        Ok((run, summary))
    }

    /// Every configuration of the sweep, sorted, on at most `jobs` threads.
    pub fn sweep(&self, jobs: usize) -> Result<Vec<ReportRow>, CliError> {
        let keys = self.experiment.config().keys();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {jobs} workers: {e}")))?;
        let mut rows = pool.install(|| {
            keys.par_iter()
                .map(|&k| self.experiment.run(k))
                .collect::<klap::Result<Vec<_>>>()
        })?;
        sort_rows(&mut rows);
        Ok(rows)
    }
}

fn clean_weight(lambda: f64) -> f64 {
    lambda / (1.0 + lambda)
}

fn axis(values: &[f64], default: f64) -> Vec<f64> {
    if values.is_empty() {
        vec![default]
    } else {
        values.to_vec()
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    text
}

pub fn solve(config: &Path, out: &Path) -> Result<u8, CliError> {
    let prepared = Prepared::load(config)?;
    let (run, summary) = prepared.solve()?;
    let outputs = &prepared.scenario.outputs;
    write_atomic(&out.join(&outputs.trajectory), run.to_csv().as_bytes())?;
    write_atomic(&out.join(&outputs.summary), to_json(&summary).as_bytes())?;
    println!(
        "converged={} iterations={} residual={} tv_to_pdata={}",
        summary.converged,
        summary.iterations,
        format_f64(summary.final_residual),
        format_f64(summary.tv_to_pdata)
    );
    Ok(if summary.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

/// Kernel from `--kernel FILE` or from a scenario's `kernel` entry.
pub fn identify(config: Option<&Path>, kernel_file: Option<&Path>) -> Result<u8, CliError> {
    let kernel = match (config, kernel_file) {
        (Some(path), None) => {
            let scenario = Scenario::load(path)?;
            scenario.kernel.build(path.parent().unwrap_or(Path::new(".")))?
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            read_kernel(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        _ => return Err(CliError::Config("identify needs exactly one of --config or --kernel".into())),
    };
    let report = identifiability(&kernel);
    print!("{}", to_json(&report));
    Ok(if report.injective { EXIT_OK } else { EXIT_NOT_IDENTIFIABLE })
}

pub fn identifiability(kernel: &CorruptionKernel) -> IdentifiabilityJson {
    IdentifiabilityJson::new(kernel, &is_identifiable(kernel, RANK_TOLERANCE))
}

pub fn sweep(config: &Path, out: &Path, jobs: usize) -> Result<u8, CliError> {
    let prepared = Prepared::load(config)?;
    let rows = prepared.sweep(jobs)?;
    write_atomic(&out.join(&prepared.scenario.outputs.report), report_csv(&rows).as_bytes())?;
    println!("{} configurations", rows.len());
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct BatchJson {
    count: usize,
    empirical: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct SampleJson {
    seed: u64,
    corrupted: Option<BatchJson>,
    clean: Option<BatchJson>,
}

/// Draws the scenario's sampled batches and writes them as CSV.
pub fn sample(config: &Path, out: &Path) -> Result<u8, CliError> {
    let scenario = Scenario::load(config)?;
    let kernel = scenario.kernel.build(config.parent().unwrap_or(Path::new(".")))?;
    scenario.check_against(&kernel)?;
    let p_data = scenario.p_data(kernel.input_size())?;
    let seed = scenario.solver.seed;
    let mut batches: Vec<(SampleBatch, usize, f64)> = Vec::new();
    if let ObservationSpec::Samples(s) = &scenario.observations {
        batches.push((sample_corrupted(&kernel, &p_data, s.count, seed)?, kernel.output_size(), s.smoothing));
    }
    if let Some(PriorSpec::Samples(s)) = &scenario.prior {
        batches.push((sample_clean(&p_data, s.count, seed)?, kernel.input_size(), s.smoothing));
    }
    if batches.is_empty() {
        return Err(CliError::Config("sample needs sampled `observations` or a sampled `prior`".into()));
    }
    let mut csv = String::from("source,index,outcome\n");
    let mut summary = SampleJson {
        seed,
        corrupted: None,
        clean: None,
    };
    for (batch, size, smoothing) in &batches {
        let name = match batch.source() {
            klap::SampleSource::Clean => "clean",
            klap::SampleSource::Corrupted => "corrupted",
        };
        for (i, o) in batch.outcomes().iter().enumerate() {
            let _ = writeln!(csv, "{name},{i},{o}");
        }
        let json = BatchJson {
            count: batch.count(),
            empirical: empirical_distribution(batch, *size, *smoothing)?.into_weights(),
        };
        match batch.source() {
            klap::SampleSource::Clean => summary.clean = Some(json),
            klap::SampleSource::Corrupted => summary.corrupted = Some(json),
        }
    }
    write_atomic(&out.join(&scenario.outputs.samples), csv.as_bytes())?;
    print!("{}", to_json(&summary));
    Ok(EXIT_OK)
}

pub fn verify(scale: Scale, out: &Path) -> Result<u8, CliError> {
    let suite = run_suite(scale, &klap::solver::standard_update);
    for outcome in &suite.outcomes {
        println!("{outcome}");
    }
    write_artifacts(&suite, out)?;
    Ok(if suite.passed() { EXIT_OK } else { EXIT_VERIFY_FAILED })
}
