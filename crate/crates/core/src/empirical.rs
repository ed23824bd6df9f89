//! Finite-sample experiments.
//!
//! Every batch draws from its own ChaCha8 stream keyed by `(seed, label)`:
//! clean draws use stream 1 and corrupted draws stream 2. Each draw consumes
//! the stream in a fixed order, so a batch of size `n` is a prefix of any
//! larger batch with the same key.

use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_size, Error, Result};
use crate::kernel::{apply, support_floor, CorruptionKernel};
use crate::matrix_io::format_f64;
use crate::simplex::{kl_divergence, total_variation, FiniteDistribution};
use crate::solver::{solve_monitored, Monitors, SolverConfig, Trajectory};

pub const REPORT_CSV_HEADER: &str =
    "clean_count,noisy_count,lambda_weight,gamma,kl_to_pdata,tv_to_pdata,iterations,converged";

/// Slack allowed on `J_λ(p^{k+1}) ≤ J_λ(p^k)` when auditing runs.
pub const DESCENT_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleSource {
    Clean,
    Corrupted,
}

impl SampleSource {
    fn stream(self) -> u64 {
        match self {
            Self::Clean => 1,
            Self::Corrupted => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleBatch {
    outcomes: Vec<usize>,
    source: SampleSource,
    seed: u64,
}

impl SampleBatch {
    pub fn new(outcomes: Vec<usize>, source: SampleSource, seed: u64) -> Self {
        Self { outcomes, source, seed }
    }

    pub fn outcomes(&self) -> &[usize] {
        &self.outcomes
    }

    pub fn source(&self) -> SampleSource {
        self.source
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count(&self) -> usize {
        self.outcomes.len()
    }
}

fn rng_for(seed: u64, source: SampleSource) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(source.stream());
    rng
}

fn sampler(weights: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(weights).map_err(|e| Error::Domain(format!("cannot sample: {e}")))
}

/// `n` draws `x ~ p_data`.
pub fn sample_clean(p_data: &FiniteDistribution, n: usize, seed: u64) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::Domain("sample count must be at least 1".into()));
    }
    let mut rng = rng_for(seed, SampleSource::Clean);
    let dist = sampler(p_data.weights())?;
    let outcomes = (0..n).map(|_| dist.sample(&mut rng)).collect();
    Ok(SampleBatch::new(outcomes, SampleSource::Clean, seed))
}

/// `n` draws of `y`, each by `x ~ p_data` then `y ~ r(·|x)`.
pub fn sample_corrupted(kernel: &CorruptionKernel, p_data: &FiniteDistribution, n: usize, seed: u64) -> Result<SampleBatch> {
    check_size(kernel.input_size(), p_data.len())?;
    if n == 0 {
        return Err(Error::Domain("sample count must be at least 1".into()));
    }
    let mut rng = rng_for(seed, SampleSource::Corrupted);
    let source = sampler(p_data.weights())?;
    let columns = (0..kernel.input_size())
        .map(|x| sampler(kernel.column(x)))
        .collect::<Result<Vec<_>>>()?;
    let outcomes = (0..n)
        .map(|_| {
            let x = source.sample(&mut rng);
            columns[x].sample(&mut rng)
        })
        .collect();
    Ok(SampleBatch::new(outcomes, SampleSource::Corrupted, seed))
}

/// `(count(i) + s) / (n + s·size)`.
pub fn empirical_distribution(batch: &SampleBatch, alphabet_size: usize, smoothing: f64) -> Result<FiniteDistribution> {
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::Domain(format!("smoothing {smoothing} must be finite and nonnegative")));
    }
    let mut counts = vec![0usize; alphabet_size];
    for (i, &o) in batch.outcomes.iter().enumerate() {
        *counts.get_mut(o).ok_or_else(|| {
            Error::Data(format!("outcome {o} at position {i} outside alphabet of size {alphabet_size}"))
        })? += 1;
    }
    let denom = batch.count() as f64 + smoothing * alphabet_size as f64;
    if denom == 0.0 {
        return Err(Error::Degenerate("empty batch with zero smoothing".into()));
    }
    FiniteDistribution::new(counts.iter().map(|&c| (c as f64 + smoothing) / denom).collect())
}

/// Starting point of each experiment run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitPolicy {
    /// The clean-sample histogram, or uniform when there are no clean draws.
    #[default]
    Prior,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub clean_counts: Vec<usize>,
    /// Number of corrupted draws; `0` uses the exact `q = T_r p_data`.
    pub noisy_count: usize,
    /// Clean-sample weights `w = λ/(1+λ)`.
    pub clean_weights: Vec<f64>,
    pub gammas: Vec<f64>,
    pub seed: u64,
    /// Added-count smoothing of the clean histogram.
    pub prior_smoothing: f64,
    /// Added-count smoothing of the corrupted histogram.
    pub observation_smoothing: f64,
    /// Kernel floor applied before solving.
    pub support_floor: f64,
    pub init: InitPolicy,
    /// Replaces the clean histogram as `h`; clean counts are then ignored.
    pub fixed_prior: Option<FiniteDistribution>,
    /// Replaces the `init` policy.
    pub fixed_start: Option<FiniteDistribution>,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub record_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            clean_counts: vec![50],
            noisy_count: 10_000,
            clean_weights: vec![0.0],
            gammas: vec![1.0],
            seed: 0,
            prior_smoothing: 0.0,
            observation_smoothing: 0.0,
            support_floor: 1e-6,
            init: InitPolicy::Prior,
            fixed_prior: None,
            fixed_start: None,
            max_iterations: 100_000,
            tolerance: 1e-10,
            record_every: 1,
        }
    }
}

/// One point of the configuration grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunKey {
    pub clean_count: usize,
    pub clean_weight: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub clean_count: usize,
    pub noisy_count: usize,
    pub lambda_weight: f64,
    pub gamma: f64,
    pub kl_to_pdata: f64,
    pub tv_to_pdata: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest increase of `J_λ` between consecutive records of the run.
    pub worst_ascent: f64,
}

impl ReportRow {
    fn sort_key(&self) -> (usize, usize, f64, f64) {
        (self.clean_count, self.noisy_count, self.lambda_weight, self.gamma)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clean_counts.is_empty() || self.clean_weights.is_empty() || self.gammas.is_empty() {
            return Err(Error::Config("every sweep axis needs at least one value".into()));
        }
        for &w in &self.clean_weights {
            SolverConfig::lambda_from_clean_weight(w)?;
        }
        for &g in &self.gammas {
            SolverConfig::new(0.0, g).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.fixed_prior.is_none() && self.clean_counts.contains(&0) && self.clean_weights.iter().any(|&w| w > 0.0) {
            return Err(Error::Config("a positive clean weight needs clean samples; clean count 0 is only valid with weight 0".into()));
        }
        if !(self.support_floor >= 0.0 && self.support_floor < 1.0) {
            return Err(Error::Config(format!("support floor {} outside [0, 1)", self.support_floor)));
        }
        for s in [self.prior_smoothing, self.observation_smoothing] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("smoothing {s} must be finite and nonnegative")));
            }
        }
        if self.max_iterations == 0 || self.record_every == 0 || !(self.tolerance > 0.0) {
            return Err(Error::Config("iteration budget and tolerance must be positive".into()));
        }
        Ok(())
    }

    /// The cartesian product of the sweep axes, in report order.
    pub fn keys(&self) -> Vec<RunKey> {
        let mut keys = Vec::new();
        for &clean_count in &self.clean_counts {
            for &clean_weight in &self.clean_weights {
                for &gamma in &self.gammas {
                    keys.push(RunKey { clean_count, clean_weight, gamma });
                }
            }
        }
        keys
    }
}

/// Inputs shared by every run of an experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    kernel: CorruptionKernel,
    p_data: FiniteDistribution,
    q_hat: FiniteDistribution,
}

impl Experiment {
    pub fn new(kernel: &CorruptionKernel, p_data: &FiniteDistribution, config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        check_size(kernel.input_size(), p_data.len())?;
        for d in [&config.fixed_prior, &config.fixed_start].into_iter().flatten() {
            check_size(kernel.input_size(), d.len())?;
        }
        let q_hat = if config.noisy_count == 0 {
            apply(kernel, p_data)?
        } else {
            let batch = sample_corrupted(kernel, p_data, config.noisy_count, config.seed)?;
            empirical_distribution(&batch, kernel.output_size(), config.observation_smoothing)?
        };
        let kernel = if config.support_floor > 0.0 {
            support_floor(kernel, config.support_floor)?
        } else {
            kernel.clone()
        };
        Ok(Self {
            config,
            kernel,
            p_data: p_data.clone(),
            q_hat,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    /// The kernel after flooring.
    pub fn kernel(&self) -> &CorruptionKernel {
        &self.kernel
    }

    pub fn observed(&self) -> &FiniteDistribution {
        &self.q_hat
    }

    /// The fixed prior if configured, else the histogram of the first
    /// `clean_count` clean draws.
    pub fn prior(&self, clean_count: usize) -> Result<Option<FiniteDistribution>> {
        if let Some(h) = &self.config.fixed_prior {
            return Ok(Some(h.clone()));
        }
        if clean_count == 0 {
            return Ok(None);
        }
        let batch = sample_clean(&self.p_data, clean_count, self.config.seed)?;
        empirical_distribution(&batch, self.p_data.len(), self.config.prior_smoothing).map(Some)
    }

    /// Solves one configuration and returns its trajectory.
    pub fn trajectory(&self, key: RunKey) -> Result<Trajectory> {
        self.trajectory_with(key, &Monitors::default())
    }

    pub fn trajectory_with(&self, key: RunKey, monitors: &Monitors) -> Result<Trajectory> {
        let prior = self.prior(key.clean_count)?;
        let lambda = SolverConfig::lambda_from_clean_weight(key.clean_weight)?;
        let solver = SolverConfig {
            lambda,
            gamma: key.gamma,
            max_iterations: self.config.max_iterations,
            fixed_point_tolerance: self.config.tolerance,
            record_every: self.config.record_every,
            seed: self.config.seed,
        };
        let p0 = match (&self.config.fixed_start, self.config.init, &prior) {
            (Some(p0), _, _) => p0.clone(),
            (None, InitPolicy::Prior, Some(h)) => h.clone(),
            _ => FiniteDistribution::uniform(self.p_data.len())?,
        };
        let h = if lambda > 0.0 { prior.as_ref() } else { None };
        solve_monitored(&self.kernel, &self.q_hat, h, &solver, &p0, monitors)
    }

    pub fn run(&self, key: RunKey) -> Result<ReportRow> {
        let run = self.trajectory(key)?;
        let worst_ascent = run
            .records
            .windows(2)
            .map(|w| w[1].j_lambda - w[0].j_lambda)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(ReportRow {
            clean_count: key.clean_count,
            noisy_count: self.config.noisy_count,
            lambda_weight: key.clean_weight,
            gamma: key.gamma,
            kl_to_pdata: kl_divergence(&self.p_data, &run.final_p)?.value(),
            tv_to_pdata: total_variation(&self.p_data, &run.final_p)?,
            iterations: run.iterations_run,
            converged: run.converged,
            worst_ascent,
        })
    }
}

/// Runs every configuration of the sweep in sequence.
pub fn recoverability_experiment(
    kernel: &CorruptionKernel,
    p_data: &FiniteDistribution,
    config: &ExperimentConfig,
) -> Result<Vec<ReportRow>> {
    let experiment = Experiment::new(kernel, p_data, config.clone())?;
    let mut rows = config.keys().into_iter().map(|k| experiment.run(k)).collect::<Result<Vec<_>>>()?;
    sort_rows(&mut rows);
    Ok(rows)
}

/// Orders rows by `(clean_count, noisy_count, lambda_weight, gamma)`.
pub fn sort_rows(rows: &mut [ReportRow]) {
    rows.sort_by(|a, b| {
        let (ka, kb) = (a.sort_key(), b.sort_key());
        ka.0.cmp(&kb.0)
            .then(ka.1.cmp(&kb.1))
            .then(ka.2.total_cmp(&kb.2))
            .then(ka.3.total_cmp(&kb.3))
    });
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.clean_count,
            r.noisy_count,
            format_f64(r.lambda_weight),
            format_f64(r.gamma),
            format_f64(r.kl_to_pdata),
            format_f64(r.tv_to_pdata),
            r.iterations,
            r.converged
        );
    }
    out
}
