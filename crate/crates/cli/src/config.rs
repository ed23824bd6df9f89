//! Scenario files.
//!
//! A scenario is a single JSON document with a `"klap_config": 1` version
//! field. Unknown keys are rejected. Syntax errors carry serde's line and
//! column; semantic errors carry the line of the offending top-level key.

use std::path::{Path, PathBuf};

use klap::{
    additive_noise_kernel, blur_kernel, constant_kernel, deterministic_map_kernel, discretized_gaussian_noise,
    dropout_kernel, grayscale_kernel, identity_kernel, poisson_kernel, read_kernel, Boundary, CorruptionKernel,
    FiniteDistribution, SolverConfig,
};
use serde::Deserialize;

use crate::corpus::{family, Family};
use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    Cyclic,
    Clipped { origin: usize },
}

impl From<&BoundarySpec> for Boundary {
    fn from(b: &BoundarySpec) -> Self {
        match b {
            BoundarySpec::Cyclic => Boundary::Cyclic,
            BoundarySpec::Clipped { origin } => Boundary::Clipped { origin: *origin },
        }
    }
}

fn cyclic() -> BoundarySpec {
    BoundarySpec::Cyclic
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Identity {
        n: usize,
    },
    Constant {
        input_size: usize,
        output_size: usize,
        target: usize,
    },
    AdditiveNoise {
        n: usize,
        noise: Vec<f64>,
        #[serde(default = "cyclic")]
        boundary: BoundarySpec,
    },
    /// Cyclic additive noise with a discretized Gaussian pmf.
    GaussianNoise {
        n: usize,
        sigma: f64,
    },
    Blur {
        n: usize,
        stencil: Vec<f64>,
        #[serde(default = "cyclic")]
        boundary: BoundarySpec,
    },
    Dropout {
        coordinates: usize,
        levels: usize,
        alpha: f64,
    },
    DeterministicMap {
        map: Vec<usize>,
        output_size: usize,
    },
    Grayscale,
    Poisson {
        levels: usize,
        budget: f64,
        truncation: Option<usize>,
    },
    /// Rows indexed by `y`, columns by `x`.
    Matrix {
        rows: Vec<Vec<f64>>,
    },
    /// A `klap-kernel v1` text file, relative to the scenario file.
    File {
        path: PathBuf,
    },
}

impl KernelSpec {
    /// Builds the kernel; `base` resolves relative `file` paths.
    pub fn build(&self, base: &Path) -> Result<CorruptionKernel, CliError> {
        let kernel = match self {
            Self::File { path } => {
                let full = base.join(path);
                let text = std::fs::read_to_string(&full)
                    .map_err(|e| CliError::Config(format!("cannot read kernel file {}: {e}", full.display())))?;
                read_kernel(&text).map_err(|e| CliError::Config(format!("{}: {e}", full.display())))?
            }
            other => other.build_inline()?,
        };
        Ok(kernel)
    }

    fn build_inline(&self) -> Result<CorruptionKernel, CliError> {
        let kernel = match self {
            Self::Identity { n } => identity_kernel(*n),
            Self::Constant {
                input_size,
                output_size,
                target,
            } => constant_kernel(*input_size, *output_size, *target),
            Self::AdditiveNoise { n, noise, boundary } => {
                additive_noise_kernel(*n, &distribution("noise", noise)?, boundary.into())
            }
            Self::GaussianNoise { n, sigma } => {
                discretized_gaussian_noise(*n, *sigma).and_then(|g| additive_noise_kernel(*n, &g, Boundary::Cyclic))
            }
            Self::Blur { n, stencil, boundary } => blur_kernel(*n, &distribution("stencil", stencil)?, boundary.into()),
            Self::Dropout {
                coordinates,
                levels,
                alpha,
            } => dropout_kernel(*coordinates, *levels, *alpha),
            Self::DeterministicMap { map, output_size } => deterministic_map_kernel(map, *output_size),
            Self::Grayscale => Ok(grayscale_kernel()),
            Self::Poisson {
                levels,
                budget,
                truncation,
            } => poisson_kernel(*levels, *budget, *truncation),
            Self::Matrix { rows } => CorruptionKernel::from_rows(rows, "matrix"),
            Self::File { .. } => unreachable!("file kernels are read by `build`"),
        };
        kernel.map_err(|e| CliError::Config(format!("kernel: {e}")))
    }
}

fn distribution(what: &str, weights: &[f64]) -> Result<FiniteDistribution, CliError> {
    FiniteDistribution::new(weights.to_vec()).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct FamilySpec {
    pub name: Family,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PDataSpec {
    Weights(Vec<f64>),
    Family(FamilySpec),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub count: usize,
    #[serde(default)]
    pub smoothing: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    Weights(Vec<f64>),
    Samples(SampleSpec),
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationSpec {
    #[default]
    Exact,
    Samples(SampleSpec),
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    #[default]
    Prior,
    Uniform,
    Weights(Vec<f64>),
}

fn one() -> f64 {
    1.0
}

fn default_max_iterations() -> usize {
    SolverConfig::default().max_iterations
}

fn default_tolerance() -> f64 {
    SolverConfig::default().fixed_point_tolerance
}

fn default_record_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub lambda: Option<f64>,
    /// Clean-sample weight `w = λ/(1+λ)`.
    pub weight: Option<f64>,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Seeds every sampling stream of the scenario.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: InitSpec,
}

/// Sweep axes; an empty axis takes its single value from the scenario.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub clean_counts: Vec<usize>,
    #[serde(default)]
    pub weights: Vec<f64>,
    #[serde(default)]
    pub gammas: Vec<f64>,
}

fn default_trajectory() -> PathBuf {
    "trajectory.csv".into()
}
fn default_summary() -> PathBuf {
    "summary.json".into()
}
fn default_report() -> PathBuf {
    "report.csv".into()
}
fn default_samples() -> PathBuf {
    "samples.csv".into()
}

/// Output paths, relative to `--out`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_trajectory")]
    pub trajectory: PathBuf,
    #[serde(default = "default_summary")]
    pub summary: PathBuf,
    #[serde(default = "default_report")]
    pub report: PathBuf,
    #[serde(default = "default_samples")]
    pub samples: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            trajectory: default_trajectory(),
            summary: default_summary(),
            report: default_report(),
            samples: default_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    klap_config: u32,
    kernel: KernelSpec,
    #[serde(default)]
    support_floor: f64,
    p_data: PDataSpec,
    #[serde(default)]
    prior: Option<PriorSpec>,
    #[serde(default)]
    observations: ObservationSpec,
    solver: SolverSpec,
    #[serde(default)]
    sweep: SweepSpec,
    #[serde(default)]
    outputs: OutputSpec,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kernel: KernelSpec,
    pub support_floor: f64,
    pub p_data: PDataSpec,
    pub prior: Option<PriorSpec>,
    pub observations: ObservationSpec,
    pub solver: SolverSpec,
    /// `λ`, whichever of `lambda` or `weight` was given.
    pub lambda: f64,
    pub sweep: SweepSpec,
    pub outputs: OutputSpec,
}

/// A semantic error and the top-level key it belongs to.
type Invalid = (&'static str, String);

impl RawScenario {
    fn validate(self) -> Result<Scenario, Invalid> {
        if self.klap_config != CONFIG_VERSION {
            return Err(("klap_config", format!("unsupported klap_config version {} (expected {CONFIG_VERSION})", self.klap_config)));
        }
        let lambda = match (self.solver.lambda, self.solver.weight) {
            (Some(l), None) => l,
            (None, Some(w)) => SolverConfig::lambda_from_clean_weight(w).map_err(|e| ("solver", e.to_string()))?,
            _ => return Err(("solver", "give exactly one of `lambda` or `weight`".into())),
        };
        SolverConfig {
            lambda,
            gamma: self.solver.gamma,
            max_iterations: self.solver.max_iterations,
            fixed_point_tolerance: self.solver.tolerance,
            record_every: self.solver.record_every,
            seed: self.solver.seed,
        }
        .validate()
        .map_err(|e| ("solver", e.to_string()))?;
        if !(0.0..1.0).contains(&self.support_floor) {
            return Err(("support_floor", format!("{} outside [0, 1)", self.support_floor)));
        }
        if lambda > 0.0 && self.prior.is_none() {
            return Err(("solver", "lambda > 0 needs a `prior`".into()));
        }
        if let Some(PriorSpec::Samples(SampleSpec { count: 0, .. })) = self.prior {
            return Err(("prior", "sample count must be positive".into()));
        }
        if let ObservationSpec::Samples(SampleSpec { count: 0, .. }) = self.observations {
            return Err(("observations", "sample count must be positive".into()));
        }
        if !self.sweep.clean_counts.is_empty() && !matches!(self.prior, Some(PriorSpec::Samples(_))) {
            return Err(("sweep", "clean_counts needs a sampled `prior`".into()));
        }
        let scenario = Scenario {
            kernel: self.kernel,
            support_floor: self.support_floor,
            p_data: self.p_data,
            prior: self.prior,
            observations: self.observations,
            solver: self.solver,
            lambda,
            sweep: self.sweep,
            outputs: self.outputs,
        };
        // File kernels are checked once their path can be resolved.
        if !matches!(scenario.kernel, KernelSpec::File { .. }) {
            let kernel = scenario.kernel.build_inline().map_err(|e| ("kernel", e.to_string()))?;
            scenario.check_sizes(&kernel)?;
        }
        Ok(scenario)
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let raw: RawScenario =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid scenario: {e}")))?;
        raw.validate().map_err(|(key, message)| {
            CliError::Config(format!("invalid scenario: {message} at line {}", key_line(text, key)))
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Checks every size in the scenario against the kernel.
    pub fn check_against(&self, kernel: &CorruptionKernel) -> Result<(), CliError> {
        self.check_sizes(kernel).map_err(|(_, message)| CliError::Config(message))
    }

    fn check_sizes(&self, kernel: &CorruptionKernel) -> Result<(), Invalid> {
        let n = kernel.input_size();
        self.p_data(n).map_err(|e| ("p_data", e.to_string()))?;
        if let Some(PriorSpec::Weights(w)) = &self.prior {
            sized("prior", w, n).map_err(|e| ("prior", e.to_string()))?;
        }
        if let InitSpec::Weights(w) = &self.solver.init {
            sized("solver.init", w, n).map_err(|e| ("solver", e.to_string()))?;
        }
        Ok(())
    }

    pub fn p_data(&self, n: usize) -> Result<FiniteDistribution, CliError> {
        match &self.p_data {
            PDataSpec::Weights(w) => sized("p_data", w, n),
            PDataSpec::Family(f) => family(f.name, n, f.seed).map_err(|e| CliError::Config(format!("p_data: {e}"))),
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            lambda: self.lambda,
            gamma: self.solver.gamma,
            max_iterations: self.solver.max_iterations,
            fixed_point_tolerance: self.solver.tolerance,
            record_every: self.solver.record_every,
            seed: self.solver.seed,
        }
    }
}

/// 1-based line of the first `"key":` in `text`, or the last line.
fn key_line(text: &str, key: &str) -> usize {
    let quoted = format!("\"{key}\"");
    let mut from = 0;
    while let Some(i) = text[from..].find(&quoted) {
        let end = from + i + quoted.len();
        if text[end..].trim_start().starts_with(':') {
            return text[..from + i].lines().count().max(1) + usize::from(text[..from + i].ends_with('\n'));
        }
        from = end;
    }
    text.lines().count().max(1)
}

fn sized(what: &str, weights: &[f64], n: usize) -> Result<FiniteDistribution, CliError> {
    if weights.len() != n {
        return Err(CliError::Config(format!("{what}: {} weights for a kernel with {n} inputs", weights.len())));
    }
    distribution(what, weights)
}
