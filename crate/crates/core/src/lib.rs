//! Exact KL ambient projection on finite state spaces.
//!
//! A corruption kernel `r(y|x)` is a column-stochastic matrix and the
//! corruption operator is `T_r p = K p`. Given the corrupted distribution
//! `q`, the library minimizes
//!
//! ```text
//! J_λ(p) = D_KL(q ‖ T_r p) + λ D_KL(h ‖ p)
//! ```
//!
//! over the simplex with the closed-form alternating update, and provides the
//! tools to check every step: identifiability tests, the entropic transport
//! form of the objective, independent oracles, and sampling experiments.
//!
//! ```
//! use klap::{apply, solve, FiniteDistribution, CorruptionKernel, SolverConfig};
//!
//! let kernel = CorruptionKernel::from_rows(&[vec![0.9, 0.2], vec![0.1, 0.8]], "two-state")?;
//! let p_data = FiniteDistribution::new(vec![0.3, 0.7])?;
//! let q = apply(&kernel, &p_data)?;
//! let p0 = FiniteDistribution::uniform(2)?;
//! let run = solve(&kernel, &q, None, &SolverConfig::default(), &p0)?;
//! assert!(run.converged);
//! assert!((run.final_p[0] - 0.3).abs() < 1e-7);
//! # Ok::<(), klap::Error>(())
//! ```

pub mod empirical;
pub mod eot;
mod error;
pub mod kernel;
pub mod matrix_io;
pub mod oracle;
pub mod simplex;
pub mod solver;

pub use crate::empirical::{
    empirical_distribution, recoverability_experiment, report_csv, sample_clean, sample_corrupted, ExperimentConfig,
    InitPolicy, ReportRow, SampleBatch, SampleSource,
};
pub use crate::eot::{inner_coupling, phi, verify_dv_identity, Coupling};
pub use crate::error::{Error, Result};
pub use crate::kernel::{
    additive_noise_kernel, apply, blur_kernel, constant_kernel, cost_matrix, deterministic_map_kernel, discretized_gaussian_noise,
    dropout_kernel, grayscale_kernel, identity_kernel, is_identifiable, poisson_kernel, posterior, support_floor,
    Boundary, CorruptionKernel, CostMatrix, IdentifiabilityReport, Posterior,
};
pub use crate::matrix_io::{read_kernel, write_kernel};
pub use crate::oracle::{brute_force_minimizer, solution_set_projection, ProjectionMethod, ProjectionResult};
pub use crate::simplex::{kl_divergence, mix, normalize, total_variation, DivergenceValue, FiniteDistribution};
pub use crate::solver::{
    fixed_point_residual, objective_j, online_step, sfbd_step, solve, solve_monitored, IterationState, Klap,
    SolverConfig, Trajectory,
};
