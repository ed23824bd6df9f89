//! Alternating minimization for the (augmented) KL ambient projection.
//!
//! The objective is
//!
//! ```text
//! J_λ(p) = D_KL(q ‖ T_r p) + λ · D_KL(h ‖ p)
//! ```
//!
//! and one iteration computes the Bayes posterior `u_y ∝ p(x) r(y|x)`, the
//! mixture `m_p = Σ_y q(y) u_y`, and the new iterate
//!
//! ```text
//! p' = (m_p + λ h + ν p) / (1 + λ + ν),    ν = (1 - γ)(1 + λ) / γ.
//! ```
//!
//! `γ = 1` (so `ν = 0`) is the plain batch update; smaller `γ` refreshes only
//! a fraction of the reconstructed mass per step. Stationary points satisfy
//! `p = (m_p + λ h) / (1 + λ)`, and the L1 defect of that identity is the
//! stopping certificate.

use std::fmt::Write as _;

use crate::error::{check_size, Error, Result};
use crate::kernel::{is_identifiable, push_forward, CorruptionKernel, IdentifiabilityReport, DEFAULT_RANK_TOL};
use crate::matrix_io::format_f64;
use crate::simplex::{kl_divergence, kl_raw, l1_distance, mix, total_variation, FiniteDistribution};

/// Weight of the uniform distribution mixed into an initial point that lacks
/// full support.
pub const INIT_SUPPORT_REPAIR: f64 = 1e-9;

pub const TRAJECTORY_CSV_HEADER: &str = "k,J_lambda,kl_q_Trp,kl_hdagger_p,residual,tv_to_reference";

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Prior strength `λ ≥ 0`.
    pub lambda: f64,
    /// Update ratio `γ ∈ (0, 1]`.
    pub gamma: f64,
    pub max_iterations: usize,
    /// Stop once the L1 stationarity residual drops below this.
    pub fixed_point_tolerance: f64,
    pub record_every: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            gamma: 1.0,
            max_iterations: 100_000,
            fixed_point_tolerance: 1e-10,
            record_every: 1,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn new(lambda: f64, gamma: f64) -> Result<Self> {
        let config = Self {
            lambda,
            gamma,
            ..Self::default()
        };
        config.validate()?;
        Ok(config)
    }

    /// Converts a clean-sample weight `w = λ/(1+λ)` into `λ = w/(1-w)`.
    pub fn lambda_from_clean_weight(weight: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&weight) {
            return Err(Error::Config(format!("clean-sample weight {weight} outside [0, 1)")));
        }
        Ok(weight / (1.0 - weight))
    }

    /// `ν = (1-γ)(1+λ)/γ`.
    pub fn nu(&self) -> f64 {
        damping(self.lambda, self.gamma)
    }

    pub fn validate(&self) -> Result<()> {
        validate_lambda(self.lambda)?;
        validate_gamma(self.gamma)?;
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        if !(self.fixed_point_tolerance > 0.0 && self.fixed_point_tolerance.is_finite()) {
            return Err(Error::Config("fixed_point_tolerance must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be positive".into()));
        }
        Ok(())
    }
}

fn damping(lambda: f64, gamma: f64) -> f64 {
    if gamma == 1.0 {
        0.0
    } else {
        (1.0 - gamma) * (1.0 + lambda) / gamma
    }
}

fn validate_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("lambda {lambda} must be finite and nonnegative")))
    }
}

fn validate_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("update ratio {gamma} outside (0, 1]")))
    }
}

/// A KLAP instance: kernel, observed distribution, optional prior, and `λ`.
#[derive(Debug, Clone, Copy)]
pub struct Klap<'a> {
    kernel: &'a CorruptionKernel,
    q: &'a FiniteDistribution,
    prior: Option<&'a FiniteDistribution>,
    lambda: f64,
}

impl<'a> Klap<'a> {
    pub fn new(
        kernel: &'a CorruptionKernel,
        q: &'a FiniteDistribution,
        prior: Option<&'a FiniteDistribution>,
        lambda: f64,
    ) -> Result<Self> {
        check_size(kernel.output_size(), q.len())?;
        if let Some(h) = prior {
            check_size(kernel.input_size(), h.len())?;
        }
        validate_lambda(lambda)?;
        if lambda > 0.0 && prior.is_none() {
            return Err(Error::Config("lambda > 0 requires a prior distribution".into()));
        }
        Ok(Self {
            kernel,
            q,
            prior,
            lambda,
        })
    }

    pub fn kernel(&self) -> &'a CorruptionKernel {
        self.kernel
    }

    pub fn observed(&self) -> &'a FiniteDistribution {
        self.q
    }

    pub fn prior(&self) -> Option<&'a FiniteDistribution> {
        self.prior
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn active_prior(&self) -> Option<&'a FiniteDistribution> {
        self.prior.filter(|_| self.lambda > 0.0)
    }

    fn check_point(&self, p: &FiniteDistribution) -> Result<()> {
        check_size(self.kernel.input_size(), p.len())
    }

    /// `D_KL(q ‖ T_r p)`, infinite when `q` charges an output `p` cannot reach.
    pub fn data_term(&self, p: &FiniteDistribution) -> Result<f64> {
        self.check_point(p)?;
        Ok(kl_raw(self.q.weights(), &push_forward(self.kernel, p.weights())))
    }

    /// `J_λ(p)`.
    pub fn objective(&self, p: &FiniteDistribution) -> Result<f64> {
        let data = self.data_term(p)?;
        Ok(match self.active_prior() {
            Some(h) => data + self.lambda * kl_raw(h.weights(), p.weights()),
            None => data,
        })
    }

    /// `m_p(x) = Σ_y q(y) u_y(x)` with `u_y ∝ p(x) r(y|x)`.
    pub fn mixture(&self, p: &FiniteDistribution) -> Result<FiniteDistribution> {
        self.check_point(p)?;
        Ok(self.mixture_unchecked(p))
    }

    fn mixture_unchecked(&self, p: &FiniteDistribution) -> FiniteDistribution {
        let kernel = self.kernel;
        let tp = push_forward(kernel, p.weights());
        // Outputs p cannot reach get a uniform posterior over supp(p).
        let mut orphan_mass = 0.0;
        let ratio: Vec<f64> = tp
            .iter()
            .zip(self.q.iter())
            .map(|(&t, &qy)| {
                if t > 0.0 {
                    qy / t
                } else {
                    orphan_mass += qy;
                    0.0
                }
            })
            .collect();
        let support = p.support().len() as f64;
        let m = p
            .iter()
            .enumerate()
            .map(|(x, &px)| {
                if px == 0.0 {
                    return 0.0;
                }
                let score: f64 = kernel.column(x).iter().zip(&ratio).map(|(r, w)| r * w).sum();
                px * score + orphan_mass / support
            })
            .collect();
        FiniteDistribution::repaired(m)
    }

    /// `‖(m_p + λ h)/(1 + λ) - p‖₁`, zero exactly at stationary points.
    pub fn fixed_point_residual(&self, p: &FiniteDistribution) -> Result<f64> {
        let m = self.mixture(p)?;
        Ok(self.residual_from_mixture(p, &m))
    }

    fn residual_from_mixture(&self, p: &FiniteDistribution, m: &FiniteDistribution) -> f64 {
        let target = self.batch_update(m);
        l1_distance(target.weights(), p.weights())
    }

    pub fn initial_state(&self, p0: &FiniteDistribution) -> Result<IterationState> {
        self.check_point(p0)?;
        Ok(IterationState {
            mixture: self.mixture_unchecked(p0),
            p: p0.clone(),
            k: 0,
        })
    }

    fn batch_update(&self, m: &FiniteDistribution) -> FiniteDistribution {
        match self.active_prior() {
            Some(h) => {
                let a = 1.0 / (1.0 + self.lambda);
                let b = self.lambda / (1.0 + self.lambda);
                FiniteDistribution::repaired(m.iter().zip(h.iter()).map(|(mx, hx)| a * mx + b * hx).collect())
            }
            None => m.clone(),
        }
    }

    /// The state after `state` with iterate `next`, for custom update rules.
    pub fn advance(&self, state: &IterationState, next: FiniteDistribution) -> IterationState {
        IterationState {
            mixture: self.mixture_unchecked(&next),
            p: next,
            k: state.k + 1,
        }
    }

    /// Batch update `p' = m_p/(1+λ) + λ h/(1+λ)`.
    pub fn sfbd_step(&self, state: &IterationState) -> Result<IterationState> {
        self.check_point(&state.p)?;
        Ok(self.advance(state, self.batch_update(&state.mixture)))
    }

    /// Damped update `p' = (m_p + λ h + ν p)/(1 + λ + ν)`.
    pub fn online_step(&self, gamma: f64, state: &IterationState) -> Result<IterationState> {
        validate_gamma(gamma)?;
        self.check_point(&state.p)?;
        Ok(self.advance(state, self.damped_update(damping(self.lambda, gamma), state)))
    }

    fn damped_update(&self, nu: f64, state: &IterationState) -> FiniteDistribution {
        let lambda = if self.active_prior().is_some() { self.lambda } else { 0.0 };
        let denom = 1.0 + lambda + nu;
        let next = (0..state.p.len())
            .map(|x| {
                let prior = self.active_prior().map_or(0.0, |h| lambda * h[x]);
                (state.mixture[x] + prior + nu * state.p[x]) / denom
            })
            .collect();
        FiniteDistribution::repaired(next)
    }
}

/// An iterate `p^k` together with its mixture `m_{p^k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    p: FiniteDistribution,
    mixture: FiniteDistribution,
    k: usize,
}

impl IterationState {
    pub fn p(&self) -> &FiniteDistribution {
        &self.p
    }

    pub fn mixture(&self) -> &FiniteDistribution {
        &self.mixture
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    pub fn into_p(self) -> FiniteDistribution {
        self.p
    }
}

/// `J_λ(p) = D_KL(q ‖ T_r p) + λ D_KL(h ‖ p)`.
pub fn objective_j(
    kernel: &CorruptionKernel,
    q: &FiniteDistribution,
    h: Option<&FiniteDistribution>,
    lambda: f64,
    p: &FiniteDistribution,
) -> Result<f64> {
    Klap::new(kernel, q, h, lambda)?.objective(p)
}

pub fn sfbd_step(
    kernel: &CorruptionKernel,
    q: &FiniteDistribution,
    h: Option<&FiniteDistribution>,
    lambda: f64,
    state: &IterationState,
) -> Result<IterationState> {
    Klap::new(kernel, q, h, lambda)?.sfbd_step(state)
}

pub fn online_step(
    kernel: &CorruptionKernel,
    q: &FiniteDistribution,
    h: Option<&FiniteDistribution>,
    lambda: f64,
    gamma: f64,
    state: &IterationState,
) -> Result<IterationState> {
    Klap::new(kernel, q, h, lambda)?.online_step(gamma, state)
}

pub fn fixed_point_residual(
    kernel: &CorruptionKernel,
    q: &FiniteDistribution,
    h: Option<&FiniteDistribution>,
    lambda: f64,
    p: &FiniteDistribution,
) -> Result<f64> {
    Klap::new(kernel, q, h, lambda)?.fixed_point_residual(p)
}

/// One row of a [`Trajectory`].
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub k: usize,
    pub j_lambda: f64,
    pub kl_q_trp: f64,
    pub kl_hdagger_p: Option<f64>,
    pub residual: f64,
    pub tv_to_reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub final_p: FiniteDistribution,
    pub converged: bool,
    pub iterations_run: usize,
    /// Set when `p0` lacked full support and was mixed with the uniform
    /// distribution at weight [`INIT_SUPPORT_REPAIR`].
    pub p0_support_repaired: bool,
    pub identifiability: IdentifiabilityReport,
}

impl Trajectory {
    pub fn final_residual(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.residual)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAJECTORY_CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(format_f64).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.k,
                format_f64(r.j_lambda),
                format_f64(r.kl_q_trp),
                opt(r.kl_hdagger_p),
                format_f64(r.residual),
                opt(r.tv_to_reference),
            );
        }
        out
    }
}

/// Optional diagnostics tracked along a run.
#[derive(Debug, Clone, Default)]
pub struct Monitors {
    /// Records `D_KL(h† ‖ p^k)`.
    pub h_dagger: Option<FiniteDistribution>,
    /// Records `TV(reference, p^k)`.
    pub reference: Option<FiniteDistribution>,
}

/// An update rule `(problem, γ, state) ↦ next state`.
pub type UpdateRule = dyn Fn(&Klap<'_>, f64, &IterationState) -> IterationState;

/// The damped update with `ν` derived from `γ` and the problem's `λ`.
pub fn standard_update(problem: &Klap<'_>, gamma: f64, state: &IterationState) -> IterationState {
    problem.advance(state, problem.damped_update(damping(problem.lambda, gamma), state))
}

/// `h` when supplied, otherwise uniform.
pub fn default_initial_point(prior: Option<&FiniteDistribution>, input_size: usize) -> Result<FiniteDistribution> {
    match prior {
        Some(h) => Ok(h.clone()),
        None => FiniteDistribution::uniform(input_size),
    }
}

pub fn solve(
    kernel: &CorruptionKernel,
    q: &FiniteDistribution,
    h: Option<&FiniteDistribution>,
    config: &SolverConfig,
    p0: &FiniteDistribution,
) -> Result<Trajectory> {
    solve_monitored(kernel, q, h, config, p0, &Monitors::default())
}

pub fn solve_monitored(
    kernel: &CorruptionKernel,
    q: &FiniteDistribution,
    h: Option<&FiniteDistribution>,
    config: &SolverConfig,
    p0: &FiniteDistribution,
    monitors: &Monitors,
) -> Result<Trajectory> {
    solve_with_rule(kernel, q, h, config, p0, monitors, &standard_update)
}

/// Runs `rule` from `p0` until the stationarity residual falls below
/// `config.fixed_point_tolerance` or `config.max_iterations` steps are taken.
///
/// The residual is always the library's own certificate, whatever `rule`
/// does, so a faulty rule shows up as non-convergence.
pub fn solve_with_rule(
    kernel: &CorruptionKernel,
    q: &FiniteDistribution,
    h: Option<&FiniteDistribution>,
    config: &SolverConfig,
    p0: &FiniteDistribution,
    monitors: &Monitors,
    rule: &UpdateRule,
) -> Result<Trajectory> {
    config.validate()?;
    let problem = Klap::new(kernel, q, h, config.lambda)?;
    problem.check_point(p0)?;
    for m in [&monitors.h_dagger, &monitors.reference].into_iter().flatten() {
        problem.check_point(m)?;
    }

    let p0_support_repaired = !p0.has_full_support();
    let start = if p0_support_repaired {
        mix(p0, &FiniteDistribution::uniform(p0.len())?, INIT_SUPPORT_REPAIR)?
    } else {
        p0.clone()
    };
    if !problem.objective(&start)?.is_finite() {
        return Err(Error::Initialization(
            "objective is infinite at the initial point: q charges outputs the kernel cannot produce; \
             apply `support_floor` to the kernel"
                .into(),
        ));
    }

    let mut records = Vec::new();
    let mut state = problem.initial_state(&start)?;
    let mut converged;
    loop {
        let residual = problem.residual_from_mixture(&state.p, &state.mixture);
        if !residual.is_finite() {
            return Err(Error::Degenerate(format!(
                "non-finite stationarity residual at iteration {}",
                state.k
            )));
        }
        converged = residual < config.fixed_point_tolerance;
        let last = converged || state.k >= config.max_iterations;
        if last || state.k % config.record_every == 0 {
            records.push(record(&problem, &state, residual, monitors)?);
        }
        if last {
            break;
        }
        state = rule(&problem, config.gamma, &state);
    }

    Ok(Trajectory {
        records,
        iterations_run: state.k,
        final_p: state.p,
        converged,
        p0_support_repaired,
        identifiability: is_identifiable(kernel, DEFAULT_RANK_TOL),
    })
}

fn record(problem: &Klap<'_>, state: &IterationState, residual: f64, monitors: &Monitors) -> Result<Record> {
    let p = &state.p;
    let data = problem.data_term(p)?;
    let j = match problem.active_prior() {
        Some(h) => data + problem.lambda * kl_raw(h.weights(), p.weights()),
        None => data,
    };
    Ok(Record {
        k: state.k,
        j_lambda: j,
        kl_q_trp: data,
        kl_hdagger_p: match &monitors.h_dagger {
            Some(hd) => Some(kl_divergence(hd, p)?.value()),
            None => None,
        },
        residual,
        tv_to_reference: match &monitors.reference {
            Some(r) => Some(total_variation(r, p)?),
            None => None,
        },
    })
}
