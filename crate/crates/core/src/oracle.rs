//! Ground truth computed independently of the iteration under test.
//!
//! [`solution_set_projection`] finds the I-projection `h†` of a prior `h` onto
//! the solution set `S(q) = {p : T_r p = q}` by following the augmented
//! minimizer down a decreasing `λ` schedule, then cross-checks the limit
//! against whichever exact route applies: a closed form for deterministic or
//! uninformative kernels, a linear solve for injective ones, or a grid search
//! along a one-dimensional `S(q)`. [`brute_force_minimizer`] scans a simplex
//! lattice and is used to certify small solver runs.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_size, Error, Result};
use crate::kernel::{is_identifiable, push_forward, CorruptionKernel, DEFAULT_RANK_TOL};
use crate::simplex::{kl_divergence, kl_raw, l1_distance, total_variation, FiniteDistribution};
use crate::solver::{solve, SolverConfig};

/// Largest L1 residual `‖T_r p - q‖₁` treated as exact feasibility.
pub const FEASIBILITY_TOL: f64 = 1e-7;

/// Largest TV gap tolerated between the `λ → 0` limit and an exact oracle.
pub const CERTIFICATION_TOL: f64 = 2e-4;

/// Largest alphabet the lattice search accepts.
pub const BRUTE_FORCE_MAX_STATES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMethod {
    ClosedForm,
    SmallLambdaLimit,
    Grid,
}

impl ProjectionMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ClosedForm => "closed_form",
            Self::SmallLambdaLimit => "small_lambda_limit",
            Self::Grid => "grid",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub h_dagger: FiniteDistribution,
    /// `‖T_r h† - q‖₁`.
    pub achieved_constraint_violation: f64,
    /// `D_KL(h ‖ h†)`.
    pub achieved_kl: f64,
    /// How the returned `h_dagger` was produced.
    pub method: ProjectionMethod,
    /// The polished `λ → 0` limit, always computed.
    pub small_lambda_limit: FiniteDistribution,
    /// TV between the limit and the exact oracle, when one applies.
    pub certification_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOptions {
    /// Decreasing `λ` values; the last two drive the extrapolation.
    pub lambdas: Vec<f64>,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub grid_resolution: f64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            lambdas: vec![1e-1, 1e-2, 1e-3, 1e-4],
            max_iterations: 5_000_000,
            tolerance: 1e-12,
            grid_resolution: 1e-4,
        }
    }
}

/// `argmin_{p ∈ S(q)} D_KL(h ‖ p)`.
pub fn solution_set_projection(
    kernel: &CorruptionKernel,
    q: &FiniteDistribution,
    h: &FiniteDistribution,
) -> Result<ProjectionResult> {
    let p0 = FiniteDistribution::uniform(kernel.input_size())?;
    solution_set_projection_from(kernel, q, h, &p0, &ProjectionOptions::default())
}

/// As [`solution_set_projection`], starting the `λ` path at `p0`.
pub fn solution_set_projection_from(
    kernel: &CorruptionKernel,
    q: &FiniteDistribution,
    h: &FiniteDistribution,
    p0: &FiniteDistribution,
    options: &ProjectionOptions,
) -> Result<ProjectionResult> {
    check_size(kernel.output_size(), q.len())?;
    check_size(kernel.input_size(), h.len())?;
    check_size(kernel.input_size(), p0.len())?;
    if options.lambdas.len() < 2 || options.lambdas.windows(2).any(|w| !(w[0] > w[1] && w[1] > 0.0)) {
        return Err(Error::Config("lambda schedule must hold at least two strictly decreasing positive values".into()));
    }

    let feasible = feasibility_point(kernel, q, p0, options)?;

    let path = small_lambda_path(kernel, q, h, &options.lambdas, &feasible, options)?;
    let n = path.len();
    let (la, lb) = (options.lambdas[n - 2], options.lambdas[n - 1]);
    let (pa, pb) = (&path[n - 2], &path[n - 1]);
    let extrapolated: Vec<f64> = pa
        .iter()
        .zip(pb.iter())
        .map(|(a, b)| ((la * b - lb * a) / (la - lb)).max(0.0))
        .collect();
    let extrapolated = crate::simplex::normalize(&extrapolated)?;
    let limit = polish(kernel, q, &extrapolated, options)?;

    let (h_dagger, method, gap) = match exact_projection(kernel, q, h, options.grid_resolution)? {
        Some((oracle, method)) => {
            let gap = total_variation(&oracle, &limit)?;
            if gap > CERTIFICATION_TOL {
                return Err(Error::Certification(format!(
                    "small-lambda limit differs from the {} oracle by {gap:.3e} in TV",
                    method.as_str()
                )));
            }
            // The grid is coarser than the limit it certifies.
            if method == ProjectionMethod::Grid {
                (limit.clone(), ProjectionMethod::SmallLambdaLimit, Some(gap))
            } else {
                (oracle, method, Some(gap))
            }
        }
        None => (limit.clone(), ProjectionMethod::SmallLambdaLimit, None),
    };

    Ok(ProjectionResult {
        achieved_constraint_violation: constraint_violation(kernel, q, &h_dagger),
        achieved_kl: kl_divergence(h, &h_dagger)?.value(),
        h_dagger,
        method,
        small_lambda_limit: limit,
        certification_gap: gap,
    })
}

/// `‖T_r p - q‖₁`.
pub fn constraint_violation(kernel: &CorruptionKernel, q: &FiniteDistribution, p: &FiniteDistribution) -> f64 {
    l1_distance(&push_forward(kernel, p.weights()), q.weights())
}

fn feasibility_point(
    kernel: &CorruptionKernel,
    q: &FiniteDistribution,
    p0: &FiniteDistribution,
    options: &ProjectionOptions,
) -> Result<FiniteDistribution> {
    let config = SolverConfig {
        max_iterations: options.max_iterations,
        fixed_point_tolerance: options.tolerance,
        record_every: options.max_iterations,
        ..SolverConfig::default()
    };
    let run = match solve(kernel, q, None, &config, p0) {
        Ok(run) => run,
        Err(Error::Initialization(_)) => {
            return Err(Error::Infeasible {
                residual: q.iter().zip(push_forward(kernel, p0.weights())).filter(|(_, t)| *t == 0.0).map(|(w, _)| w).sum::<f64>() * 2.0,
            })
        }
        Err(e) => return Err(e),
    };
    let residual = constraint_violation(kernel, q, &run.final_p);
    if residual > FEASIBILITY_TOL {
        return Err(Error::Infeasible { residual });
    }
    Ok(run.final_p)
}

fn polish(
    kernel: &CorruptionKernel,
    q: &FiniteDistribution,
    start: &FiniteDistribution,
    options: &ProjectionOptions,
) -> Result<FiniteDistribution> {
    let config = SolverConfig {
        max_iterations: options.max_iterations,
        fixed_point_tolerance: options.tolerance,
        record_every: options.max_iterations,
        ..SolverConfig::default()
    };
    Ok(solve(kernel, q, None, &config, start)?.final_p)
}

/// Augmented minimizers `p*_λ` for each `λ` in order, each run warm-started
/// from the previous one.
pub fn small_lambda_path(
    kernel: &CorruptionKernel,
    q: &FiniteDistribution,
    h: &FiniteDistribution,
    lambdas: &[f64],
    p0: &FiniteDistribution,
    options: &ProjectionOptions,
) -> Result<Vec<FiniteDistribution>> {
    let mut current = p0.clone();
    let mut path = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let config = SolverConfig {
            lambda,
            max_iterations: options.max_iterations,
            fixed_point_tolerance: options.tolerance,
            record_every: options.max_iterations,
            ..SolverConfig::default()
        };
        current = solve(kernel, q, Some(h), &config, &current)?.final_p;
        path.push(current.clone());
    }
    Ok(path)
}

/// `h†(s, c) = q(s) h(c | s)` for a deterministic kernel `s = map(x)`.
///
/// A fibre on which `h` has no mass receives `q(s)` spread uniformly.
pub fn deterministic_projection(map: &[usize], q: &FiniteDistribution, h: &FiniteDistribution) -> Result<FiniteDistribution> {
    check_size(map.len(), h.len())?;
    let mut fibre_mass = vec![0.0; q.len()];
    let mut fibre_size = vec![0usize; q.len()];
    for (x, &y) in map.iter().enumerate() {
        if y >= q.len() {
            return Err(Error::Domain(format!("map sends {x} to {y}, outside {}", q.len())));
        }
        fibre_mass[y] += h[x];
        fibre_size[y] += 1;
    }
    if let Some(y) = (0..q.len()).find(|&y| q[y] > 0.0 && fibre_size[y] == 0) {
        return Err(Error::Infeasible { residual: 2.0 * q[y] });
    }
    let weights: Vec<f64> = map
        .iter()
        .enumerate()
        .map(|(x, &y)| {
            if fibre_mass[y] > 0.0 {
                q[y] * h[x] / fibre_mass[y]
            } else {
                q[y] / fibre_size[y] as f64
            }
        })
        .collect();
    crate::simplex::normalize(&weights)
}

/// An exact `h†` when the kernel admits one, with the route used.
fn exact_projection(
    kernel: &CorruptionKernel,
    q: &FiniteDistribution,
    h: &FiniteDistribution,
    resolution: f64,
) -> Result<Option<(FiniteDistribution, ProjectionMethod)>> {
    if let Some(map) = kernel.as_deterministic_map() {
        return Ok(Some((deterministic_projection(&map, q, h)?, ProjectionMethod::ClosedForm)));
    }
    if kernel.is_uninformative() {
        return Ok(Some((h.clone(), ProjectionMethod::ClosedForm)));
    }
    let report = is_identifiable(kernel, DEFAULT_RANK_TOL);
    let (augmented, rhs) = augmented_system(kernel, q);
    let svd = augmented.clone().svd(true, true);
    let particular = svd
        .solve(&rhs, report.tolerance_used)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    match report.nullspace_dimension_on_zero_sum_subspace {
        0 => {
            let clipped: Vec<f64> = particular.iter().map(|v| v.max(0.0)).collect();
            Ok(Some((crate::simplex::normalize(&clipped)?, ProjectionMethod::ClosedForm)))
        }
        1 if kernel.input_size() <= BRUTE_FORCE_MAX_STATES => {
            let direction = null_direction(&augmented);
            Ok(Some((line_search(&particular, &direction, h, resolution)?, ProjectionMethod::Grid)))
        }
        _ => Ok(None),
    }
}

fn augmented_system(kernel: &CorruptionKernel, q: &FiniteDistribution) -> (DMatrix<f64>, DVector<f64>) {
    let (ny, nx) = (kernel.output_size(), kernel.input_size());
    let a = DMatrix::from_fn(ny + 1, nx, |y, x| if y < ny { kernel.get(y, x) } else { 1.0 });
    let b = DVector::from_fn(ny + 1, |y, _| if y < ny { q[y] } else { 1.0 });
    (a, b)
}

/// Unit-L1 vector spanning the one-dimensional kernel of `a`.
fn null_direction(a: &DMatrix<f64>) -> Vec<f64> {
    // Square up with zero rows so the SVD exposes every right singular vector.
    let n = a.ncols();
    let rows = a.nrows().max(n);
    let padded = DMatrix::from_fn(rows, n, |i, j| if i < a.nrows() { a[(i, j)] } else { 0.0 });
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &s)| if s < bv { (i, s) } else { (bi, bv) });
    let v: Vec<f64> = v_t.row(idx).iter().cloned().collect();
    let norm: f64 = v.iter().map(|x| x.abs()).sum();
    v.into_iter().map(|x| x / norm).collect()
}

/// Minimizes `D_KL(h ‖ p* + t v)` over a grid of `t` with L1 spacing
/// `resolution`, restricted to the segment where the point is nonnegative.
fn line_search(particular: &DVector<f64>, direction: &[f64], h: &FiniteDistribution, resolution: f64) -> Result<FiniteDistribution> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (&p, &v) in particular.iter().zip(direction) {
        if v > 0.0 {
            lo = lo.max(-p / v);
        } else if v < 0.0 {
            hi = hi.min(-p / v);
        }
    }
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::Degenerate("solution set does not meet the simplex".into()));
    }
    let steps = ((hi - lo) / resolution).floor() as usize;
    let point = |t: f64| -> Vec<f64> {
        particular.iter().zip(direction).map(|(p, v)| (p + t * v).max(0.0)).collect()
    };
    let mut best = (f64::INFINITY, lo);
    for t in (0..=steps).map(|j| lo + j as f64 * resolution).chain(std::iter::once(hi)) {
        let value = kl_raw(h.weights(), &point(t));
        if value < best.0 {
            best = (value, t);
        }
    }
    crate::simplex::normalize(&point(best.1))
}

/// Scans the lattice `{c / N : c ∈ ℕ^n, Σ c = N}` with `N = round(1/res)` and
/// returns the point of least `J_λ`.
///
/// Points are visited in lexicographic order of their counts
/// `(c_0, c_1, ..)`, and the first point attaining the minimum wins.
pub fn brute_force_minimizer(
    kernel: &CorruptionKernel,
    q: &FiniteDistribution,
    h: Option<&FiniteDistribution>,
    lambda: f64,
    grid_resolution: f64,
) -> Result<FiniteDistribution> {
    let n = kernel.input_size();
    if n > BRUTE_FORCE_MAX_STATES {
        return Err(Error::ScaleGuard {
            size: n,
            limit: BRUTE_FORCE_MAX_STATES,
        });
    }
    if !(grid_resolution > 0.0 && grid_resolution <= 0.1) {
        return Err(Error::Domain(format!("grid resolution {grid_resolution} outside (0, 0.1]")));
    }
    let problem = crate::solver::Klap::new(kernel, q, h, lambda)?;
    let prior = problem.prior().filter(|_| lambda > 0.0);
    let total = (1.0 / grid_resolution).round() as usize;

    let mut counts = vec![0usize; n];
    let mut p = vec![0.0; n];
    let mut tp = vec![0.0; kernel.output_size()];
    let mut best: Option<(f64, Vec<f64>)> = None;
    loop {
        let used: usize = counts[..n - 1].iter().sum();
        counts[n - 1] = total - used;
        for (pi, &c) in p.iter_mut().zip(&counts) {
            *pi = c as f64 / total as f64;
        }
        tp.iter_mut().for_each(|t| *t = 0.0);
        for (x, &px) in p.iter().enumerate() {
            for (t, &r) in tp.iter_mut().zip(kernel.column(x)) {
                *t += r * px;
            }
        }
        let mut value = kl_raw(q.weights(), &tp);
        if let Some(h) = prior {
            value += lambda * kl_raw(h.weights(), &p);
        }
        if value.is_finite() && best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, p.clone()));
        }
        if !next_composition(&mut counts[..n - 1], total) {
            break;
        }
    }
    let (_, point) = best.ok_or_else(|| Error::Degenerate("objective is infinite on the whole lattice".into()))?;
    crate::simplex::normalize(&point)
}

/// Advances the leading counts lexicographically subject to `Σ ≤ total`.
fn next_composition(counts: &mut [usize], total: usize) -> bool {
    if counts.is_empty() {
        return false;
    }
    let mut i = counts.len();
    while i > 0 {
        i -= 1;
        let rest: usize = counts[..i].iter().sum();
        if rest + counts[i] < total {
            counts[i] += 1;
            for c in counts[i + 1..].iter_mut() {
                *c = 0;
            }
            return true;
        }
    }
    false
}
