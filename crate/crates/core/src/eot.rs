//! One-sided entropic optimal transport.
//!
//! With cost `c(x, y) = -log r(y|x)` and only the `y`-marginal pinned to `q`,
//!
//! ```text
//! Φ(p) = min_{π ∈ Π_y(q)}  Σ π c + D_KL(π ‖ p ⊗ q)
//! ```
//!
//! is attained at `π*(x, y) = q(y) p(x) e^{-c(x,y)} / Z(y)` and differs from
//! `D_KL(q ‖ T_r p)` by the constant `-Σ q log q`. The minimizer is closed
//! form, so no Sinkhorn loop is involved.

use nalgebra::DMatrix;

use crate::error::{check_size, Error, Result};
use crate::kernel::{apply, cost_matrix, CorruptionKernel, CostMatrix};
use crate::matrix_io::{read_matrix, write_matrix, COUPLING_TAG};
use crate::simplex::{kl_divergence, FiniteDistribution, SIMPLEX_TOL};

/// A joint distribution `π(x, y)` on `X × Y`, stored `|X| × |Y|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    joint: DMatrix<f64>,
}

impl Coupling {
    /// Wraps a nonnegative table of total mass one.
    pub fn from_joint(joint: DMatrix<f64>) -> Result<Self> {
        if joint.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("coupling entries must be finite and nonnegative".into()));
        }
        let total: f64 = joint.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("coupling has total mass {total}")));
        }
        Ok(Self { joint })
    }

    /// `π(x, y) = q(y) u_y(x)` from per-column conditionals.
    pub fn from_conditionals(conditionals: &[FiniteDistribution], q: &FiniteDistribution) -> Result<Self> {
        check_size(q.len(), conditionals.len())?;
        let nx = conditionals.first().map_or(0, FiniteDistribution::len);
        for u in conditionals {
            check_size(nx, u.len())?;
        }
        Ok(Self {
            joint: DMatrix::from_fn(nx, q.len(), |x, y| q[y] * conditionals[y][x]),
        })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.joint[(x, y)]
    }

    pub fn joint(&self) -> &DMatrix<f64> {
        &self.joint
    }

    pub fn x_marginal(&self) -> Vec<f64> {
        self.joint.row_iter().map(|r| r.sum()).collect()
    }

    pub fn y_marginal(&self) -> Vec<f64> {
        self.joint.column_iter().map(|c| c.sum()).collect()
    }

    pub fn to_text(&self) -> String {
        write_matrix(COUPLING_TAG, &self.joint)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_joint(read_matrix(COUPLING_TAG, text)?)
    }

    /// `Σ π c + D_KL(π ‖ p ⊗ q)`.
    pub fn transport_objective(&self, p: &FiniteDistribution, q: &FiniteDistribution, cost: &CostMatrix) -> Result<f64> {
        let (nx, ny) = self.joint.shape();
        check_size(nx, p.len())?;
        check_size(ny, q.len())?;
        check_size(nx, cost.input_size())?;
        check_size(ny, cost.output_size())?;
        let mut total = 0.0;
        for y in 0..ny {
            for x in 0..nx {
                let pi = self.joint[(x, y)];
                if pi == 0.0 {
                    continue;
                }
                let reference = p[x] * q[y];
                if reference == 0.0 {
                    return Ok(f64::INFINITY);
                }
                total += pi * cost.get(x, y) + pi * (pi.ln() - reference.ln());
            }
        }
        Ok(total)
    }
}

/// The minimizer over `Π_y(q)` of the one-sided entropic transport problem.
pub fn inner_coupling(p: &FiniteDistribution, q: &FiniteDistribution, cost: &CostMatrix) -> Result<Coupling> {
    check_size(cost.input_size(), p.len())?;
    check_size(cost.output_size(), q.len())?;
    let (nx, ny) = (p.len(), q.len());
    let mut joint = DMatrix::zeros(nx, ny);
    let mut log_w = vec![f64::NEG_INFINITY; nx];
    for y in 0..ny {
        for (x, lw) in log_w.iter_mut().enumerate() {
            *lw = if p[x] > 0.0 { p[x].ln() - cost.get(x, y) } else { f64::NEG_INFINITY };
        }
        let peak = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            return Err(Error::Degenerate(format!("normalizer Z({y}) vanishes")));
        }
        let scaled: Vec<f64> = log_w.iter().map(|lw| (lw - peak).exp()).collect();
        let z: f64 = scaled.iter().sum();
        for (x, s) in scaled.iter().enumerate() {
            joint[(x, y)] = q[y] * s / z;
        }
    }
    Ok(Coupling { joint })
}

/// `Φ(p)` evaluated at the closed-form minimizer.
pub fn phi(p: &FiniteDistribution, q: &FiniteDistribution, cost: &CostMatrix) -> Result<f64> {
    inner_coupling(p, q, cost)?.transport_objective(p, q, cost)
}

/// `|D_KL(q ‖ T_r p) - Φ(p) - Σ q log q|`.
pub fn verify_dv_identity(kernel: &CorruptionKernel, q: &FiniteDistribution, p: &FiniteDistribution) -> Result<f64> {
    let cost = cost_matrix(kernel)?;
    let lhs = kl_divergence(q, &apply(kernel, p)?)?.value();
    let rhs = phi(p, q, &cost)? + q.neg_entropy();
    Ok((lhs - rhs).abs())
}

/// True when the coupling's `y`-marginal matches `q` within `tol` (L∞).
pub fn has_y_marginal(coupling: &Coupling, q: &FiniteDistribution, tol: f64) -> bool {
    let m = coupling.y_marginal();
    m.len() == q.len() && m.iter().zip(q.iter()).all(|(a, b)| (a - b).abs() <= tol)
        && (m.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL.max(tol)
}
