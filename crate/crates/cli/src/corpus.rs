//! Instances shared by `verify` and the acceptance suite.

use klap::{normalize, CorruptionKernel, Error, FiniteDistribution, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Deserialize;

/// Synthetic `p_data` families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Uniform,
    /// Flat Dirichlet draw.
    Dirichlet,
    /// Two Gaussian bumps at `n/4` and `3n/4`.
    Bimodal,
    /// Mass 0.45, 0.15, 0.3 at `n/4`, `n/4 + 1`, `3n/4`, and 0.1 spread over the rest.
    Spikes,
}

pub fn family(name: Family, n: usize, seed: u64) -> Result<FiniteDistribution> {
    match name {
        Family::Uniform => FiniteDistribution::uniform(n),
        Family::Dirichlet => {
            if n == 0 {
                return Err(Error::Domain("empty alphabet".into()));
            }
            let mut r = rng(seed);
            let raw: Vec<f64> = (0..n).map(|_| r.sample::<f64, _>(Exp1)).collect();
            normalize(&raw)
        }
        Family::Bimodal => {
            if n < 2 {
                return Err(Error::Domain("bimodal family needs at least 2 states".into()));
            }
            let width = (n as f64 / 8.0).max(0.5);
            let bump = |c: f64, x: f64| (-(x - c).powi(2) / (2.0 * width * width)).exp();
            let (a, b) = (n as f64 / 4.0, 3.0 * n as f64 / 4.0);
            normalize(&(0..n).map(|x| bump(a, x as f64) + 0.6 * bump(b, x as f64) + 1e-3).collect::<Vec<_>>())
        }
        Family::Spikes => {
            if n < 4 {
                return Err(Error::Domain("spikes family needs at least 4 states".into()));
            }
            let mut w = vec![0.1 / (n - 3) as f64; n];
            w[n / 4] = 0.45;
            w[n / 4 + 1] = 0.15;
            w[3 * n / 4] = 0.3;
            FiniteDistribution::new(w)
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Flat-Dirichlet draw, bounded away from zero.
pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> FiniteDistribution {
    let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1) + 1e-3).collect();
    normalize(&raw).expect("positive weights")
}

/// Kernel with independent [`random_simplex`] columns.
pub fn random_kernel(rng: &mut ChaCha8Rng, nx: usize, ny: usize) -> CorruptionKernel {
    let columns: Vec<FiniteDistribution> = (0..nx).map(|_| random_simplex(rng, ny)).collect();
    CorruptionKernel::from_columns(&columns, "random").expect("stochastic columns")
}

pub fn two_state() -> CorruptionKernel {
    CorruptionKernel::from_rows(&[vec![0.9, 0.2], vec![0.1, 0.8]], "two-state").expect("valid kernel")
}

/// Non-injective: one-dimensional solution sets.
pub fn three_by_two() -> CorruptionKernel {
    CorruptionKernel::from_rows(&[vec![0.8, 0.5, 0.1], vec![0.2, 0.5, 0.9]], "3x2").expect("valid kernel")
}

/// `p_data` for the grayscale recoverability instances.
pub fn grayscale_p_data() -> FiniteDistribution {
    FiniteDistribution::new(vec![0.05, 0.45, 0.4, 0.1]).expect("valid distribution")
}
