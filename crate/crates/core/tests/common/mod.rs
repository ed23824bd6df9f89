#![allow(dead_code)]

use klap::{CorruptionKernel, FiniteDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dist(w: &[f64]) -> FiniteDistribution {
    FiniteDistribution::new(w.to_vec()).unwrap()
}

/// Flat-Dirichlet draw, bounded away from zero.
pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> FiniteDistribution {
    let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1) + 1e-3).collect();
    klap::normalize(&raw).unwrap()
}

pub fn random_kernel(rng: &mut ChaCha8Rng, nx: usize, ny: usize) -> CorruptionKernel {
    let columns: Vec<FiniteDistribution> = (0..nx).map(|_| random_simplex(rng, ny)).collect();
    CorruptionKernel::from_columns(&columns, "random").unwrap()
}

/// Rank by Gauss-Jordan elimination with partial pivoting.
pub fn rref_rank(rows: &[Vec<f64>], tol: f64) -> usize {
    let mut a: Vec<Vec<f64>> = rows.to_vec();
    let (m, n) = (a.len(), a.first().map_or(0, Vec::len));
    let scale = a.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
    let mut rank = 0;
    for col in 0..n {
        if rank == m {
            break;
        }
        let pivot = (rank..m)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() <= tol * scale {
            continue;
        }
        a.swap(rank, pivot);
        let lead = a[rank][col];
        for v in a[rank].iter_mut() {
            *v /= lead;
        }
        for i in 0..m {
            if i != rank {
                let factor = a[i][col];
                if factor != 0.0 {
                    for j in 0..n {
                        a[i][j] -= factor * a[rank][j];
                    }
                }
            }
        }
        rank += 1;
    }
    rank
}

/// `|X| - rank([K; 1ᵀ])` by elimination.
pub fn brute_force_nullity(kernel: &CorruptionKernel) -> usize {
    let nx = kernel.input_size();
    let mut rows: Vec<Vec<f64>> = (0..kernel.output_size())
        .map(|y| (0..nx).map(|x| kernel.get(y, x)).collect())
        .collect();
    rows.push(vec![1.0; nx]);
    nx - rref_rank(&rows, 1e-10)
}

/// `(1/(1+λ)) Σ_y q(y) u_y + (λ/(1+λ)) h`, with the posterior written out.
pub fn stationarity_map(
    kernel: &CorruptionKernel,
    q: &FiniteDistribution,
    h: Option<&FiniteDistribution>,
    lambda: f64,
    p: &FiniteDistribution,
) -> Vec<f64> {
    let (nx, ny) = (kernel.input_size(), kernel.output_size());
    let mut m = vec![0.0; nx];
    for y in 0..ny {
        let tp: f64 = (0..nx).map(|x| kernel.get(y, x) * p[x]).sum();
        if q[y] == 0.0 || tp == 0.0 {
            continue;
        }
        for x in 0..nx {
            m[x] += q[y] * p[x] * kernel.get(y, x) / tp;
        }
    }
    (0..nx)
        .map(|x| (m[x] + h.map_or(0.0, |h| lambda * h[x])) / (1.0 + lambda))
        .collect()
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `Σ a log(a/b)` written directly.
pub fn kl(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, _)| **x > 0.0)
        .map(|(x, y)| if *y == 0.0 { f64::INFINITY } else { x * (x / y).ln() })
        .sum()
}

pub fn push(kernel: &CorruptionKernel, p: &[f64]) -> Vec<f64> {
    (0..kernel.output_size())
        .map(|y| (0..kernel.input_size()).map(|x| kernel.get(y, x) * p[x]).sum())
        .collect()
}
