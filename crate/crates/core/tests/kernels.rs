mod common;

use common::{brute_force_nullity, dist, random_kernel, random_simplex, rng};
use klap::kernel::{default_poisson_truncation, DEFAULT_RANK_TOL};
use klap::{
    additive_noise_kernel, apply, blur_kernel, deterministic_map_kernel, dropout_kernel, grayscale_kernel,
    is_identifiable, mix, poisson_kernel, posterior, support_floor, Boundary, CorruptionKernel, FiniteDistribution,
};
use proptest::prelude::*;
use rand::Rng;

fn columns_stochastic(k: &CorruptionKernel) -> bool {
    (0..k.input_size()).all(|x| {
        let col = k.column(x);
        col.iter().all(|&v| v >= 0.0) && (col.iter().sum::<f64>() - 1.0).abs() <= 1e-12
    })
}

/// Whether the DFT of `noise` vanishes at some nonzero frequency.
fn dft_has_zero(noise: &[f64]) -> bool {
    let n = noise.len();
    (1..n).any(|k| {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, &v) in noise.iter().enumerate() {
            let angle = -2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64;
            re += v * angle.cos();
            im += v * angle.sin();
        }
        re.hypot(im) < 1e-9
    })
}

fn poisson_series(mean: f64, k: usize) -> f64 {
    let mut term = (-mean).exp();
    for i in 1..=k {
        term *= mean / i as f64;
    }
    term
}

#[test]
fn circulant_examples_match_elimination() {
    let k = additive_noise_kernel(4, &dist(&[0.5, 0.0, 0.5, 0.0]), Boundary::Cyclic).unwrap();
    let report = is_identifiable(&k, DEFAULT_RANK_TOL);
    assert!(!report.injective);
    assert_eq!(report.nullspace_dimension_on_zero_sum_subspace, brute_force_nullity(&k));
    assert!(brute_force_nullity(&k) > 0);

    let k = blur_kernel(4, &dist(&[0.5, 0.25, 0.0, 0.25]), Boundary::Cyclic).unwrap();
    assert!(!is_identifiable(&k, DEFAULT_RANK_TOL).injective);
    assert_eq!(brute_force_nullity(&k), 1);

    let k = blur_kernel(3, &dist(&[0.5, 0.25, 0.25]), Boundary::Cyclic).unwrap();
    assert!(is_identifiable(&k, DEFAULT_RANK_TOL).injective);
    assert_eq!(brute_force_nullity(&k), 0);
}

#[test]
fn grayscale_nullity_matches_elimination() {
    let k = grayscale_kernel();
    assert_eq!(brute_force_nullity(&k), 2);
    assert_eq!(is_identifiable(&k, DEFAULT_RANK_TOL).nullspace_dimension_on_zero_sum_subspace, 2);
}

#[test]
fn cyclic_noise_identifiability_agrees_with_dft() {
    let mut r = rng(41);
    let mut singular = 0;
    for trial in 0..200 {
        let n = r.random_range(2..=8);
        let noise = if trial % 2 == 0 && n % 2 == 0 {
            // Half-periodic pmfs have a vanishing DFT at every odd frequency.
            let half = random_simplex(&mut r, n / 2);
            let w: Vec<f64> = (0..n).map(|j| half[j % (n / 2)] / 2.0).collect();
            dist(&w)
        } else {
            random_simplex(&mut r, n)
        };
        let k = additive_noise_kernel(n, &noise, Boundary::Cyclic).unwrap();
        let injective = is_identifiable(&k, DEFAULT_RANK_TOL).injective;
        assert_eq!(injective, !dft_has_zero(noise.weights()), "noise {:?}", noise.weights());
        singular += usize::from(!injective);
    }
    assert!(singular > 20);
}

#[test]
fn identifiability_agrees_with_elimination_on_random_kernels() {
    let mut r = rng(7);
    for _ in 0..300 {
        let nx = r.random_range(1..=6);
        let ny = r.random_range(1..=7);
        let mut columns: Vec<FiniteDistribution> = (0..nx).map(|_| random_simplex(&mut r, ny)).collect();
        // Plant dependencies in about half the cases.
        if nx >= 3 && r.random_bool(0.5) {
            let t = r.random_range(0.1..0.9);
            columns[nx - 1] = mix(&columns[0], &columns[1], t).unwrap();
        }
        if nx >= 2 && r.random_bool(0.2) {
            columns[1] = columns[0].clone();
        }
        let k = CorruptionKernel::from_columns(&columns, "random").unwrap();
        let report = is_identifiable(&k, DEFAULT_RANK_TOL);
        assert_eq!(report.nullspace_dimension_on_zero_sum_subspace, brute_force_nullity(&k));
        assert_eq!(report.injective, report.nullspace_dimension_on_zero_sum_subspace == 0);
    }
}

#[test]
fn injective_maps_and_partial_dropout_are_identifiable() {
    for map in [vec![0, 1, 2], vec![2, 0, 1], vec![4, 1, 3]] {
        let k = deterministic_map_kernel(&map, 5).unwrap();
        assert!(is_identifiable(&k, DEFAULT_RANK_TOL).injective);
    }
    for (coords, levels) in [(1, 2), (2, 2), (2, 3), (3, 2)] {
        for alpha in [0.0, 0.1, 0.6, 0.95] {
            let k = dropout_kernel(coords, levels, alpha).unwrap();
            assert!(is_identifiable(&k, DEFAULT_RANK_TOL).injective);
            assert_eq!(brute_force_nullity(&k), 0);
        }
        let k = dropout_kernel(coords, levels, 1.0).unwrap();
        assert_eq!(brute_force_nullity(&k), k.input_size() - 1);
    }
}

#[test]
fn poisson_column_matches_direct_series() {
    let k = poisson_kernel(2, 10.0, Some(40)).unwrap();
    let mut head = 0.0;
    for c in 0..40 {
        let expected = poisson_series(10.0, c);
        assert!((k.get(c, 1) - expected).abs() <= 1e-15 + 1e-12 * expected, "count {c}");
        head += expected;
    }
    assert!((k.get(40, 1) - (1.0 - head)).abs() < 1e-14);
    assert_eq!(k.get(0, 0), 1.0);
}

#[test]
fn poisson_default_truncation_keeps_tail_small() {
    for alpha in [5.0, 10.0, 50.0, 100.0] {
        let t = default_poisson_truncation(alpha);
        let tail = 1.0 - (0..t).map(|c| poisson_series(alpha, c)).sum::<f64>();
        assert!(tail < 1e-8, "alpha {alpha}: tail {tail}");
    }
    // Below α = 5 the folded tail exceeds 1e-8.
    let tail = 1.0 - (0..default_poisson_truncation(1.0)).map(|c| poisson_series(1.0, c)).sum::<f64>();
    assert!(tail > 1e-8 && tail < 1e-5);
}

#[test]
fn poisson_columns_separate_with_budget() {
    let min_tv = |alpha: f64| {
        let k = poisson_kernel(4, alpha, None).unwrap();
        let mut best = f64::INFINITY;
        for a in 0..4 {
            for b in a + 1..4 {
                let tv: f64 = k.column(a).iter().zip(k.column(b)).map(|(u, v)| (u - v).abs()).sum::<f64>() / 2.0;
                best = best.min(tv);
            }
        }
        best
    };
    let table: Vec<f64> = [10.0, 50.0, 100.0].iter().map(|&a| min_tv(a)).collect();
    assert!(table[0] < table[1] && table[1] < table[2], "{table:?}");
}

#[test]
fn apply_to_random_point_mass_returns_column() {
    let mut r = rng(3);
    for _ in 0..50 {
        let (nx, ny) = (r.random_range(1..=6), r.random_range(1..=6));
        let k = random_kernel(&mut r, nx, ny);
        let x = r.random_range(0..nx);
        let q = apply(&k, &FiniteDistribution::point_mass(nx, x).unwrap()).unwrap();
        assert_eq!(q.weights(), k.column(x));
    }
}

fn simplex_strategy(n: usize) -> impl Strategy<Value = FiniteDistribution> {
    prop::collection::vec(0.0f64..1.0, n).prop_filter_map("nonzero", |v| klap::normalize(&v).ok())
}

fn kernel_strategy(nx: usize, ny: usize) -> impl Strategy<Value = CorruptionKernel> {
    prop::collection::vec(simplex_strategy(ny), nx)
        .prop_map(|cols| CorruptionKernel::from_columns(&cols, "prop").unwrap())
}

fn instance() -> impl Strategy<Value = (CorruptionKernel, FiniteDistribution, FiniteDistribution)> {
    (1usize..=6, 1usize..=6).prop_flat_map(|(nx, ny)| (kernel_strategy(nx, ny), simplex_strategy(nx), simplex_strategy(nx)))
}

proptest! {
    #[test]
    fn constructors_are_column_stochastic(
        n in 1usize..9,
        noise in prop::collection::vec(0.0f64..1.0, 1..9),
        origin_frac in 0.0f64..1.0,
        coords in 1usize..4,
        levels in 1usize..4,
        alpha in 0.0f64..=1.0,
        budget in 0.1f64..120.0,
        eps in 1e-9f64..0.5,
    ) {
        let noise = klap::normalize(&noise).unwrap_or_else(|_| FiniteDistribution::uniform(noise.len()).unwrap());
        let mut cyclic = noise.weights().to_vec();
        cyclic.resize(n.max(cyclic.len()), 0.0);
        let cyclic_n = cyclic.len();
        let k = additive_noise_kernel(cyclic_n, &dist(&cyclic), Boundary::Cyclic).unwrap();
        prop_assert!(columns_stochastic(&k));
        let origin = ((noise.len() - 1) as f64 * origin_frac) as usize;
        if let Ok(k) = additive_noise_kernel(n, &noise, Boundary::Clipped { origin }) {
            prop_assert!(columns_stochastic(&k));
            prop_assert!(columns_stochastic(&support_floor(&k, eps).unwrap()));
        }
        if let Ok(k) = blur_kernel(n, &noise, Boundary::Cyclic) {
            prop_assert!(columns_stochastic(&k));
        }
        prop_assert!(columns_stochastic(&dropout_kernel(coords, levels, alpha).unwrap()));
        prop_assert!(columns_stochastic(&poisson_kernel(levels + 1, budget, None).unwrap()));
    }

    #[test]
    fn apply_is_linear((k, p1, p2) in instance(), t in 0.0f64..=1.0) {
        let lhs = apply(&k, &mix(&p1, &p2, t).unwrap()).unwrap();
        let rhs = mix(&apply(&k, &p1).unwrap(), &apply(&k, &p2).unwrap(), t).unwrap();
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn posterior_mixture_reproduces_prior((k, p, _) in instance()) {
        let q = apply(&k, &p).unwrap();
        let post = posterior(&k, &p).unwrap();
        let mut m = vec![0.0; p.len()];
        for y in 0..q.len() {
            let row = post.row(y);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            for x in 0..p.len() {
                if row[x] > 0.0 {
                    prop_assert!(p[x] > 0.0 && k.get(y, x) > 0.0);
                }
                m[x] += q[y] * row[x];
            }
        }
        for (a, b) in m.iter().zip(p.iter()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }
}
