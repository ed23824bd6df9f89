//! Points on the probability simplex and the divergences between them.
//!
//! Every [`FiniteDistribution`] sums to one within [`SIMPLEX_TOL`]. Arithmetic
//! that combines distributions goes through [`FiniteDistribution::repaired`],
//! which renormalizes only when the accumulated drift exceeds that tolerance,
//! so long iterations never wander off the simplex.

use std::fmt;
use std::ops::Index;

use crate::error::{check_size, Error, Result};

/// Maximum allowed deviation of a distribution's total mass from one.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Deviation accepted from user-supplied weight vectors before repair.
const INPUT_TOL: f64 = 1e-9;

/// A probability distribution over the alphabet `{0, .., n-1}`.
#[derive(Clone, PartialEq)]
pub struct FiniteDistribution {
    weights: Vec<f64>,
}

impl FiniteDistribution {
    /// Validates `weights` as a point on the simplex.
    ///
    /// Weights must be finite, nonnegative and sum to one within `1e-9`;
    /// the sum is then repaired to within [`SIMPLEX_TOL`].
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        validate_raw(&weights)?;
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > INPUT_TOL {
            return Err(Error::Domain(format!(
                "weights sum to {total}, not 1; use `normalize` for unnormalized input"
            )));
        }
        Ok(Self::repaired(weights))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("alphabet size must be at least 1".into()));
        }
        Ok(Self {
            weights: vec![1.0 / n as f64; n],
        })
    }

    pub fn point_mass(n: usize, index: usize) -> Result<Self> {
        if index >= n {
            return Err(Error::Domain(format!(
                "index {index} outside alphabet of size {n}"
            )));
        }
        let mut weights = vec![0.0; n];
        weights[index] = 1.0;
        Ok(Self { weights })
    }

    /// Wraps a vector already known to be nonnegative with unit mass up to
    /// rounding, renormalizing if the drift exceeds [`SIMPLEX_TOL`].
    pub(crate) fn repaired(mut weights: Vec<f64>) -> Self {
        debug_assert!(!weights.is_empty());
        for w in weights.iter_mut() {
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            for w in weights.iter_mut() {
                *w /= total;
            }
        }
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn alphabet_size(&self) -> usize {
        self.weights.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn has_full_support(&self) -> bool {
        self.weights.iter().all(|&w| w > 0.0)
    }

    /// Indices carrying positive mass.
    pub fn support(&self) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// `Σ w log w` with `0 log 0 = 0`; the negative entropy in nats.
    pub fn neg_entropy(&self) -> f64 {
        self.weights
            .iter()
            .filter(|&&w| w > 0.0)
            .map(|&w| w * w.ln())
            .sum()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.weights.iter()
    }
}

impl Index<usize> for FiniteDistribution {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.weights[i]
    }
}

impl fmt::Debug for FiniteDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("FiniteDistribution")
            .field(&self.weights)
            .finish()
    }
}

impl AsRef<[f64]> for FiniteDistribution {
    fn as_ref(&self) -> &[f64] {
        &self.weights
    }
}

fn validate_raw(raw: &[f64]) -> Result<()> {
    if raw.is_empty() {
        return Err(Error::Domain("alphabet size must be at least 1".into()));
    }
    if let Some((i, w)) = raw
        .iter()
        .enumerate()
        .find(|(_, w)| !w.is_finite() || **w < 0.0)
    {
        return Err(Error::Domain(format!(
            "entry {i} is {w}; weights must be finite and nonnegative"
        )));
    }
    Ok(())
}

/// Rescales a nonnegative vector onto the simplex.
///
/// A vector whose sum is already within [`SIMPLEX_TOL`] of one is returned
/// unchanged, which makes the operation idempotent bit for bit.
pub fn normalize(raw: &[f64]) -> Result<FiniteDistribution> {
    validate_raw(raw)?;
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate(
            "cannot normalize a vector with no positive entry".into(),
        ));
    }
    if (total - 1.0).abs() <= SIMPLEX_TOL {
        return Ok(FiniteDistribution {
            weights: raw.to_vec(),
        });
    }
    Ok(FiniteDistribution {
        weights: raw.iter().map(|w| w / total).collect(),
    })
}

/// A KL divergence, possibly infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceValue {
    value: f64,
    finite: bool,
}

impl DivergenceValue {
    pub(crate) fn from_raw(value: f64) -> Self {
        if value.is_finite() {
            Self {
                value: value.max(0.0),
                finite: true,
            }
        } else {
            Self::infinite()
        }
    }

    pub fn infinite() -> Self {
        Self {
            value: f64::INFINITY,
            finite: false,
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn is_finite(&self) -> bool {
        self.finite
    }
}

/// `Σ a log(a/b)` over raw slices, `+inf` when `supp(a) ⊄ supp(b)`.
///
/// Summed as `a (ln a - ln b)` so tiny weights never under/overflow a ratio.
pub(crate) fn kl_raw(a: &[f64], b: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&ai, &bi) in a.iter().zip(b) {
        if ai > 0.0 {
            if bi <= 0.0 {
                return f64::INFINITY;
            }
            total += ai * (ai.ln() - bi.ln());
        }
    }
    total
}

/// `D_KL(a ‖ b)` in nats.
pub fn kl_divergence(a: &FiniteDistribution, b: &FiniteDistribution) -> Result<DivergenceValue> {
    check_size(a.len(), b.len())?;
    Ok(DivergenceValue::from_raw(kl_raw(&a.weights, &b.weights)))
}

/// `½ Σ |a - b|`.
pub fn total_variation(a: &FiniteDistribution, b: &FiniteDistribution) -> Result<f64> {
    check_size(a.len(), b.len())?;
    Ok(0.5 * l1_distance(&a.weights, &b.weights))
}

pub(crate) fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `(1 - t)·a + t·b`.
pub fn mix(a: &FiniteDistribution, b: &FiniteDistribution, weight_on_b: f64) -> Result<FiniteDistribution> {
    check_size(a.len(), b.len())?;
    if !(0.0..=1.0).contains(&weight_on_b) {
        return Err(Error::Domain(format!(
            "mixing weight {weight_on_b} outside [0, 1]"
        )));
    }
    let t = weight_on_b;
    let weights = a
        .weights
        .iter()
        .zip(&b.weights)
        .map(|(x, y)| (1.0 - t) * x + t * y)
        .collect();
    Ok(FiniteDistribution::repaired(weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dist(w: &[f64]) -> FiniteDistribution {
        FiniteDistribution::new(w.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[2.0, 2.0]).unwrap().weights(), &[0.5, 0.5]);
        assert_eq!(normalize(&[1.0, 0.0, 0.0]).unwrap().weights(), &[1.0, 0.0, 0.0]);
        assert_eq!(normalize(&[3.0, 1.0]).unwrap().weights(), &[0.75, 0.25]);
    }

    #[test]
    fn normalize_errors() {
        assert!(matches!(normalize(&[0.0, 0.0]), Err(Error::Degenerate(_))));
        assert!(matches!(normalize(&[1.0, -0.5]), Err(Error::Domain(_))));
        assert!(matches!(normalize(&[]), Err(Error::Domain(_))));
        assert!(matches!(normalize(&[f64::NAN]), Err(Error::Domain(_))));
    }

    #[test]
    fn new_rejects_unnormalized() {
        assert!(FiniteDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(FiniteDistribution::new(vec![0.1, 0.2, 0.7]).is_ok());
    }

    #[test]
    fn kl_examples() {
        let half = dist(&[0.5, 0.5]);
        assert_eq!(kl_divergence(&half, &half).unwrap().value(), 0.0);
        let v = kl_divergence(&dist(&[1.0, 0.0]), &half).unwrap();
        assert_abs_diff_eq!(v.value(), std::f64::consts::LN_2, epsilon = 1e-15);
        assert!(v.is_finite());
        let inf = kl_divergence(&half, &dist(&[1.0, 0.0])).unwrap();
        assert!(!inf.is_finite());
        assert_eq!(inf.value(), f64::INFINITY);
    }

    #[test]
    fn kl_shape_error() {
        let r = kl_divergence(&dist(&[1.0]), &dist(&[0.5, 0.5]));
        assert_eq!(r, Err(Error::Shape { expected: 1, found: 2 }));
    }

    #[test]
    fn tv_examples() {
        let a = dist(&[0.3, 0.7]);
        assert_eq!(total_variation(&a, &a).unwrap(), 0.0);
        assert_eq!(total_variation(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(total_variation(&dist(&[0.75, 0.25]), &dist(&[0.25, 0.75])).unwrap(), 0.5);
        assert!(total_variation(&a, &dist(&[1.0])).is_err());
    }

    #[test]
    fn mix_examples() {
        let a = dist(&[0.2, 0.8]);
        let b = dist(&[0.6, 0.4]);
        assert_eq!(mix(&a, &b, 0.0).unwrap(), a);
        assert_eq!(mix(&a, &b, 1.0).unwrap(), b);
        let m = mix(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0]), 0.25).unwrap();
        assert_eq!(m.weights(), &[0.75, 0.25]);
        assert!(matches!(mix(&a, &b, 1.5), Err(Error::Domain(_))));
        assert!(matches!(mix(&a, &b, -0.1), Err(Error::Domain(_))));
    }

    fn simplex_point(n: usize) -> impl Strategy<Value = FiniteDistribution> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("all zero", |v| normalize(&v).ok())
    }

    fn simplex_pair() -> impl Strategy<Value = (FiniteDistribution, FiniteDistribution)> {
        (1usize..8).prop_flat_map(|n| (simplex_point(n), simplex_point(n)))
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(v in prop::collection::vec(0.0f64..10.0, 1..12)) {
            prop_assume!(v.iter().any(|&x| x > 0.0));
            let once = normalize(&v).unwrap();
            let twice = normalize(once.weights()).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn kl_zero_iff_equal((a, b) in simplex_pair()) {
            let kl = kl_divergence(&a, &b).unwrap();
            prop_assert!(kl.value() >= 0.0);
            let tv = total_variation(&a, &b).unwrap();
            prop_assert_eq!(kl.value() == 0.0, tv < 1e-12);
            prop_assert_eq!(kl_divergence(&a, &a).unwrap().value(), 0.0);
        }

        #[test]
        fn kl_convex_in_second_argument(
            (a, b1, b2) in (1usize..8).prop_flat_map(|n| (simplex_point(n), simplex_point(n), simplex_point(n))),
            t in 0.01f64..0.99,
        ) {
            let lhs = kl_divergence(&a, &mix(&b1, &b2, t).unwrap()).unwrap().value();
            let r1 = kl_divergence(&a, &b1).unwrap().value();
            let r2 = kl_divergence(&a, &b2).unwrap().value();
            prop_assert!(lhs <= (1.0 - t) * r1 + t * r2 + 1e-10);
        }

        #[test]
        fn mix_stays_on_simplex((a, b) in simplex_pair(), t in 0.0f64..=1.0) {
            let m = mix(&a, &b, t).unwrap();
            let total: f64 = m.iter().sum();
            prop_assert!((total - 1.0).abs() <= SIMPLEX_TOL);
            prop_assert!(m.iter().all(|&w| w >= 0.0));
        }
    }
}
