//! Corruption kernels as column-stochastic matrices.
//!
//! Entry `(y, x)` of a [`CorruptionKernel`] is `r(y|x)`, the probability of
//! observing `y` when the clean state is `x`. Applying the kernel to a clean
//! distribution yields the corrupted one; the Bayes posterior inverts a single
//! observation. Product alphabets (dropout) are enumerated row-major over
//! coordinates: the first coordinate is the most significant digit.

use nalgebra::DMatrix;

use crate::error::{check_size, Error, Result};
use crate::simplex::{normalize, FiniteDistribution, SIMPLEX_TOL};

/// Relative singular-value threshold used by [`is_identifiable`] callers
/// that have no better information.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Column sums accepted from user-supplied matrices before repair.
const INPUT_TOL: f64 = 1e-9;

/// How noise that leaves the alphabet is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Offsets wrap modulo the alphabet size. Index `j` of the pmf is the
    /// offset `j`, so index `n - 1` is the offset `-1`.
    Cyclic,
    /// Outputs are clamped into `[0, n-1]`, piling overflow mass on the edge
    /// bins. Index `j` of the pmf is the offset `j - origin`.
    Clipped { origin: usize },
}

/// A Markov kernel `r(y|x)` stored as a `|Y| × |X|` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionKernel {
    matrix: DMatrix<f64>,
    label: String,
}

impl CorruptionKernel {
    /// Builds a kernel from its `|Y| × |X|` matrix.
    ///
    /// Entries must be finite and nonnegative, and every column must sum to
    /// one within `1e-9`. Columns off by more than `1e-12` are renormalized.
    pub fn from_matrix(mut matrix: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::Domain("kernel dimensions must be positive".into()));
        }
        for x in 0..matrix.ncols() {
            let mut col = matrix.column_mut(x);
            if let Some(v) = col.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::Domain(format!(
                    "column {x} has entry {v}; kernel entries must be finite and nonnegative"
                )));
            }
            let total: f64 = col.iter().sum();
            if (total - 1.0).abs() > INPUT_TOL {
                return Err(Error::Domain(format!(
                    "column {x} sums to {total}; every column must be a distribution"
                )));
            }
            if (total - 1.0).abs() > SIMPLEX_TOL {
                col /= total;
            }
        }
        Ok(Self {
            matrix,
            label: label.into(),
        })
    }

    /// Builds a kernel from rows `r(y|·)`, one slice per output symbol.
    pub fn from_rows(rows: &[Vec<f64>], label: impl Into<String>) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
            return Err(Error::Shape {
                expected: ncols,
                found: bad.len(),
            });
        }
        let matrix = DMatrix::from_fn(rows.len(), ncols, |y, x| rows[y][x]);
        Self::from_matrix(matrix, label)
    }

    /// Builds a kernel from the conditionals `r(·|x)`.
    pub fn from_columns(columns: &[FiniteDistribution], label: impl Into<String>) -> Result<Self> {
        let nrows = columns.first().map_or(0, FiniteDistribution::len);
        for c in columns {
            check_size(nrows, c.len())?;
        }
        let matrix = DMatrix::from_fn(nrows, columns.len(), |y, x| columns[x][y]);
        Self::from_matrix(matrix, label)
    }

    /// `|X|`.
    pub fn input_size(&self) -> usize {
        self.matrix.ncols()
    }

    /// `|Y|`.
    pub fn output_size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// `r(y|x)`.
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.matrix[(y, x)]
    }

    /// `r(·|x)` as a contiguous slice.
    pub fn column(&self, x: usize) -> &[f64] {
        let n = self.output_size();
        &self.matrix.as_slice()[x * n..(x + 1) * n]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// True when every entry is 0 or 1, i.e. the kernel is a function `X → Y`.
    pub fn as_deterministic_map(&self) -> Option<Vec<usize>> {
        (0..self.input_size())
            .map(|x| {
                let col = self.column(x);
                if col.iter().all(|&v| v == 0.0 || v == 1.0) {
                    col.iter().position(|&v| v == 1.0)
                } else {
                    None
                }
            })
            .collect()
    }

    /// True when all columns coincide, so the observation carries no
    /// information about `x`.
    pub fn is_uninformative(&self) -> bool {
        let first = self.column(0);
        (1..self.input_size()).all(|x| self.column(x) == first)
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.matrix.iter().all(|&v| v > 0.0)
    }
}

pub fn identity_kernel(n: usize) -> Result<CorruptionKernel> {
    if n == 0 {
        return Err(Error::Domain("alphabet size must be at least 1".into()));
    }
    CorruptionKernel::from_matrix(DMatrix::identity(n, n), format!("identity({n})"))
}

/// Every `x` is sent to the same output `target`.
pub fn constant_kernel(input_size: usize, output_size: usize, target: usize) -> Result<CorruptionKernel> {
    if input_size == 0 || output_size == 0 {
        return Err(Error::Domain("kernel dimensions must be positive".into()));
    }
    if target >= output_size {
        return Err(Error::Domain(format!(
            "target {target} outside output alphabet of size {output_size}"
        )));
    }
    let matrix = DMatrix::from_fn(output_size, input_size, |y, _| f64::from(u8::from(y == target)));
    CorruptionKernel::from_matrix(matrix, format!("constant({input_size}->{output_size}@{target})"))
}

/// Shift noise on `{0, .., n-1}`: `y = x + offset` with `offset ~ noise`.
pub fn additive_noise_kernel(
    alphabet_size: usize,
    noise: &FiniteDistribution,
    boundary: Boundary,
) -> Result<CorruptionKernel> {
    let n = alphabet_size;
    if n == 0 {
        return Err(Error::Domain("alphabet size must be at least 1".into()));
    }
    let mut matrix = DMatrix::zeros(n, n);
    match boundary {
        Boundary::Cyclic => {
            check_size(n, noise.len())?;
            for x in 0..n {
                for (offset, &w) in noise.iter().enumerate() {
                    matrix[((x + offset) % n, x)] += w;
                }
            }
        }
        Boundary::Clipped { origin } => {
            let len = noise.len();
            if origin >= len || origin >= n || len - 1 - origin >= n {
                return Err(Error::Shape {
                    expected: 2 * n - 1,
                    found: len,
                });
            }
            let last = n as isize - 1;
            for x in 0..n {
                for (j, &w) in noise.iter().enumerate() {
                    let y = (x as isize + j as isize - origin as isize).clamp(0, last);
                    matrix[(y as usize, x)] += w;
                }
            }
        }
    }
    CorruptionKernel::from_matrix(matrix, format!("additive_noise({n}, {boundary:?})"))
}

/// Cyclic offsets `0..n` weighted by `exp(-d²/2σ²)` with `d` the wrapped
/// distance `min(j, n - j)`.
pub fn discretized_gaussian_noise(alphabet_size: usize, sigma: f64) -> Result<FiniteDistribution> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("noise width {sigma} must be positive")));
    }
    let weights: Vec<f64> = (0..alphabet_size)
        .map(|j| {
            let d = j.min(alphabet_size - j) as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    normalize(&weights)
}

/// Discrete convolution with a low-pass stencil.
///
/// In cyclic mode the stencil may be shorter than the alphabet; it is padded
/// with zeros (index `j` is the offset `j`, wrapping for the tail).
pub fn blur_kernel(
    alphabet_size: usize,
    stencil: &FiniteDistribution,
    boundary: Boundary,
) -> Result<CorruptionKernel> {
    let kernel = match boundary {
        Boundary::Cyclic => {
            if stencil.len() > alphabet_size {
                return Err(Error::Shape {
                    expected: alphabet_size,
                    found: stencil.len(),
                });
            }
            let mut padded = stencil.weights().to_vec();
            padded.resize(alphabet_size, 0.0);
            additive_noise_kernel(alphabet_size, &FiniteDistribution::new(padded)?, boundary)?
        }
        Boundary::Clipped { .. } => additive_noise_kernel(alphabet_size, stencil, boundary)?,
    };
    Ok(kernel.with_label(format!("blur({alphabet_size}, {boundary:?})")))
}

/// Independent per-coordinate masking.
///
/// `X = levels^coords`, `Y = (levels + 1)^coords`, where the symbol `levels`
/// in each output coordinate is MASK.
pub fn dropout_kernel(num_coordinates: usize, levels: usize, mask_prob: f64) -> Result<CorruptionKernel> {
    if !(0.0..=1.0).contains(&mask_prob) {
        return Err(Error::Domain(format!("mask probability {mask_prob} outside [0, 1]")));
    }
    if num_coordinates == 0 || levels == 0 {
        return Err(Error::Domain("dropout needs at least one coordinate and one level".into()));
    }
    let (d, l) = (num_coordinates, levels);
    let nx = checked_pow(l, d)?;
    let ny = checked_pow(l + 1, d)?;
    let mut matrix = DMatrix::zeros(ny, nx);
    let mut digits = vec![0usize; d];
    for x in 0..nx {
        decode(x, l, &mut digits);
        for mask in 0u64..(1 << d) {
            let masked = mask.count_ones() as i32;
            let prob = mask_prob.powi(masked) * (1.0 - mask_prob).powi(d as i32 - masked);
            let y = digits.iter().enumerate().fold(0usize, |acc, (i, &xi)| {
                let masked_here = mask & (1 << (d - 1 - i)) != 0;
                acc * (l + 1) + if masked_here { l } else { xi }
            });
            matrix[(y, x)] += prob;
        }
    }
    CorruptionKernel::from_matrix(matrix, format!("dropout({d}x{l}, alpha={mask_prob})"))
}

fn checked_pow(base: usize, exp: usize) -> Result<usize> {
    u32::try_from(exp)
        .ok()
        .and_then(|e| base.checked_pow(e))
        .filter(|&v| v <= 1 << 20)
        .ok_or_else(|| Error::Domain(format!("alphabet {base}^{exp} is too large")))
}

/// Row-major digits of `index` in base `base`, most significant first.
pub fn decode(mut index: usize, base: usize, digits: &mut [usize]) {
    for d in digits.iter_mut().rev() {
        *d = index % base;
        index /= base;
    }
}

/// `r(y|x) = 1` iff `y = map[x]`.
pub fn deterministic_map_kernel(map: &[usize], output_size: usize) -> Result<CorruptionKernel> {
    if map.is_empty() || output_size == 0 {
        return Err(Error::Domain("kernel dimensions must be positive".into()));
    }
    if let Some((x, &y)) = map.iter().enumerate().find(|(_, &y)| y >= output_size) {
        return Err(Error::Domain(format!(
            "map sends {x} to {y}, outside output alphabet of size {output_size}"
        )));
    }
    let matrix = DMatrix::from_fn(output_size, map.len(), |y, x| f64::from(u8::from(map[x] == y)));
    CorruptionKernel::from_matrix(matrix, format!("deterministic_map({}->{output_size})", map.len()))
}

/// The 2×4 grayscale analogue: `X = {(s, c)}` with `s, c ∈ {0, 1}` enumerated
/// row-major, observation `y = s`.
pub fn grayscale_kernel() -> CorruptionKernel {
    deterministic_map_kernel(&[0, 0, 1, 1], 2)
        .expect("static map is valid")
        .with_label("grayscale(2x2->2)")
}

/// Default count truncation: `ceil(α + 8√α)`.
///
/// The folded tail stays below `1e-8` for `α ≥ 5`; smaller budgets fold up
/// to about `1e-6` (`1.5e-4` at `α = 0.1`). Pass an explicit truncation
/// when that matters.
pub fn default_poisson_truncation(photon_budget: f64) -> usize {
    (photon_budget + 8.0 * photon_budget.sqrt()).ceil().max(1.0) as usize
}

/// Shot noise on the intensity lattice `{0, 1/(L-1), .., 1}`.
///
/// Column `x` is the Poisson pmf with mean `α·x` over counts `0..T`, with all
/// mass at counts `≥ T` folded into the last bin `T`.
pub fn poisson_kernel(intensity_levels: usize, photon_budget: f64, truncation: Option<usize>) -> Result<CorruptionKernel> {
    if !(photon_budget > 0.0 && photon_budget.is_finite()) {
        return Err(Error::Domain(format!("photon budget {photon_budget} must be positive")));
    }
    if intensity_levels < 2 {
        return Err(Error::Domain("need at least two intensity levels".into()));
    }
    let t = truncation.unwrap_or_else(|| default_poisson_truncation(photon_budget));
    if t < 1 {
        return Err(Error::Domain("truncation must be at least 1".into()));
    }
    let mut matrix = DMatrix::zeros(t + 1, intensity_levels);
    for x in 0..intensity_levels {
        let mean = photon_budget * x as f64 / (intensity_levels - 1) as f64;
        let mut head = 0.0;
        if mean == 0.0 {
            matrix[(0, x)] = 1.0;
            continue;
        }
        let ln_mean = mean.ln();
        let mut ln_fact = 0.0;
        for k in 0..t {
            if k > 0 {
                ln_fact += (k as f64).ln();
            }
            let pmf = (k as f64 * ln_mean - mean - ln_fact).exp();
            matrix[(k, x)] = pmf;
            head += pmf;
        }
        matrix[(t, x)] = (1.0 - head).max(0.0);
    }
    CorruptionKernel::from_matrix(matrix, format!("poisson(L={intensity_levels}, alpha={photon_budget}, T={t})"))
}

/// Mixes every column with the uniform distribution on `Y`:
/// `r'(y|x) = (1-ε)·r(y|x) + ε/|Y|`.
pub fn support_floor(kernel: &CorruptionKernel, epsilon: f64) -> Result<CorruptionKernel> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("floor {epsilon} outside (0, 1)")));
    }
    let floor = epsilon / kernel.output_size() as f64;
    let matrix = kernel.matrix.map(|v| (1.0 - epsilon) * v + floor);
    CorruptionKernel::from_matrix(matrix, format!("floor({}, eps={epsilon})", kernel.label))
}

/// `q(y) = Σ_x r(y|x) p(x)`.
pub fn apply(kernel: &CorruptionKernel, p: &FiniteDistribution) -> Result<FiniteDistribution> {
    check_size(kernel.input_size(), p.len())?;
    Ok(FiniteDistribution::repaired(push_forward(kernel, p.weights())))
}

pub(crate) fn push_forward(kernel: &CorruptionKernel, p: &[f64]) -> Vec<f64> {
    let mut q = vec![0.0; kernel.output_size()];
    for (x, &px) in p.iter().enumerate() {
        if px == 0.0 {
            continue;
        }
        for (qy, &r) in q.iter_mut().zip(kernel.column(x)) {
            *qy += r * px;
        }
    }
    q
}

/// Per-observation posteriors `u_y(x) ∝ p(x) r(y|x)`, one row per `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    rows: Vec<FiniteDistribution>,
}

impl Posterior {
    pub fn row(&self, y: usize) -> &FiniteDistribution {
        &self.rows[y]
    }

    pub fn rows(&self) -> &[FiniteDistribution] {
        &self.rows
    }

    pub fn output_size(&self) -> usize {
        self.rows.len()
    }

    pub fn input_size(&self) -> usize {
        self.rows[0].len()
    }

    /// `Σ_y q(y) u_y`.
    pub fn mixture(&self, q: &FiniteDistribution) -> Result<FiniteDistribution> {
        check_size(self.output_size(), q.len())?;
        let mut m = vec![0.0; self.input_size()];
        for (row, &qy) in self.rows.iter().zip(q.iter()) {
            if qy == 0.0 {
                continue;
            }
            for (mx, &u) in m.iter_mut().zip(row.iter()) {
                *mx += qy * u;
            }
        }
        Ok(FiniteDistribution::repaired(m))
    }
}

/// Bayes posterior of the joint `p(x) r(y|x)`.
///
/// An output with `T_r p(y) = 0` gets the uniform distribution over `supp(p)`;
/// such rows carry no weight under any `q` the prior can explain.
pub fn posterior(kernel: &CorruptionKernel, p: &FiniteDistribution) -> Result<Posterior> {
    check_size(kernel.input_size(), p.len())?;
    let support = p.support();
    let fallback = 1.0 / support.len() as f64;
    let rows = (0..kernel.output_size())
        .map(|y| {
            let joint: Vec<f64> = p.iter().enumerate().map(|(x, &px)| px * kernel.get(y, x)).collect();
            let evidence: f64 = joint.iter().sum();
            if evidence > 0.0 {
                FiniteDistribution::repaired(joint.into_iter().map(|v| v / evidence).collect())
            } else {
                let mut row = vec![0.0; p.len()];
                for &x in &support {
                    row[x] = fallback;
                }
                FiniteDistribution::repaired(row)
            }
        })
        .collect();
    Ok(Posterior { rows })
}

/// Injectivity of `T_r` on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiabilityReport {
    pub injective: bool,
    pub nullspace_dimension_on_zero_sum_subspace: usize,
    /// Smallest singular value of the kernel stacked over an all-ones row
    /// (zero when that matrix has fewer rows than columns).
    pub smallest_restricted_singular_value: f64,
    /// Absolute singular-value threshold: `tol · σ_max`.
    pub tolerance_used: f64,
}

/// Decides whether distinct clean distributions always give distinct
/// corrupted ones.
///
/// `T_r` is injective on the simplex iff no nonzero `v` with `Σ v = 0` has
/// `K v = 0`, i.e. iff `[K; 1ᵀ]` has full column rank. Singular values below
/// `tol · σ_max` count as zero.
pub fn is_identifiable(kernel: &CorruptionKernel, tol: f64) -> IdentifiabilityReport {
    let (ny, nx) = (kernel.output_size(), kernel.input_size());
    let augmented = DMatrix::from_fn(ny + 1, nx, |y, x| if y < ny { kernel.get(y, x) } else { 1.0 });
    let singular = augmented.singular_values();
    let sigma_max = singular.iter().cloned().fold(0.0, f64::max);
    let threshold = tol * sigma_max;
    let rank = singular.iter().filter(|&&s| s > threshold).count();
    let smallest = if ny + 1 < nx {
        0.0
    } else {
        singular.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let nullity = nx - rank;
    IdentifiabilityReport {
        injective: nullity == 0,
        nullspace_dimension_on_zero_sum_subspace: nullity,
        smallest_restricted_singular_value: smallest,
        tolerance_used: threshold,
    }
}

/// Transport cost `c(x, y) = -log r(y|x)`, stored `|X| × |Y|`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: DMatrix<f64>,
}

impl CostMatrix {
    /// `c(x, y)`.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.entries[(x, y)]
    }

    pub fn input_size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn output_size(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Wraps an arbitrary finite cost table.
    pub fn from_entries(entries: DMatrix<f64>) -> Result<Self> {
        if let Some(v) = entries.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("cost entry {v} is not finite")));
        }
        Ok(Self { entries })
    }
}

pub fn cost_matrix(kernel: &CorruptionKernel) -> Result<CostMatrix> {
    let (ny, nx) = (kernel.output_size(), kernel.input_size());
    for x in 0..nx {
        if let Some(y) = kernel.column(x).iter().position(|&v| v <= 0.0) {
            return Err(Error::Support { y, x });
        }
    }
    Ok(CostMatrix {
        entries: DMatrix::from_fn(nx, ny, |x, y| -kernel.get(y, x).ln()),
    })
}
