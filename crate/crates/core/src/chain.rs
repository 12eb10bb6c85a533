//! Validated domain types shared by every stage of the pipeline.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kl;
use crate::linalg::Matrix;
use crate::math;

/// Row sums of a [`StochasticMatrix`] stay within this distance of 1.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// A finite Markov chain given by its row-stochastic transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    rows: Matrix,
    labels: Option<Vec<String>>,
}

impl StochasticMatrix {
    pub fn n(&self) -> usize {
        self.rows.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.rows
    }

    /// Transition probability vector of state `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Attaches state labels; fails if the count differs from `n`.
    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Applies a consistent relabeling of states: new state `i` is old state
    /// `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        if perm.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: perm.len(),
            });
        }
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = self.rows[(perm[i], perm[j])];
            }
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| perm.iter().map(|&p| l[p].clone()).collect());
        Ok(Self { rows: out, labels })
    }
}

/// Validates a square matrix as row-stochastic.
///
/// Entries in `[-tol, 0)` are clamped to zero and every row whose sum is off
/// by more than rounding is divided by its sum, so re-validating a result
/// leaves it unchanged.
pub fn validate_stochastic(rows: Matrix, tol: f64) -> Result<StochasticMatrix> {
    let (r, c) = (rows.rows(), rows.cols());
    if r != c {
        return Err(Error::NonSquare { rows: r, cols: c });
    }
    if r == 0 {
        return Err(Error::Empty);
    }
    let mut rows = rows;
    for i in 0..r {
        let row = rows.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::NotFinite { row: i, col: j });
            }
            if *v < -tol {
                return Err(Error::NegativeEntry {
                    row: i,
                    col: j,
                    value: *v,
                });
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::RowSumViolation { row: i, sum });
        }
        if (sum - 1.0).abs() > c as f64 * f64::EPSILON {
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }
    Ok(StochasticMatrix { rows, labels: None })
}

/// Relative weights `ρ_i` of the states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateWeights {
    rho: Vec<f64>,
}

impl StateWeights {
    pub fn uniform(n: usize) -> Self {
        Self {
            rho: vec![1.0 / n as f64; n],
        }
    }

    /// Accepts a probability vector (entries ≥ 0, sum 1 within 1e-12).
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        if rho.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector"));
        }
        if rho.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
            return Err(Error::InvalidWeights("weights must be finite and non-negative"));
        }
        let sum: f64 = rho.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidWeights("weights must sum to 1"));
        }
        Ok(Self { rho })
    }

    /// Normalizes arbitrary non-negative weights with a positive total.
    pub fn from_unnormalized(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::InvalidWeights("total weight must be positive"));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidWeights("weights must be finite and non-negative"));
        }
        Ok(Self {
            rho: weights.iter().map(|w| w / sum).collect(),
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rho
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.rho.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.rho.len(),
            });
        }
        Ok(())
    }
}

/// Surjective assignment of `n` states to `k` superstates.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    k: usize,
    assign: Vec<usize>,
}

impl Partition {
    pub fn new(assign: Vec<usize>, k: usize) -> Result<Self> {
        let n = assign.len();
        if n == 0 {
            return Err(Error::InvalidPartition("no states"));
        }
        if k == 0 {
            return Err(Error::InvalidPartition("k must be positive"));
        }
        let mut used = vec![false; k];
        for &a in &assign {
            if a >= k {
                return Err(Error::InvalidPartition("superstate index out of range"));
            }
            used[a] = true;
        }
        if let Some(j) = used.iter().position(|u| !u) {
            return Err(Error::UnusedSuperstate(j));
        }
        Ok(Self { k, assign })
    }

    /// `k` is taken as one more than the largest index.
    pub fn from_assignment(assign: Vec<usize>) -> Result<Self> {
        let k = assign.iter().max().map_or(0, |m| m + 1);
        Self::new(assign, k)
    }

    /// Every state in one superstate.
    pub fn trivial(n: usize) -> Self {
        Self {
            k: 1,
            assign: vec![0; n],
        }
    }

    /// Relabels superstates in order of first appearance, dropping gaps.
    pub fn compacted(assign: &[usize]) -> Result<Self> {
        let mut map: Vec<Option<usize>> = Vec::new();
        let mut next = 0;
        let mut out = Vec::with_capacity(assign.len());
        for &a in assign {
            if a >= map.len() {
                map.resize(a + 1, None);
            }
            let idx = *map[a].get_or_insert_with(|| {
                next += 1;
                next - 1
            });
            out.push(idx);
        }
        Self::new(out, next)
    }

    pub fn n(&self) -> usize {
        self.assign.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assign
    }

    pub fn superstate_of(&self, i: usize) -> usize {
        self.assign[i]
    }

    /// States represented by superstate `j`, in increasing order.
    pub fn members(&self, j: usize) -> Vec<usize> {
        self.assign
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| (a == j).then_some(i))
            .collect()
    }

    /// Partition after relabeling states: new state `i` is old state `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            k: self.k,
            assign: perm.iter().map(|&p| self.assign[p]).collect(),
        }
    }

    /// Canonical form with superstates numbered in order of first appearance.
    pub fn canonical(&self) -> Self {
        Self::compacted(&self.assign).expect("a valid partition stays valid")
    }
}

/// The aggregated chain: a partition, the superstate transition matrix `Ψ`
/// and one distribution over the original states per superstate.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedModel {
    partition: Partition,
    psi: Matrix,
    distributions: Matrix,
}

impl AggregatedModel {
    /// Builds the model from superstate distributions, deriving `Ψ`.
    pub fn from_distributions(partition: Partition, distributions: Matrix) -> Result<Self> {
        check_distributions(&partition, &distributions)?;
        let psi = kl::aggregate_transitions(&distributions, &partition)?;
        Ok(Self {
            partition,
            psi,
            distributions,
        })
    }

    /// Validates an externally supplied `(Φ, Ψ, W)` triple.
    pub fn new(partition: Partition, psi: Matrix, distributions: Matrix) -> Result<Self> {
        check_distributions(&partition, &distributions)?;
        let k = partition.k();
        if psi.rows() != k || psi.cols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: psi.rows(),
            });
        }
        for j in 0..k {
            let sum: f64 = psi.row(j).iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::RowSumViolation { row: j, sum });
            }
        }
        let expected = kl::aggregate_transitions(&distributions, &partition)?;
        if expected.max_abs_diff(&psi) > ROW_SUM_TOL {
            return Err(Error::InvalidPartition(
                "transition matrix is inconsistent with the distributions",
            ));
        }
        Ok(Self {
            partition,
            psi,
            distributions,
        })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn psi(&self) -> &Matrix {
        &self.psi
    }

    pub fn distributions(&self) -> &Matrix {
        &self.distributions
    }

    pub fn k(&self) -> usize {
        self.partition.k()
    }
}

fn check_distributions(partition: &Partition, w: &Matrix) -> Result<()> {
    if w.rows() != partition.k() {
        return Err(Error::DimensionMismatch {
            expected: partition.k(),
            found: w.rows(),
        });
    }
    if w.cols() != partition.n() {
        return Err(Error::DimensionMismatch {
            expected: partition.n(),
            found: w.cols(),
        });
    }
    for j in 0..w.rows() {
        let row = w.row(j);
        if let Some(c) = row.iter().position(|&v| !(v >= 0.0)) {
            return Err(Error::NegativeEntry {
                row: j,
                col: c,
                value: row[c],
            });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::RowSumViolation { row: j, sum });
        }
    }
    Ok(())
}

/// Orthonormal basis `Θ` (n × (n−1)) of the hyperplane `{v : 1ᵀv = 0}`.
///
/// Column `m` (0-based) is the Helmert vector with `1/√((m+1)(m+2))` in
/// positions `0..=m` and `−(m+1)/√((m+1)(m+2))` at position `m+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexBasis {
    theta: Matrix,
}

pub fn simplex_basis(n: usize) -> Result<SimplexBasis> {
    if n < 2 {
        return Err(Error::BasisTooSmall(n));
    }
    let mut theta = Matrix::zeros(n, n - 1);
    for m in 0..n - 1 {
        let c = (m + 1) as f64;
        let s = math::sqrt(c * (c + 1.0));
        for i in 0..=m {
            theta[(i, m)] = 1.0 / s;
        }
        theta[(m + 1, m)] = -c / s;
    }
    Ok(SimplexBasis { theta })
}

impl SimplexBasis {
    pub fn n(&self) -> usize {
        self.theta.rows()
    }

    pub fn theta(&self) -> &Matrix {
        &self.theta
    }

    /// `Θᵀ v` in O(n) using prefix sums.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        debug_assert_eq!(v.len(), n);
        let mut out = Vec::with_capacity(n - 1);
        let mut prefix = 0.0;
        for m in 0..n - 1 {
            prefix += v[m];
            let c = (m + 1) as f64;
            let s = math::sqrt(c * (c + 1.0));
            out.push((prefix - c * v[m + 1]) / s);
        }
        out
    }

    /// `Θ c` in O(n) using suffix sums.
    pub fn lift(&self, coords: &[f64]) -> Vec<f64> {
        let n = self.n();
        debug_assert_eq!(coords.len(), n - 1);
        let scaled: Vec<f64> = coords
            .iter()
            .enumerate()
            .map(|(m, &x)| {
                let c = (m + 1) as f64;
                x / math::sqrt(c * (c + 1.0))
            })
            .collect();
        let mut out = vec![0.0; n];
        let mut suffix = 0.0;
        for i in (0..n).rev() {
            // Columns m ≥ i contribute +scaled[m]; column i−1 contributes −i·scaled[i−1].
            let neg = if i >= 1 { -(i as f64) * scaled[i - 1] } else { 0.0 };
            out[i] = suffix + neg;
            if i >= 1 {
                suffix += scaled[i - 1];
            }
        }
        out
    }

    /// `Θᵀ diag(d) Θ`.
    pub fn diag_congruence(&self, d: &[f64]) -> Matrix {
        let n = self.n();
        let mut out = Matrix::zeros(n - 1, n - 1);
        // Column a is nonzero only in rows 0..=a+1.
        for a in 0..n - 1 {
            for b in a..n - 1 {
                let mut s = 0.0;
                for i in 0..=(a + 1).min(n - 1) {
                    s += self.theta[(i, a)] * d[i] * self.theta[(i, b)];
                }
                out[(a, b)] = s;
                out[(b, a)] = s;
            }
        }
        out
    }
}

/// Stationary distribution by power iteration from the uniform vector.
///
/// Iterates the lazy chain `(I + Π)/2`, which has the same stationary
/// vectors and also converges for periodic chains. Stops once
/// `‖ρᵀΠ − ρᵀ‖∞ ≤ tol`.
pub fn stationary_distribution(
    pi: &StochasticMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<StateWeights> {
    let n = pi.n();
    let mut rho = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..=max_iter {
        left_multiply(&rho, pi.matrix(), &mut next);
        let residual = rho
            .iter()
            .zip(&next)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()));
        if residual <= tol {
            return StateWeights::from_unnormalized(&rho);
        }
        for (r, x) in rho.iter_mut().zip(&next) {
            *r = 0.5 * (*r + x);
        }
        let sum: f64 = rho.iter().sum();
        for r in rho.iter_mut() {
            *r /= sum;
        }
    }
    Err(Error::NoConvergence(max_iter))
}

fn left_multiply(rho: &[f64], m: &Matrix, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (i, &r) in rho.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        for (o, &p) in out.iter_mut().zip(m.row(i)) {
            *o += r * p;
        }
    }
}
