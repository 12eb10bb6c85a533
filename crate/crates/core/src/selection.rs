//! Choosing the number of superstates from a family of hard partitions.
//!
//! For each partition the spread of transition rows inside every superstate
//! is summarized by the largest eigenvalue of a covariance matrix on the
//! zero-sum hyperplane. The marginal return of going from `k − 1` to `k`
//! superstates is the log-drop of the largest such value.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::chain::{simplex_basis, Partition, SimplexBasis, StateWeights, StochasticMatrix};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::math;

/// How deviations are measured inside a superstate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeterogeneityMode {
    /// Deviation covariance projected onto the orthonormal zero-sum basis.
    Plain,
    /// Additionally whitened by the curvature of the distance at `w(j)`.
    Whiten,
}

/// Weights of the hard membership matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    /// ρ-weighted and normalized per superstate, so `QᵀΠ` has stochastic rows.
    Normalized,
    /// 0/1 indicators.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOptions {
    pub mode: HeterogeneityMode,
    pub membership: Membership,
    /// Smallest superstate-distribution coordinate allowed under a deviating
    /// state.
    pub floor: f64,
    /// Heterogeneities at or below this count as an exact fit.
    pub zero_tol: f64,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self {
            mode: HeterogeneityMode::Whiten,
            membership: Membership::Normalized,
            floor: 1e-12,
            zero_tol: 1e-20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    /// Consecutive, increasing.
    pub k_values: Vec<usize>,
    pub t_bar: Vec<f64>,
    pub t_bar_per_superstate: Vec<Vec<f64>>,
    /// `None` for the smallest k.
    pub nu: Vec<Option<f64>>,
    pub k_t: usize,
    /// Smallest k whose heterogeneity is at most `zero_tol`; it overrides
    /// the marginal-return choice.
    pub exact_fit: Option<usize>,
    pub options: SelectionOptions,
}

impl SelectionReport {
    pub fn nu_at(&self, k: usize) -> Option<f64> {
        let idx = self.k_values.iter().position(|&v| v == k)?;
        self.nu[idx]
    }

    pub fn t_bar_at(&self, k: usize) -> Option<f64> {
        let idx = self.k_values.iter().position(|&v| v == k)?;
        Some(self.t_bar[idx])
    }
}

/// Membership matrix `Q` (n × k) of a hard partition.
pub fn hard_membership(
    partition: &Partition,
    rho: &StateWeights,
    membership: Membership,
) -> Result<Matrix> {
    let n = partition.n();
    rho.check_len(n)?;
    let k = partition.k();
    let mut q = Matrix::zeros(n, k);
    match membership {
        Membership::Raw => {
            for i in 0..n {
                q[(i, partition.superstate_of(i))] = 1.0;
            }
        }
        Membership::Normalized => {
            let r = rho.as_slice();
            let mut mass = vec![0.0; k];
            for i in 0..n {
                mass[partition.superstate_of(i)] += r[i];
            }
            if let Some(j) = mass.iter().position(|&m| !(m > 0.0)) {
                return Err(Error::EmptySuperstate(j));
            }
            for i in 0..n {
                let j = partition.superstate_of(i);
                q[(i, j)] = r[i] / mass[j];
            }
        }
    }
    Ok(q)
}

/// Covariance of the relative deviations `(π(i) − w(j)) ./ w(j)` of the
/// states in column `j` of `q`, expressed in the zero-sum basis. The result
/// is `(n−1) × (n−1)`.
///
/// Coordinates where `w(j)` is below `floor` are accepted only if no member
/// deviates there; they are then left out of the whitening.
pub fn covariance_matrix(
    pi: &StochasticMatrix,
    q: &Matrix,
    j: usize,
    theta: &SimplexBasis,
    floor: f64,
    mode: HeterogeneityMode,
) -> Result<Matrix> {
    let n = pi.n();
    if q.rows() != n || j >= q.cols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: q.rows(),
        });
    }
    if theta.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: theta.n(),
        });
    }
    let members: Vec<(usize, f64)> = (0..n)
        .filter_map(|i| {
            let w = q[(i, j)];
            (w != 0.0).then_some((i, w))
        })
        .collect();
    let mut w = vec![0.0; n];
    for &(i, qi) in &members {
        for (wc, &p) in w.iter_mut().zip(pi.row(i)) {
            *wc += qi * p;
        }
    }
    let mut support = Vec::with_capacity(n);
    for c in 0..n {
        if w[c] >= floor {
            support.push(c);
        } else if members.iter().any(|&(i, _)| pi.row(i)[c] != w[c]) {
            return Err(Error::FloorViolation {
                superstate: j,
                coordinate: c,
            });
        }
    }
    let full = support.len() == n;
    let local;
    let basis = if full {
        theta
    } else if support.len() >= 2 {
        local = simplex_basis(support.len())?;
        &local
    } else {
        return Ok(Matrix::zeros(n - 1, n - 1));
    };
    let s = support.len();
    let mut cov = Matrix::zeros(s - 1, s - 1);
    let mut v = vec![0.0; s];
    for &(i, qi) in &members {
        let row = pi.row(i);
        for (vc, &c) in v.iter_mut().zip(&support) {
            *vc = (row[c] - w[c]) / w[c];
        }
        let y = basis.project(&v);
        for a in 0..s - 1 {
            let wa = qi * y[a];
            if wa == 0.0 {
                continue;
            }
            let out = cov.row_mut(a);
            for b in a..s - 1 {
                out[b] += wa * y[b];
            }
        }
    }
    for a in 0..s - 1 {
        for b in 0..a {
            cov[(a, b)] = cov[(b, a)];
        }
    }
    if mode == HeterogeneityMode::Whiten {
        let mut lambda = vec![0.0; s];
        for &(i, qi) in &members {
            let row = pi.row(i);
            for (l, &c) in lambda.iter_mut().zip(&support) {
                *l += qi * row[c] / (w[c] * w[c]);
            }
        }
        let h0 = basis.diag_congruence(&lambda);
        let l = linalg::cholesky(&h0).ok_or(Error::CholeskyFailure(j))?;
        cov = linalg::congruence_inverse(&l, &cov);
    }
    if full {
        return Ok(cov);
    }
    let mut out = Matrix::zeros(n - 1, n - 1);
    for a in 0..s - 1 {
        for b in 0..s - 1 {
            out[(a, b)] = cov[(a, b)];
        }
    }
    Ok(out)
}

/// Per-superstate heterogeneity `λ_max` of the covariance matrices and
/// their maximum.
pub fn heterogeneity(
    pi: &StochasticMatrix,
    partition: &Partition,
    rho: &StateWeights,
    theta: &SimplexBasis,
    options: &SelectionOptions,
) -> Result<(f64, Vec<f64>)> {
    if partition.n() != pi.n() {
        return Err(Error::DimensionMismatch {
            expected: pi.n(),
            found: partition.n(),
        });
    }
    let q = hard_membership(partition, rho, options.membership)?;
    let mut per = Vec::with_capacity(partition.k());
    for j in 0..partition.k() {
        let c = covariance_matrix(pi, &q, j, theta, options.floor, options.mode)?;
        per.push(linalg::lambda_max(&c).max(0.0));
    }
    let t_bar = per.iter().copied().fold(0.0, f64::max);
    Ok((t_bar, per))
}

/// `ν(k) = ln T̄_{k−1} − ln T̄_k` for every k after the first.
///
/// `t_bars` must be ordered by consecutive k. A zero `T̄_k` after a positive
/// one gives `+∞`; two zeros give `NaN`.
pub fn marginal_return(t_bars: &[f64]) -> Vec<f64> {
    t_bars
        .windows(2)
        .map(|w| {
            let (prev, cur) = (w[0].max(0.0), w[1].max(0.0));
            math::ln(prev) - math::ln(cur)
        })
        .collect()
}

/// Heterogeneity and marginal return for each partition and the selected
/// number of superstates.
///
/// `partitions` maps k to a partition with k superstates and must cover a
/// consecutive range.
pub fn select_k(
    pi: &StochasticMatrix,
    partitions: &BTreeMap<usize, Partition>,
    rho: &StateWeights,
    options: &SelectionOptions,
) -> Result<SelectionReport> {
    let n = pi.n();
    rho.check_len(n)?;
    let (Some(&k_min), Some(&k_max)) = (partitions.keys().next(), partitions.keys().last()) else {
        return Err(Error::InvalidPartition("no partitions given"));
    };
    let missing: Vec<usize> = (k_min..=k_max)
        .filter(|k| !partitions.contains_key(k))
        .collect();
    if !missing.is_empty() {
        return Err(Error::NonConsecutiveK(missing));
    }
    for (&key, p) in partitions {
        if p.k() != key {
            return Err(Error::PartitionSizeMismatch { key, found: p.k() });
        }
        if p.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: p.n(),
            });
        }
    }
    let theta = simplex_basis(n)?;
    let mut k_values = Vec::new();
    let mut t_bar = Vec::new();
    let mut per = Vec::new();
    for (&k, p) in partitions {
        let (t, v) = heterogeneity(pi, p, rho, &theta, options)?;
        k_values.push(k);
        t_bar.push(t);
        per.push(v);
    }
    let nu: Vec<Option<f64>> = core::iter::once(None)
        .chain(marginal_return(&t_bar).into_iter().map(Some))
        .collect();
    let exact_fit = k_values
        .iter()
        .zip(&t_bar)
        .find(|(_, &t)| t <= options.zero_tol)
        .map(|(&k, _)| k);
    let k_t = match exact_fit {
        Some(k) => k,
        None => {
            let mut best: Option<(usize, f64)> = None;
            for (&k, v) in k_values.iter().zip(&nu) {
                let Some(v) = *v else { continue };
                if v.is_nan() {
                    continue;
                }
                if best.map_or(true, |(_, b)| v > b) {
                    best = Some((k, v));
                }
            }
            best.map_or(k_min, |(k, _)| k)
        }
    };
    Ok(SelectionReport {
        k_values,
        t_bar,
        t_bar_per_superstate: per,
        nu,
        k_t,
        exact_fit,
        options: options.clone(),
    })
}
