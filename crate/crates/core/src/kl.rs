//! Relative-entropy geometry of transition rows.
//!
//! All logarithms are natural, so distances and free energies are in nats.

use alloc::vec;
use alloc::vec::Vec;

use crate::chain::{AggregatedModel, Partition, StateWeights, StochasticMatrix};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;

/// Column masses below this are treated as empty superstates.
pub const MIN_SUPERSTATE_MASS: f64 = 1e-300;

/// Soft association of states to superstates.
///
/// `p[(i, j)]` is the Gibbs weight `p_{j|i}` (rows sum to 1) and
/// `posterior[(i, j)] = ρ_i p_{j|i} / q_j` (columns sum to 1), where
/// `q_j = Σ_i ρ_i p_{j|i}` is the superstate mass.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssociation {
    pub p: Matrix,
    pub posterior: Matrix,
    pub mass: Vec<f64>,
}

/// `Σ_k p_k ln(p_k / max(q_k, floor))`, with `0 ln 0 = 0`.
///
/// Returns `+∞` when some `p_k > 0` meets a zero (floored) `q_k`.
pub fn kl_divergence(p: &[f64], q: &[f64], floor: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    Ok(kl_unchecked(p, q, floor))
}

#[inline]
fn kl_unchecked(p: &[f64], q: &[f64], floor: f64) -> f64 {
    let mut d = 0.0;
    for (&pk, &qk) in p.iter().zip(q) {
        if pk <= 0.0 {
            continue;
        }
        let qk = qk.max(floor);
        if qk <= 0.0 {
            return f64::INFINITY;
        }
        d += pk * math::ln(pk / qk);
    }
    d
}

/// `d(x_i, y_j) = KL(π(i) ‖ z(j))` for every state and superstate (n × k).
pub fn distance_matrix(pi: &StochasticMatrix, z: &Matrix, floor: f64) -> Result<Matrix> {
    let n = pi.n();
    if z.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: z.cols(),
        });
    }
    let k = z.rows();
    let mut d = Matrix::zeros(n, k);
    for i in 0..n {
        let row = pi.row(i);
        for j in 0..k {
            d[(i, j)] = kl_unchecked(row, z.row(j), floor);
        }
    }
    Ok(d)
}

/// `D = Σ_i ρ_i KL(π(i) ‖ w(Φ(x_i)))`.
pub fn distortion(
    pi: &StochasticMatrix,
    model: &AggregatedModel,
    rho: &StateWeights,
) -> Result<f64> {
    let n = pi.n();
    rho.check_len(n)?;
    let part = model.partition();
    if part.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: part.n(),
        });
    }
    let w = model.distributions();
    let mut total = 0.0;
    for (i, &r) in rho.as_slice().iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        total += r * kl_divergence(pi.row(i), w.row(part.superstate_of(i)), 0.0)?;
    }
    Ok(total)
}

/// Distortion of a hard partition against the ρ-weighted within-superstate
/// centroids.
pub fn partition_distortion(
    pi: &StochasticMatrix,
    partition: &Partition,
    rho: &StateWeights,
) -> Result<f64> {
    let w = hard_centroids(pi, partition, rho)?;
    let model = AggregatedModel::from_distributions(partition.clone(), w)?;
    distortion(pi, &model, rho)
}

/// ρ-weighted mean of the rows assigned to each superstate (k × n).
pub fn hard_centroids(
    pi: &StochasticMatrix,
    partition: &Partition,
    rho: &StateWeights,
) -> Result<Matrix> {
    let n = pi.n();
    rho.check_len(n)?;
    if partition.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: partition.n(),
        });
    }
    let k = partition.k();
    let mut p = Matrix::zeros(n, k);
    for i in 0..n {
        p[(i, partition.superstate_of(i))] = 1.0;
    }
    let (_, z) = posterior_and_centroids(pi, &p, rho)?;
    Ok(z)
}

/// Gibbs association weights `p_{j|i} ∝ exp(−d_ij / T)`.
///
/// Each row is shifted by its smallest distance before exponentiating. A row
/// whose distances are all infinite gets uniform weights.
pub fn gibbs_weights(distances: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0) {
        return Err(Error::NonPositiveTemperature(temperature));
    }
    let (n, k) = (distances.rows(), distances.cols());
    let mut p = Matrix::zeros(n, k);
    for i in 0..n {
        let d = distances.row(i);
        let dmin = d.iter().copied().fold(f64::INFINITY, f64::min);
        let out = p.row_mut(i);
        if !dmin.is_finite() {
            out.iter_mut().for_each(|v| *v = 1.0 / k as f64);
            continue;
        }
        let mut sum = 0.0;
        for (o, &dij) in out.iter_mut().zip(d) {
            *o = math::exp(-(dij - dmin) / temperature);
            sum += *o;
        }
        out.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(p)
}

/// Posterior `[P]_{ij} = ρ_i p_{j|i} / Σ_t ρ_t p_{j|t}` and the centroid
/// bank `Z = Pᵀ Π`.
pub fn posterior_and_centroids(
    pi: &StochasticMatrix,
    p: &Matrix,
    rho: &StateWeights,
) -> Result<(Matrix, Matrix)> {
    let (posterior, _) = posterior(p, rho, pi.n())?;
    let z = centroids(pi, &posterior);
    Ok((posterior, z))
}

pub(crate) fn posterior(p: &Matrix, rho: &StateWeights, n: usize) -> Result<(Matrix, Vec<f64>)> {
    rho.check_len(n)?;
    if p.rows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: p.rows(),
        });
    }
    let k = p.cols();
    let r = rho.as_slice();
    let mut mass = vec![0.0; k];
    for i in 0..n {
        for (m, &pij) in mass.iter_mut().zip(p.row(i)) {
            *m += r[i] * pij;
        }
    }
    if let Some(j) = mass.iter().position(|&m| !(m >= MIN_SUPERSTATE_MASS)) {
        return Err(Error::EmptySuperstate(j));
    }
    let mut post = Matrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            post[(i, j)] = r[i] * p[(i, j)] / mass[j];
        }
    }
    Ok((post, mass))
}

pub(crate) fn centroids(pi: &StochasticMatrix, posterior: &Matrix) -> Matrix {
    let (n, k) = (posterior.rows(), posterior.cols());
    let mut z = Matrix::zeros(k, n);
    for i in 0..n {
        let row = pi.row(i);
        for j in 0..k {
            let w = posterior[(i, j)];
            if w == 0.0 {
                continue;
            }
            for (zc, &pc) in z.row_mut(j).iter_mut().zip(row) {
                *zc += w * pc;
            }
        }
    }
    z
}

/// Gibbs weights and posterior of a fixed centroid bank at temperature `T`,
/// without updating the centroids.
pub fn associate(
    pi: &StochasticMatrix,
    rho: &StateWeights,
    z: &Matrix,
    temperature: f64,
) -> Result<SoftAssociation> {
    let d = distance_matrix(pi, z, 0.0)?;
    let p = gibbs_weights(&d, temperature)?;
    let (posterior, mass) = posterior(&p, rho, pi.n())?;
    Ok(SoftAssociation { p, posterior, mass })
}

/// Distances through `Σ π ln π − Σ π ln z`, reusing the row entropies.
///
/// Faster than [`distance_matrix`] inside iterative loops; tiny negative
/// results from cancellation are clamped to zero.
pub(crate) fn fast_distances(pi: &StochasticMatrix, neg_entropy: &[f64], z: &Matrix) -> Matrix {
    let n = pi.n();
    let k = z.rows();
    let logz: Vec<f64> = z.as_slice().iter().map(|&v| if v > 0.0 { math::ln(v) } else { f64::NEG_INFINITY }).collect();
    let mut d = Matrix::zeros(n, k);
    for i in 0..n {
        let row = pi.row(i);
        for j in 0..k {
            let lz = &logz[j * n..(j + 1) * n];
            let mut cross = 0.0;
            for (&p, &l) in row.iter().zip(lz) {
                if p > 0.0 {
                    cross += p * l;
                }
            }
            d[(i, j)] = if cross == f64::NEG_INFINITY {
                f64::INFINITY
            } else {
                (neg_entropy[i] - cross).max(0.0)
            };
        }
    }
    d
}

/// `Σ_k π_ik ln π_ik` for every row.
pub(crate) fn row_neg_entropies(pi: &StochasticMatrix) -> Vec<f64> {
    (0..pi.n())
        .map(|i| {
            pi.row(i)
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * math::ln(p))
                .sum()
        })
        .collect()
}

/// Free energy from a precomputed distance matrix.
pub(crate) fn free_energy_from_distances(d: &Matrix, rho: &StateWeights, temperature: f64) -> f64 {
    let mut total = 0.0;
    for (i, &r) in rho.as_slice().iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let row = d.row(i);
        let dmin = row.iter().copied().fold(f64::INFINITY, f64::min);
        if !dmin.is_finite() {
            return f64::INFINITY;
        }
        let s: f64 = row
            .iter()
            .map(|&dij| math::exp(-(dij - dmin) / temperature))
            .sum();
        total += r * (dmin - temperature * math::ln(s));
    }
    total
}

/// Free energy `−T Σ_i ρ_i ln Σ_j exp(−KL(π(i) ‖ z(j)) / T)`.
pub fn free_energy(
    pi: &StochasticMatrix,
    z: &Matrix,
    rho: &StateWeights,
    temperature: f64,
    floor: f64,
) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::NonPositiveTemperature(temperature));
    }
    let n = pi.n();
    rho.check_len(n)?;
    let d = distance_matrix(pi, z, floor)?;
    Ok(free_energy_from_distances(&d, rho, temperature))
}

/// Aggregated transition matrix `ψ_{jm} = Σ_{i ∈ Φ⁻¹(y_m)} z_{ji}`.
pub fn aggregate_transitions(z: &Matrix, partition: &Partition) -> Result<Matrix> {
    let k = partition.k();
    if z.rows() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: z.rows(),
        });
    }
    if z.cols() != partition.n() {
        return Err(Error::DimensionMismatch {
            expected: partition.n(),
            found: z.cols(),
        });
    }
    let mut psi = Matrix::zeros(k, k);
    for j in 0..k {
        for (i, &zji) in z.row(j).iter().enumerate() {
            psi[(j, partition.superstate_of(i))] += zji;
        }
    }
    Ok(psi)
}
