//! Deterministic-annealing aggregation.
//!
//! At each temperature the centroid bank is relaxed to a fixed point of the
//! Gibbs/centroid updates. Every distinct centroid that may still split is
//! accompanied by a shadow copy displaced along its most unstable direction;
//! copies that drift apart below the critical temperature become new
//! superstates.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::{simplex_basis, AggregatedModel, Partition, SimplexBasis, StateWeights, StochasticMatrix};
use crate::error::{Error, Result};
use crate::kl::{self, SoftAssociation};
use crate::linalg::{self, Matrix, DENSE_EIGEN_LIMIT};

/// Critical temperatures at or below this are treated as zero.
const DEGENERATE_T: f64 = 1e-12;
/// Consecutive unchanged partitions that end the refinement phase.
const STABLE_STEPS: usize = 3;

/// Cooling schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// `T ← αT`.
    Geometric,
    /// Geometric, but jumps straight to `0.95·T_cr` of the next split when
    /// that is lower.
    Adaptive,
}

/// Parameters of an annealing run.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealConfig {
    pub k_max: usize,
    pub alpha: f64,
    pub t0_factor: f64,
    pub t_min_factor: f64,
    pub merge_tol: f64,
    pub delta: f64,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    pub seed: u64,
    pub schedule: Schedule,
    pub per_k: bool,
    /// Smallest centroid coordinate accepted by the critical-temperature
    /// computation before the floored retry.
    pub floor: f64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            k_max: 6,
            alpha: 0.9,
            t0_factor: 2.0,
            t_min_factor: 1e-8,
            merge_tol: 1e-6,
            delta: 1e-4,
            fp_tol: 1e-8,
            fp_max_iter: 500,
            seed: 0,
            schedule: Schedule::Geometric,
            per_k: false,
            floor: 1e-12,
        }
    }
}

impl AnnealConfig {
    pub fn with_k_max(k_max: usize) -> Self {
        Self {
            k_max,
            ..Self::default()
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k_max == 0 || self.k_max > n {
            return Err(Error::InvalidConfig("k_max must lie in [1, n]"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig("alpha must lie in (0, 1)"));
        }
        if !(self.t0_factor > 0.0 && self.t0_factor.is_finite()) {
            return Err(Error::InvalidConfig("t0_factor must be positive"));
        }
        if !(self.t_min_factor > 0.0 && self.t_min_factor < 1.0) {
            return Err(Error::InvalidConfig("t_min_factor must lie in (0, 1)"));
        }
        if !(self.merge_tol > 0.0) || !(self.delta > 0.0) || !(self.fp_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances and delta must be positive"));
        }
        if self.fp_max_iter == 0 {
            return Err(Error::InvalidConfig("fp_max_iter must be positive"));
        }
        if !(self.floor > 0.0) {
            return Err(Error::InvalidConfig("floor must be positive"));
        }
        Ok(())
    }
}

/// Result of relaxing a centroid bank at a fixed temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub centroids: Matrix,
    /// Association evaluated at the previous iterate; it produced `centroids`.
    pub assoc: SoftAssociation,
    pub iterations: usize,
    pub converged: bool,
    /// Free energy before every update and at the final bank.
    pub free_energy: Vec<f64>,
}

/// Per-superstate critical temperatures and split directions.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalReport {
    pub per_superstate: Vec<f64>,
    pub t_cr: f64,
    /// Zero-sum direction in state space along which superstate `j` first
    /// becomes unstable.
    pub directions: Vec<Vec<f64>>,
}

/// One recorded aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationEntry {
    pub k: usize,
    pub partition: Partition,
    pub model: AggregatedModel,
    pub temperature: f64,
}

/// One temperature step of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub temperature: f64,
    pub free_energy: f64,
    pub effective_count: usize,
    pub iterations: usize,
    /// `false` marks a fixed point that hit the iteration cap.
    pub converged: bool,
}

/// Annealing state after the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealState {
    pub temperature: f64,
    pub centroids: Matrix,
    pub effective_count: usize,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealOutcome {
    /// At most one entry per k, increasing, starting with k = 1.
    pub entries: Vec<AggregationEntry>,
    pub state: AnnealState,
    /// Critical temperature of the single-centroid solution.
    pub initial_t_cr: f64,
    pub t0: f64,
}

impl AnnealOutcome {
    pub fn entry(&self, k: usize) -> Option<&AggregationEntry> {
        self.entries.iter().find(|e| e.k == k)
    }

    pub fn k_values(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.k).collect()
    }

    /// Number of fixed points that hit the iteration cap.
    pub fn warnings(&self) -> usize {
        self.state.trace.iter().filter(|r| !r.converged).count()
    }
}

/// Shared read-only inputs of a run.
struct Ctx<'a> {
    pi: &'a StochasticMatrix,
    rho: &'a StateWeights,
    cfg: &'a AnnealConfig,
    neg_entropy: Vec<f64>,
    basis: Option<SimplexBasis>,
}

impl<'a> Ctx<'a> {
    fn new(pi: &'a StochasticMatrix, rho: &'a StateWeights, cfg: &'a AnnealConfig) -> Self {
        Self {
            pi,
            rho,
            cfg,
            neg_entropy: kl::row_neg_entropies(pi),
            basis: simplex_basis(pi.n()).ok(),
        }
    }
}

/// Iterates the Gibbs and centroid updates at temperature `t` until the
/// centroids move less than `tol` in ∞-norm or `max_iter` updates are spent.
pub fn fixed_point(
    pi: &StochasticMatrix,
    rho: &StateWeights,
    z0: &Matrix,
    t: f64,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPoint> {
    let n = pi.n();
    rho.check_len(n)?;
    if z0.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: z0.cols(),
        });
    }
    if !(t > 0.0) {
        return Err(Error::NonPositiveTemperature(t));
    }
    if z0.rows() == 0 || max_iter == 0 {
        return Err(Error::InvalidConfig("need at least one centroid and one iteration"));
    }
    fixed_point_with(pi, rho, &kl::row_neg_entropies(pi), z0, t, tol, max_iter)
}

fn fixed_point_with(
    pi: &StochasticMatrix,
    rho: &StateWeights,
    neg_entropy: &[f64],
    z0: &Matrix,
    t: f64,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPoint> {
    let n = pi.n();
    let mut z = z0.clone();
    let mut free_energy = Vec::new();
    let mut assoc = None;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let d = kl::fast_distances(pi, neg_entropy, &z);
        free_energy.push(kl::free_energy_from_distances(&d, rho, t));
        let p = kl::gibbs_weights(&d, t)?;
        let (posterior, mass) = kl::posterior(&p, rho, n)?;
        let next = kl::centroids(pi, &posterior);
        let change = next.max_abs_diff(&z);
        z = next;
        assoc = Some(SoftAssociation { p, posterior, mass });
        if change < tol {
            converged = true;
            break;
        }
    }
    let d = kl::fast_distances(pi, neg_entropy, &z);
    free_energy.push(kl::free_energy_from_distances(&d, rho, t));
    Ok(FixedPoint {
        centroids: z,
        assoc: assoc.expect("at least one iteration"),
        iterations,
        converged,
        free_energy,
    })
}

/// Critical temperature of every superstate of a fixed point.
///
/// For superstate `j` the weighted deviation covariance is whitened by the
/// curvature `Λ` restricted to the zero-sum hyperplane; `T_cr,j` is its
/// largest eigenvalue.
pub fn critical_temperature(
    pi: &StochasticMatrix,
    rho: &StateWeights,
    z: &Matrix,
    assoc: &SoftAssociation,
    floor: f64,
) -> Result<CriticalReport> {
    let n = pi.n();
    rho.check_len(n)?;
    check_bank(n, z, assoc)?;
    let k = z.rows();
    let Ok(basis) = simplex_basis(n) else {
        return Ok(CriticalReport {
            per_superstate: vec![0.0; k],
            t_cr: 0.0,
            directions: vec![vec![0.0; n]; k],
        });
    };
    let mut per = Vec::with_capacity(k);
    let mut dirs = Vec::with_capacity(k);
    for j in 0..k {
        let (t, dir) = centroid_critical(pi, &basis, z.row(j), &assoc.posterior, j, floor, false)
            .ok_or(Error::CholeskyFailure(j))?;
        per.push(t);
        dirs.push(dir);
    }
    let t_cr = per.iter().copied().fold(0.0, f64::max);
    Ok(CriticalReport {
        per_superstate: per,
        t_cr,
        directions: dirs,
    })
}

fn check_bank(n: usize, z: &Matrix, assoc: &SoftAssociation) -> Result<()> {
    if z.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: z.cols(),
        });
    }
    let k = z.rows();
    for m in [&assoc.p, &assoc.posterior] {
        if m.rows() != n || m.cols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: m.cols(),
            });
        }
    }
    Ok(())
}

/// `(T_cr,j, direction)` of one centroid, or `None` when the curvature is
/// singular.
///
/// With `floored`, `z` is lifted to at least `floor`, renormalized, and the
/// curvature takes its fixed-point value `1/z_k`.
fn centroid_critical(
    pi: &StochasticMatrix,
    basis: &SimplexBasis,
    z: &[f64],
    posterior: &Matrix,
    j: usize,
    floor: f64,
    floored: bool,
) -> Option<(f64, Vec<f64>)> {
    let n = pi.n();
    let z: Vec<f64> = if floored {
        let lifted: Vec<f64> = z.iter().map(|&v| v.max(floor)).collect();
        let s: f64 = lifted.iter().sum();
        lifted.into_iter().map(|v| v / s).collect()
    } else {
        if z.iter().any(|&v| !(v >= floor)) {
            return None;
        }
        z.to_vec()
    };
    let mut lambda = vec![0.0; n];
    let mut h1 = Matrix::zeros(n - 1, n - 1);
    let mut u = vec![0.0; n];
    for i in 0..n {
        let w = posterior[(i, j)];
        if w == 0.0 {
            continue;
        }
        let row = pi.row(i);
        for c in 0..n {
            if !floored {
                lambda[c] += w * row[c] / (z[c] * z[c]);
            }
            u[c] = (row[c] - z[c]) / z[c];
        }
        let v = basis.project(&u);
        for a in 0..n - 1 {
            let wa = w * v[a];
            if wa == 0.0 {
                continue;
            }
            let out = h1.row_mut(a);
            for b in a..n - 1 {
                out[b] += wa * v[b];
            }
        }
    }
    for a in 0..n - 1 {
        for b in 0..a {
            h1[(a, b)] = h1[(b, a)];
        }
    }
    if floored {
        for c in 0..n {
            lambda[c] = 1.0 / z[c];
        }
    }
    let h0 = basis.diag_congruence(&lambda);
    let l = linalg::cholesky(&h0)?;
    let m = linalg::congruence_inverse(&l, &h1);
    let (value, vector) = top_eigen(&m);
    if !value.is_finite() {
        return None;
    }
    let y = linalg::solve_lower_transpose(&l, &vector);
    Some((value.max(0.0), basis.lift(&y)))
}

fn top_eigen(m: &Matrix) -> (f64, Vec<f64>) {
    if m.rows() > DENSE_EIGEN_LIMIT {
        if let Some(found) = linalg::power_iteration(m, 1e-12, 100_000) {
            return found;
        }
    }
    let e = linalg::symmetric_eigen(m);
    (e.max_value(), e.max_vector())
}

/// Second derivative of the free energy along the admissible perturbation
/// `Ψ` (one zero-sum row per centroid):
///
/// `Σ_j q_j ψ_jᵀ(Λ_j − C_j/T)ψ_j + (1/T) Σ_i ρ_i (Σ_j p_{j|i} [π(i)./z(j)]ᵀψ_j)²`.
///
/// `assoc` must be the Gibbs association at `z` and temperature `t`.
pub fn hessian_quadratic_form(
    pi: &StochasticMatrix,
    rho: &StateWeights,
    z: &Matrix,
    assoc: &SoftAssociation,
    t: f64,
    perturbation: &Matrix,
) -> Result<f64> {
    let (first, coupling) = hessian_terms(pi, rho, z, assoc, t, perturbation)?;
    let weighted: f64 = coupling
        .iter()
        .zip(rho.as_slice())
        .map(|(s, r)| r * s * s)
        .sum();
    Ok(first + weighted / t)
}

/// The same form with the coupling term written as `T Σ_i (…)²`, without
/// the state weights. Kept for comparison only; it is not a second
/// derivative of the free energy.
pub fn hessian_quadratic_form_as_printed(
    pi: &StochasticMatrix,
    rho: &StateWeights,
    z: &Matrix,
    assoc: &SoftAssociation,
    t: f64,
    perturbation: &Matrix,
) -> Result<f64> {
    let (first, coupling) = hessian_terms(pi, rho, z, assoc, t, perturbation)?;
    let plain: f64 = coupling.iter().map(|s| s * s).sum();
    Ok(first + t * plain)
}

/// Returns the diagonal-block term and, per state, `Σ_j p_{j|i} a_ij` with
/// `a_ij = Σ_k π_ik ψ_jk / z_jk`.
fn hessian_terms(
    pi: &StochasticMatrix,
    rho: &StateWeights,
    z: &Matrix,
    assoc: &SoftAssociation,
    t: f64,
    psi: &Matrix,
) -> Result<(f64, Vec<f64>)> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveTemperature(t));
    }
    let n = pi.n();
    rho.check_len(n)?;
    check_bank(n, z, assoc)?;
    let k = z.rows();
    if psi.rows() != k || psi.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: psi.rows(),
        });
    }
    for j in 0..k {
        let sum: f64 = psi.row(j).iter().sum();
        if sum.abs() > 1e-10 {
            return Err(Error::InadmissiblePerturbation { row: j, sum });
        }
    }
    let mut first = 0.0;
    let mut coupling = vec![0.0; n];
    for j in 0..k {
        let zj = z.row(j);
        let pj = psi.row(j);
        let q = assoc.mass[j];
        let mut block = 0.0;
        for i in 0..n {
            let post = assoc.posterior[(i, j)];
            let gibbs = assoc.p[(i, j)];
            if post == 0.0 && gibbs == 0.0 {
                continue;
            }
            let (mut a, mut b) = (0.0, 0.0);
            for ((&p, &zc), &d) in pi.row(i).iter().zip(zj).zip(pj) {
                if p == 0.0 {
                    continue;
                }
                let r = d / zc;
                a += p * r;
                b += p * r * r;
            }
            block += post * (b - a * a / t);
            coupling[i] += gibbs * a;
        }
        first += q * block;
    }
    Ok((first, coupling))
}

/// Hard partition from soft weights after identifying merged centroids.
///
/// `merge_map[c]` is the distinct index of centroid `c`. Each state goes to
/// the distinct index with the largest summed weight (ties to the lowest
/// index); unused indices are dropped keeping their relative order.
pub fn extract_hard_partition(assoc: &SoftAssociation, merge_map: &[usize]) -> Partition {
    hard_partition(assoc, merge_map).0
}

/// Also returns the distinct index behind each superstate.
fn hard_partition(assoc: &SoftAssociation, merge_map: &[usize]) -> (Partition, Vec<usize>) {
    let n = assoc.p.rows();
    let groups = merge_map.iter().max().map_or(1, |m| m + 1);
    let mut raw = Vec::with_capacity(n);
    let mut sums = vec![0.0; groups];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (c, &g) in merge_map.iter().enumerate() {
            sums[g] += assoc.p[(i, c)];
        }
        let mut best = 0;
        for g in 1..groups {
            if sums[g] > sums[best] {
                best = g;
            }
        }
        raw.push(best);
    }
    let mut used = vec![false; groups];
    raw.iter().for_each(|&g| used[g] = true);
    let order: Vec<usize> = (0..groups).filter(|&g| used[g]).collect();
    let mut rank = vec![0; groups];
    for (r, &g) in order.iter().enumerate() {
        rank[g] = r;
    }
    let assign = raw.into_iter().map(|g| rank[g]).collect();
    let partition = Partition::new(assign, order.len()).expect("every used index appears");
    (partition, order)
}

/// Greedy grouping: centroid `c` joins the first earlier group whose
/// representative lies within `tol` in ∞-norm.
fn merge_groups(z: &Matrix, tol: f64) -> (Vec<usize>, Vec<usize>) {
    let mut reps: Vec<usize> = Vec::new();
    let mut map = Vec::with_capacity(z.rows());
    for c in 0..z.rows() {
        let found = reps.iter().position(|&r| inf_dist(z.row(r), z.row(c)) < tol);
        match found {
            Some(g) => map.push(g),
            None => {
                map.push(reps.len());
                reps.push(c);
            }
        }
    }
    (map, reps)
}

fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

fn select_rows(z: &Matrix, rows: &[usize]) -> Matrix {
    let n = z.cols();
    let mut data = Vec::with_capacity(rows.len() * n);
    for &r in rows {
        data.extend_from_slice(z.row(r));
    }
    Matrix::from_vec(rows.len(), n, data)
}

fn single_centroid(pi: &StochasticMatrix, rho: &StateWeights) -> Matrix {
    let n = pi.n();
    let mut z = vec![0.0; n];
    for (i, &r) in rho.as_slice().iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        for (zc, &p) in z.iter_mut().zip(pi.row(i)) {
            *zc += r * p;
        }
    }
    Matrix::from_vec(1, n, z)
}

/// Restricts a direction to coordinates where `z ≥ floor`, recenters it to
/// zero sum and scales it to unit ∞-norm.
fn admissible(dir: &[f64], z: &[f64], floor: f64) -> Option<Vec<f64>> {
    let support: Vec<bool> = z.iter().map(|&v| v >= floor).collect();
    let count = support.iter().filter(|&&s| s).count();
    if count < 2 {
        return None;
    }
    let mean = dir
        .iter()
        .zip(&support)
        .filter(|(_, &s)| s)
        .map(|(d, _)| d)
        .sum::<f64>()
        / count as f64;
    let mut out: Vec<f64> = dir
        .iter()
        .zip(&support)
        .map(|(&d, &s)| if s { d - mean } else { 0.0 })
        .collect();
    let norm = out.iter().fold(0.0, |m, v| f64::max(m, v.abs()));
    if !(norm > 1e-300) || !norm.is_finite() {
        return None;
    }
    out.iter_mut().for_each(|v| *v /= norm);
    Some(out)
}

fn random_direction(rng: &mut ChaCha8Rng, z: &[f64], floor: f64) -> Option<Vec<f64>> {
    let raw: Vec<f64> = (0..z.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    admissible(&raw, z, floor)
}

/// `z ± s·dir` with `s ≤ delta` small enough to keep every coordinate
/// above half its value.
fn split_pair(z: &[f64], dir: &[f64], delta: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let mut s = delta;
    for (&zc, &d) in z.iter().zip(dir) {
        if d != 0.0 {
            s = s.min(0.5 * zc / d.abs());
        }
    }
    let make = |sign: f64| {
        let mut v: Vec<f64> = z
            .iter()
            .zip(dir)
            .map(|(&zc, &d)| (zc + sign * s * d).max(0.0))
            .collect();
        let sum: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= sum);
        v
    };
    (make(1.0), make(-1.0), s)
}

/// Association of a bank at `t`, dropping centroids that receive no mass.
fn associate_pruned(ctx: &Ctx, z: &mut Matrix, t: f64) -> Result<SoftAssociation> {
    loop {
        let d = kl::fast_distances(ctx.pi, &ctx.neg_entropy, z);
        let p = kl::gibbs_weights(&d, t)?;
        match kl::posterior(&p, ctx.rho, ctx.pi.n()) {
            Ok((posterior, mass)) => return Ok(SoftAssociation { p, posterior, mass }),
            Err(Error::EmptySuperstate(j)) if z.rows() > 1 => *z = drop_row(z, j),
            Err(e) => return Err(e),
        }
    }
}

/// Fixed point that drops centroids losing all mass. Returns the surviving
/// initial rows alongside the result.
fn fixed_point_pruned(ctx: &Ctx, mut z0: Matrix, t: f64) -> Result<(FixedPoint, Vec<usize>)> {
    let mut alive: Vec<usize> = (0..z0.rows()).collect();
    loop {
        match fixed_point_with(
            ctx.pi,
            ctx.rho,
            &ctx.neg_entropy,
            &z0,
            t,
            ctx.cfg.fp_tol,
            ctx.cfg.fp_max_iter,
        ) {
            Ok(fp) => return Ok((fp, alive)),
            Err(Error::EmptySuperstate(j)) if z0.rows() > 1 => {
                z0 = drop_row(&z0, j);
                alive.remove(j);
            }
            Err(e) => return Err(e),
        }
    }
}

fn drop_row(z: &Matrix, j: usize) -> Matrix {
    let keep: Vec<usize> = (0..z.rows()).filter(|&r| r != j).collect();
    select_rows(z, &keep)
}

/// Split priority and direction for each centroid of `z`.
///
/// A failed curvature factorization is retried with floored coordinates;
/// if that fails too, a seeded random direction is used and the priority is
/// unknown (`NaN`).
fn split_candidates(
    ctx: &Ctx,
    z: &Matrix,
    assoc: &SoftAssociation,
    rng: &mut ChaCha8Rng,
) -> Vec<(f64, Option<Vec<f64>>)> {
    let floor = ctx.cfg.floor;
    let Some(basis) = ctx.basis.as_ref() else {
        return vec![(0.0, None); z.rows()];
    };
    (0..z.rows())
        .map(|j| {
            let zj = z.row(j);
            let found = centroid_critical(ctx.pi, basis, zj, &assoc.posterior, j, floor, false)
                .or_else(|| centroid_critical(ctx.pi, basis, zj, &assoc.posterior, j, floor, true));
            match found {
                Some((t, dir)) => {
                    let dir = admissible(&dir, zj, floor).or_else(|| random_direction(rng, zj, floor));
                    (t, dir)
                }
                None => (f64::NAN, random_direction(rng, zj, floor)),
            }
        })
        .collect()
}

fn make_entry(
    pi: &StochasticMatrix,
    partition: Partition,
    z: &Matrix,
    reps: &[usize],
    used: &[usize],
    t: f64,
) -> Result<AggregationEntry> {
    let rows: Vec<usize> = used.iter().map(|&g| reps[g]).collect();
    let w = select_rows(z, &rows);
    debug_assert_eq!(w.cols(), pi.n());
    let model = AggregatedModel::from_distributions(partition.clone(), w)?;
    Ok(AggregationEntry {
        k: partition.k(),
        partition,
        model,
        temperature: t,
    })
}

/// Annealing sweep from `T0 = t0_factor·T_cr` of the single-centroid
/// solution down to `t_min_factor·T0`.
///
/// Whenever the hard partition reaches a superstate count at least as large
/// as any seen before, it is recorded for that count (a later, colder
/// partition with the same count replaces the earlier one). With
/// `cfg.per_k`, every `k ≤ k_max` comes from an independent fixed-k run
/// instead.
pub fn anneal(pi: &StochasticMatrix, rho: &StateWeights, cfg: &AnnealConfig) -> Result<AnnealOutcome> {
    let n = pi.n();
    rho.check_len(n)?;
    cfg.validate(n)?;
    let ctx = Ctx::new(pi, rho, cfg);
    let z1 = single_centroid(pi, rho);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let assoc1 = associate_pruned(&ctx, &mut z1.clone(), 1.0)?;
    let initial_t_cr = split_candidates(&ctx, &z1, &assoc1, &mut rng)[0].0;
    let initial_t_cr = if initial_t_cr.is_nan() { 0.0 } else { initial_t_cr };
    let t0 = cfg.t0_factor * initial_t_cr;
    let trivial = AggregationEntry {
        k: 1,
        partition: Partition::trivial(n),
        model: AggregatedModel::from_distributions(Partition::trivial(n), z1.clone())?,
        temperature: t0,
    };
    let mut outcome = AnnealOutcome {
        entries: vec![trivial],
        state: AnnealState {
            temperature: t0,
            centroids: z1.clone(),
            effective_count: 1,
            trace: Vec::new(),
        },
        initial_t_cr,
        t0,
    };
    if cfg.k_max == 1 || initial_t_cr <= DEGENERATE_T {
        return Ok(outcome);
    }
    if cfg.per_k {
        for k in 2..=cfg.k_max {
            if let Some(e) = fixed_k_run(&ctx, &z1, k, t0, &mut outcome.state.trace)? {
                outcome.entries.push(e);
            }
        }
        return Ok(outcome);
    }
    sweep(&ctx, z1, t0, &mut rng, &mut outcome)?;
    Ok(outcome)
}

fn sweep(
    ctx: &Ctx,
    z1: Matrix,
    t0: f64,
    rng: &mut ChaCha8Rng,
    outcome: &mut AnnealOutcome,
) -> Result<()> {
    let cfg = ctx.cfg;
    let t_min = cfg.t_min_factor * t0;
    let mut t = t0;
    let mut distinct = z1;
    let mut best_k = 1;
    let mut last: Option<Partition> = None;
    let mut stable = 0;
    while t >= t_min {
        let mut plan: Vec<Option<Vec<f64>>> = vec![None; distinct.rows()];
        if distinct.rows() < cfg.k_max {
            let assoc = associate_pruned(ctx, &mut distinct, t)?;
            let m = distinct.rows();
            plan = vec![None; m];
            let cands = split_candidates(ctx, &distinct, &assoc, rng);
            let mut order: Vec<usize> = (0..m)
                .filter(|&j| cands[j].1.is_some() && !(cands[j].0 <= DEGENERATE_T))
                .collect();
            // Known priorities first, largest first; unknown ones last.
            order.sort_by(|&a, &b| {
                let (x, y) = (cands[a].0, cands[b].0);
                match (x.is_nan(), y.is_nan()) {
                    (false, false) => y.total_cmp(&x),
                    (a_nan, b_nan) => a_nan.cmp(&b_nan),
                }
            });
            order.truncate(cfg.k_max.saturating_sub(m));
            if order.is_empty() {
                break;
            }
            if cfg.schedule == Schedule::Adaptive {
                let next = order
                    .iter()
                    .map(|&j| cands[j].0)
                    .filter(|v| !v.is_nan())
                    .fold(0.0, f64::max);
                let jump = 0.95 * next;
                if jump > 0.0 && jump < t {
                    if jump < t_min {
                        break;
                    }
                    t = jump;
                }
            }
            for &j in &order {
                plan[j] = cands[j].1.clone();
            }
        }

        // Bank with a shadow pair in place of every centroid scheduled to split.
        let n = ctx.pi.n();
        let mut rows = Vec::new();
        let mut pairs = Vec::new();
        for (j, dir) in plan.iter().enumerate() {
            match dir {
                Some(d) => {
                    let (a, b, s) = split_pair(distinct.row(j), d, cfg.delta);
                    pairs.push((rows.len() / n, rows.len() / n + 1, 2.0 * s));
                    rows.extend(a);
                    rows.extend(b);
                }
                None => rows.extend_from_slice(distinct.row(j)),
            }
        }
        let z0 = Matrix::from_vec(rows.len() / n, n, rows);
        let (fp, alive) = fixed_point_pruned(ctx, z0, t)?;
        let (mut map, _) = merge_groups(&fp.centroids, cfg.merge_tol);
        if !fp.converged {
            // A pair that has not separated beyond its initial offset is
            // still undecided.
            for &(a, b, gap) in &pairs {
                let (Some(pa), Some(pb)) = (
                    alive.iter().position(|&r| r == a),
                    alive.iter().position(|&r| r == b),
                ) else {
                    continue;
                };
                if inf_dist(fp.centroids.row(pa), fp.centroids.row(pb)) <= gap {
                    let (keep, gone) = (map[pa].min(map[pb]), map[pa].max(map[pb]));
                    map.iter_mut().filter(|g| **g == gone).for_each(|g| *g = keep);
                }
            }
        }
        let (map, reps) = renumber(&map);
        let (partition, used) = hard_partition(&fp.assoc, &map);
        let k = partition.k();
        distinct = select_rows(&fp.centroids, &reps);
        let count = distinct.rows();
        outcome.state.trace.push(TraceRecord {
            temperature: t,
            free_energy: *fp.free_energy.last().expect("non-empty"),
            effective_count: count,
            iterations: fp.iterations,
            converged: fp.converged,
        });
        outcome.state.temperature = t;
        outcome.state.centroids = distinct.clone();
        outcome.state.effective_count = count;
        if k >= best_k {
            best_k = k;
            let entry = make_entry(ctx.pi, partition.clone(), &fp.centroids, &reps, &used, t)?;
            match outcome.entries.iter_mut().find(|e| e.k == k) {
                Some(slot) => *slot = entry,
                None => outcome.entries.push(entry),
            }
        }
        if count >= cfg.k_max {
            if last.as_ref() == Some(&partition) {
                stable += 1;
                if stable >= STABLE_STEPS {
                    break;
                }
            } else {
                stable = 0;
            }
        }
        last = Some(partition);
        t *= cfg.alpha;
    }
    outcome.entries.sort_by_key(|e| e.k);
    Ok(())
}

/// Renumbers group ids by first appearance; returns the new map and the
/// first centroid of each group.
fn renumber(map: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<Option<usize>> = vec![None; map.iter().max().map_or(0, |m| m + 1)];
    let mut reps = Vec::new();
    let mut out = Vec::with_capacity(map.len());
    for (c, &g) in map.iter().enumerate() {
        let id = *ids[g].get_or_insert_with(|| {
            reps.push(c);
            reps.len() - 1
        });
        out.push(id);
    }
    (out, reps)
}

/// Independent run with exactly `k` centroids started from seeded
/// perturbations of the single centroid. Coincident centroids are
/// re-perturbed after every temperature step.
fn fixed_k_run(
    ctx: &Ctx,
    z1: &Matrix,
    k: usize,
    t0: f64,
    trace: &mut Vec<TraceRecord>,
) -> Result<Option<AggregationEntry>> {
    let cfg = ctx.cfg;
    let n = ctx.pi.n();
    let seed = cfg.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_min = cfg.t_min_factor * t0;
    let mut t = t0;
    let mut bank = vec![z1.row(0).to_vec()];
    let mut best = None;
    let mut last: Option<Partition> = None;
    let mut stable = 0;
    while t >= t_min {
        // Fill up to k with perturbed copies of the current distinct rows.
        let mut filled = bank.clone();
        let mut c = 0;
        while filled.len() < k {
            let src = &bank[c % bank.len()];
            let Some(d) = random_direction(&mut rng, src, cfg.floor) else {
                break;
            };
            filled.push(split_pair(src, &d, cfg.delta).0);
            c += 1;
        }
        let rows: Vec<f64> = filled.iter().flatten().copied().collect();
        let z0 = Matrix::from_vec(filled.len(), n, rows);
        let (fp, _) = fixed_point_pruned(ctx, z0, t)?;
        let (map, reps) = merge_groups(&fp.centroids, cfg.merge_tol);
        let (partition, used) = hard_partition(&fp.assoc, &map);
        trace.push(TraceRecord {
            temperature: t,
            free_energy: *fp.free_energy.last().expect("non-empty"),
            effective_count: reps.len(),
            iterations: fp.iterations,
            converged: fp.converged,
        });
        bank = reps.iter().map(|&r| fp.centroids.row(r).to_vec()).collect();
        if partition.k() == k {
            if last.as_ref() == Some(&partition) {
                stable += 1;
            } else {
                stable = 0;
            }
            best = Some(make_entry(ctx.pi, partition.clone(), &fp.centroids, &reps, &used, t)?);
            if stable >= STABLE_STEPS {
                break;
            }
        }
        last = Some(partition);
        t *= cfg.alpha;
    }
    Ok(best)
}

/// Runs fixed-k annealing for every `k ≤ cfg.k_max` missing from
/// `outcome`. Returns the values that were added.
pub fn fill_gaps(
    pi: &StochasticMatrix,
    rho: &StateWeights,
    cfg: &AnnealConfig,
    outcome: &mut AnnealOutcome,
) -> Result<Vec<usize>> {
    let n = pi.n();
    rho.check_len(n)?;
    cfg.validate(n)?;
    if outcome.t0 <= 0.0 {
        return Ok(Vec::new());
    }
    let ctx = Ctx::new(pi, rho, cfg);
    let z1 = single_centroid(pi, rho);
    let mut added = Vec::new();
    for k in 2..=cfg.k_max {
        if outcome.entry(k).is_some() {
            continue;
        }
        if let Some(e) = fixed_k_run(&ctx, &z1, k, outcome.t0, &mut outcome.state.trace)? {
            outcome.entries.push(e);
            added.push(k);
        }
    }
    outcome.entries.sort_by_key(|e| e.k);
    Ok(added)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::validate_stochastic;

    fn chain(rows: &[&[f64]]) -> StochasticMatrix {
        let m = Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        validate_stochastic(m, 1e-9).unwrap()
    }

    fn two_state() -> StochasticMatrix {
        chain(&[&[0.9, 0.1], &[0.1, 0.9]])
    }

    #[test]
    fn two_state_critical_temperature() {
        let pi = two_state();
        let rho = StateWeights::uniform(2);
        let z = Matrix::from_vec(1, 2, vec![0.5, 0.5]);
        let fp = fixed_point(&pi, &rho, &z, 1.0, 1e-12, 10).unwrap();
        let cr = critical_temperature(&pi, &rho, &fp.centroids, &fp.assoc, 1e-12).unwrap();
        assert!((cr.t_cr - 0.64).abs() < 1e-12, "{}", cr.t_cr);
        let d = &cr.directions[0];
        assert!((d[0] + d[1]).abs() < 1e-12);
    }

    #[test]
    fn two_state_fixed_point_splits_below_critical() {
        let pi = two_state();
        let rho = StateWeights::uniform(2);
        let z0 = Matrix::from_vec(2, 2, vec![0.5001, 0.4999, 0.4999, 0.5001]);
        let fp = fixed_point(&pi, &rho, &z0, 0.05, 1e-12, 10_000).unwrap();
        assert!(fp.converged);
        assert!((fp.centroids[(0, 0)] - 0.9).abs() < 1e-3, "{:?}", fp.centroids);
        assert!((fp.centroids[(1, 0)] - 0.1).abs() < 1e-3);
        for w in fp.free_energy.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
    }

    #[test]
    fn k1_converges_in_one_step() {
        let pi = chain(&[&[0.2, 0.8, 0.0], &[0.4, 0.4, 0.2], &[0.0, 0.0, 1.0]]);
        let rho = StateWeights::uniform(3);
        let z0 = Matrix::from_vec(1, 3, vec![1.0 / 3.0; 3]);
        let fp = fixed_point(&pi, &rho, &z0, 0.3, 1e-12, 5).unwrap();
        let expected = [0.2, 0.4, 0.4];
        for (a, b) in fp.centroids.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(fp.iterations <= 2);
    }

    #[test]
    fn identical_rows_give_only_k1() {
        let pi = chain(&[&[0.3, 0.7], &[0.3, 0.7]]);
        let out = anneal(&pi, &StateWeights::uniform(2), &AnnealConfig::with_k_max(2)).unwrap();
        assert_eq!(out.k_values(), vec![1]);
        let w = out.entries[0].model.distributions();
        assert!((w[(0, 0)] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn two_state_sweep_finds_both_states() {
        let pi = two_state();
        let out = anneal(&pi, &StateWeights::uniform(2), &AnnealConfig::with_k_max(2)).unwrap();
        assert_eq!(out.k_values(), vec![1, 2]);
        assert!((out.initial_t_cr - 0.64).abs() < 1e-12);
        assert_eq!(out.entries[1].partition.k(), 2);
    }

    #[test]
    fn hard_partition_ties_and_merges() {
        let p = Matrix::from_vec(3, 3, vec![0.5, 0.5, 0.0, 0.2, 0.3, 0.5, 0.1, 0.1, 0.8]);
        let assoc = SoftAssociation {
            p: p.clone(),
            posterior: p,
            mass: vec![1.0; 3],
        };
        let part = extract_hard_partition(&assoc, &[0, 1, 2]);
        assert_eq!(part.assignment(), &[0, 1, 1]);
        assert_eq!(part.k(), 2);
        // Centroids 1 and 2 identified.
        let part = extract_hard_partition(&assoc, &[0, 1, 1]);
        assert_eq!(part.assignment(), &[0, 1, 1]);
    }

    #[test]
    fn hessian_rejects_inadmissible_rows() {
        let pi = two_state();
        let rho = StateWeights::uniform(2);
        let z = Matrix::from_vec(1, 2, vec![0.5, 0.5]);
        let assoc = kl::associate(&pi, &rho, &z, 1.0).unwrap();
        let bad = Matrix::from_vec(1, 2, vec![1.0, 0.0]);
        assert!(matches!(
            hessian_quadratic_form(&pi, &rho, &z, &assoc, 1.0, &bad),
            Err(Error::InadmissiblePerturbation { row: 0, .. })
        ));
        let zero = Matrix::zeros(1, 2);
        assert_eq!(hessian_quadratic_form(&pi, &rho, &z, &assoc, 1.0, &zero).unwrap(), 0.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = AnnealConfig::with_k_max(3);
        assert!(cfg.validate(2).is_err());
        cfg.k_max = 2;
        cfg.alpha = 1.0;
        assert!(cfg.validate(2).is_err());
        cfg.alpha = 0.5;
        assert!(cfg.validate(2).is_ok());
    }
}
