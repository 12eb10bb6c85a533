//! Seeded synthetic chains with a known superstate structure.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::{validate_stochastic, Partition, StochasticMatrix};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;

/// Description of a synthetic chain.
#[derive(Debug, Clone, PartialEq)]
pub enum GenSpec {
    /// Block-diagonal chain with random rows inside each block, mixed with a
    /// random chain at level `eps`.
    Ncd { blocks: Vec<usize>, eps: f64, seed: u64 },
    /// `k_t` random rows, row `i` copying the one of its class; classes are
    /// contiguous with the given counts. Mixed with a random chain at level
    /// `eps`.
    ReplicatedRows {
        n: usize,
        k_t: usize,
        counts: Vec<usize>,
        eps: f64,
        seed: u64,
    },
}

impl GenSpec {
    /// Generates the chain and its ground-truth partition.
    pub fn generate(&self) -> Result<(StochasticMatrix, Partition)> {
        match self {
            GenSpec::Ncd { blocks, eps, seed } => gen_ncd(blocks, *eps, *seed),
            GenSpec::ReplicatedRows {
                n,
                k_t,
                counts,
                eps,
                seed,
            } => gen_replicated_rows(*n, *k_t, counts, *eps, *seed),
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidConfig("eps must lie in [0, 1)"));
    }
    Ok(())
}

/// Uniform point on the simplex: normalized unit exponentials.
fn dirichlet_row(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let mut sum = 0.0;
    for v in out.iter_mut() {
        // 1 − U lies in (0, 1], so the logarithm is finite.
        *v = -math::ln(1.0 - rng.random::<f64>());
        sum += *v;
    }
    if sum > 0.0 {
        out.iter_mut().for_each(|v| *v /= sum);
    } else {
        let u = 1.0 / out.len() as f64;
        out.iter_mut().for_each(|v| *v = u);
    }
}

fn random_stochastic(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut r = Matrix::zeros(n, n);
    for i in 0..n {
        dirichlet_row(rng, r.row_mut(i));
    }
    r
}

fn mix(base: &mut Matrix, r: &Matrix, eps: f64) {
    if eps == 0.0 {
        return;
    }
    for i in 0..base.rows() {
        for (b, &x) in base.row_mut(i).iter_mut().zip(r.row(i)) {
            *b = (1.0 - eps) * *b + eps * x;
        }
    }
}

fn contiguous(sizes: &[usize]) -> Result<Partition> {
    let assign = sizes
        .iter()
        .enumerate()
        .flat_map(|(j, &s)| core::iter::repeat(j).take(s))
        .collect();
    Partition::new(assign, sizes.len())
}

/// Nearly completely decomposable chain `(1−ε)Π* + εR`.
pub fn gen_ncd(blocks: &[usize], eps: f64, seed: u64) -> Result<(StochasticMatrix, Partition)> {
    check_eps(eps)?;
    if blocks.is_empty() || blocks.iter().any(|&b| b == 0) {
        return Err(Error::BlockTooSmall);
    }
    let n: usize = blocks.iter().sum();
    if n < 2 {
        return Err(Error::InvalidConfig("need at least two states"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Matrix::zeros(n, n);
    let mut start = 0;
    for &b in blocks {
        for i in start..start + b {
            dirichlet_row(&mut rng, &mut m.row_mut(i)[start..start + b]);
        }
        start += b;
    }
    let r = random_stochastic(&mut rng, n);
    mix(&mut m, &r, eps);
    Ok((validate_stochastic(m, 1e-12)?, contiguous(blocks)?))
}

/// Chain whose rows are copies of `k_t` random rows, mixed with a random
/// chain at level `eps`.
pub fn gen_replicated_rows(
    n: usize,
    k_t: usize,
    counts: &[usize],
    eps: f64,
    seed: u64,
) -> Result<(StochasticMatrix, Partition)> {
    check_eps(eps)?;
    if n < 2 {
        return Err(Error::InvalidConfig("need at least two states"));
    }
    if counts.len() != k_t || k_t == 0 {
        return Err(Error::CountMismatch("need one count per class"));
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::CountMismatch("every class needs a state"));
    }
    if counts.iter().sum::<usize>() != n {
        return Err(Error::CountMismatch("counts must sum to n"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi = random_stochastic_rows(&mut rng, k_t, n);
    let truth = contiguous(counts)?;
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        m.row_mut(i).copy_from_slice(xi.row(truth.superstate_of(i)));
    }
    let r = random_stochastic(&mut rng, n);
    mix(&mut m, &r, eps);
    Ok((validate_stochastic(m, 1e-12)?, truth))
}

fn random_stochastic_rows(rng: &mut ChaCha8Rng, rows: usize, n: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, n);
    for i in 0..rows {
        dirichlet_row(rng, m.row_mut(i));
    }
    m
}

/// `(1−ε)Π + εR` with a seeded random stochastic `R`; `ε ∈ [0, 1]`.
pub fn perturb(pi: &StochasticMatrix, eps: f64, seed: u64) -> Result<StochasticMatrix> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidConfig("eps must lie in [0, 1]"));
    }
    if eps == 0.0 {
        return Ok(pi.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random_stochastic(&mut rng, pi.n());
    let mut m = pi.matrix().clone();
    mix(&mut m, &r, eps);
    let out = validate_stochastic(m, 1e-12)?;
    match pi.labels() {
        Some(l) => out.with_labels(l.to_vec()),
        None => Ok(out),
    }
}
