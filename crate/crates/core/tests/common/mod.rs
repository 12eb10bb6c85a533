//! Independent numerical oracles shared by the oracle and acceptance tests.
#![allow(dead_code)]

use lumpkit_core::kl::{free_energy, partition_distortion};
use lumpkit_core::linalg::{symmetric_eigen, Matrix};
use lumpkit_core::{simplex_basis, validate_stochastic, Partition, StateWeights, StochasticMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln() + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

pub fn random_chain(rng: &mut ChaCha8Rng, n: usize) -> StochasticMatrix {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| random_simplex(rng, n)).collect();
    validate_stochastic(Matrix::from_rows(&rows).unwrap(), 1e-12).unwrap()
}

pub fn random_bank(rng: &mut ChaCha8Rng, k: usize, n: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..k).map(|_| random_simplex(rng, n)).collect();
    Matrix::from_rows(&rows).unwrap()
}

/// Zero-sum rows scaled so that `max |ψ_jk / z_jk| = 1`.
pub fn admissible_direction(rng: &mut ChaCha8Rng, z: &Matrix) -> Matrix {
    let (k, n) = (z.rows(), z.cols());
    let mut psi = Matrix::zeros(k, n);
    for j in 0..k {
        let a = random_simplex(rng, n);
        let b = random_simplex(rng, n);
        for c in 0..n {
            psi[(j, c)] = a[c] - b[c];
        }
    }
    let mut worst: f64 = 0.0;
    for j in 0..k {
        for c in 0..n {
            worst = worst.max((psi[(j, c)] / z[(j, c)]).abs());
        }
    }
    for v in (0..k).flat_map(|j| (0..n).map(move |c| (j, c))) {
        psi[v] /= worst;
    }
    psi
}

fn shifted(z: &Matrix, psi: &Matrix, eps: f64) -> Matrix {
    let data = z
        .as_slice()
        .iter()
        .zip(psi.as_slice())
        .map(|(a, b)| a + eps * b)
        .collect();
    Matrix::from_vec(z.rows(), z.cols(), data)
}

fn second_difference(
    pi: &StochasticMatrix,
    rho: &StateWeights,
    z: &Matrix,
    psi: &Matrix,
    t: f64,
    eps: f64,
) -> f64 {
    let f = |e: f64| free_energy(pi, &shifted(z, psi, e), rho, t, 0.0).unwrap();
    (f(eps) - 2.0 * f(0.0) + f(-eps)) / (eps * eps)
}

/// Richardson-extrapolated second derivative of the free energy along `psi`.
pub fn fd_hessian(
    pi: &StochasticMatrix,
    rho: &StateWeights,
    z: &Matrix,
    psi: &Matrix,
    t: f64,
    eps: f64,
) -> f64 {
    let coarse = second_difference(pi, rho, z, psi, t, eps);
    let fine = second_difference(pi, rho, z, psi, t, eps / 10.0);
    (100.0 * fine - coarse) / 99.0
}

/// ρ-weighted mean row.
pub fn mean_row(pi: &StochasticMatrix, rho: &StateWeights) -> Vec<f64> {
    let n = pi.n();
    let mut z = vec![0.0; n];
    for (i, r) in rho.as_slice().iter().enumerate() {
        for (zc, p) in z.iter_mut().zip(pi.row(i)) {
            *zc += r * p;
        }
    }
    z
}

/// Finite-difference Hessian of the free energy of a doubled centroid,
/// restricted to splitting directions `[v; −v]` with zero-sum `v`, in
/// orthonormal zero-sum coordinates.
pub fn fd_split_hessian(pi: &StochasticMatrix, rho: &StateWeights, z: &[f64], t: f64) -> Matrix {
    let n = z.len();
    let theta = simplex_basis(n).unwrap().theta().clone();
    let zmin = z.iter().copied().fold(f64::INFINITY, f64::min);
    let bank = Matrix::from_vec(2, n, [z, z].concat());
    let quad = |v: &[f64]| {
        let psi = Matrix::from_vec(2, n, [v.to_vec(), v.iter().map(|x| -x).collect()].concat());
        fd_hessian(pi, rho, &bank, &psi, t, 1e-2 * zmin)
    };
    let col = |a: usize| theta.column(a);
    let m = n - 1;
    let mut h = Matrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let (ca, cb) = (col(a), col(b));
            let plus: Vec<f64> = ca.iter().zip(&cb).map(|(x, y)| x + y).collect();
            let minus: Vec<f64> = ca.iter().zip(&cb).map(|(x, y)| x - y).collect();
            let v = if a == b { quad(&ca) } else { (quad(&plus) - quad(&minus)) / 4.0 };
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    h
}

/// Temperature at which the smallest eigenvalue of the finite-difference
/// split Hessian of the single-centroid solution changes sign.
pub fn fd_critical_temperature(pi: &StochasticMatrix, rho: &StateWeights) -> f64 {
    let z = mean_row(pi, rho);
    let min_eig = |t: f64| symmetric_eigen(&fd_split_hessian(pi, rho, &z, t)).values[0];
    let (mut lo, mut hi) = (1e-6f64, 1e3f64);
    if min_eig(lo) >= 0.0 {
        return 0.0;
    }
    for _ in 0..80 {
        let mid = (lo * hi).sqrt();
        if min_eig(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo * hi).sqrt()
}

/// Largest eigenvalue of a symmetric PSD matrix by plain power iteration.
pub fn power_lambda_max(m: &Matrix) -> f64 {
    let n = m.rows();
    if n == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * (i as f64 + 1.0).sqrt()).collect();
    let mut value = 0.0;
    for _ in 0..200_000 {
        let w = m.mul_vec(&v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
            / v.iter().map(|x| x * x).sum::<f64>();
        v = w.into_iter().map(|x| x / norm).collect();
        if (next - value).abs() <= 1e-15 * next.abs() {
            return next;
        }
        value = next;
    }
    value
}

/// Smallest hard-partition distortion over all partitions of the states
/// into exactly `k` non-empty groups.
pub fn brute_force_min_distortion(pi: &StochasticMatrix, rho: &StateWeights, k: usize) -> f64 {
    let n = pi.n();
    let mut best = f64::INFINITY;
    let mut assign = vec![0usize; n];
    let total = k.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        for a in assign.iter_mut() {
            *a = c % k;
            c /= k;
        }
        // Canonical labelling only: first appearance order.
        let mut next = 0;
        let mut canonical = true;
        for &a in &assign {
            if a > next {
                canonical = false;
                break;
            }
            if a == next {
                next += 1;
            }
        }
        if !canonical || next != k {
            continue;
        }
        let p = Partition::new(assign.clone(), k).unwrap();
        best = best.min(partition_distortion(pi, &p, rho).unwrap());
    }
    best
}
