//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use lumpkit::formats::{parse_matrix, parse_partitions_str, letter_labels, Format};
use lumpkit::report::read_report;
use lumpkit_core::anneal::{critical_temperature, hessian_quadratic_form, hessian_quadratic_form_as_printed};
use lumpkit_core::kl::{
    aggregate_transitions, associate, gibbs_weights, hard_centroids, kl_divergence,
    partition_distortion, posterior_and_centroids,
};
use lumpkit_core::linalg::{symmetric_eigen, Matrix};
use lumpkit_core::selection::{covariance_matrix, hard_membership, heterogeneity, marginal_return};
use lumpkit_core::{
    anneal, fill_gaps, gen_ncd, gen_replicated_rows, perturb, simplex_basis, AnnealConfig,
    HeterogeneityMode, Membership, Partition, SelectionOptions, StateWeights, StochasticMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn bin(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_lumpkit"))
        .args(args)
        .output()
        .expect("binary runs");
    if !out.status.success() {
        panic!("lumpkit {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

/// Runs `gen` with `gen_args` and then `pipeline --kmax`, returning the report.
fn gen_and_pipeline(dir: &Path, gen_args: &[&str], kmax: usize) -> lumpkit_core::SelectionReport {
    let pi = dir.join("pi.csv");
    let report = dir.join("report.json");
    let mut args = vec!["gen"];
    args.extend_from_slice(gen_args);
    args.extend_from_slice(&["--out", p(&pi)]);
    bin(&args);
    let kmax = kmax.to_string();
    bin(&["pipeline", "--matrix", p(&pi), "--kmax", &kmax, "--out", p(&report)]);
    read_report(&report).unwrap().0
}

fn ncd_recovery() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let mut hits = 0;
    let mut picks = Vec::new();
    for seed in 0..30 {
        let s = seed.to_string();
        let r = gen_and_pipeline(dir.path(), &["ncd", "--blocks", "3,3,3", "--eps", "0.05", "--seed", &s], 6);
        hits += (r.k_t == 3) as usize;
        picks.push(r.k_t);
    }
    let t = start.elapsed();
    Outcome {
        pass: hits >= 27 && t < Duration::from_secs(10),
        detail: format!("k_t = 3 in {hits}/30 (need 27) in {:.1} s; picks {picks:?}", t.as_secs_f64()),
    }
}

fn large_ncd() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let mut hits = 0;
    let mut picks = Vec::new();
    for seed in 0..5 {
        let s = seed.to_string();
        let r = gen_and_pipeline(
            dir.path(),
            &["ncd", "--blocks", "10,30,20,20,20", "--eps", "0.02", "--seed", &s],
            7,
        );
        hits += (r.k_t == 5) as usize;
        picks.push(r.k_t);
    }
    let t = start.elapsed();
    Outcome {
        pass: hits >= 4 && t < Duration::from_secs(120),
        detail: format!("k_t = 5 in {hits}/5 (need 4) in {:.1} s; picks {picks:?}", t.as_secs_f64()),
    }
}

fn replicated_rows() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let mut counts = Vec::new();
    for (kt, split) in [(3, "4,3,3"), (4, "3,3,2,2")] {
        let k = kt.to_string();
        let mut hits = 0;
        for seed in 0..30 {
            let s = seed.to_string();
            let r = gen_and_pipeline(
                dir.path(),
                &["rows", "--n", "10", "--kt", &k, "--counts", split, "--eps", "0.1", "--seed", &s],
                6,
            );
            hits += (r.k_t == kt) as usize;
        }
        counts.push(hits);
    }
    let t = start.elapsed();
    Outcome {
        pass: counts.iter().all(|&h| h >= 27) && t < Duration::from_secs(10),
        detail: format!(
            "k_t=3: {}/30, k_t=4: {}/30 (need 27 each) in {:.1} s",
            counts[0],
            counts[1],
            t.as_secs_f64()
        ),
    }
}

fn separation_ratio() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut hits = 0;
    let mut ratios = Vec::new();
    for seed in 0..30 {
        let s = seed.to_string();
        let r = gen_and_pipeline(dir.path(), &["ncd", "--blocks", "3,3,3", "--eps", "0.01", "--seed", &s], 6);
        let nu3 = r.nu_at(3).unwrap_or(f64::NAN);
        let second = (2..=6)
            .filter(|&k| k != 3)
            .filter_map(|k| r.nu_at(k))
            .fold(f64::NEG_INFINITY, f64::max);
        let ok = nu3 >= 10.0 * second && nu3 > second;
        hits += ok as usize;
        ratios.push(nu3 / second);
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    Outcome {
        pass: hits >= 25,
        detail: format!("ν(3) ≥ 10 × runner-up in {hits}/30 (need 25); median ratio {:.2}", sorted[15]),
    }
}

fn closed_form_t_cr(pi: &StochasticMatrix, rho: &StateWeights) -> f64 {
    let z = Matrix::from_vec(1, pi.n(), mean_row(pi, rho));
    let assoc = associate(pi, rho, &z, 1.0).unwrap();
    critical_temperature(pi, rho, &z, &assoc, 1e-12).unwrap().t_cr
}

fn critical_temperature_oracle() -> Outcome {
    let pi = lumpkit_core::validate_stochastic(
        Matrix::from_rows(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap(),
        0.0,
    )
    .unwrap();
    let rho = StateWeights::uniform(2);
    let closed = closed_form_t_cr(&pi, &rho);
    let fd = fd_critical_temperature(&pi, &rho);
    let two_state = (closed - 0.64).abs() < 1e-12 && (fd - 0.64).abs() / 0.64 < 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let n = rng.random_range(2..=5);
        let pi = random_chain(&mut rng, n);
        let rho = StateWeights::new(random_simplex(&mut rng, n)).unwrap();
        let closed = closed_form_t_cr(&pi, &rho);
        let fd = fd_critical_temperature(&pi, &rho);
        worst = worst.max((closed - fd).abs() / closed);
    }
    Outcome {
        pass: two_state && worst < 1e-2,
        detail: format!("2-state crossing {fd:.6} vs 0.64; random worst rel. {worst:.2e} (need < 1e-2)"),
    }
}

fn hessian_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut printed_off = 0;
    for _ in 0..50 {
        let n = rng.random_range(2..=6);
        let k = rng.random_range(1..=3);
        let pi = random_chain(&mut rng, n);
        let rho = StateWeights::new(random_simplex(&mut rng, n)).unwrap();
        let z = random_bank(&mut rng, k, n);
        let t = rng.random_range(0.05..2.0);
        let psi = admissible_direction(&mut rng, &z);
        let assoc = associate(&pi, &rho, &z, t).unwrap();
        let h = hessian_quadratic_form(&pi, &rho, &z, &assoc, t, &psi).unwrap();
        let fd = fd_hessian(&pi, &rho, &z, &psi, t, 1e-3);
        let scale: f64 = (0..k)
            .map(|j| assoc.mass[j] * (0..n).map(|c| psi[(j, c)] * psi[(j, c)] / z[(j, c)]).sum::<f64>())
            .sum::<f64>()
            .max(h.abs());
        worst = worst.max((h - fd).abs() / scale);
        let printed = hessian_quadratic_form_as_printed(&pi, &rho, &z, &assoc, t, &psi).unwrap();
        printed_off += ((printed - fd).abs() > 1e-4 * scale) as usize;
    }
    Outcome {
        pass: worst < 1e-4,
        detail: format!(
            "worst rel. error {worst:.2e} over 50 pairs (need < 1e-4); as-printed coupling term off in {printed_off}/50"
        ),
    }
}

fn brute_force_oracle() -> Outcome {
    let rho = StateWeights::uniform(8);
    let theta = simplex_basis(8).unwrap();
    let mut good = 0;
    let mut eig_worst: f64 = 0.0;
    for seed in 0..20 {
        let (pi, _) = gen_ncd(&[3, 3, 2], 0.1, seed).unwrap();
        let cfg = AnnealConfig::with_k_max(3);
        let mut out = anneal(&pi, &rho, &cfg).unwrap();
        fill_gaps(&pi, &rho, &cfg, &mut out).unwrap();
        let ok = (2..=3).all(|k| {
            out.entry(k).is_some_and(|e| {
                let d = partition_distortion(&pi, &e.partition, &rho).unwrap();
                d <= 1.05 * brute_force_min_distortion(&pi, &rho, k)
            })
        });
        good += ok as usize;
        for e in &out.entries {
            let q = hard_membership(&e.partition, &rho, Membership::Normalized).unwrap();
            for j in 0..e.k {
                for mode in [HeterogeneityMode::Plain, HeterogeneityMode::Whiten] {
                    let c = covariance_matrix(&pi, &q, j, &theta, 1e-12, mode).unwrap();
                    let dense = symmetric_eigen(&c).max_value();
                    let power = power_lambda_max(&c);
                    if dense > 0.0 {
                        eig_worst = eig_worst.max((dense - power).abs() / dense);
                    }
                }
            }
        }
    }
    Outcome {
        pass: good >= 16 && eig_worst <= 1e-8,
        detail: format!(
            "within 5% of optimum in {good}/20 (need 16); dense vs power worst rel. {eig_worst:.2e} (need ≤ 1e-8)"
        ),
    }
}

fn bigram_ground_truth() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("bigram.csv");
    let start = Instant::now();
    bin(&["ingest-bigrams", "--input", p(&data("bigrams.txt")), "--out", p(&m)]);
    let table = data("letter_partitions.json");
    let mut picks = Vec::new();
    for rho in ["stationary", "uniform"] {
        let report = dir.path().join(format!("{rho}.json"));
        bin(&["select", "--matrix", p(&m), "--partitions", p(&table), "--rho", rho, "--out", p(&report)]);
        picks.push(read_report(&report).unwrap().0.k_t);
    }
    let t = start.elapsed();
    let labels = letter_labels();
    let verbatim = r#"{"2": [["a","e","i","o","u","y"],
        ["b","c","d","f","g","h","j","k","l","m","n","p","q","r","s","t","v","w","x","z"]]}"#;
    let accepted = parse_partitions_str(verbatim, 26, Some(&labels)).is_ok()
        && parse_matrix(&m, Format::Csv).is_ok();
    Outcome {
        pass: picks[0] == 2 && accepted && t < Duration::from_secs(5),
        detail: format!(
            "k_t = {} with stationary weights (uniform weights give {}); verbatim k=2 file accepted: {accepted}; {:.2} s",
            picks[0],
            picks[1],
            t.as_secs_f64()
        ),
    }
}

fn random_partition(rng: &mut ChaCha8Rng, n: usize) -> Partition {
    let k = rng.random_range(1..=n);
    let assign: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    Partition::compacted(&assign).unwrap()
}

fn stochastic(m: &Matrix) -> bool {
    (0..m.rows()).all(|i| {
        let r = m.row(i);
        r.iter().all(|&v| v >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() <= 1e-12
    })
}

fn invariant_suites() -> Outcome {
    const CASES: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut failures = [0usize; 5];
    for _ in 0..CASES {
        let n = rng.random_range(2..=8);
        let a = random_simplex(&mut rng, n);
        let b = random_simplex(&mut rng, n);
        if !(kl_divergence(&a, &b, 0.0).unwrap() >= -1e-15) {
            failures[0] += 1;
        }

        let len = rng.random_range(2..=8);
        let t: Vec<f64> = (0..len).map(|_| 10f64.powf(rng.random_range(-6.0..3.0))).collect();
        let sum: f64 = marginal_return(&t).iter().sum();
        let expected = t[0].ln() - t[len - 1].ln();
        if (sum - expected).abs() > 1e-12 * (1.0 + expected.abs()) {
            failures[1] += 1;
        }

        let pi = random_chain(&mut rng, n);
        let part = random_partition(&mut rng, n);
        let rho = StateWeights::new(random_simplex(&mut rng, n)).unwrap();
        let theta = simplex_basis(n).unwrap();
        let q = hard_membership(&part, &rho, Membership::Normalized).unwrap();
        for j in 0..part.k() {
            for mode in [HeterogeneityMode::Plain, HeterogeneityMode::Whiten] {
                let c = covariance_matrix(&pi, &q, j, &theta, 1e-12, mode).unwrap();
                let e = symmetric_eigen(&c);
                let asym = c.max_abs_diff(&c.transpose());
                if e.values[0] < -1e-10 * e.max_value().max(1.0) || asym > 1e-12 * e.max_value().max(1.0) {
                    failures[2] += 1;
                }
            }
        }

        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted_rho = StateWeights::new(perm.iter().map(|&i| rho.as_slice()[i]).collect()).unwrap();
        let mode = if rng.random::<bool>() { HeterogeneityMode::Whiten } else { HeterogeneityMode::Plain };
        let opts = SelectionOptions { mode, ..SelectionOptions::default() };
        let (x, _) = heterogeneity(&pi, &part, &rho, &theta, &opts).unwrap();
        let (y, _) = heterogeneity(&pi.permuted(&perm).unwrap(), &part.permuted(&perm), &permuted_rho, &theta, &opts).unwrap();
        if (x - y).abs() > 1e-10 * (1.0 + x.abs()) {
            failures[3] += 1;
        }

        let seed = rng.random::<u64>();
        let eps = rng.random_range(0.0..1.0);
        let mut ok = stochastic(perturb(&pi, eps, seed).unwrap().matrix())
            && stochastic(pi.permuted(&perm).unwrap().matrix())
            && stochastic(gen_ncd(&[n, 2], eps, seed).unwrap().0.matrix())
            && stochastic(gen_replicated_rows(n, 1, &[n], eps, seed).unwrap().0.matrix());
        let w = hard_centroids(&pi, &part, &rho).unwrap();
        ok &= stochastic(&w) && stochastic(&aggregate_transitions(&w, &part).unwrap());
        let bank = random_bank(&mut rng, 2, n);
        let d = lumpkit_core::kl::distance_matrix(&pi, &bank, 0.0).unwrap();
        let g = gibbs_weights(&d, rng.random_range(0.01..5.0)).unwrap();
        ok &= stochastic(&g);
        let (_, z) = posterior_and_centroids(&pi, &g, &rho).unwrap();
        ok &= stochastic(&z);
        if !ok {
            failures[4] += 1;
        }
    }
    Outcome {
        pass: failures.iter().all(|&f| f == 0),
        detail: format!(
            "{CASES} cases each; failures: KL {}, telescoping {}, PSD {}, permutation {}, stochastic {}",
            failures[0], failures[1], failures[2], failures[3], failures[4]
        ),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("NCD recovery", ncd_recovery),
        ("large NCD", large_ncd),
        ("replicated rows", replicated_rows),
        ("separation ratio", separation_ratio),
        ("critical temperature oracle", critical_temperature_oracle),
        ("Hessian identity", hessian_identity),
        ("brute-force partition oracle", brute_force_oracle),
        ("bigram ground truth", bigram_ground_truth),
        ("invariant suites", invariant_suites),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {} ({name}): {}", i + 1, o.detail);
        if !o.pass {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 9 criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
