//! Independent oracles shared by the integration and acceptance tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect()
}

/// Top-three eigenpairs of the population covariance via nalgebra, sorted
/// descending, each vector flipped so its largest-magnitude entry is positive.
pub fn pca_oracle(points: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = points.len();
    let d = points[0].len();
    let mut center = vec![0.0; d];
    for p in points {
        for j in 0..d {
            center[j] += p[j] / n as f64;
        }
    }
    let x = DMatrix::from_fn(n, d, |i, j| points[i][j] - center[j]);
    let cov = x.transpose() * &x / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    for &k in order.iter().take(3) {
        values.push(eig.eigenvalues[k]);
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let big = v
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        vectors.push(v);
    }
    (values, vectors)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Brute-force OpenMax on one sample, written from the recalibration
/// formula: ranks by logit, weights `(α − r)/α`, Weibull CDF of the distance.
pub fn openmax_oracle(
    logits: &[f64],
    distances: &[f64],
    shape: &[f64],
    scale: &[f64],
    shift: &[f64],
    alpha: usize,
) -> Vec<f64> {
    let k = logits.len();
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    let mut revised = logits.to_vec();
    let mut unknown = 0.0;
    for (r, &c) in idx.iter().take(alpha).enumerate() {
        let weight = (alpha - r) as f64 / alpha as f64;
        let x = distances[c] - shift[c];
        let cdf = if x <= 0.0 { 0.0 } else { 1.0 - (-(x / scale[c]).powf(shape[c])).exp() };
        let w = 1.0 - weight * cdf;
        revised[c] = logits[c] * w;
        unknown += logits[c] * (1.0 - w);
    }
    revised.push(unknown);
    let m = revised.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = revised.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Proptest settings without failure persistence, which cannot locate a
/// source root from an integration test.
pub fn proptest_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        failure_persistence: None,
        ..proptest::test_runner::Config::default()
    }
}
