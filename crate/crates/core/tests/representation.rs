mod common;

use common::{max_abs_diff, pca_oracle, random_points, rng};
use osr_core::representation::{compute_mavs, fit_pca_basis};
use osr_core::Tensor;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn pca_matches_dense_eigensolver() {
    let mut r = rng(2024);
    for _ in 0..50 {
        let n = r.random_range(4..=10);
        let d = r.random_range(3..=32);
        let points = random_points(&mut r, n, d);
        let basis = fit_pca_basis(&points).unwrap();
        let (values, vectors) = pca_oracle(&points);
        for k in 0..3 {
            assert!((basis.eigenvalues[k] - values[k]).abs() < 1e-8, "n={n} d={d} k={k}");
            assert!(max_abs_diff(&basis.components[k], &vectors[k]) < 1e-8, "n={n} d={d} k={k}");
        }
    }
}

#[test]
fn components_orthonormal_and_sorted_even_when_rank_deficient() {
    let mut r = rng(7);
    for n in 2..=10 {
        let d = r.random_range(3..=32);
        let points = random_points(&mut r, n, d);
        let b = fit_pca_basis(&points).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = b.components[i].iter().zip(&b.components[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
        assert!(b.eigenvalues[0] >= b.eigenvalues[1] && b.eigenvalues[1] >= b.eigenvalues[2]);
        assert!(b.eigenvalues[2] >= 0.0);
        // n points span at most n − 1 directions
        assert_eq!(b.completed, 3usize.saturating_sub(n - 1));
    }
}

#[test]
fn projected_centers_sum_to_zero() {
    let mut r = rng(11);
    let points = random_points(&mut r, 6, 16);
    let b = fit_pca_basis(&points).unwrap();
    let mut sum = [0.0; 3];
    for p in &points {
        let c = b.project_one(p).unwrap();
        for k in 0..3 {
            sum[k] += c[k];
        }
    }
    assert!(sum.iter().all(|s| s.abs() < 1e-9));
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, cols), rows)
}

proptest! {
    #![proptest_config(common::proptest_config(64))]

    #[test]
    fn projection_is_isometric_within_the_spanned_subspace(points in matrix(4, 6)) {
        // four points span three directions, all kept by the basis
        let b = fit_pca_basis(&points).unwrap();
        prop_assume!(b.completed == 0 && b.eigenvalues[2] > 1e-6);
        let proj: Vec<[f64; 3]> = points.iter().map(|p| b.project_one(p).unwrap()).collect();
        for i in 0..4 {
            for j in 0..4 {
                let full: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).powi(2)).sum();
                let low: f64 = (0..3).map(|k| (proj[i][k] - proj[j][k]).powi(2)).sum();
                prop_assert!((full - low).abs() < 1e-8 * (1.0 + full));
            }
        }
    }

    #[test]
    fn mavs_merge_over_a_partition(rows in matrix(12, 4), split in 1usize..11) {
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let all = Tensor::from_rows(&rows).unwrap();
        let whole = compute_mavs(&all, &labels, 3).unwrap();
        let head = &rows[..split];
        let tail = &rows[split..];
        let lh = &labels[..split];
        let lt = &labels[split..];
        for c in 0..3 {
            // weighted merge of the two halves' per-class sums
            let mut sum = vec![0.0; 4];
            let mut count = 0;
            for (part, labs) in [(head, lh), (tail, lt)] {
                let members: Vec<&Vec<f64>> = part.iter().zip(labs).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
                if members.is_empty() {
                    continue;
                }
                let t = Tensor::from_rows(&members.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
                let m = compute_mavs(&t, &vec![0; members.len()], 1).unwrap();
                for j in 0..4 {
                    sum[j] += m[0].vector[j] * m[0].count as f64;
                }
                count += m[0].count;
            }
            prop_assert_eq!(count, whole[c].count);
            for j in 0..4 {
                prop_assert!((sum[j] / count as f64 - whole[c].vector[j]).abs() < 1e-12);
            }
        }
    }
}
