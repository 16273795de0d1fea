mod common;

use common::rng;
use osr_core::openmax::DistanceKind;
use osr_core::predictor::{estimate_thresholds, nearest_rank, predict, predict_all, ThresholdTable};
use osr_core::representation::{compute_mavs, MeanActivationVector};
use osr_core::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn mav(class_id: usize, vector: Vec<f64>) -> MeanActivationVector {
    MeanActivationVector { class_id, vector, count: 1 }
}

#[test]
fn nearest_rank_on_one_to_hundred() {
    let v: Vec<f64> = (1..=100).rev().map(f64::from).collect();
    assert_eq!(nearest_rank(&v, 99.0).unwrap(), 99.0);
    assert_eq!(nearest_rank(&v, 100.0).unwrap(), 100.0);
    assert_eq!(nearest_rank(&v, 0.5).unwrap(), 1.0);
    assert_eq!(nearest_rank(&v, 50.0).unwrap(), 50.0);
    assert!(nearest_rank(&v, 0.0).is_err());
    assert!(nearest_rank(&[], 50.0).is_err());
}

#[test]
fn rejection_and_acceptance() {
    let mavs = vec![mav(0, vec![0.0, 0.0]), mav(1, vec![10.0, 0.0])];
    let table = ThresholdTable {
        thresholds: vec![1.0, 2.0],
        percentile: 99.0,
        distance_kind: DistanceKind::Euclidean,
    };
    assert_eq!(predict(&[0.5, 0.0], &mavs, &table, None).unwrap().label, 0);
    assert_eq!(predict(&[8.5, 0.0], &mavs, &table, None).unwrap().label, 1);
    assert_eq!(predict(&[5.0, 5.0], &mavs, &table, None).unwrap().label, 2);
    let p = predict(&[10.0, 0.0], &mavs, &table, None).unwrap();
    assert_eq!((p.label, p.distance_to_nearest), (1, 0.0));
    let avs = Tensor::from_rows(&[vec![0.5, 0.0], vec![5.0, 5.0]]).unwrap();
    assert_eq!(predict_all(&avs, &mavs, &table, None).unwrap(), vec![0, 2]);
}

proptest! {
    #![proptest_config(common::proptest_config(256))]

    #[test]
    fn nearest_rank_matches_sorted_index(values in prop::collection::vec(-100.0f64..100.0, 1..200), p in 1u32..=100) {
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        // integer arithmetic oracle for ceil(p·n/100)
        let rank = ((p as usize * values.len()) + 99) / 100;
        prop_assert_eq!(nearest_rank(&values, p as f64).unwrap(), sorted[rank.max(1) - 1]);
    }

    #[test]
    fn thresholds_cover_at_least_the_percentile(seed in 0u64..500, classes in 1usize..5, per in 1usize..300) {
        let mut r = rng(seed);
        let n = classes * per;
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let data: Vec<f64> = (0..n * 4).map(|_| r.random_range(-2.0..2.0)).collect();
        let avs = Tensor::from_vec(&[n, 4], data).unwrap();
        let mavs = compute_mavs(&avs, &labels, classes).unwrap();
        let t = estimate_thresholds(&avs, &labels, &mavs, 99.0, DistanceKind::Euclidean).unwrap();
        for c in 0..classes {
            let (inside, total) = labels.iter().enumerate().filter(|(_, &l)| l == c).fold((0, 0), |(a, b), (i, _)| {
                let d = DistanceKind::Euclidean.distance(avs.row(i), &mavs[c].vector);
                (a + usize::from(d <= t.thresholds[c]), b + 1)
            });
            prop_assert!(inside as f64 >= 0.99 * total as f64);
        }
    }
}
