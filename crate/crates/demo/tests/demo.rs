use osr_demo::{openmax_probabilities, Explorer};

#[test]
fn descent_lowers_the_loss_and_views_have_matching_sizes() {
    let mut e = Explorer::build(4, 15, 3.0, 2.0, 1).unwrap();
    let before = e.terms()[3];
    e.descend(20, 0.02).unwrap();
    let after = e.terms();
    assert!(after[3] < before, "{before} -> {}", after[3]);
    assert_eq!(after[3], after[0] - after[1] + after[2]);
    assert_eq!(e.means().len(), 12);
    assert_eq!(e.samples().len(), 3 * 60);
    assert_eq!(e.labels().len(), 60);
}

#[test]
fn explorer_rejects_bad_gamma() {
    assert!(Explorer::build(3, 5, 1.0, 0.5, 0).is_err());
}

#[test]
fn openmax_moves_mass_to_unknown_as_distance_grows() {
    let logits = [3.0, 1.0, 0.5];
    let near = openmax_probabilities(&logits, &[0.1, 1.0, 1.0], 2.0, 1.0, 2).unwrap();
    let far = openmax_probabilities(&logits, &[4.0, 1.0, 1.0], 2.0, 1.0, 2).unwrap();
    assert_eq!(near.len(), 4);
    assert!((far.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(far[3] > near[3]);
}
