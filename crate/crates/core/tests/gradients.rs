use osr_core::gradcheck::{check_superlative, gradcheck_suite, GradcheckOptions};
use osr_core::superlative::LossConfig;

#[test]
fn every_component_passes_finite_differences() {
    let outcomes = gradcheck_suite(&GradcheckOptions::default()).unwrap();
    for o in &outcomes {
        println!("{:<24} {:>3} instances  max rel err {:.3e}", o.component, o.instances, o.max_rel_error);
    }
    let kinds = ["dense", "conv2d", "maxpool2", "relu", "dropout", "batchnorm", "softmax"];
    for kind in kinds {
        assert_eq!(outcomes.iter().filter(|o| o.component == kind).count(), 1);
    }
    assert!(outcomes.iter().all(|o| o.passed(1e-4)));
}

#[test]
fn superlative_gradient_up_to_six_classes_and_width_32() {
    let opts = GradcheckOptions::default();
    for (seed, classes, width) in [(1, 6, 32), (2, 6, 3), (3, 4, 17), (4, 2, 32), (5, 5, 9)] {
        let err = check_superlative(classes, width, 4, &LossConfig::default(), &opts, seed).unwrap();
        assert!(err < 1e-4, "K={classes} d={width}: {err}");
    }
}
