mod support;

use support::{layer_gradient_errors, network_gradient_error};

#[test]
fn every_layer_matches_finite_differences() {
    for (layer, worst) in layer_gradient_errors(11, 25) {
        assert!(worst < 1e-4, "{layer}: worst relative error {worst:e}");
    }
}

#[test]
fn whole_network_matches_finite_differences() {
    let worst = network_gradient_error(5, 6);
    assert!(worst < 1e-3, "worst relative error {worst:e}");
}
