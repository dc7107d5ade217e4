mod common;

use common::gradcheck::{self as gc, LAYER_TOLERANCE, MODEL_TOLERANCE};
use wandernet::nn::Mode;

fn assert_within(name: &str, err: f64, tol: f64) {
    assert!(err <= tol, "{name}: worst relative error {err:e} exceeds {tol:e}");
}

#[test]
fn conv2d_gradients() {
    assert_within("conv2d", gc::conv2d(), LAYER_TOLERANCE);
}

#[test]
fn maxpool_gradients() {
    assert_within("maxpool", gc::maxpool(), LAYER_TOLERANCE);
}

#[test]
fn dense_gradients() {
    assert_within("dense", gc::dense(), LAYER_TOLERANCE);
}

#[test]
fn activation_gradients() {
    assert_within("relu", gc::relu(), LAYER_TOLERANCE);
    assert_within("sigmoid", gc::sigmoid(), LAYER_TOLERANCE);
}

#[test]
fn dropout_gradient_with_fixed_mask() {
    assert_within("dropout", gc::dropout(), LAYER_TOLERANCE);
}

#[test]
fn bce_gradient() {
    assert_within("bce", gc::bce(), LAYER_TOLERANCE);
}

#[test]
fn whole_model_eval_mode() {
    assert_within("model/eval", gc::model(Mode::Eval), MODEL_TOLERANCE);
}

#[test]
fn whole_model_train_mode() {
    assert_within("model/train", gc::model(Mode::Train), MODEL_TOLERANCE);
}

#[test]
fn one_percent_errors_are_detected() {
    for (slot, (analytic, numeric)) in gc::model_gradients(Mode::Eval).iter().enumerate() {
        let skewed: Vec<f64> = analytic.iter().map(|g| g * 1.01).collect();
        let err = gc::worst(&skewed, numeric);
        assert!(err > 5e-3, "slot {slot}: a 1% skew only shows as {err:e}");
    }
}
