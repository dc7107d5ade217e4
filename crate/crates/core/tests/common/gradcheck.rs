//! Central finite-difference checks of every analytic gradient, in `f64`.

use rand::Rng as _;
use wandernet::nn::layers::{self, InputGrad};
use wandernet::nn::{Architecture, CnnModel, Mode, Tensor};
use wandernet::rng::{self, Rng};

pub const STEP: f64 = 1e-5;
pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|)`, with differences below 1e-9 on both sides of
/// zero counted as exact.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff < 1e-9 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

/// Central differences of `f` around every entry of `x`.
pub fn numeric(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let v = x.data()[i];
            probe.data_mut()[i] = v + STEP;
            let up = f(&probe);
            probe.data_mut()[i] = v - STEP;
            let down = f(&probe);
            probe.data_mut()[i] = v;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

pub fn worst(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Worst relative error between `analytic` and the central difference of
/// `f` around every entry of `x`.
pub fn check(x: &Tensor<f64>, analytic: &[f64], f: impl FnMut(&Tensor<f64>) -> f64) -> f64 {
    worst(analytic, &numeric(x, f))
}

fn random(shape: &[usize], r: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

/// Values bounded away from zero, so ReLU kinks stay out of reach of the probe.
fn off_kink(shape: &[usize], r: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = r.gen_range(0.05..1.0);
        if r.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn project(y: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
    y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

pub fn conv2d() -> f64 {
    let mut r = rng::stream(11, &[]);
    let x = random(&[2, 6, 6, 1], &mut r);
    let k = random(&[3, 3, 1, 4], &mut r);
    let b = random(&[4], &mut r);
    let proj = random(&[2, 4, 4, 4], &mut r);
    let g = layers::conv2d_backward(&x, &k, &proj, true).unwrap();
    let loss =
        |x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>| project(&layers::conv2d(x, k, b.data()).unwrap(), &proj);
    [
        check(&x, g.input.unwrap().data(), |x| loss(x, &k, &b)),
        check(&k, g.filters.data(), |k| loss(&x, k, &b)),
        check(&b, &g.bias, |b| loss(&x, &k, b)),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

pub fn maxpool() -> f64 {
    let mut r = rng::stream(12, &[]);
    // A shuffled grid with spacing 0.01 keeps every window free of ties.
    let mut vals: Vec<f64> = (0..48).map(|i| i as f64 * 0.01).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, r.gen_range(0..=i));
    }
    let x = Tensor::new(vec![1, 4, 4, 3], vals).unwrap();
    let proj = random(&[1, 2, 2, 3], &mut r);
    let pooled = layers::maxpool2x2(&x).unwrap();
    let dx = layers::maxpool2x2_backward(&proj, &pooled.argmax, x.shape()).unwrap();
    check(&x, dx.data(), |x| {
        project(&layers::maxpool2x2(x).unwrap().output, &proj)
    })
}

pub fn dense() -> f64 {
    let mut r = rng::stream(13, &[]);
    let x = random(&[3, 5], &mut r);
    let w = random(&[5, 4], &mut r);
    let b = random(&[4], &mut r);
    let proj = random(&[3, 4], &mut r);
    let g = layers::dense_backward(&x, &w, &proj, InputGrad::All).unwrap();
    let loss =
        |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| project(&layers::dense(x, w, b.data()).unwrap(), &proj);
    [
        check(&x, g.input.unwrap().data(), |x| loss(x, &w, &b)),
        check(&w, g.weights.data(), |w| loss(&x, w, &b)),
        check(&b, &g.bias, |b| loss(&x, &w, b)),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

pub fn relu() -> f64 {
    let mut r = rng::stream(14, &[]);
    let x = off_kink(&[40], &mut r);
    let proj = random(&[40], &mut r);
    let dx = layers::relu_backward(&x, &proj);
    check(&x, dx.data(), |x| project(&layers::relu(x), &proj))
}

pub fn sigmoid() -> f64 {
    let mut r = rng::stream(15, &[]);
    let x = Tensor::from_fn(&[40], |_| r.gen_range(-6.0..6.0));
    let proj = random(&[40], &mut r);
    let dx = layers::sigmoid_backward(&layers::sigmoid(&x), &proj);
    check(&x, dx.data(), |x| project(&layers::sigmoid(x), &proj))
}

pub fn dropout() -> f64 {
    let mut r = rng::stream(16, &[]);
    let x = random(&[4, 10], &mut r);
    let proj = random(&[4, 10], &mut r);
    let run = |x: &Tensor<f64>| layers::dropout(x, 0.25, Mode::Train, &mut rng::stream(17, &[])).unwrap();
    let (_, mask) = run(&x);
    let dx = layers::dropout_backward(&proj, mask.as_deref());
    check(&x, dx.data(), |x| project(&run(x).0, &proj))
}

pub fn bce() -> f64 {
    let mut r = rng::stream(18, &[]);
    let p = Tensor::from_fn(&[16], |_| r.gen_range(0.02..0.98));
    let y: Vec<f64> = (0..16).map(|i| (i % 2) as f64).collect();
    let (_, grad) = layers::bce_loss(p.data(), &y).unwrap();
    check(&p, &grad, |p| layers::bce_loss(p.data(), &y).unwrap().0)
}

/// Every per-layer check, by name.
pub fn layer_checks() -> Vec<(&'static str, f64)> {
    vec![
        ("conv2d", conv2d()),
        ("maxpool2x2", maxpool()),
        ("dense", dense()),
        ("relu", relu()),
        ("sigmoid", sigmoid()),
        ("dropout", dropout()),
        ("bce", bce()),
    ]
}

pub fn small_arch() -> Architecture {
    Architecture {
        input_side: 16,
        fc1_units: 8,
        fc2_units: 4,
        ..Architecture::default()
    }
}

/// Analytic and numeric gradients of the whole model on 16×16 inputs with
/// sparse strokes, non-zero biases of both signs, and a fixed dropout mask,
/// one pair per parameter tensor.
pub fn model_gradients(mode: Mode) -> Vec<(Vec<f64>, Vec<f64>)> {
    let arch = small_arch();
    let mut m = CnnModel::<f64>::new(arch.clone(), 21).unwrap();
    let mut r = rng::stream(22, &[]);
    for t in [
        &mut m.params.conv_b,
        &mut m.params.fc1_b,
        &mut m.params.fc2_b,
        &mut m.params.fc3_b,
    ] {
        t.data_mut().iter_mut().for_each(|v| *v = r.gen_range(-0.2..0.2));
    }
    let n = 4;
    let s = arch.input_side;
    let x = Tensor::from_fn(
        &[n, s, s, 1],
        |_| if r.gen_bool(0.1) { r.gen_range(0.1..1.0) } else { 0.0 },
    );
    let y: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();

    let loss_of = |m: &CnnModel<f64>| m.loss_and_grad(&x, &y, mode, &mut rng::stream(23, &[])).unwrap();
    let base = loss_of(&m);
    let grads = base.grads.tensors().map(|t| t.data().to_vec());
    grads
        .into_iter()
        .enumerate()
        .map(|(slot, analytic)| {
            let x0 = m.params.tensors()[slot].clone();
            let mut probe = m.clone();
            let num = numeric(&x0, |w| {
                *probe.params.tensors_mut()[slot] = w.clone();
                loss_of(&probe).loss
            });
            (analytic, num)
        })
        .collect()
}

/// Worst error over all parameters of [`model_gradients`].
pub fn model(mode: Mode) -> f64 {
    model_gradients(mode)
        .iter()
        .map(|(a, n)| worst(a, n))
        .fold(0.0, f64::max)
}
