#![allow(dead_code)]

use kinetrace::nn::{Layer, Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn random_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - n| / max(|a| + |n|, 1e-12)` over whole vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    diff / scale.max(1e-12)
}

fn weighted_output(layer: &mut dyn Layer, x: &Tensor, weights: &Tensor, mode: Mode) -> f64 {
    let y = layer.forward(x, mode).unwrap();
    y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

/// Worst relative error between backward and central differences of the
/// scalar `sum(w * layer(x))`, over the input and every trainable parameter.
pub fn gradcheck(layer: &mut dyn Layer, x: &Tensor, mode: Mode, seed: u64) -> f64 {
    let mut r = rng(seed);
    let y = layer.forward(x, mode).unwrap();
    let w = random_tensor(y.shape(), 1.0, &mut r);
    for p in layer.params_mut() {
        p.grad.fill(0.0);
    }
    let dx = layer.backward(&w).unwrap();
    let param_grads: Vec<Vec<f64>> = layer.params().iter().map(|p| p.grad.data().to_vec()).collect();

    let mut worst = 0.0f64;
    let mut xp = x.clone();
    let mut numeric = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + FD_STEP;
        let plus = weighted_output(layer, &xp, &w, mode);
        xp.data_mut()[i] = orig - FD_STEP;
        let minus = weighted_output(layer, &xp, &w, mode);
        xp.data_mut()[i] = orig;
        numeric[i] = (plus - minus) / (2.0 * FD_STEP);
    }
    worst = worst.max(relative_error(dx.data(), &numeric));

    let count = layer.params().len();
    for k in 0..count {
        if !layer.params()[k].trainable {
            continue;
        }
        let len = layer.params()[k].value.len();
        let mut numeric = vec![0.0; len];
        for i in 0..len {
            let orig = layer.params()[k].value.data()[i];
            layer.params_mut()[k].value.data_mut()[i] = orig + FD_STEP;
            let plus = weighted_output(layer, x, &w, mode);
            layer.params_mut()[k].value.data_mut()[i] = orig - FD_STEP;
            let minus = weighted_output(layer, x, &w, mode);
            layer.params_mut()[k].value.data_mut()[i] = orig;
            numeric[i] = (plus - minus) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(&param_grads[k], &numeric));
    }
    worst
}

/// Gradient check for dropout. Each evaluation uses a fresh layer with the
/// same seed, so every forward pass draws the identical mask and the layer
/// is a fixed linear map.
pub fn dropout_gradcheck(rate: f64, shape: &[usize], seed: u64) -> f64 {
    use kinetrace::nn::Dropout;
    let mut r = rng(seed);
    let x = random_tensor(shape, 1.0, &mut r);
    let fresh = || Dropout::new(rate, seed).unwrap();
    let mut layer = fresh();
    let y = layer.forward(&x, Mode::Train).unwrap();
    let w = random_tensor(y.shape(), 1.0, &mut r);
    let dx = layer.backward(&w).unwrap();
    let value = |x: &Tensor| -> f64 {
        let y = fresh().forward(x, Mode::Train).unwrap();
        y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    };
    let mut xp = x.clone();
    let mut numeric = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + FD_STEP;
        let plus = value(&xp);
        xp.data_mut()[i] = orig - FD_STEP;
        let minus = value(&xp);
        xp.data_mut()[i] = orig;
        numeric[i] = (plus - minus) / (2.0 * FD_STEP);
    }
    relative_error(dx.data(), &numeric)
}
