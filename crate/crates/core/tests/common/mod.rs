#![allow(dead_code, unused_imports, clippy::needless_range_loop)]

//! Central finite differences in `f64` against the analytic backward passes.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xfmr_tl::nn::{
    loss, Architecture, BatchNorm, Layer, LayerStack, Linear, SynthesisModel,
};

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Absolute floor on the relative-error denominator, so that gradients that
/// are zero up to rounding do not divide by ~0.
pub const FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

pub fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.5..1.5))
}

/// Scalar objective `sum(out * weights)` for a bare stack.
pub fn stack_objective(stack: &LayerStack<f64>, x: &Array2<f64>, w: &Array2<f64>) -> f64 {
    let (out, _) = stack.clone().forward_train(x);
    (&out * w).sum()
}

pub fn check_stack(stack: LayerStack<f64>, x: &Array2<f64>, w: &Array2<f64>) -> f64 {
    let (_, cache) = stack.clone().forward_train(x);
    let (grads, dx) = stack.backward(&cache, w.clone());
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let mut worst: f64 = 0.0;

    let n_tensors = analytic.len();
    for t in 0..n_tensors {
        for i in 0..analytic[t].len() {
            let mut plus = stack.clone();
            plus.params_mut()[t][i] += STEP;
            let mut minus = stack.clone();
            minus.params_mut()[t][i] -= STEP;
            let fd = (stack_objective(&plus, x, w) - stack_objective(&minus, x, w)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[t][i], fd));
        }
    }
    for r in 0..x.nrows() {
        for c in 0..x.ncols() {
            let mut xp = x.clone();
            xp[[r, c]] += STEP;
            let mut xm = x.clone();
            xm[[r, c]] -= STEP;
            let fd = (stack_objective(&stack, &xp, w) - stack_objective(&stack, &xm, w)) / (2.0 * STEP);
            worst = worst.max(rel_err(dx[[r, c]], fd));
        }
    }
    worst
}

pub fn perturb_bn(stack: &mut LayerStack<f64>, rng: &mut ChaCha8Rng) {
    for layer in &mut stack.layers {
        if let Layer::BatchNorm(bn) = layer {
            bn.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
            bn.beta.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
    }
}

pub fn model_loss(m: &SynthesisModel<f64>, x: &Array2<f64>, y: &Array2<f64>, v: &Array2<f64>, tau: f64) -> f64 {
    let pass = m.clone().forward_train(x).unwrap();
    loss(&pass.y_hat, &pass.v_hat, y, v, tau)
}

/// Worst relative error of the composite loss gradient over every parameter
/// of a width-8 model on a batch of 16.
pub fn composite_worst(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
    let model: SynthesisModel<f64> = SynthesisModel::new(Architecture::with_hidden(8), &mut rng);
    let b = 16;
    let x = random(&mut rng, b, 4);
    let y = random(&mut rng, b, 5);
    let v = random(&mut rng, b, 3);
    let tau = 0.5;

    let pass = model.clone().forward_train(&x).unwrap();
    let (grads, l) = model.backward(&pass, &y, &v, tau).unwrap();
    assert!((l - model_loss(&model, &x, &y, &v, tau)).abs() < 1e-12);
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (t, tensor) in analytic.iter().enumerate() {
        for (i, &a) in tensor.iter().enumerate() {
            let mut plus = model.clone();
            plus.params_mut()[t][i] += STEP;
            let mut minus = model.clone();
            minus.params_mut()[t][i] -= STEP;
            let fd = (model_loss(&plus, &x, &y, &v, tau) - model_loss(&minus, &x, &y, &v, tau)) / (2.0 * STEP);
            worst = worst.max(rel_err(a, fd));
        }
    }
    worst
}
