//! Analytic backward passes against central finite differences in `f64`.

mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xfmr_tl::nn::{BatchNorm, Layer, LayerStack, Linear};

#[test]
fn linear_layer() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (i, o, b) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=16));
        let stack = LayerStack {
            layers: vec![Layer::Linear(Linear::init(i, o, &mut rng))],
        };
        let x = random(&mut rng, b, i);
        let w = random(&mut rng, b, o);
        let e = check_stack(stack, &x, &w);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn batch_norm_layer() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (d, b) = (rng.random_range(1..=8), rng.random_range(2..=16));
        let mut stack = LayerStack {
            layers: vec![Layer::BatchNorm(BatchNorm::new(d, 0.1, 1e-5))],
        };
        perturb_bn(&mut stack, &mut rng);
        let x = random(&mut rng, b, d);
        let w = random(&mut rng, b, d);
        let e = check_stack(stack, &x, &w);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn relu_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let stack = LayerStack {
        layers: vec![Layer::Relu],
    };
    // Keep inputs away from the kink.
    let x = random(&mut rng, 16, 8).mapv(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let w = random(&mut rng, 16, 8);
    let e = check_stack(stack, &x, &w);
    assert!(e < TOL, "{e}");
}

#[test]
fn three_layer_stacks() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let dims: Vec<usize> = (0..4).map(|_| rng.random_range(2..=8)).collect();
        let mut stack = LayerStack::mlp(&dims, 0.1, 1e-5, &mut rng);
        perturb_bn(&mut stack, &mut rng);
        let b = rng.random_range(4..=16);
        let x = random(&mut rng, b, dims[0]);
        let w = random(&mut rng, b, dims[3]);
        let e = check_stack(stack, &x, &w);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn composite_loss_through_both_nets() {
    for seed in 0..3 {
        let worst = composite_worst(seed);
        assert!(worst < TOL, "seed {seed}: {worst}");
    }
}

#[test]
fn duplicated_rows_match_single_row_without_batch_norm() {
    // Mean-reduced loss: a batch of k copies of one row has the same gradient
    // as that row alone.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let stack = LayerStack {
        layers: vec![
            Layer::Linear(Linear::<f64>::init(4, 6, &mut rng)),
            Layer::Relu,
            Layer::Linear(Linear::init(6, 3, &mut rng)),
        ],
    };
    let row = random(&mut rng, 1, 4);
    let target = random(&mut rng, 1, 3);
    let grad_for = |k: usize| {
        let x = ndarray::concatenate(ndarray::Axis(0), &vec![row.view(); k]).unwrap();
        let t = ndarray::concatenate(ndarray::Axis(0), &vec![target.view(); k]).unwrap();
        let (out, cache) = stack.clone().forward_train(&x);
        let d = (&out - &t) * (2.0 / out.len() as f64);
        let (g, _) = stack.backward(&cache, d);
        g.slices().iter().flat_map(|s| s.to_vec()).collect::<Vec<f64>>()
    };
    let one = grad_for(1);
    let four = grad_for(4);
    for (a, b) in one.iter().zip(&four) {
        assert!((a - b).abs() < 1e-12);
    }
}
