//! Dense layers with hand-written backward passes.

use std::fmt::Debug;

use ndarray::{Array1, Array2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};
use rand::Rng;

/// Floating-point element type for layer arithmetic (`f32` for training,
/// `f64` for gradient checking).
pub trait Scalar:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + Debug
    + Default
    + Send
    + Sync
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    /// `out × in`.
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Linear<F> {
    /// Uniform init in `±sqrt(1/fan_in)` for weights and biases.
    pub fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / input as f64).sqrt();
        let mut draw = || F::lit(rng.random_range(-bound..bound));
        Self {
            weight: Array2::from_shape_simple_fn((output, input), &mut draw),
            bias: Array1::from_shape_simple_fn(output, &mut draw),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let mut out = x.dot(&self.weight.t());
        out += &self.bias;
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub momentum: F,
    pub eps: F,
}

impl<F: Scalar> BatchNorm<F> {
    pub fn new(dim: usize, momentum: f64, eps: f64) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
            momentum: F::lit(momentum),
            eps: F::lit(eps),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward_eval(&self, x: &Array2<F>) -> Array2<F> {
        let scale = Zip::from(&self.gamma)
            .and(&self.running_var)
            .map_collect(|&g, &v| g / (v + self.eps).sqrt());
        let shift = Zip::from(&self.beta)
            .and(&self.running_mean)
            .and(&scale)
            .map_collect(|&b, &m, &s| b - m * s);
        let mut out = x * &scale;
        out += &shift;
        out
    }

    /// Normalizes with batch statistics and folds them into the running
    /// estimates. Returns the output, the normalized activations and `1/σ`.
    pub fn forward_train(&mut self, x: &Array2<F>) -> (Array2<F>, Array2<F>, Array1<F>) {
        let n = x.nrows();
        let nf = F::from_usize(n).unwrap();
        let mean = x.sum_axis(Axis(0)) / nf;
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / nf;
        let inv_std = var.mapv(|v| (v + self.eps).sqrt().recip());
        let xhat = &centered * &inv_std;
        let mut out = &xhat * &self.gamma;
        out += &self.beta;

        let m = self.momentum;
        let unbiased = if n > 1 {
            F::from_usize(n).unwrap() / F::from_usize(n - 1).unwrap()
        } else {
            F::one()
        };
        Zip::from(&mut self.running_mean)
            .and(&mean)
            .for_each(|r, &b| *r = (F::one() - m) * *r + m * b);
        Zip::from(&mut self.running_var)
            .and(&var)
            .for_each(|r, &b| *r = (F::one() - m) * *r + m * b * unbiased);
        (out, xhat, inv_std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<F> {
    Linear(Linear<F>),
    BatchNorm(BatchNorm<F>),
    Relu,
}

/// What each layer keeps from a train-mode forward pass.
#[derive(Debug, Clone)]
enum Saved<F> {
    Input(Array2<F>),
    Norm { xhat: Array2<F>, inv_std: Array1<F> },
    Mask(Array2<F>),
}

#[derive(Debug, Clone)]
pub struct StackCache<F> {
    saved: Vec<Saved<F>>,
}

/// Parameter gradients, one entry per layer (`None` for ReLU).
#[derive(Debug, Clone, PartialEq)]
pub struct StackGrads<F> {
    pub layers: Vec<Option<(Array2<F>, Array1<F>)>>,
}

impl<F: Scalar> StackGrads<F> {
    /// Flat views in the same order as [`LayerStack::params_mut`].
    pub fn slices(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for (a, b) in self.layers.iter().flatten() {
            out.push(a.as_slice().expect("contiguous"));
            out.push(b.as_slice().expect("contiguous"));
        }
        out
    }
}

/// An ordered sequence of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack<F> {
    pub layers: Vec<Layer<F>>,
}

impl<F: Scalar> LayerStack<F> {
    /// `dims.len() - 1` linear layers; every linear layer but the last is
    /// followed by batch norm and ReLU.
    pub fn mlp(dims: &[usize], momentum: f64, eps: f64, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::new();
        let n = dims.len() - 1;
        for (i, pair) in dims.windows(2).enumerate() {
            layers.push(Layer::Linear(Linear::init(pair[0], pair[1], rng)));
            if i + 1 < n {
                layers.push(Layer::BatchNorm(BatchNorm::new(pair[1], momentum, eps)));
                layers.push(Layer::Relu);
            }
        }
        Self { layers }
    }

    pub fn linear_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::Linear(_)))
            .count()
    }

    pub fn in_dim(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::Linear(lin) => Some(lin.in_dim()),
            _ => None,
        })
    }

    pub fn out_dim(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Linear(lin) => Some(lin.out_dim()),
            _ => None,
        })
    }

    pub fn forward_eval(&self, x: &Array2<F>) -> Array2<F> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Linear(l) => l.forward(&h),
                Layer::BatchNorm(bn) => bn.forward_eval(&h),
                Layer::Relu => h.mapv_into(|v| v.max(F::zero())),
            };
        }
        h
    }

    pub fn forward_train(&mut self, x: &Array2<F>) -> (Array2<F>, StackCache<F>) {
        let mut saved = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = match layer {
                Layer::Linear(l) => {
                    let out = l.forward(&h);
                    saved.push(Saved::Input(h));
                    out
                }
                Layer::BatchNorm(bn) => {
                    let (out, xhat, inv_std) = bn.forward_train(&h);
                    saved.push(Saved::Norm { xhat, inv_std });
                    out
                }
                Layer::Relu => {
                    let mask = h.mapv(|v| if v > F::zero() { F::one() } else { F::zero() });
                    let out = &h * &mask;
                    saved.push(Saved::Mask(mask));
                    out
                }
            };
        }
        (h, StackCache { saved })
    }

    /// Backpropagates `d_out` through the cached pass. Returns parameter
    /// gradients and the gradient with respect to the stack input.
    pub fn backward(&self, cache: &StackCache<F>, d_out: Array2<F>) -> (StackGrads<F>, Array2<F>) {
        let mut grads = vec![None; self.layers.len()];
        let mut d = d_out;
        for (i, (layer, saved)) in self.layers.iter().zip(&cache.saved).enumerate().rev() {
            d = match (layer, saved) {
                (Layer::Linear(l), Saved::Input(x)) => {
                    let dw = d.t().dot(x);
                    let db = d.sum_axis(Axis(0));
                    let dx = d.dot(&l.weight);
                    grads[i] = Some((dw, db));
                    dx
                }
                (Layer::BatchNorm(bn), Saved::Norm { xhat, inv_std }) => {
                    let nf = F::from_usize(d.nrows()).unwrap();
                    let dgamma = (&d * xhat).sum_axis(Axis(0));
                    let dbeta = d.sum_axis(Axis(0));
                    // dx = inv_std/N * (N*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat)),
                    // with dxhat = d*gamma.
                    let g_sum = &dbeta * &bn.gamma;
                    let gx_sum = &dgamma * &bn.gamma;
                    let mut dx = &d * &bn.gamma;
                    Zip::from(dx.rows_mut()).and(xhat.rows()).for_each(|mut row, xh| {
                        Zip::from(&mut row)
                            .and(&xh)
                            .and(&g_sum)
                            .and(&gx_sum)
                            .and(inv_std)
                            .for_each(|v, &x, &gs, &gxs, &is| {
                                *v = (*v * nf - gs - x * gxs) * is / nf;
                            });
                    });
                    grads[i] = Some((dgamma.insert_axis(Axis(0)), dbeta));
                    dx
                }
                (Layer::Relu, Saved::Mask(mask)) => d * mask,
                _ => unreachable!("cache does not match layer sequence"),
            };
        }
        (StackGrads { layers: grads }, d)
    }

    /// Trainable parameters as flat mutable slices: `(weight, bias)` per linear
    /// layer and `(gamma, beta)` per batch-norm layer.
    pub fn params_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Linear(l) => {
                    out.push(l.weight.as_slice_mut().expect("contiguous"));
                    out.push(l.bias.as_slice_mut().expect("contiguous"));
                }
                Layer::BatchNorm(bn) => {
                    out.push(bn.gamma.as_slice_mut().expect("contiguous"));
                    out.push(bn.beta.as_slice_mut().expect("contiguous"));
                }
                Layer::Relu => {}
            }
        }
        out
    }

    /// Every stored tensor (parameters then running statistics per layer), for serialization.
    pub fn tensors(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Linear(l) => {
                    out.push(l.weight.as_slice().expect("contiguous"));
                    out.push(l.bias.as_slice().expect("contiguous"));
                }
                Layer::BatchNorm(bn) => {
                    out.push(bn.gamma.as_slice().expect("contiguous"));
                    out.push(bn.beta.as_slice().expect("contiguous"));
                    out.push(bn.running_mean.as_slice().expect("contiguous"));
                    out.push(bn.running_var.as_slice().expect("contiguous"));
                }
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Linear(l) => {
                    out.push(l.weight.as_slice_mut().expect("contiguous"));
                    out.push(l.bias.as_slice_mut().expect("contiguous"));
                }
                Layer::BatchNorm(bn) => {
                    out.push(bn.gamma.as_slice_mut().expect("contiguous"));
                    out.push(bn.beta.as_slice_mut().expect("contiguous"));
                    out.push(bn.running_mean.as_slice_mut().expect("contiguous"));
                    out.push(bn.running_var.as_slice_mut().expect("contiguous"));
                }
                Layer::Relu => {}
            }
        }
        out
    }

    /// Converts element type, e.g. to run a gradient check in `f64`.
    pub fn cast<G: Scalar>(&self) -> LayerStack<G> {
        let c = |a: &Array1<F>| a.mapv(|v| G::from(v).unwrap());
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Linear(lin) => Layer::Linear(Linear {
                    weight: lin.weight.mapv(|v| G::from(v).unwrap()),
                    bias: c(&lin.bias),
                }),
                Layer::BatchNorm(bn) => Layer::BatchNorm(BatchNorm {
                    gamma: c(&bn.gamma),
                    beta: c(&bn.beta),
                    running_mean: c(&bn.running_mean),
                    running_var: c(&bn.running_var),
                    momentum: G::from(bn.momentum).unwrap(),
                    eps: G::from(bn.eps).unwrap(),
                }),
                Layer::Relu => Layer::Relu,
            })
            .collect();
        LayerStack { layers }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_bounds_and_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l: Linear<f32> = Linear::init(16, 4, &mut rng);
        assert_eq!(l.weight.dim(), (4, 16));
        assert!(l.weight.iter().chain(&l.bias).all(|v| v.abs() <= 0.25));
        let s: LayerStack<f32> = LayerStack::mlp(&[4, 8, 8, 5], 0.1, 1e-5, &mut rng);
        assert_eq!(s.linear_count(), 3);
        assert_eq!(s.layers.len(), 7);
        assert_eq!((s.in_dim(), s.out_dim()), (Some(4), Some(5)));
    }

    #[test]
    fn batch_norm_train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_simple_fn((32, 6), || rng.random_range(-5.0..20.0f64));
        let mut bn = BatchNorm::<f64>::new(6, 0.1, 1e-5);
        let (out, _, _) = bn.forward_train(&x);
        for col in out.columns() {
            let m = col.mean().unwrap();
            let v = col.mapv(|c| (c - m) * (c - m)).mean().unwrap();
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-4);
        }
        assert!(bn.running_var.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn identical_rows_normalize_to_zero() {
        let x = Array2::from_elem((8, 3), 2.5f32);
        let mut bn = BatchNorm::<f32>::new(3, 0.1, 1e-5);
        let (_, xhat, _) = bn.forward_train(&x);
        assert!(xhat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_uses_running_stats() {
        let mut bn = BatchNorm::<f64>::new(2, 0.1, 0.0);
        bn.running_mean = ndarray::array![1.0, -1.0];
        bn.running_var = ndarray::array![4.0, 1.0];
        let x = ndarray::array![[3.0, 0.0]];
        assert_eq!(bn.forward_eval(&x), ndarray::array![[1.0, 1.0]]);
    }
}
