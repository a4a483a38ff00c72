use ndarray::{Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{LayerStack, Scalar, StackCache, StackGrads};
use crate::error::{Error, Result};
use crate::grid::NormStats;

/// Shape of the two cascaded networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub y_dim: usize,
    pub v_dim: usize,
    pub hidden: usize,
    /// Linear layers in the circuit net.
    pub circuit_layers: usize,
    /// Linear layers in the physical net.
    pub physical_layers: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self::with_hidden(512)
    }
}

impl Architecture {
    pub fn with_hidden(hidden: usize) -> Self {
        Self {
            input_dim: 4,
            y_dim: 5,
            v_dim: 3,
            hidden,
            circuit_layers: 7,
            physical_layers: 3,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    fn dims(input: usize, hidden: usize, output: usize, linear: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(std::iter::repeat_n(hidden, linear - 1));
        d.push(output);
        d
    }

    pub fn circuit_dims(&self) -> Vec<usize> {
        Self::dims(self.input_dim, self.hidden, self.y_dim, self.circuit_layers)
    }

    pub fn physical_dims(&self) -> Vec<usize> {
        Self::dims(self.y_dim, self.hidden, self.v_dim, self.physical_layers)
    }

    /// Human-readable list of differing fields.
    pub fn diff(&self, other: &Self) -> Vec<String> {
        let mut out = Vec::new();
        macro_rules! cmp {
            ($($f:ident),*) => {$(
                if self.$f != other.$f {
                    out.push(format!("{}: {} vs {}", stringify!($f), self.$f, other.$f));
                }
            )*};
        }
        cmp!(input_dim, y_dim, v_dim, hidden, circuit_layers, physical_layers, bn_momentum, bn_eps);
        out
    }

    pub fn ensure_matches(&self, other: &Self) -> Result<()> {
        let d = self.diff(other);
        if d.is_empty() {
            Ok(())
        } else {
            Err(Error::Architecture(d.join(", ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Circuit net `x -> y` followed by physical net `y -> v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisModel<F> {
    pub arch: Architecture,
    pub circuit: LayerStack<F>,
    pub physical: LayerStack<F>,
    pub norm_stats: Option<NormStats>,
}

/// Everything a train-mode forward pass leaves for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<F> {
    pub y_hat: Array2<F>,
    pub v_hat: Array2<F>,
    circuit: StackCache<F>,
    physical: StackCache<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<F> {
    pub circuit: StackGrads<F>,
    pub physical: StackGrads<F>,
}

impl<F: Scalar> ModelGrads<F> {
    pub fn slices(&self) -> Vec<&[F]> {
        let mut s = self.circuit.slices();
        s.extend(self.physical.slices());
        s
    }
}

/// `tau * mean((y - y_hat)^2) + mean((v - v_hat)^2)`, means over rows and columns.
pub fn loss<F: Scalar>(
    y_hat: &Array2<F>,
    v_hat: &Array2<F>,
    y: &Array2<F>,
    v: &Array2<F>,
    tau: F,
) -> F {
    tau * mse(y_hat, y) + mse(v_hat, v)
}

fn mse<F: Scalar>(a: &Array2<F>, b: &Array2<F>) -> F {
    let mut s = F::zero();
    Zip::from(a).and(b).for_each(|&p, &q| s += (p - q) * (p - q));
    s / F::from_usize(a.len()).unwrap()
}

impl<F: Scalar> SynthesisModel<F> {
    pub fn new(arch: Architecture, rng: &mut impl Rng) -> Self {
        let circuit = LayerStack::mlp(&arch.circuit_dims(), arch.bn_momentum, arch.bn_eps, rng);
        let physical = LayerStack::mlp(&arch.physical_dims(), arch.bn_momentum, arch.bn_eps, rng);
        Self {
            arch,
            circuit,
            physical,
            norm_stats: None,
        }
    }

    fn check_input(&self, x: &Array2<F>) -> Result<()> {
        if x.ncols() != self.arch.input_dim {
            return Err(Error::Dimension(format!(
                "expected {} input columns, got {}",
                self.arch.input_dim,
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Pure inference with running batch-norm statistics.
    pub fn forward_eval(&self, x: &Array2<F>) -> Result<(Array2<F>, Array2<F>)> {
        self.check_input(x)?;
        let y_hat = self.circuit.forward_eval(x);
        let v_hat = self.physical.forward_eval(&y_hat);
        Ok((y_hat, v_hat))
    }

    /// Batch-statistics forward pass; updates running statistics.
    pub fn forward_train(&mut self, x: &Array2<F>) -> Result<ForwardPass<F>> {
        self.check_input(x)?;
        if x.nrows() < 2 {
            return Err(Error::Dimension(
                "train-mode forward needs at least 2 rows".into(),
            ));
        }
        let (y_hat, circuit) = self.circuit.forward_train(x);
        let (v_hat, physical) = self.physical.forward_train(&y_hat);
        Ok(ForwardPass {
            y_hat,
            v_hat,
            circuit,
            physical,
        })
    }

    pub fn forward(&mut self, x: &Array2<F>, mode: Mode) -> Result<(Array2<F>, Array2<F>)> {
        match mode {
            Mode::Eval => self.forward_eval(x),
            Mode::Train => self.forward_train(x).map(|p| (p.y_hat, p.v_hat)),
        }
    }

    /// Exact gradients of [`loss`] for the batch that produced `pass`. The `tau`
    /// term reaches only the circuit net; the geometry term reaches both.
    pub fn backward(
        &self,
        pass: &ForwardPass<F>,
        y: &Array2<F>,
        v: &Array2<F>,
        tau: F,
    ) -> Result<(ModelGrads<F>, F)> {
        if y.dim() != pass.y_hat.dim() || v.dim() != pass.v_hat.dim() {
            return Err(Error::Dimension(format!(
                "targets {:?}/{:?} vs predictions {:?}/{:?}",
                y.dim(),
                v.dim(),
                pass.y_hat.dim(),
                pass.v_hat.dim()
            )));
        }
        let two = F::lit(2.0);
        let nv = F::from_usize(v.len()).unwrap();
        let ny = F::from_usize(y.len()).unwrap();
        let d_v = (&pass.v_hat - v) * (two / nv);
        let (physical, d_y_phys) = self.physical.backward(&pass.physical, d_v);
        let mut d_y = (&pass.y_hat - y) * (tau * two / ny);
        d_y += &d_y_phys;
        let (circuit, _) = self.circuit.backward(&pass.circuit, d_y);
        let l = loss(&pass.y_hat, &pass.v_hat, y, v, tau);
        Ok((ModelGrads { circuit, physical }, l))
    }

    pub fn params_mut(&mut self) -> Vec<&mut [F]> {
        let mut p = self.circuit.params_mut();
        p.extend(self.physical.params_mut());
        p
    }

    pub fn param_count(&self) -> usize {
        self.clone().params_mut().iter().map(|s| s.len()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> SynthesisModel<G> {
        SynthesisModel {
            arch: self.arch.clone(),
            circuit: self.circuit.cast(),
            physical: self.physical.cast(),
            norm_stats: self.norm_stats.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_architecture_shapes() {
        let a = Architecture::default();
        assert_eq!(a.circuit_dims(), vec![4, 512, 512, 512, 512, 512, 512, 5]);
        assert_eq!(a.physical_dims(), vec![5, 512, 512, 3]);
        let m: SynthesisModel<f32> = SynthesisModel::new(Architecture::with_hidden(16), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(m.circuit.linear_count(), 7);
        assert_eq!(m.physical.linear_count(), 3);
    }

    #[test]
    fn loss_reductions() {
        let y = Array2::<f64>::zeros((1, 5));
        let mut y_hat = y.clone();
        y_hat[[0, 0]] = 1.0;
        let v = Array2::<f64>::ones((1, 3));
        assert!((loss(&y_hat, &v, &y, &v, 0.5) - 0.1).abs() < 1e-15);
        assert_eq!(loss(&y, &v, &y, &v, 0.5), 0.0);
        let mut v_hat = v.clone();
        v_hat[[0, 2]] = 4.0;
        assert_eq!(loss(&y_hat, &v_hat, &y, &v, 0.0), 3.0);
    }

    #[test]
    fn eval_is_pure_and_train_needs_two_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m: SynthesisModel<f32> = SynthesisModel::new(Architecture::with_hidden(8), &mut rng);
        let x = Array2::from_shape_simple_fn((5, 4), || rng.random_range(-1.0..1.0f32));
        let before = m.clone();
        let a = m.forward(&x, Mode::Eval).unwrap();
        let b = m.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert_eq!(m, before);
        assert!(m.forward(&x.slice(ndarray::s![..1, ..]).to_owned(), Mode::Train).is_err());
        assert!(m.forward(&Array2::zeros((4, 3)), Mode::Eval).is_err());
        m.forward(&x, Mode::Train).unwrap();
        assert_ne!(m, before);
    }

    #[test]
    fn physical_net_gets_no_gradient_from_circuit_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m: SynthesisModel<f64> = SynthesisModel::new(Architecture::with_hidden(8), &mut rng);
        let x = Array2::from_shape_simple_fn((6, 4), || rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_simple_fn((6, 5), || rng.random_range(-1.0..1.0));
        let pass = m.forward_train(&x).unwrap();
        let v = pass.v_hat.clone();
        // With v_hat == v only the tau term remains.
        let (g, _) = m.backward(&pass, &y, &v, 0.5).unwrap();
        assert!(g.physical.slices().iter().all(|s| s.iter().all(|&e| e == 0.0)));
        assert!(g.circuit.slices().iter().any(|s| s.iter().any(|&e| e != 0.0)));
    }

    #[test]
    fn random_init_outputs_are_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m: SynthesisModel<f32> = SynthesisModel::new(Architecture::with_hidden(32), &mut rng);
        for _ in 0..1000 {
            let x = Array2::from_shape_simple_fn((1, 4), || rng.random_range(-3.0..3.0f32));
            let (_, v) = m.forward_eval(&x).unwrap();
            assert!(v.iter().all(|e| e.is_finite()));
        }
    }

    #[test]
    fn architecture_diff_names_fields() {
        let a = Architecture::with_hidden(512);
        let b = Architecture::with_hidden(64);
        let err = a.ensure_matches(&b).unwrap_err().to_string();
        assert!(err.contains("hidden: 512 vs 64"), "{err}");
    }
}
