use super::layers::Scalar;

/// Adam with bias correction and coupled (L2) weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    t: u64,
}

impl<F: Scalar> Adam<F> {
    /// Zeroed moment buffers shaped like `params`.
    pub fn new(params: &[&mut [F]], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|p| vec![F::zero(); p.len()]).collect();
        Self {
            beta1,
            beta2,
            eps,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// `g' = g + wd·p`, then the usual moment updates and bias-corrected step.
    pub fn step(&mut self, params: Vec<&mut [F]>, grads: Vec<&[F]>, lr: f64, weight_decay: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (F::lit(self.beta1), F::lit(self.beta2));
        let (one_b1, one_b2) = (F::lit(1.0 - self.beta1), F::lit(1.0 - self.beta2));
        let corr1 = F::lit(1.0 - self.beta1.powi(t));
        let corr2 = F::lit(1.0 - self.beta2.powi(t));
        let (lr, wd, eps) = (F::lit(lr), F::lit(weight_decay), F::lit(self.eps));

        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            assert_eq!(p.len(), g.len(), "gradient shape mismatch");
            for i in 0..p.len() {
                let gi = g[i] + wd * p[i];
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
