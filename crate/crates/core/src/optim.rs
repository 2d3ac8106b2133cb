use serde::{Deserialize, Serialize};

use crate::nn::Sequential;
use crate::scalar::Scalar;

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Betas (0.5, 0.999), epsilon 1e-8.
    pub fn gan_default() -> Self {
        Self::new(0.5, 0.999, 1e-8)
    }

    /// One update over a flat list of parameter slices and matching gradients.
    pub fn step_slices(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: f64) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lists differ");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let one = T::one();
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = T::of(lr / bc1);
        let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
        let eps = T::of(self.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p = *p - step * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
            }
        }
    }

    pub fn step(&mut self, net: &mut Sequential<T>, grads: &Sequential<T>, lr: f64) {
        let g = grads.params();
        let mut p = net.params_mut();
        self.step_slices(&mut p, &g, lr);
    }
}
