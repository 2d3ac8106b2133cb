//! Minimal convolutional network stack with hand-written backward passes.
//!
//! Forward calls return a [`Trace`] that owns everything the backward pass
//! needs, so one network can be applied several times per step and each
//! application differentiated independently.

pub mod layers;
pub mod ops;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

pub use layers::{Cache, Conv2d, ConvTranspose2d, Layer};

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Trace<T> {
    caches: Vec<Cache<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, x: &Array3<T>) -> Array3<T> {
        self.forward_traced(x).0
    }

    pub fn forward_traced(&self, x: &Array3<T>) -> (Array3<T>, Trace<T>) {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (o, c) = layer.forward(h);
            h = o;
            caches.push(c);
        }
        (h, Trace { caches })
    }

    /// Returns the gradient w.r.t. the input and accumulates parameter
    /// gradients into `grads`, which must come from [`Sequential::zeros_like`].
    pub fn backward(&self, trace: &Trace<T>, grad_out: Array3<T>, grads: &mut Sequential<T>) -> Array3<T> {
        let mut g = grad_out;
        for ((layer, cache), gl) in self
            .layers
            .iter()
            .zip(&trace.caches)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            g = layer.backward(cache, g, gl);
        }
        g
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn params(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.for_each_param(&mut |p| out.push(p));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            l.collect_params_mut(&mut out);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn fill_zero(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.fill(T::zero()));
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}
