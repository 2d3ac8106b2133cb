use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{
    col2im, conv_direct, conv_direct_backward, conv_out, gemm, im2col, reflect_pad, reflect_pad_backward,
};
use crate::scalar::Scalar;

const NORM_EPS: f64 = 1e-5;

fn gaussian<T: Scalar, R: Rng>(shape: (usize, usize, usize, usize), std: f64, rng: &mut R) -> Array4<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    Array4::from_shape_simple_fn(shape, || T::of(normal.sample(rng)))
}

/// Zero-padded 2-D convolution. Weight layout `(out, in, k, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d<T> {
    pub weight: Array4<T>,
    pub bias: Option<Array1<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        init_std: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: gaussian((cout, cin, kernel, kernel), init_std, rng),
            bias: bias.then(|| Array1::zeros(cout)),
            stride,
            padding,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    fn weight_matrix(&self) -> ArrayView2<'_, T> {
        let (co, ci, k, _) = self.weight.dim();
        self.weight
            .view()
            .into_shape_with_order((co, ci * k * k))
            .expect("contiguous weight")
    }

    /// Few channels on either side make the unfolded matrix product
    /// wasteful; such stride-1 convolutions run directly.
    fn direct(&self) -> bool {
        let (co, ci, _, _) = self.weight.dim();
        self.stride == 1 && co.min(ci) <= 8
    }

    fn forward_direct(&self, x: &Array3<T>) -> (Array3<T>, Array3<T>) {
        let (mut out, xp) = conv_direct(x.view(), self.weight.view(), self.padding);
        if let Some(b) = &self.bias {
            for (mut plane, &bv) in out.outer_iter_mut().zip(b.iter()) {
                plane.mapv_inplace(|v| v + bv);
            }
        }
        (out, xp)
    }

    fn backward_direct(&self, xp: &Array3<T>, g: &Array3<T>, grads: &mut Self) -> Array3<T> {
        if let Some(gb) = grads.bias.as_mut() {
            Zip::from(gb).and(g.outer_iter()).for_each(|b, plane| *b = *b + plane.sum());
        }
        conv_direct_backward(xp, self.weight.view(), self.padding, g, &mut grads.weight)
    }

    fn forward(&self, x: &Array3<T>) -> (Array3<T>, Array2<T>) {
        let (_, h, w) = x.dim();
        let k = self.kernel();
        let cout = self.weight.dim().0;
        let ho = conv_out(h, k, self.stride, self.padding);
        let wo = conv_out(w, k, self.stride, self.padding);
        let cols = im2col(x.view(), k, self.stride, self.padding);
        let mut out = Array2::<T>::zeros((cout, ho * wo));
        if let Some(b) = &self.bias {
            for (mut row, &bv) in out.axis_iter_mut(Axis(0)).zip(b.iter()) {
                row.fill(bv);
            }
        }
        gemm(&self.weight_matrix(), &cols.view(), T::one(), &mut out.view_mut());
        let out = out.into_shape_with_order((cout, ho, wo)).expect("contiguous");
        (out, cols)
    }

    fn backward(&self, cols: &Array2<T>, in_dim: (usize, usize, usize), g: &Array3<T>, grads: &mut Self) -> Array3<T> {
        let (c, h, w) = in_dim;
        let cout = g.dim().0;
        let g2 = g
            .view()
            .into_shape_with_order((cout, g.dim().1 * g.dim().2))
            .expect("contiguous grad");
        {
            let (co, ci, k, _) = grads.weight.dim();
            let mut gw = grads
                .weight
                .view_mut()
                .into_shape_with_order((co, ci * k * k))
                .expect("contiguous weight");
            gemm(&g2, &cols.t(), T::one(), &mut gw);
        }
        if let Some(gb) = grads.bias.as_mut() {
            Zip::from(gb).and(g2.rows()).for_each(|b, row| *b = *b + row.sum());
        }
        let mut dcols = Array2::<T>::zeros(cols.dim());
        gemm(&self.weight_matrix().t(), &g2, T::zero(), &mut dcols.view_mut());
        col2im(dcols.view(), c, h, w, self.kernel(), self.stride, self.padding)
    }
}

/// Fractionally strided convolution. Weight layout `(in, out, k, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvTranspose2d<T> {
    pub weight: Array4<T>,
    pub bias: Option<Array1<T>>,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl<T: Scalar> ConvTranspose2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        bias: bool,
        init_std: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: gaussian((cin, cout, kernel, kernel), init_std, rng),
            bias: bias.then(|| Array1::zeros(cout)),
            stride,
            padding,
            output_padding,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    fn weight_matrix(&self) -> ArrayView2<'_, T> {
        let (ci, co, k, _) = self.weight.dim();
        self.weight
            .view()
            .into_shape_with_order((ci, co * k * k))
            .expect("contiguous weight")
    }

    fn out_size(&self, n: usize) -> usize {
        (n - 1) * self.stride + self.kernel() + self.output_padding - 2 * self.padding
    }

    fn forward(&self, x: &Array3<T>) -> Array3<T> {
        let (cin, h, w) = x.dim();
        let (_, cout, k, _) = self.weight.dim();
        let (ho, wo) = (self.out_size(h), self.out_size(w));
        let x2 = x.view().into_shape_with_order((cin, h * w)).expect("contiguous");
        let mut cols = Array2::<T>::zeros((cout * k * k, h * w));
        gemm(&self.weight_matrix().t(), &x2, T::zero(), &mut cols.view_mut());
        let mut out = col2im(cols.view(), cout, ho, wo, k, self.stride, self.padding);
        if let Some(b) = &self.bias {
            for (mut plane, &bv) in out.axis_iter_mut(Axis(0)).zip(b.iter()) {
                plane.mapv_inplace(|v| v + bv);
            }
        }
        out
    }

    fn backward(&self, x: &Array3<T>, g: &Array3<T>, grads: &mut Self) -> Array3<T> {
        let (cin, h, w) = x.dim();
        let k = self.kernel();
        let gcols = im2col(g.view(), k, self.stride, self.padding);
        let x2 = x.view().into_shape_with_order((cin, h * w)).expect("contiguous");
        {
            let (ci, co, k, _) = grads.weight.dim();
            let mut gw = grads
                .weight
                .view_mut()
                .into_shape_with_order((ci, co * k * k))
                .expect("contiguous weight");
            gemm(&x2, &gcols.t(), T::one(), &mut gw);
        }
        if let Some(gb) = grads.bias.as_mut() {
            Zip::from(gb).and(g.outer_iter()).for_each(|b, plane| *b = *b + plane.sum());
        }
        let mut dx = Array2::<T>::zeros((cin, h * w));
        gemm(&self.weight_matrix(), &gcols.view(), T::zero(), &mut dx.view_mut());
        dx.into_shape_with_order((cin, h, w)).expect("contiguous")
    }
}

/// One stage of a feed-forward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    ConvTranspose(ConvTranspose2d<T>),
    ReflectionPad(usize),
    /// Per-channel normalization over the spatial extent, no affine parameters.
    InstanceNorm,
    Relu,
    LeakyRelu(f64),
    Tanh,
    /// `x + body(x)`
    Residual(Vec<Layer<T>>),
}

/// Values a layer keeps from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    Conv { cols: Array2<T>, in_dim: (usize, usize, usize) },
    ConvDirect { padded: Array3<T> },
    ConvTranspose { input: Array3<T> },
    ReflectionPad,
    InstanceNorm { normalized: Array3<T>, inv_std: Vec<T> },
    Relu { output: Array3<T> },
    LeakyRelu { input: Array3<T> },
    Tanh { output: Array3<T> },
    Residual(Vec<Cache<T>>),
}

fn instance_norm<T: Scalar>(x: &Array3<T>) -> (Array3<T>, Vec<T>) {
    let (c, h, w) = x.dim();
    let n = T::of((h * w) as f64);
    let eps = T::of(NORM_EPS);
    let mut out = x.clone();
    let mut inv = Vec::with_capacity(c);
    for mut plane in out.outer_iter_mut() {
        let mean = plane.sum() / n;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let s = T::one() / (var + eps).sqrt();
        plane.mapv_inplace(|v| (v - mean) * s);
        inv.push(s);
    }
    (out, inv)
}

fn instance_norm_backward<T: Scalar>(normalized: &Array3<T>, inv_std: &[T], g: &Array3<T>) -> Array3<T> {
    let (_, h, w) = g.dim();
    let n = T::of((h * w) as f64);
    let mut dx = Array3::<T>::zeros(g.dim());
    for (ci, mut out) in dx.outer_iter_mut().enumerate() {
        let gp = g.index_axis(Axis(0), ci);
        let xp = normalized.index_axis(Axis(0), ci);
        let mean_g = gp.sum() / n;
        let mean_gx = Zip::from(&gp).and(&xp).fold(T::zero(), |acc, &a, &b| acc + a * b) / n;
        let s = inv_std[ci];
        Zip::from(&mut out)
            .and(&gp)
            .and(&xp)
            .for_each(|o, &gv, &xv| *o = s * (gv - mean_g - xv * mean_gx));
    }
    dx
}

impl<T: Scalar> Layer<T> {
    pub fn forward(&self, x: Array3<T>) -> (Array3<T>, Cache<T>) {
        match self {
            Layer::Conv(conv) if conv.direct() => {
                let (out, padded) = conv.forward_direct(&x);
                (out, Cache::ConvDirect { padded })
            }
            Layer::Conv(conv) => {
                let in_dim = x.dim();
                let (out, cols) = conv.forward(&x);
                (out, Cache::Conv { cols, in_dim })
            }
            Layer::ConvTranspose(conv) => {
                let out = conv.forward(&x);
                (out, Cache::ConvTranspose { input: x })
            }
            Layer::ReflectionPad(p) => (reflect_pad(x.view(), *p), Cache::ReflectionPad),
            Layer::InstanceNorm => {
                let (out, inv_std) = instance_norm(&x);
                (out.clone(), Cache::InstanceNorm { normalized: out, inv_std })
            }
            Layer::Relu => {
                let out = x.mapv_into(|v| v.max(T::zero()));
                (out.clone(), Cache::Relu { output: out })
            }
            Layer::LeakyRelu(slope) => {
                let s = T::of(*slope);
                let out = x.mapv(|v| if v > T::zero() { v } else { v * s });
                (out, Cache::LeakyRelu { input: x })
            }
            Layer::Tanh => {
                let out = x.mapv_into(|v| v.tanh());
                (out.clone(), Cache::Tanh { output: out })
            }
            Layer::Residual(body) => {
                let mut h = x.clone();
                let mut caches = Vec::with_capacity(body.len());
                for layer in body {
                    let (o, c) = layer.forward(h);
                    h = o;
                    caches.push(c);
                }
                (h + &x, Cache::Residual(caches))
            }
        }
    }

    /// Propagates `g` (gradient w.r.t. this layer's output) to its input,
    /// accumulating parameter gradients into the matching layer of `grads`.
    pub fn backward(&self, cache: &Cache<T>, g: Array3<T>, grads: &mut Layer<T>) -> Array3<T> {
        match (self, cache, grads) {
            (Layer::Conv(conv), Cache::Conv { cols, in_dim }, Layer::Conv(gc)) => conv.backward(cols, *in_dim, &g, gc),
            (Layer::Conv(conv), Cache::ConvDirect { padded }, Layer::Conv(gc)) => conv.backward_direct(padded, &g, gc),
            (Layer::ConvTranspose(conv), Cache::ConvTranspose { input }, Layer::ConvTranspose(gc)) => {
                conv.backward(input, &g, gc)
            }
            (Layer::ReflectionPad(p), Cache::ReflectionPad, _) => reflect_pad_backward(g.view(), *p),
            (Layer::InstanceNorm, Cache::InstanceNorm { normalized, inv_std }, _) => {
                instance_norm_backward(normalized, inv_std, &g)
            }
            (Layer::Relu, Cache::Relu { output }, _) => {
                let mut g = g;
                Zip::from(&mut g).and(output).for_each(|gv, &o| {
                    if o <= T::zero() {
                        *gv = T::zero();
                    }
                });
                g
            }
            (Layer::LeakyRelu(slope), Cache::LeakyRelu { input }, _) => {
                let s = T::of(*slope);
                let mut g = g;
                Zip::from(&mut g).and(input).for_each(|gv, &x| {
                    if x <= T::zero() {
                        *gv = *gv * s;
                    }
                });
                g
            }
            (Layer::Tanh, Cache::Tanh { output }, _) => {
                let mut g = g;
                Zip::from(&mut g)
                    .and(output)
                    .for_each(|gv, &o| *gv = *gv * (T::one() - o * o));
                g
            }
            (Layer::Residual(body), Cache::Residual(caches), Layer::Residual(gbody)) => {
                let mut h = g.clone();
                for ((layer, cache), gl) in body.iter().zip(caches).zip(gbody.iter_mut()).rev() {
                    h = layer.backward(cache, h, gl);
                }
                h + &g
            }
            _ => unreachable!("layer, cache and gradient buffers out of sync"),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        let mut params = Vec::new();
        out.collect_params_mut(&mut params);
        params.into_iter().for_each(|p| p.fill(T::zero()));
        out
    }

    pub fn for_each_param<'a>(&'a self, f: &mut dyn FnMut(&'a [T])) {
        match self {
            Layer::Conv(c) => {
                f(c.weight.as_slice().expect("contiguous"));
                if let Some(b) = &c.bias {
                    f(b.as_slice().expect("contiguous"));
                }
            }
            Layer::ConvTranspose(c) => {
                f(c.weight.as_slice().expect("contiguous"));
                if let Some(b) = &c.bias {
                    f(b.as_slice().expect("contiguous"));
                }
            }
            Layer::Residual(body) => body.iter().for_each(|l| l.for_each_param(f)),
            _ => {}
        }
    }

    pub fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        match self {
            Layer::Conv(Conv2d { weight, bias, .. }) | Layer::ConvTranspose(ConvTranspose2d { weight, bias, .. }) => {
                out.push(weight.as_slice_mut().expect("contiguous"));
                if let Some(b) = bias.as_mut() {
                    out.push(b.as_slice_mut().expect("contiguous"));
                }
            }
            Layer::Residual(body) => body.iter_mut().for_each(|l| l.collect_params_mut(out)),
            _ => {}
        }
    }
}
