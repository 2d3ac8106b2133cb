//! Residual translation generators and PatchGAN discriminators.

use std::path::Path;

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::image::{Domain, ImageTensor};
use crate::nn::{Conv2d, ConvTranspose2d, Layer, Sequential, Trace};
use crate::scalar::Scalar;

/// Standard deviation of the zero-mean Gaussian weight initialisation.
pub const INIT_STD: f64 = 0.02;
const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub input_channels: usize,
    pub output_channels: usize,
    pub base_width: usize,
    pub n_residual_blocks: usize,
    pub norm: bool,
}

impl GeneratorConfig {
    /// 64 filters, 9 residual blocks.
    pub fn paper() -> Self {
        Self {
            input_channels: 3,
            output_channels: 3,
            base_width: 64,
            n_residual_blocks: 9,
            norm: true,
        }
    }

    /// Reduced profile used for CPU experiments and the test suite.
    pub fn desk() -> Self {
        Self {
            base_width: 8,
            n_residual_blocks: 2,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_residual_blocks < 1 || self.base_width < 1 {
            return Err(Error::Config(
                "generator needs base_width >= 1 and n_residual_blocks >= 1".into(),
            ));
        }
        if self.input_channels != 3 || self.output_channels != 3 {
            return Err(Error::Config("generator maps RGB to RGB".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub input_channels: usize,
    pub base_width: usize,
    pub n_layers: usize,
    pub norm: bool,
}

impl DiscriminatorConfig {
    /// Three strided layers: 70x70 receptive field.
    pub fn paper() -> Self {
        Self {
            input_channels: 3,
            base_width: 64,
            n_layers: 3,
            norm: true,
        }
    }

    /// Two strided layers (34x34 receptive field) sized for 64x64 inputs.
    pub fn desk() -> Self {
        Self {
            base_width: 8,
            n_layers: 2,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 1 || self.base_width < 1 {
            return Err(Error::Config(
                "discriminator needs base_width >= 1 and n_layers >= 1".into(),
            ));
        }
        if self.input_channels != 3 {
            return Err(Error::Config("discriminator reads RGB".into()));
        }
        Ok(())
    }

    /// `(in, out, stride)` of each 4x4 convolution in order.
    fn conv_stack(&self) -> Vec<(usize, usize, usize)> {
        let ndf = self.base_width;
        let mut stack = vec![(self.input_channels, ndf, 2)];
        let mut mult = 1;
        for n in 1..self.n_layers {
            let next = (1 << n).min(8);
            stack.push((ndf * mult, ndf * next, 2));
            mult = next;
        }
        let next = (1 << self.n_layers).min(8);
        stack.push((ndf * mult, ndf * next, 1));
        stack.push((ndf * next, 1, 1));
        stack
    }
}

/// Kernel size of every discriminator convolution.
const D_KERNEL: usize = 4;

/// Theoretical receptive field of one discriminator logit, via
/// `r_prev = (r - 1) * stride + kernel` walked from the output back to the input.
pub fn receptive_field(cfg: &DiscriminatorConfig) -> usize {
    let layers: Vec<(usize, usize)> = cfg.conv_stack().iter().map(|&(_, _, s)| (D_KERNEL, s)).collect();
    receptive_field_of(&layers)
}

/// Receptive field of a stack of `(kernel, stride)` layers.
pub fn receptive_field_of(layers: &[(usize, usize)]) -> usize {
    layers.iter().rev().fold(1, |r, &(k, s)| (r - 1) * s + k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator<T> {
    pub config: GeneratorConfig,
    pub net: Sequential<T>,
}

pub fn build_generator<T: Scalar>(cfg: GeneratorConfig, seed: u64) -> Result<Generator<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let ngf = cfg.base_width;
    let bias = !cfg.norm;
    let mut layers = Vec::new();
    let norm = |layers: &mut Vec<Layer<T>>| {
        if cfg.norm {
            layers.push(Layer::InstanceNorm);
        }
    };

    layers.push(Layer::ReflectionPad(3));
    layers.push(Layer::Conv(Conv2d::new(cfg.input_channels, ngf, 7, 1, 0, bias, INIT_STD, rng)));
    norm(&mut layers);
    layers.push(Layer::Relu);

    for i in 0..2 {
        let mult = 1 << i;
        layers.push(Layer::Conv(Conv2d::new(ngf * mult, ngf * mult * 2, 3, 2, 1, bias, INIT_STD, rng)));
        norm(&mut layers);
        layers.push(Layer::Relu);
    }

    let width = ngf * 4;
    for _ in 0..cfg.n_residual_blocks {
        let mut body = Vec::new();
        body.push(Layer::ReflectionPad(1));
        body.push(Layer::Conv(Conv2d::new(width, width, 3, 1, 0, bias, INIT_STD, rng)));
        norm(&mut body);
        body.push(Layer::Relu);
        body.push(Layer::ReflectionPad(1));
        body.push(Layer::Conv(Conv2d::new(width, width, 3, 1, 0, bias, INIT_STD, rng)));
        norm(&mut body);
        layers.push(Layer::Residual(body));
    }

    for i in 0..2 {
        let mult = 1 << (2 - i);
        layers.push(Layer::ConvTranspose(ConvTranspose2d::new(
            ngf * mult,
            ngf * mult / 2,
            3,
            2,
            1,
            1,
            bias,
            INIT_STD,
            rng,
        )));
        norm(&mut layers);
        layers.push(Layer::Relu);
    }

    layers.push(Layer::ReflectionPad(3));
    layers.push(Layer::Conv(Conv2d::new(ngf, cfg.output_channels, 7, 1, 0, true, INIT_STD, rng)));
    layers.push(Layer::Tanh);

    Ok(Generator {
        config: cfg,
        net: Sequential::new(layers),
    })
}

impl<T: Scalar> Generator<T> {
    fn check_input(&self, x: &Array3<T>) -> Result<()> {
        let (c, h, w) = x.dim();
        if c != self.config.input_channels {
            return Err(Error::InvalidInput(format!(
                "generator expects {} channels, got {c}",
                self.config.input_channels
            )));
        }
        if h % 4 != 0 || w % 4 != 0 || h < 8 || w < 8 {
            return Err(Error::InvalidInput(format!(
                "generator input must be at least 8x8 with sides divisible by 4, got {h}x{w}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array3<T>) -> Result<Array3<T>> {
        self.check_input(x)?;
        Ok(self.net.forward(x))
    }

    pub fn forward_traced(&self, x: &Array3<T>) -> Result<(Array3<T>, Trace<T>)> {
        self.check_input(x)?;
        Ok(self.net.forward_traced(x))
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }
}

/// Applies a generator to an image; the output is tagged with the opposite domain.
pub fn translate<T: Scalar>(g: &Generator<T>, x: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    let out = g.forward(&x.data)?;
    ImageTensor::new(out, x.domain.other())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator<T> {
    pub config: DiscriminatorConfig,
    pub net: Sequential<T>,
}

pub fn build_discriminator<T: Scalar>(cfg: DiscriminatorConfig, seed: u64) -> Result<Discriminator<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stack = cfg.conv_stack();
    let last = stack.len() - 1;
    let mut layers = Vec::new();
    for (i, &(cin, cout, stride)) in stack.iter().enumerate() {
        let normed = cfg.norm && i != 0 && i != last;
        layers.push(Layer::Conv(Conv2d::new(
            cin,
            cout,
            D_KERNEL,
            stride,
            1,
            !normed,
            INIT_STD,
            &mut rng,
        )));
        if normed {
            layers.push(Layer::InstanceNorm);
        }
        if i != last {
            layers.push(Layer::LeakyRelu(LEAKY_SLOPE));
        }
    }
    Ok(Discriminator {
        config: cfg,
        net: Sequential::new(layers),
    })
}

impl<T: Scalar> Discriminator<T> {
    /// Smallest square input that still yields a non-empty logit map.
    pub fn min_input(&self) -> usize {
        (1..).find(|&n| self.output_size(n) >= 1).expect("some size works")
    }

    fn output_size(&self, n: usize) -> usize {
        let mut s = n as isize;
        for &(_, _, stride) in &self.config.conv_stack() {
            s = (s + 2 - D_KERNEL as isize).div_euclid(stride as isize) + 1;
            if s < 1 {
                return 0;
            }
        }
        s as usize
    }

    fn check_input(&self, x: &Array3<T>) -> Result<()> {
        let (c, h, w) = x.dim();
        if c != self.config.input_channels {
            return Err(Error::InvalidInput(format!("discriminator expects 3 channels, got {c}")));
        }
        if self.output_size(h) < 1 || self.output_size(w) < 1 {
            return Err(Error::InvalidInput(format!("input {h}x{w} too small for the discriminator")));
        }
        Ok(())
    }

    /// Raw (pre-sigmoid) logit map of shape `(1, h', w')`.
    pub fn logits(&self, x: &Array3<T>) -> Result<Array3<T>> {
        self.check_input(x)?;
        Ok(self.net.forward(x))
    }

    pub fn logits_traced(&self, x: &Array3<T>) -> Result<(Array3<T>, Trace<T>)> {
        self.check_input(x)?;
        Ok(self.net.forward_traced(x))
    }
}

/// Parameters of both translation directions and both critics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState<T> {
    pub g_xy: Generator<T>,
    pub g_yx: Generator<T>,
    pub d_x: Discriminator<T>,
    pub d_y: Discriminator<T>,
    pub step: u64,
    pub epoch: u64,
}

impl<T: Scalar> ModelState<T> {
    pub fn new(gen: GeneratorConfig, disc: DiscriminatorConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            g_xy: build_generator(gen, seed.wrapping_mul(4))?,
            g_yx: build_generator(gen, seed.wrapping_mul(4) + 1)?,
            d_x: build_discriminator(disc, seed.wrapping_mul(4) + 2)?,
            d_y: build_discriminator(disc, seed.wrapping_mul(4) + 3)?,
            step: 0,
            epoch: 0,
        })
    }

    pub fn generator(&self, from: Domain) -> &Generator<T> {
        match from {
            Domain::X => &self.g_xy,
            Domain::Y => &self.g_yx,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.g_xy.net.all_finite() && self.g_yx.net.all_finite() && self.d_x.net.all_finite() && self.d_y.net.all_finite()
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing model file. Trainer checkpoints add a `training` block
/// with optimizer moments and image pools, which model loading ignores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T, E = serde_json::Value> {
    pub version: u32,
    pub dtype: String,
    pub model: ModelState<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<E>,
}

impl<T: Scalar, E: Serialize> Checkpoint<T, E> {
    pub fn new(model: ModelState<T>, training: Option<E>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            dtype: T::NAME.to_string(),
            model,
            training,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(self)?;
        write_atomic(path, &bytes)
    }
}

impl<T: Scalar, E: serde::de::DeserializeOwned> Checkpoint<T, E> {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        #[derive(Deserialize)]
        struct Header {
            version: u32,
            dtype: String,
        }
        let head: Header = serde_json::from_slice(&bytes)?;
        if head.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "{}: checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                path.display(),
                head.version
            )));
        }
        if head.dtype != T::NAME {
            return Err(Error::Format(format!(
                "{}: checkpoint holds {} parameters, loader expects {}",
                path.display(),
                head.dtype,
                T::NAME
            )));
        }
        let ckpt: Self = serde_json::from_slice(&bytes)?;
        ckpt.model.g_xy.config.validate()?;
        ckpt.model.d_x.config.validate()?;
        Ok(ckpt)
    }
}

/// Scalar type name recorded in a checkpoint.
pub fn checkpoint_dtype(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    #[derive(Deserialize)]
    struct Header {
        dtype: String,
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let head: Header = serde_json::from_reader(std::io::BufReader::new(file))?;
    Ok(head.dtype)
}

/// Loads only the networks of a checkpoint.
pub fn load_model<T: Scalar>(path: &Path) -> Result<ModelState<T>> {
    Ok(Checkpoint::<T, serde::de::IgnoredAny>::load(path)?.model)
}

pub fn save_model<T: Scalar>(model: &ModelState<T>, path: &Path) -> Result<()> {
    Checkpoint::<T, ()>::new(model.clone(), None).save(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    #[test]
    fn receptive_field_recursion() {
        assert_eq!(receptive_field_of(&[(4, 1)]), 4);
        assert_eq!(receptive_field_of(&[(3, 1), (3, 1)]), 5);
        assert_eq!(receptive_field(&DiscriminatorConfig::paper()), 70);
        assert_eq!(receptive_field(&DiscriminatorConfig::desk()), 34);
    }

    #[test]
    fn desk_generator_preserves_shape_and_bounds() {
        let g = build_generator::<f32>(GeneratorConfig::desk(), 0).unwrap();
        let x = Array::from_shape_fn((3, 64, 64), |(c, i, j)| ((c + i * j) % 17) as f32 / 8.5 - 1.0);
        let y = g.forward(&x).unwrap();
        assert_eq!(y.dim(), (3, 64, 64));
        assert!(y.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }

    #[test]
    fn generator_rejects_bad_shapes() {
        let g = build_generator::<f32>(GeneratorConfig::desk(), 0).unwrap();
        assert!(matches!(g.forward(&Array3::zeros((3, 30, 32))), Err(Error::InvalidInput(_))));
        assert!(matches!(g.forward(&Array3::zeros((1, 32, 32))), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn discriminator_is_patchwise() {
        let d = build_discriminator::<f32>(DiscriminatorConfig::desk(), 3).unwrap();
        let out = d.logits(&Array3::zeros((3, 64, 64))).unwrap();
        assert_eq!(out.dim(), (1, 14, 14));
        let d2 = build_discriminator::<f32>(DiscriminatorConfig::desk(), 3).unwrap();
        assert_eq!(d, d2);
        assert_eq!(d.min_input(), 12);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = GeneratorConfig {
            n_residual_blocks: 0,
            ..GeneratorConfig::desk()
        };
        assert!(matches!(build_generator::<f64>(cfg, 0), Err(Error::Config(_))));
        let cfg = DiscriminatorConfig {
            n_layers: 0,
            ..DiscriminatorConfig::desk()
        };
        assert!(matches!(build_discriminator::<f64>(cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = ModelState::<f32>::new(GeneratorConfig::desk(), DiscriminatorConfig::desk(), 5).unwrap();
        save_model(&m, &path).unwrap();
        let back = load_model::<f32>(&path).unwrap();
        assert_eq!(back, m);
        let probe = Array::from_shape_fn((3, 16, 16), |(c, i, j)| ((c + i * j) % 7) as f32 / 7.0 - 0.5);
        assert_eq!(back.g_xy.forward(&probe).unwrap(), m.g_xy.forward(&probe).unwrap());
        assert!(matches!(load_model::<f64>(&path), Err(Error::Format(_))));
        assert!(matches!(load_model::<f32>(&dir.path().join("nope.json")), Err(Error::MissingFile(_))));
    }
}
