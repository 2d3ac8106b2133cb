use ndarray::{s, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, Resample};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub load_size: usize,
    pub crop_size: usize,
    pub flip: bool,
}

impl AugmentConfig {
    /// Resize to 286, crop 256.
    pub fn paper() -> Self {
        Self {
            load_size: 286,
            crop_size: 256,
            flip: true,
        }
    }

    /// Resize to 72, crop 64.
    pub fn desk() -> Self {
        Self {
            load_size: 72,
            crop_size: 64,
            flip: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_size > self.load_size {
            return Err(Error::Config(format!(
                "crop size {} exceeds load size {}",
                self.crop_size, self.load_size
            )));
        }
        if self.crop_size == 0 {
            return Err(Error::Config("crop size must be positive".into()));
        }
        Ok(())
    }
}

/// Crop offsets and flip decision shared by both images of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transform {
    pub top: usize,
    pub left: usize,
    pub flip: bool,
}

impl Transform {
    pub fn sample<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let slack = cfg.load_size - cfg.crop_size;
        Self {
            top: rng.gen_range(0..=slack),
            left: rng.gen_range(0..=slack),
            flip: cfg.flip && rng.gen_bool(0.5),
        }
    }

    /// Crops (and optionally mirrors) an image already at load size.
    pub fn apply<T: Scalar>(&self, img: &ImageTensor<T>, crop: usize) -> Result<ImageTensor<T>> {
        if self.top + crop > img.height() || self.left + crop > img.width() {
            return Err(Error::InvalidInput(format!(
                "crop {crop} at ({}, {}) exceeds {}x{} image",
                self.top,
                self.left,
                img.height(),
                img.width()
            )));
        }
        let mut data = img
            .data
            .slice(s![.., self.top..self.top + crop, self.left..self.left + crop])
            .to_owned();
        if self.flip {
            data.invert_axis(Axis(2));
            data = data.as_standard_layout().into_owned();
        }
        ImageTensor::new(data, img.domain)
    }
}

/// Resizes to the load size with the domain's resampling filter.
pub fn resize_to_load<T: Scalar>(img: &ImageTensor<T>, cfg: &AugmentConfig) -> ImageTensor<T> {
    img.resize(cfg.load_size, cfg.load_size, Resample::for_domain(img.domain))
}

/// Resize, random crop and random horizontal flip.
pub fn augment<T: Scalar, R: Rng>(sample: &ImageTensor<T>, cfg: &AugmentConfig, rng: &mut R) -> Result<ImageTensor<T>> {
    cfg.validate()?;
    let t = Transform::sample(cfg, rng);
    t.apply(&resize_to_load(sample, cfg), cfg.crop_size)
}

/// [`augment`] with one transform applied to both images of a pair.
pub fn augment_pair<T: Scalar, R: Rng>(
    x: &ImageTensor<T>,
    y: &ImageTensor<T>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(ImageTensor<T>, ImageTensor<T>)> {
    cfg.validate()?;
    let t = Transform::sample(cfg, rng);
    Ok((
        t.apply(&resize_to_load(x, cfg), cfg.crop_size)?,
        t.apply(&resize_to_load(y, cfg), cfg.crop_size)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Domain;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = ImageTensor::<f32>::filled(100, 80, 0.0, Domain::X);
        let out = augment(&img, &AugmentConfig::desk(), &mut rng).unwrap();
        assert_eq!(out.data.dim(), (3, 64, 64));
        let out = augment(&img, &AugmentConfig::paper(), &mut rng).unwrap();
        assert_eq!(out.data.dim(), (3, 256, 256));
        let bad = AugmentConfig {
            load_size: 60,
            crop_size: 64,
            flip: true,
        };
        assert!(matches!(augment(&img, &bad, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn pair_shares_geometry() {
        // Encode source coordinates in the pixel values of both images.
        let coords = |domain| {
            let data = Array3::from_shape_fn((3, 72, 72), |(c, i, j)| match c {
                0 => i as f64 / 100.0,
                1 => j as f64 / 100.0,
                _ => 0.0,
            });
            ImageTensor::new(data, domain).unwrap()
        };
        let (x, y) = (coords(Domain::X), coords(Domain::Y));
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (ax, ay) = augment_pair(&x, &y, &AugmentConfig::desk(), &mut rng).unwrap();
            assert_eq!(ax.data, ay.data);
        }
    }

    #[test]
    fn flip_mirrors_columns() {
        let data = Array3::from_shape_fn((3, 4, 4), |(_, _, j)| j as f64 / 4.0);
        let img = ImageTensor::new(data, Domain::X).unwrap();
        let t = Transform {
            top: 0,
            left: 0,
            flip: true,
        };
        let out = t.apply(&img, 4).unwrap();
        assert_eq!(out.data[[0, 0, 0]], 0.75);
        assert_eq!(out.data[[2, 3, 3]], 0.0);
    }
}
