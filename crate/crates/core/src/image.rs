//! RGB image tensors in `[-1, 1]`, PNG IO and resizing.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{Rgb, Rgb32FImage, RgbImage};
use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Image domain: `X` holds photos, `Y` holds colour-coded label images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    X,
    Y,
}

impl Domain {
    pub fn other(self) -> Domain {
        match self {
            Domain::X => Domain::Y,
            Domain::Y => Domain::X,
        }
    }
}

/// Resampling filter used when resizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    Bicubic,
    Nearest,
}

impl Resample {
    /// Photos are resampled smoothly; label images keep exact colours.
    pub fn for_domain(domain: Domain) -> Resample {
        match domain {
            Domain::X => Resample::Bicubic,
            Domain::Y => Resample::Nearest,
        }
    }

    fn filter(self) -> FilterType {
        match self {
            Resample::Bicubic => FilterType::CatmullRom,
            Resample::Nearest => FilterType::Nearest,
        }
    }
}

/// A 3-channel image stored channel-major as `(3, H, W)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor<T> {
    pub data: Array3<T>,
    pub domain: Domain,
}

#[inline]
fn u8_to_unit<T: Scalar>(v: u8) -> T {
    T::of(v as f64 / 127.5 - 1.0)
}

#[inline]
fn unit_to_u8<T: Scalar>(v: T) -> u8 {
    ((v.as_f64() + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

impl<T: Scalar> ImageTensor<T> {
    pub fn new(data: Array3<T>, domain: Domain) -> Result<Self> {
        if data.dim().0 != 3 {
            return Err(Error::InvalidInput(format!(
                "expected 3 channels, got {}",
                data.dim().0
            )));
        }
        Ok(Self { data, domain })
    }

    pub fn filled(height: usize, width: usize, value: T, domain: Domain) -> Self {
        Self {
            data: Array3::from_elem((3, height, width), value),
            domain,
        }
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn view(&self) -> ArrayView3<'_, T> {
        self.data.view()
    }

    pub fn from_rgb8(img: &RgbImage, domain: Domain) -> Self {
        let (w, h) = img.dimensions();
        let data = Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
            u8_to_unit(img.get_pixel(x as u32, y as u32).0[c])
        });
        Self { data, domain }
    }

    /// Quantizes back to 8-bit, clamping out-of-range values.
    pub fn to_rgb8(&self) -> RgbImage {
        let (h, w) = (self.height(), self.width());
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([
                unit_to_u8(self.data[[0, y, x]]),
                unit_to_u8(self.data[[1, y, x]]),
                unit_to_u8(self.data[[2, y, x]]),
            ])
        })
    }

    /// Pixel values on the 0-255 scale without quantization.
    pub fn pixel_255(&self, y: usize, x: usize) -> [f64; 3] {
        let f = |c: usize| (self.data[[c, y, x]].as_f64() + 1.0) * 127.5;
        [f(0), f(1), f(2)]
    }

    pub fn load_png(path: &Path, domain: Domain) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8(), domain))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Resizes to `(height, width)`. Same-size requests return an exact copy.
    pub fn resize(&self, height: usize, width: usize, resample: Resample) -> Self {
        if (height, width) == (self.height(), self.width()) {
            return self.clone();
        }
        let (h, w) = (self.height(), self.width());
        let src = Rgb32FImage::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            let f = |c: usize| ((self.data[[c, y, x]].as_f64() + 1.0) * 0.5) as f32;
            Rgb([f(0), f(1), f(2)])
        });
        let out = imageops::resize(&src, width as u32, height as u32, resample.filter());
        let data = Array3::from_shape_fn((3, height, width), |(c, y, x)| {
            let v = out.get_pixel(x as u32, y as u32).0[c].clamp(0.0, 1.0) as f64;
            T::of(v * 2.0 - 1.0)
        });
        Self {
            data,
            domain: self.domain,
        }
    }

    pub fn cast<U: Scalar>(&self) -> ImageTensor<U> {
        ImageTensor {
            data: self.data.mapv(|v| U::of(v.as_f64())),
            domain: self.domain,
        }
    }
}
