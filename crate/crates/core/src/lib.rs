//! Image-to-image translation trained on a mix of a few selected paired
//! samples and many unpaired ones.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below pin the common instantiations.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod losses;
pub mod networks;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod selection;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Generator32 = networks::Generator<f32>;
pub type Generator64 = networks::Generator<f64>;
pub type Discriminator32 = networks::Discriminator<f32>;
pub type Discriminator64 = networks::Discriminator<f64>;
pub type Image32 = image::ImageTensor<f32>;
pub type Image64 = image::ImageTensor<f64>;
pub type FeatureMatrix32 = selection::FeatureMatrix<f32>;
pub type FeatureMatrix64 = selection::FeatureMatrix<f64>;
pub type TrainState32 = trainer::TrainState<f32>;
pub type TrainState64 = trainer::TrainState<f64>;
