//! Bit-depth companding and inverse halftoning with learned restoration.
//!
//! Degradations ([`companding`], [`halftone`]) produce low-bit inputs; a
//! U-Net ([`unet`]) built on a small tensor engine ([`nn`]) learns to restore
//! 8-bit images under a feature-space loss ([`perceptual`]). [`harness`]
//! trains and evaluates with [`metrics`].

pub mod checks;
pub mod cli;
pub mod companding;
pub mod error;
pub mod halftone;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod perceptual;
pub mod tensor;
pub mod unet;
pub mod weights;

pub use error::{Error, Result};
pub use image::{from_tensor, intensity_histogram, load_image, save_image, to_tensor, Histogram, Image};
pub use tensor::{Scalar, Tensor4};
