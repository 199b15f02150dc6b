//! Differentiable RGB + thermal Gaussian splatting.
//!
//! A scene is a cloud of anisotropic 3D Gaussians carrying SH color, a
//! latent feature vector and a thermal opacity offset. Rendering produces a
//! hybrid RGB image (explicit SH color plus a decoded, thermally modulated
//! latent) and a thermal image decoded from an independent rasterization pass.
//! Every stage has a hand-written reverse pass.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod img;
pub mod loss;
pub mod model;
pub mod net;
pub mod par;
pub mod pipeline;
pub mod raster;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
pub use img::Image;
