//! Parallel MRI reconstruction toolkit.
//!
//! Image-domain methods (CG-SENSE, TV/TGV primal-dual, unrolled
//! Fields-of-Experts networks) and k-space methods (GRAPPA, SPIRiT,
//! RAKI/rRAKI). Synthetic multi-coil acquisitions and image-quality
//! metrics are included for experiments.

pub mod cs;
pub mod dataio;
pub mod encoding;
pub mod error;
pub mod fft;
pub mod kspace;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod phantom;
pub mod raki;
pub mod rng;
pub mod sense;
pub mod types;
pub mod unrolled;

pub use encoding::{apply_adjoint, apply_encoding, coil_images, rss_combine, rss_of_kspace, Encoding};
pub use error::{Error, Result};
pub use fft::{fft2c, ifft2c};
pub use types::{CoilMaps, ComplexImage, KSpace, NoiseModel, SamplingMask, C64};
