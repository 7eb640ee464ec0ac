//! Recursive coarse-to-fine image registration.
//!
//! Any estimator that recovers small displacements (up to `mu` pixels) is
//! turned into a large-displacement estimator by recursing on half-resolution
//! copies of the inputs, doubling the coarse answer, warping the second image
//! by it and asking the small estimator for the remaining correction.
//!
//! The crate is organised as:
//!
//! - [`image`]: raster and displacement-field types with downsample,
//!   upsample, warp and blur primitives.
//! - [`estimator`]: the small-displacement estimator contract, an exhaustive
//!   block-matching reference and the CNN-backed estimator.
//! - [`pyramid`]: the recursion itself.
//! - [`cnn`]: a small convolutional network engine (forward, backward, Adam).
//! - [`training`]: self-synthesizing training data and the depth curriculum.
//! - [`dataio`]: PFM/PPM/PGM, dataset scanning, checkpoints, false color.
//! - [`eval`]: bad-pixel metrics and left-right occlusion checks.
//!
//! ```
//! use pyrreg::estimator::{BlockMatchOracle, StereoMode};
//! use pyrreg::image::Image;
//! use pyrreg::pyramid::{register, RecursionConfig};
//!
//! let img = Image::from_fn(32, 32, 1, |y, x, _| ((x * 7 + y * 13) % 11) as f32 / 10.0);
//! let oracle = BlockMatchOracle::new(2, 2).unwrap();
//! let cfg = RecursionConfig::for_estimator(&oracle);
//! let out = register(&img, &img, &oracle, &cfg).unwrap();
//! assert!(out.field.max_abs() == 0.0);
//! # let _ = StereoMode::OFF;
//! ```

pub mod cnn;
pub mod dataio;
mod error;
pub mod estimator;
pub mod eval;
pub mod image;
pub mod pyramid;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
