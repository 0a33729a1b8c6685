//! Point-based drag editing over pluggable differentiable feature fields.
//!
//! The engine segments a feature map into superpixels with SLIC, grows an
//! editing mask from the superpixels touched by each handle→target drag,
//! optimizes a latent with motion supervision and point tracking constrained
//! to semantic regions (with position-supervised backtracking), and runs DDIM
//! inversion and sampling with an optional correspondence-loss guidance.
//!
//! Every differentiable piece ships a hand-derived adjoint; see [`field`] for
//! the feature-field kinds that stand in for a diffusion UNet.

pub mod closs;
pub mod drag;
pub mod error;
pub mod field;
pub mod formats;
pub mod grid;
pub mod mask;
pub mod metrics;
pub mod par;
pub mod png_io;
pub mod sampler;
pub mod scenes;
pub mod superpixel;

pub use error::{Error, Result};
pub use field::FeatureField;
pub use grid::{bilinear_sample, Grid, GridTensor, Pixel, Point, Scalar};
