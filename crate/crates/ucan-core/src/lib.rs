//! Core library for the correlated-auxiliary-noise classification
//! experiment.
//!
//! A 28x28 Fashion-MNIST image sits inside a 40x40 panel behind a 6-pixel
//! bezel. Noise drawn from a low-dimensional basis is added to the image
//! (variant B) or to the image and the bezel (variant C); a CNN trained on
//! C can exploit the bezel's correlated noise to recover part of the
//! accuracy lost to the image noise. The crate provides:
//!
//! - [`noise`]: sine and white noise bases, Gaussian mode coefficients,
//!   amplitude calibration, and the bandlimited-field vacuum statistics
//!   check.
//! - [`dataset`]: IDX ingestion, brightness rescaling, bezel padding, and
//!   the A/B/C composition pipeline with fixed splits.
//! - [`oracle`]: exact least-squares inference of the noise from the bezel
//!   pixels, the in-principle denoising bound.
//! - [`nn`]: the from-scratch CNN with Adam, dropout, early stopping, and
//!   finite-difference gradient verification.
//! - [`experiment`]: the training grid across noise kind, dimension, and
//!   level, with recovery-efficiency reporting.
//! - [`cache`]: binary panel/dataset caches with JSON sidecars.

pub mod cache;
pub mod dataset;
pub mod experiment;
pub mod nn;
pub mod noise;
pub mod oracle;
pub mod panel;
pub mod rng;

pub use dataset::{DatasetSplit, LabeledImage, LabeledPanel, Variant};
pub use experiment::{run_grid, ucan_efficiency, FashionData, GridSpec};
pub use noise::{BasisKind, KgFieldSpec, ModeIndex, NoiseBasis};
pub use oracle::BezelSystem;
pub use panel::Panel;
