//! Streaming out-of-distribution motion detection for image sequences.
//!
//! The pipeline runs in two tiers. Dense optic flow between neighbouring
//! frames strips appearance and keeps motion; a convolutional VAE encodes
//! each flow field and the summed KL divergence of its posterior from the
//! standard-normal prior is the nonconformity score. Scores are turned into
//! conformal p-values against a held-out calibration set and fed to a
//! sliding-window mixture martingale; a sustained run of `log M > τ`
//! raises a detection. Last-conv-layer activations, standardised against
//! calibration statistics, give a coarse localisation overlay.
//!
//! Modules, bottom-up:
//!
//! * [`gridio`]: planar `f32` grids and their on-disk formats (FGRID, PGM, PPM, manifests).
//! * [`opticflow`]: single-scale Lucas–Kanade with Tikhonov regularisation.
//! * [`vae`]: forward passes, the KL score, preprocessing, weight files.
//! * [`trainer`]: ELBO backprop, Adam, gradient checking, calibration sets.
//! * [`conformal`]: p-values, log mixture martingale, streaming detector.
//! * [`localization`]: activation statistics and overlay maps.
//! * [`synthdata`]: seeded ID/OOD motion episode generator.
//! * [`harness`]: evaluation metrics, threshold search, latency.

#![forbid(unsafe_op_in_unsafe_fn)]

pub mod conformal;
pub mod error;
pub mod exec;
pub mod gridio;
pub mod harness;
pub mod linalg;
pub mod localization;
pub mod opticflow;
pub mod synthdata;
pub mod trainer;
pub mod vae;

pub use error::{Error, Result};
pub use gridio::Grid;
