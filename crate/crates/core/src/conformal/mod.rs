//! Inductive conformal anomaly detection over a stream of nonconformity
//! scores.
//!
//! Each score becomes a p-value against the held-out calibration scores. The
//! last `n` p-values are combined into the mixture martingale
//! `M = ∫₀¹ ∏ ε pᵢ^(ε−1) dε`, integrated by Gauss–Legendre quadrature in the
//! log domain. Under exchangeability `M` is a nonnegative martingale, so by
//! Ville's inequality `P(sup M ≥ e^τ) ≤ e^−τ`. A detection fires once
//! `ln M > τ` has held for `d` consecutive frames.

mod detector;
mod martingale;
mod pipeline;
mod quadrature;

pub use crate::trainer::CalibrationSet;
pub use detector::{DetectionEvent, DetectorConfig, DetectorState, StepOutput};
pub use martingale::{log_mixture_martingale, log_mixture_martingale_with, p_value, DEFAULT_QUADRATURE_NODES};
pub use pipeline::{
    detect_episode, detect_scores, episode_scores, events_from_curve, flow_input, load_frames, pair_score,
    CurvePoint, EpisodeDetection,
};
pub use quadrature::GaussLegendre;
