//! Corpus handling, training/calibration data preparation, episode-level
//! evaluation, threshold search and latency measurement.

mod calfile;
mod corpus;
mod eval;
mod latency;
mod metrics;

pub use calfile::{read_calibration, write_calibration, CalibrationFile};
pub use corpus::{calibrate_inputs, load_corpus, prepare_data, PreparedData, SplitConfig};
pub use eval::{
    compute_curves, evaluate, evaluate_curves, grid_search, grid_search_curves, CurveCache, EpisodeCurve,
    EpisodeRecord, EvalReport, GridRow, SkippedEpisode,
};
pub use latency::{measure_latency, LatencyReport};
pub use metrics::{Metrics, MetricsFile};
