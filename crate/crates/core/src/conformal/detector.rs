use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::martingale::{log_mixture_martingale_with, p_value, DEFAULT_QUADRATURE_NODES};
use super::quadrature::GaussLegendre;
use crate::error::{Error, Result};
use crate::trainer::CalibrationSet;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Sliding window length `n` of p-values.
    pub window: usize,
    /// Threshold `τ` on the natural-log martingale.
    pub log_threshold: f64,
    /// Consecutive exceedances `d` needed for a detection.
    pub consecutive: usize,
    pub quadrature_nodes: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            window: 10,
            log_threshold: 3.0,
            consecutive: 10,
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::validation("window must be >= 1"));
        }
        if self.consecutive == 0 {
            return Err(Error::validation("consecutive must be >= 1"));
        }
        if self.quadrature_nodes < 8 {
            return Err(Error::validation("quadrature_nodes must be >= 8"));
        }
        if self.log_threshold.is_nan() {
            return Err(Error::validation("log_threshold is NaN"));
        }
        Ok(())
    }
}

/// A sustained run of `log M > τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub episode: String,
    /// First frame of the qualifying run.
    pub onset_frame: usize,
    /// Frame at which the run reached `d` exceedances.
    #[serde(skip)]
    pub fired_frame: usize,
    pub peak_log_m: f64,
}

/// Result of one [`DetectorState::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub frame_index: usize,
    pub p: f64,
    pub log_m: f64,
    pub exceed_count: usize,
    pub event: Option<DetectionEvent>,
}

/// Streaming state of one detector: the p-value window, the current
/// log-martingale and the exceedance run.
#[derive(Debug, Clone)]
pub struct DetectorState {
    episode: String,
    p_window: VecDeque<f64>,
    log_m: f64,
    exceed_count: usize,
    run_peak: f64,
    steps: usize,
    rule: GaussLegendre,
}

impl DetectorState {
    pub fn new(episode: impl Into<String>, cfg: &DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(DetectorState {
            episode: episode.into(),
            p_window: VecDeque::with_capacity(cfg.window),
            log_m: f64::NEG_INFINITY,
            exceed_count: 0,
            run_peak: f64::NEG_INFINITY,
            steps: 0,
            rule: GaussLegendre::new(cfg.quadrature_nodes),
        })
    }

    pub fn p_window(&self) -> impl Iterator<Item = f64> + '_ {
        self.p_window.iter().copied()
    }

    /// Current `ln M`; `-∞` before the first step.
    pub fn log_m(&self) -> f64 {
        self.log_m
    }

    pub fn exceed_count(&self) -> usize {
        self.exceed_count
    }

    /// Index of the most recent step, if any.
    pub fn frame_index(&self) -> Option<usize> {
        self.steps.checked_sub(1)
    }

    /// Pushes one nonconformity score. An event is returned exactly when the
    /// exceedance run reaches `cfg.consecutive`.
    pub fn step(&mut self, alpha: f64, cal: &CalibrationSet, cfg: &DetectorConfig) -> Result<StepOutput> {
        let p = p_value(cal, alpha)?;
        if self.p_window.len() == cfg.window {
            self.p_window.pop_front();
        }
        self.p_window.push_back(p);
        let window: Vec<f64> = self.p_window.iter().copied().collect();
        self.log_m = log_mixture_martingale_with(&self.rule, &window)?;
        let frame_index = self.steps;
        self.steps += 1;

        if self.log_m > cfg.log_threshold {
            self.exceed_count += 1;
            self.run_peak = if self.exceed_count == 1 {
                self.log_m
            } else {
                self.run_peak.max(self.log_m)
            };
        } else {
            self.exceed_count = 0;
        }
        let event = (self.exceed_count == cfg.consecutive).then(|| DetectionEvent {
            episode: self.episode.clone(),
            onset_frame: frame_index + 1 - cfg.consecutive,
            fired_frame: frame_index,
            peak_log_m: self.run_peak,
        });
        Ok(StepOutput {
            frame_index,
            p,
            log_m: self.log_m,
            exceed_count: self.exceed_count,
            event,
        })
    }
}
