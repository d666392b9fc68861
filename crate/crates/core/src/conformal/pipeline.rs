//! End-to-end scoring of frame sequences: flow → preprocess → encode → KL,
//! then the streaming detector.
//!
//! Score `k` belongs to the frame pair `(k, k+1)` and is reported at episode
//! frame `k + 1`, the frame at which it becomes observable.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::detector::{DetectionEvent, DetectorConfig, DetectorState};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gridio::{read_pgm, EpisodeManifest, Grid};
use crate::opticflow::{lucas_kanade, FlowParams};
use crate::trainer::CalibrationSet;
use crate::vae::{self, VaeWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub frame: usize,
    pub alpha: f64,
    pub p: f64,
    pub log_m: f64,
    pub exceed_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeDetection {
    pub episode: String,
    pub curve: Vec<CurvePoint>,
    pub events: Vec<DetectionEvent>,
}

impl EpisodeDetection {
    pub fn detected(&self) -> bool {
        !self.events.is_empty()
    }

    pub fn peak_log_m(&self) -> f64 {
        self.curve
            .iter()
            .map(|c| c.log_m)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV with header `frame,alpha,p,log_m,exceed_count`.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("frame,alpha,p,log_m,exceed_count\n");
        for c in &self.curve {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                c.frame, c.alpha, c.p, c.log_m, c.exceed_count
            ));
        }
        s
    }

    /// One JSON object per event: `{"episode", "onset_frame", "peak_log_m"}`.
    pub fn events_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
            .collect()
    }

    pub fn write_curve(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.curve_csv())
    }

    pub fn write_events(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.events_jsonl())
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

pub fn load_frames(manifest: &EpisodeManifest) -> Result<Vec<Grid>> {
    manifest.frames.iter().map(read_pgm).collect()
}

/// Network input for the frame pair `(a, b)`.
pub fn flow_input(weights: &VaeWeights, a: &Grid, b: &Grid, flow: &FlowParams) -> Result<Grid> {
    let f = lucas_kanade(a, b, flow)?;
    vae::preprocess(&f, weights.arch(), weights.arch().max_flow)
}

/// Nonconformity score of the frame pair `(a, b)`.
pub fn pair_score(weights: &VaeWeights, a: &Grid, b: &Grid, flow: &FlowParams) -> Result<f64> {
    let x = flow_input(weights, a, b, flow)?;
    Ok(vae::kl_score(&vae::encode(weights, &x)?.posterior))
}

/// Scores for every consecutive frame pair.
pub fn episode_scores(frames: &[Grid], weights: &VaeWeights, flow: &FlowParams, exec: Exec) -> Result<Vec<f64>> {
    if frames.len() < 2 {
        return Err(Error::validation(format!(
            "an episode needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    exec.map_range(frames.len() - 1, |k| pair_score(weights, &frames[k], &frames[k + 1], flow))
        .into_iter()
        .collect()
}

/// Runs the streaming detector over precomputed scores.
pub fn detect_scores(
    episode: &str,
    alphas: &[f64],
    cal: &CalibrationSet,
    cfg: &DetectorConfig,
) -> Result<EpisodeDetection> {
    let mut state = DetectorState::new(episode, cfg)?;
    let mut curve = Vec::with_capacity(alphas.len());
    let mut events: Vec<DetectionEvent> = Vec::new();
    for &alpha in alphas {
        let out = state.step(alpha, cal, cfg)?;
        curve.push(CurvePoint {
            frame: out.frame_index + 1,
            alpha,
            p: out.p,
            log_m: out.log_m,
            exceed_count: out.exceed_count,
        });
        if let Some(mut e) = out.event {
            e.onset_frame += 1;
            e.fired_frame += 1;
            events.push(e);
        }
    }
    extend_peaks(&mut events, &curve, cfg.log_threshold);
    Ok(EpisodeDetection {
        episode: episode.to_string(),
        curve,
        events,
    })
}

/// Widens each event's peak to cover its whole run, not just the part
/// before it fired.
fn extend_peaks(events: &mut [DetectionEvent], curve: &[CurvePoint], tau: f64) {
    for e in events {
        let start = curve.iter().position(|c| c.frame == e.onset_frame).unwrap_or(0);
        e.peak_log_m = curve[start..]
            .iter()
            .take_while(|c| c.log_m > tau)
            .map(|c| c.log_m)
            .fold(e.peak_log_m, f64::max);
    }
}

/// Events implied by a log-martingale trace under threshold `tau` and
/// persistence `d`, without recomputing p-values.
pub fn events_from_curve(episode: &str, curve: &[CurvePoint], tau: f64, d: usize) -> Vec<DetectionEvent> {
    let mut events = Vec::new();
    let mut run = 0usize;
    for (i, c) in curve.iter().enumerate() {
        if c.log_m > tau {
            run += 1;
        } else {
            run = 0;
        }
        if run == d {
            let start = i + 1 - d;
            events.push(DetectionEvent {
                episode: episode.to_string(),
                onset_frame: curve[start].frame,
                fired_frame: c.frame,
                peak_log_m: f64::NEG_INFINITY,
            });
        }
    }
    extend_peaks(&mut events, curve, tau);
    events
}

pub fn detect_episode(
    episode: &str,
    frames: &[Grid],
    weights: &VaeWeights,
    cal: &CalibrationSet,
    cfg: &DetectorConfig,
    flow: &FlowParams,
) -> Result<EpisodeDetection> {
    cfg.validate()?;
    let alphas = episode_scores(frames, weights, flow, Exec::default())?;
    detect_scores(episode, &alphas, cal, cfg)
}
