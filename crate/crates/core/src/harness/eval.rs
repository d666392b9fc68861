use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use crate::conformal::{
    detect_scores, episode_scores, events_from_curve, load_frames, CalibrationSet, CurvePoint, DetectionEvent,
    DetectorConfig, EpisodeDetection,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gridio::{EpisodeManifest, Label};
use crate::opticflow::FlowParams;
use crate::vae::VaeWeights;

/// Threshold-independent martingale trace of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeCurve {
    pub id: String,
    pub label: Label,
    pub onset_frame: Option<usize>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedEpisode {
    pub id: String,
    pub error: String,
}

/// Curves for a corpus, computed once and replayed under any threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveCache {
    pub curves: Vec<EpisodeCurve>,
    pub skipped: Vec<SkippedEpisode>,
    /// Number of episodes run through flow + encoder to build this cache.
    pub scoring_calls: usize,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub id: String,
    pub label: Label,
    pub detected: bool,
    pub events: Vec<DetectionEvent>,
    pub peak_log_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset_frame: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detected_onset: Option<usize>,
    /// `detected_onset − onset_frame` for detected OOD episodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset_error: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub threshold: f64,
    pub metrics: Metrics,
    pub records: Vec<EpisodeRecord>,
    pub skipped: Vec<SkippedEpisode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub threshold: f64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Scores every episode and records its log-martingale curve. Episodes that
/// fail to load or score are skipped with a warning.
pub fn compute_curves(
    manifests: &[EpisodeManifest],
    weights: &VaeWeights,
    cal: &CalibrationSet,
    cfg: &DetectorConfig,
    flow: &FlowParams,
    exec: Exec,
) -> Result<CurveCache> {
    cfg.validate()?;
    flow.validate()?;
    if manifests.is_empty() {
        return Err(Error::validation("corpus is empty"));
    }
    let results = exec.map(manifests, |m| -> Result<EpisodeCurve> {
        let frames = load_frames(m)?;
        let alphas = episode_scores(&frames, weights, flow, Exec::Sequential)?;
        let det = detect_scores(&m.id, &alphas, cal, cfg)?;
        Ok(EpisodeCurve {
            id: m.id.clone(),
            label: m.label,
            onset_frame: m.onset_frame,
            curve: det.curve,
        })
    });
    let mut cache = CurveCache {
        curves: Vec::with_capacity(manifests.len()),
        skipped: Vec::new(),
        scoring_calls: manifests.len(),
        window: cfg.window,
    };
    for (m, r) in manifests.iter().zip(results) {
        match r {
            Ok(c) => cache.curves.push(c),
            Err(e) => {
                warn!("skipping episode {}: {e}", m.id);
                cache.skipped.push(SkippedEpisode {
                    id: m.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    if cache.curves.is_empty() {
        return Err(Error::validation("no episode in the corpus could be evaluated"));
    }
    Ok(cache)
}

/// Episode-level confusion under threshold `tau` and persistence `d`.
/// Curves are written to `<curve_dir>/<id>.csv` when a directory is given.
pub fn evaluate_curves(cache: &CurveCache, tau: f64, d: usize, curve_dir: Option<&Path>) -> Result<EvalReport> {
    if !tau.is_finite() {
        return Err(Error::validation("threshold must be finite"));
    }
    if d == 0 {
        return Err(Error::validation("consecutive count must be >= 1"));
    }
    if let Some(dir) = curve_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut records = Vec::with_capacity(cache.curves.len());
    for c in &cache.curves {
        let events = events_from_curve(&c.id, &c.curve, tau, d);
        let curve_path = match curve_dir {
            Some(dir) => {
                let p = dir.join(format!("{}.csv", c.id));
                let det = EpisodeDetection {
                    episode: c.id.clone(),
                    curve: c.curve.clone(),
                    events: events.clone(),
                };
                det.write_curve(&p)?;
                Some(p)
            }
            None => None,
        };
        let detected_onset = events.first().map(|e| e.onset_frame);
        let onset_error = match (c.label, detected_onset, c.onset_frame) {
            (Label::Ood, Some(d), Some(o)) => Some(d as i64 - o as i64),
            _ => None,
        };
        records.push(EpisodeRecord {
            id: c.id.clone(),
            label: c.label,
            detected: !events.is_empty(),
            peak_log_m: c.curve.iter().map(|p| p.log_m).fold(f64::MIN, f64::max),
            events,
            onset_frame: c.onset_frame,
            detected_onset,
            onset_error,
            curve_path,
        });
    }
    let metrics = Metrics::from_outcomes(records.iter().map(|r| (r.label == Label::Ood, r.detected)));
    Ok(EvalReport {
        threshold: tau,
        metrics,
        records,
        skipped: cache.skipped.clone(),
    })
}

pub fn evaluate(
    manifests: &[EpisodeManifest],
    weights: &VaeWeights,
    cal: &CalibrationSet,
    cfg: &DetectorConfig,
    flow: &FlowParams,
    exec: Exec,
    curve_dir: Option<&Path>,
) -> Result<EvalReport> {
    let cache = compute_curves(manifests, weights, cal, cfg, flow, exec)?;
    evaluate_curves(&cache, cfg.log_threshold, cfg.consecutive, curve_dir)
}

/// Best threshold by F1, ties broken by lower FPR and then lower threshold.
pub fn grid_search_curves(cache: &CurveCache, thresholds: &[f64], d: usize) -> Result<(f64, Vec<GridRow>)> {
    if thresholds.is_empty() {
        return Err(Error::validation("threshold grid is empty"));
    }
    let mut rows = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let r = evaluate_curves(cache, t, d, None)?;
        info!(
            "tau {t}: f1 {:.3} tpr {:.3} fpr {:.3}",
            r.metrics.f1, r.metrics.tpr, r.metrics.fpr
        );
        rows.push(GridRow {
            threshold: t,
            metrics: r.metrics,
        });
    }
    let best = rows
        .iter()
        .min_by(|a, b| {
            b.metrics
                .f1
                .total_cmp(&a.metrics.f1)
                .then(a.metrics.fpr.total_cmp(&b.metrics.fpr))
                .then(a.threshold.total_cmp(&b.threshold))
        })
        .expect("nonempty grid")
        .threshold;
    Ok((best, rows))
}

/// Computes curves once, then scans `thresholds`.
pub fn grid_search(
    manifests: &[EpisodeManifest],
    weights: &VaeWeights,
    cal: &CalibrationSet,
    thresholds: &[f64],
    cfg: &DetectorConfig,
    flow: &FlowParams,
    exec: Exec,
) -> Result<(f64, Vec<GridRow>, CurveCache)> {
    if thresholds.is_empty() {
        return Err(Error::validation("threshold grid is empty"));
    }
    let cache = compute_curves(manifests, weights, cal, cfg, flow, exec)?;
    let (best, rows) = grid_search_curves(&cache, thresholds, cfg.consecutive)?;
    Ok((best, rows, cache))
}
