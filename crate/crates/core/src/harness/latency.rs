use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::conformal::{CalibrationSet, DetectorConfig, DetectorState};
use crate::error::{Error, Result};
use crate::gridio::Grid;
use crate::opticflow::{lucas_kanade, FlowParams};
use crate::vae::{self, VaeWeights};

/// Wall-clock cost of one per-frame detection decision, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub mean_ms: f64,
    pub p95_ms: f64,
    /// Lucas–Kanade flow.
    pub flow_ms: f64,
    /// Preprocess, encoder forward pass and KL score.
    pub encode_ms: f64,
    /// p-value, martingale and exceedance bookkeeping.
    pub conformal_ms: f64,
    pub reps: usize,
    pub warmup: usize,
    pub height: usize,
    pub width: usize,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Times `warmup + reps` decisions over consecutive frame pairs (cycling
/// through the episode); the warmup decisions are discarded.
pub fn measure_latency(
    frames: &[Grid],
    weights: &VaeWeights,
    cal: &CalibrationSet,
    cfg: &DetectorConfig,
    flow: &FlowParams,
    warmup: usize,
    reps: usize,
) -> Result<LatencyReport> {
    if warmup < 1 || reps < 10 {
        return Err(Error::validation("latency needs warmup >= 1 and reps >= 10"));
    }
    if frames.len() < 2 {
        return Err(Error::validation("latency needs an episode of at least 2 frames"));
    }
    cfg.validate()?;
    let mut state = DetectorState::new("bench", cfg)?;
    let n_pairs = frames.len() - 1;
    let mut totals = Vec::with_capacity(reps);
    let (mut flow_sum, mut enc_sum, mut conf_sum) = (0.0, 0.0, 0.0);
    for i in 0..warmup + reps {
        let k = i % n_pairs;
        let start = Instant::now();
        let t = Instant::now();
        let f = lucas_kanade(&frames[k], &frames[k + 1], flow)?;
        let flow_t = ms(t);
        let t = Instant::now();
        let x = vae::preprocess(&f, weights.arch(), weights.arch().max_flow)?;
        let alpha = vae::kl_score(&vae::encode(weights, &x)?.posterior);
        let enc_t = ms(t);
        let t = Instant::now();
        std::hint::black_box(state.step(alpha, cal, cfg)?);
        let conf_t = ms(t);
        let total = ms(start);
        if i >= warmup {
            totals.push(total);
            flow_sum += flow_t;
            enc_sum += enc_t;
            conf_sum += conf_t;
        }
    }
    let n = reps as f64;
    let mean_ms = totals.iter().sum::<f64>() / n;
    totals.sort_by(f64::total_cmp);
    let p95_idx = ((0.95 * n).ceil() as usize).clamp(1, reps) - 1;
    Ok(LatencyReport {
        mean_ms,
        p95_ms: totals[p95_idx].max(mean_ms),
        flow_ms: flow_sum / n,
        encode_ms: enc_sum / n,
        conformal_ms: conf_sum / n,
        reps,
        warmup,
        height: frames[0].height(),
        width: frames[0].width(),
    })
}
