//! Spatial OOD localization from last-conv encoder activations.
//!
//! Each location's activation vector is standardized against the calibration
//! set's per-channel mean and spread; the squared z-scores summed over
//! channels form a coarse energy map that is upsampled to the input
//! resolution and max-normalized.

use crate::conformal::flow_input;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gridio::{resize_bilinear, Grid};
use crate::opticflow::FlowParams;
use crate::vae::{self, VaeWeights};

/// Added to the calibration spread before dividing.
pub const STD_EPSILON: f64 = 1e-6;
/// Peak blend weight of the red overlay.
pub const OVERLAY_ALPHA: f32 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStats {
    mean: Grid,
    std: Grid,
    count: usize,
}

impl ActivationStats {
    /// Per-element mean and population standard deviation.
    pub fn from_activations(acts: &[Grid]) -> Result<Self> {
        if acts.len() < 2 {
            return Err(Error::validation(format!(
                "activation statistics need at least 2 samples, got {}",
                acts.len()
            )));
        }
        let shape = acts[0].shape();
        if let Some(i) = acts.iter().position(|a| a.shape() != shape) {
            return Err(Error::shape(format!(
                "activation sample {i} has shape {:?}, expected {shape:?}",
                acts[i].shape()
            )));
        }
        let n = acts.len() as f64;
        let len = acts[0].data().len();
        let mut mean = vec![0.0f64; len];
        for a in acts {
            for (m, &v) in mean.iter_mut().zip(a.data()) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; len];
        for a in acts {
            for ((s, &v), m) in var.iter_mut().zip(a.data()).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        let (c, h, w) = shape;
        let mean = Grid::from_vec(c, h, w, mean.iter().map(|&m| m as f32).collect())?;
        let std = Grid::from_vec(c, h, w, var.iter().map(|&s| (s / n).sqrt() as f32).collect())?;
        Ok(ActivationStats {
            mean,
            std,
            count: acts.len(),
        })
    }

    /// Rebuilds stats from stored parts.
    pub fn from_parts(mean: Grid, std: Grid, count: usize) -> Result<Self> {
        if !mean.same_shape(&std) {
            return Err(Error::shape("activation mean and std shapes differ"));
        }
        if count < 2 {
            return Err(Error::validation("activation statistics need count >= 2"));
        }
        if std.data().iter().any(|&s| s.is_nan() || s < 0.0) {
            return Err(Error::validation("activation std must be >= 0"));
        }
        mean.ensure_finite("activation mean")?;
        std.ensure_finite("activation std")?;
        Ok(ActivationStats { mean, std, count })
    }

    pub fn mean(&self) -> &Grid {
        &self.mean
    }

    pub fn std(&self) -> &Grid {
        &self.std
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// Statistics of the encoder's last conv activations over preprocessed
/// calibration inputs.
pub fn activation_stats(weights: &VaeWeights, cal_inputs: &[Grid]) -> Result<ActivationStats> {
    activation_stats_with(weights, cal_inputs, Exec::default())
}

pub fn activation_stats_with(weights: &VaeWeights, cal_inputs: &[Grid], exec: Exec) -> Result<ActivationStats> {
    if cal_inputs.len() < 2 {
        return Err(Error::validation(format!(
            "activation statistics need at least 2 samples, got {}",
            cal_inputs.len()
        )));
    }
    let acts = exec
        .map(cal_inputs, |x| vae::encode(weights, x).map(|o| o.last_conv_activations))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    ActivationStats::from_activations(&acts)
}

/// Coarse standardized-energy map (C=1, activation resolution), not normalized.
pub fn deviation_energy(activations: &Grid, stats: &ActivationStats) -> Result<Grid> {
    if !activations.same_shape(&stats.mean) {
        return Err(Error::shape(format!(
            "activations {:?} do not match calibration stats {:?}",
            activations.shape(),
            stats.mean.shape()
        )));
    }
    activations.ensure_finite("activations")?;
    let (c, h, w) = activations.shape();
    let mut raw = vec![0.0f64; h * w];
    for ch in 0..c {
        let (a, m, s) = (
            activations.channel(ch),
            stats.mean.channel(ch),
            stats.std.channel(ch),
        );
        for (i, r) in raw.iter_mut().enumerate() {
            let z = (a[i] as f64 - m[i] as f64) / (s[i] as f64 + STD_EPSILON);
            *r += z * z;
        }
    }
    let raw: Vec<f32> = raw.into_iter().map(|v| (v as f32).min(f32::MAX)).collect();
    Grid::from_vec(1, h, w, raw)
}

/// Overlay in `[0, 1]` at `out_h × out_w`; peak 1 unless the activations
/// match the calibration mean everywhere.
pub fn overlay(activations: &Grid, stats: &ActivationStats, out_h: usize, out_w: usize) -> Result<Grid> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::validation("overlay size must be positive"));
    }
    let raw = deviation_energy(activations, stats)?;
    let mut up = resize_bilinear(&raw, out_h, out_w);
    let peak = up.data().iter().cloned().fold(0.0f32, f32::max);
    if peak > 0.0 {
        for v in up.data_mut() {
            *v = (*v / peak).clamp(0.0, 1.0);
        }
    }
    Ok(up)
}

/// Overlay for the frame pair `(a, b)` at the resolution of `b`.
pub fn localize_pair(
    weights: &VaeWeights,
    stats: &ActivationStats,
    a: &Grid,
    b: &Grid,
    flow: &FlowParams,
) -> Result<Grid> {
    let x = flow_input(weights, a, b, flow)?;
    let acts = vae::encode(weights, &x)?.last_conv_activations;
    overlay(&acts, stats, b.height(), b.width())
}

/// RGB composite of a gray frame with a red overlay where `map ≥ threshold`.
pub fn render(frame: &Grid, map: &Grid, threshold: f32) -> Result<Grid> {
    if frame.channels() != 1 || map.channels() != 1 {
        return Err(Error::shape("render expects single-channel frame and map"));
    }
    if (frame.height(), frame.width()) != (map.height(), map.width()) {
        return Err(Error::shape(format!(
            "frame {}x{} and overlay {}x{} differ",
            frame.height(),
            frame.width(),
            map.height(),
            map.width()
        )));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::validation(format!("overlay threshold {threshold} not in [0, 1]")));
    }
    let (h, w) = (frame.height(), frame.width());
    let mut out = Grid::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            let g = frame.get(0, y, x);
            let m = map.get(0, y, x);
            let a = if m >= threshold { OVERLAY_ALPHA * m } else { 0.0 };
            out.set(0, y, x, g * (1.0 - a) + a);
            out.set(1, y, x, g * (1.0 - a));
            out.set(2, y, x, g * (1.0 - a));
        }
    }
    Ok(out)
}

/// Fraction of the map's total mass inside the rectangle `[x0, x1) × [y0, y1)`.
pub fn mass_fraction(map: &Grid, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
    let mut inside = 0.0f64;
    let mut total = 0.0f64;
    for y in 0..map.height() {
        for x in 0..map.width() {
            let v = map.get(0, y, x) as f64;
            total += v;
            if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
                inside += v;
            }
        }
    }
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}
