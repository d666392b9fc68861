use std::sync::OnceLock;

use super::quadrature::GaussLegendre;
use crate::error::{Error, Result};
use crate::trainer::CalibrationSet;

pub const DEFAULT_QUADRATURE_NODES: usize = 64;

/// Conformal p-value of `alpha` against the calibration scores, counting the
/// test point itself: `(#{αᵢ ≥ alpha} + 1) / (l + 1)`.
pub fn p_value(cal: &CalibrationSet, alpha: f64) -> Result<f64> {
    if !alpha.is_finite() {
        return Err(Error::numeric(format!("non-finite nonconformity score {alpha}")));
    }
    let scores = cal.scores();
    let below = scores.partition_point(|&s| s < alpha);
    let at_least = scores.len() - below;
    Ok((at_least + 1) as f64 / (scores.len() + 1) as f64)
}

fn default_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(DEFAULT_QUADRATURE_NODES))
}

/// `ln M` for the mixture martingale `M = ∫₀¹ ∏ ε pᵢ^(ε−1) dε` over `p_window`,
/// with the default 64-node rule.
pub fn log_mixture_martingale(p_window: &[f64]) -> Result<f64> {
    log_mixture_martingale_with(default_rule(), p_window)
}

/// As [`log_mixture_martingale`], with a caller-supplied rule. The integrand
/// is `ε^k · exp((ε − 1)·Σ ln pᵢ)`, evaluated in the log domain.
pub fn log_mixture_martingale_with(rule: &GaussLegendre, p_window: &[f64]) -> Result<f64> {
    if p_window.is_empty() {
        return Err(Error::validation("empty p-value window"));
    }
    if let Some(p) = p_window.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::validation(format!("p-value {p} outside (0, 1]")));
    }
    let k = p_window.len() as f64;
    let sum_log_p: f64 = p_window.iter().map(|p| p.ln()).sum();
    Ok(rule.log_integrate(|eps| k * eps.ln() + (eps - 1.0) * sum_log_p))
}
