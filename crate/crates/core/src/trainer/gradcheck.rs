//! Central finite-difference verification of the analytic gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backprop::{accumulate_gradient, sample_loss};
use crate::vae::{dense_backward, dense_forward, Vae};

/// Gradients smaller than this in both routes are compared absolutely.
const REL_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// One index from every tensor, then distinct random indices up to `count`.
pub fn random_param_indices<T: crate::linalg::Real>(net: &Vae<T>, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = net
        .layout()
        .iter()
        .map(|s| s.offset + rng.random_range(0..s.len()))
        .collect();
    let n = net.layout().last().map_or(0, |s| s.offset + s.len());
    let extra = count.saturating_sub(idx.len()).min(n);
    idx.extend(sample(&mut rng, n, extra));
    idx.sort_unstable();
    idx.dedup();
    idx
}

/// Compares `∂total/∂wᵢ` from backprop with `(L(w+h) − L(w−h)) / 2h`,
/// `h = 1e-5·max(1, |wᵢ|)`, for each index.
pub fn gradient_check(
    net: &Vae<f64>,
    sample: &[f64],
    noise: &[f64],
    beta_kl: f64,
    indices: &[usize],
) -> GradCheckReport {
    let mut grad = vec![0.0; net.param_count()];
    accumulate_gradient(net, sample, noise, beta_kl, 1.0, &mut grad);
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for &i in indices {
        let w = net.params()[i];
        let h = 1e-5 * w.abs().max(1.0);
        probe.params_mut()[i] = w + h;
        let up = sample_loss(&probe, sample, noise, beta_kl).total;
        probe.params_mut()[i] = w - h;
        let down = sample_loss(&probe, sample, noise, beta_kl).total;
        probe.params_mut()[i] = w;
        let numeric = (up - down) / (2.0 * h);
        let err = rel_error(grad[i], numeric);
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = grad[i];
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    report
}

/// Finite-difference check of a lone dense layer under `Σ (Wx + b − t)²`,
/// over every weight, bias and input coordinate.
pub fn dense_gradient_check(inputs: usize, outputs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let w = uniform(outputs * inputs);
    let b = uniform(outputs);
    let x = uniform(inputs);
    let t = uniform(outputs);
    let loss = |w: &[f64], b: &[f64], x: &[f64]| -> f64 {
        let mut y = vec![0.0; outputs];
        dense_forward(w, b, x, &mut y);
        y.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum()
    };
    let mut y = vec![0.0; outputs];
    dense_forward(&w, &b, &x, &mut y);
    let dy: Vec<f64> = y.iter().zip(&t).map(|(a, b)| 2.0 * (a - b)).collect();
    let (mut dw, mut db, mut dx) = (vec![0.0; w.len()], vec![0.0; b.len()], vec![0.0; x.len()]);
    dense_backward(&w, &x, &dy, &mut dw, &mut db, Some(&mut dx));

    let mut worst = 0.0f64;
    let mut check = |analytic: &[f64], which: usize| {
        for i in 0..analytic.len() {
            let (mut w2, mut b2, mut x2) = (w.clone(), b.clone(), x.clone());
            let target = match which {
                0 => &mut w2,
                1 => &mut b2,
                _ => &mut x2,
            };
            let v = target[i];
            let h = 1e-5 * v.abs().max(1.0);
            target[i] = v + h;
            let up = loss(&w2, &b2, &x2);
            let target = match which {
                0 => &mut w2,
                1 => &mut b2,
                _ => &mut x2,
            };
            target[i] = v - h;
            let down = loss(&w2, &b2, &x2);
            worst = worst.max(rel_error(analytic[i], (up - down) / (2.0 * h)));
        }
    };
    check(&dw, 0);
    check(&db, 1);
    check(&dx, 2);
    worst
}
