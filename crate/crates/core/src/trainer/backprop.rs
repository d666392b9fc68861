//! Per-sample ELBO loss and its gradient through the fixed architecture.

use crate::linalg::Real;
use crate::vae::{self, enc_geom, kl_term, TensorKind, TensorSpec, Vae, LOGVAR_CLAMP};

/// Loss terms of one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

impl std::ops::AddAssign for LossTerms {
    fn add_assign(&mut self, o: Self) {
        self.total += o.total;
        self.recon += o.recon;
        self.kl += o.kl;
    }
}

/// Mutable weight and bias gradient slices of one tensor pair.
fn wb_mut<'a, T>(grad: &'a mut [T], layout: &[TensorSpec], kind: TensorKind) -> (&'a mut [T], &'a mut [T]) {
    let wi = layout
        .iter()
        .position(|s| s.kind == kind && !s.is_bias)
        .expect("tensor in layout");
    let (w, b) = (&layout[wi], &layout[wi + 1]);
    debug_assert_eq!(w.offset + w.len(), b.offset);
    let (head, tail) = grad[w.offset..b.offset + b.len()].split_at_mut(w.len());
    (head, tail)
}

fn mask_relu<T: Real>(grad: &mut [T], act: &[T]) {
    for (g, &a) in grad.iter_mut().zip(act) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Forward pass without gradients: `SSE(decode(μ + σ·noise), x) + β·KL`.
pub fn sample_loss<T: Real>(net: &Vae<T>, x: &[T], noise: &[T], beta_kl: f64) -> LossTerms {
    let enc = net.forward_encoder(x);
    let z = latent(&enc.mu, &enc.logvar, noise);
    let dec = net.forward_decoder(&z);
    terms(dec.output(), x, &enc.mu, &enc.logvar, beta_kl)
}

fn latent<T: Real>(mu: &[T], logvar: &[T], noise: &[T]) -> Vec<T> {
    let half = T::of_f64(0.5);
    mu.iter()
        .zip(logvar)
        .zip(noise)
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect()
}

fn terms<T: Real>(recon: &[T], x: &[T], mu: &[T], logvar: &[T], beta_kl: f64) -> LossTerms {
    let sse: f64 = recon
        .iter()
        .zip(x)
        .map(|(&r, &t)| {
            let d = r.as_f64() - t.as_f64();
            d * d
        })
        .sum();
    let kl: f64 = mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| kl_term(m.as_f64(), lv.as_f64()))
        .sum();
    LossTerms {
        total: sse + beta_kl * kl,
        recon: sse,
        kl,
    }
}

/// Adds `scale · ∂loss/∂params` into `grad` and returns the loss terms.
pub fn accumulate_gradient<T: Real>(
    net: &Vae<T>,
    x: &[T],
    noise: &[T],
    beta_kl: f64,
    scale: f64,
    grad: &mut [T],
) -> LossTerms {
    let arch = net.arch();
    let layout = net.layout();
    let enc = net.forward_encoder(x);
    let z = latent(&enc.mu, &enc.logvar, noise);
    let dec = net.forward_decoder(&z);
    let loss = terms(dec.output(), x, &enc.mu, &enc.logvar, beta_kl);

    let s = T::of_f64(scale);
    let two_s = T::of_f64(2.0 * scale);
    let mut d: Vec<T> = dec
        .output()
        .iter()
        .zip(x)
        .map(|(&r, &t)| two_s * (r - t))
        .collect();

    // decoder, last transposed conv first
    for l in (0..4).rev() {
        let g = enc_geom(arch, 3 - l);
        let kind = TensorKind::DecoderDeconv(l);
        let mut dx = vec![T::zero(); g.out_len()];
        let w = net.weight(kind);
        let (dw, db) = wb_mut(grad, layout, kind);
        vae::tconv_backward(w, &dec.acts[l], &d, &g, dw, db, Some(&mut dx));
        mask_relu(&mut dx, &dec.acts[l]);
        d = dx;
    }
    let m = arch.latent_dim;
    let mut dz = vec![T::zero(); m];
    {
        let w = net.weight(TensorKind::DecoderDense);
        let (dw, db) = wb_mut(grad, layout, TensorKind::DecoderDense);
        vae::dense_backward(w, &z, &d, dw, db, Some(&mut dz));
    }

    let beta = T::of_f64(beta_kl);
    let half = T::of_f64(0.5);
    let clamp = T::of_f64(LOGVAR_CLAMP);
    let mut dmu = vec![T::zero(); m];
    let mut dlv = vec![T::zero(); m];
    for i in 0..m {
        let (mu, lv, raw) = (enc.mu[i], enc.logvar[i], enc.logvar_raw[i]);
        let sd = (half * lv).exp();
        dmu[i] = dz[i] + s * beta * mu;
        let g = dz[i] * noise[i] * half * sd + s * beta * half * (lv.exp() - T::one());
        dlv[i] = if raw.abs() > clamp { T::zero() } else { g };
    }
    let flat = &enc.acts[3];
    let mut dflat = vec![T::zero(); flat.len()];
    for (kind, dy) in [(TensorKind::MuHead, &dmu), (TensorKind::LogvarHead, &dlv)] {
        let w = net.weight(kind);
        let (dw, db) = wb_mut(grad, layout, kind);
        vae::dense_backward(w, flat, dy, dw, db, Some(&mut dflat));
    }

    let mut d = dflat;
    for l in (0..4).rev() {
        mask_relu(&mut d, &enc.acts[l]);
        let g = enc_geom(arch, l);
        let kind = TensorKind::EncoderConv(l);
        let w = net.weight(kind);
        let (dw, db) = wb_mut(grad, layout, kind);
        if l > 0 {
            let mut dx = vec![T::zero(); g.in_len()];
            vae::conv_backward(w, &enc.cols[l], &d, &g, dw, db, Some(&mut dx));
            d = dx;
        } else {
            vae::conv_backward(w, &enc.cols[l], &d, &g, dw, db, None);
        }
    }
    loss
}
