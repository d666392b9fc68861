//! Convolutional VAE over two-channel flow fields.
//!
//! Encoder: four `k=4, s=2, p=1` convolutions with ReLU (2→32→64→128→256
//! channels by default, halving the spatial size each time), then two affine
//! heads on the flattened last-conv volume giving `μ` and `log σ²`.
//! Decoder: affine map back to the last-conv volume, ReLU, then four
//! transposed convolutions mirroring the encoder (ReLU between, linear out).

mod layers;
mod network;
mod weights_io;

pub use layers::ConvGeom;
pub use network::{enc_geom, param_layout, DecoderCache, EncoderCache, TensorKind, TensorSpec, Vae};
pub use weights_io::{load_weights, load_weights_expecting, save_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

pub(crate) use layers::{conv_backward, dense_backward, dense_forward, tconv_backward};

use crate::error::{Error, Result};
use crate::gridio::{resize_bilinear, Grid};
use crate::linalg::Real;

pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PADDING: usize = 1;
pub const INPUT_CHANNELS: usize = 2;
pub const LOGVAR_CLAMP: f64 = 10.0;

/// Shape of the network and the flow normalisation it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeArchitecture {
    /// Square input side; divisible by 16.
    pub input_size: usize,
    pub conv_channels: [usize; 4],
    pub latent_dim: usize,
    /// Flow magnitude (px/frame) mapped to ±1 by [`preprocess`].
    pub max_flow: f32,
}

impl Default for VaeArchitecture {
    fn default() -> Self {
        VaeArchitecture {
            input_size: 64,
            conv_channels: [32, 64, 128, 256],
            latent_dim: 24,
            max_flow: 8.0,
        }
    }
}

impl VaeArchitecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(16) {
            return Err(Error::validation(format!(
                "input_size {} is not a positive multiple of 16",
                self.input_size
            )));
        }
        if self.conv_channels.contains(&0) {
            return Err(Error::validation("conv channel counts must be positive"));
        }
        if self.latent_dim == 0 {
            return Err(Error::validation("latent_dim must be >= 1"));
        }
        if !(self.max_flow > 0.0 && self.max_flow.is_finite()) {
            return Err(Error::validation("max_flow must be positive"));
        }
        Ok(())
    }

    /// `[2, c1, c2, c3, c4]`.
    pub fn encoder_channels(&self) -> [usize; 5] {
        let c = self.conv_channels;
        [INPUT_CHANNELS, c[0], c[1], c[2], c[3]]
    }

    /// Side of the last conv volume.
    pub fn bottleneck_size(&self) -> usize {
        self.input_size / 16
    }

    pub fn flat_features(&self) -> usize {
        self.conv_channels[3] * self.bottleneck_size() * self.bottleneck_size()
    }

    pub fn input_len(&self) -> usize {
        INPUT_CHANNELS * self.input_size * self.input_size
    }
}

/// The network in inference precision.
pub type VaeWeights = Vae<f32>;

/// Diagonal Gaussian `q(z|x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    pub mu: Vec<f64>,
    /// log σ², clamped to ±[`LOGVAR_CLAMP`].
    pub logvar: Vec<f64>,
}

impl LatentPosterior {
    pub fn standard(m: usize) -> Self {
        LatentPosterior {
            mu: vec![0.0; m],
            logvar: vec![0.0; m],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeOutput {
    pub posterior: LatentPosterior,
    /// Post-ReLU output of the fourth conv, `c4 × s/16 × s/16`.
    pub last_conv_activations: Grid,
}

fn check_input(arch: &VaeArchitecture, flow: &Grid) -> Result<()> {
    let s = arch.input_size;
    if flow.shape() != (INPUT_CHANNELS, s, s) {
        return Err(Error::shape(format!(
            "encoder expects {INPUT_CHANNELS}x{s}x{s}, got {:?}",
            flow.shape()
        )));
    }
    flow.ensure_finite("encoder input")
}

/// Posterior parameters and last-conv activations for a preprocessed flow field.
pub fn encode<T: Real>(weights: &Vae<T>, flow: &Grid) -> Result<EncodeOutput> {
    let arch = weights.arch();
    check_input(arch, flow)?;
    let x: Vec<T> = flow.data().iter().map(|&v| T::of_f64(v as f64)).collect();
    let cache = weights.forward_encoder(&x);
    let to64 = |v: &[T]| v.iter().map(|p| p.as_f64()).collect::<Vec<_>>();
    let posterior = LatentPosterior {
        mu: to64(&cache.mu),
        logvar: to64(&cache.logvar),
    };
    if posterior.mu.iter().chain(&posterior.logvar).any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite posterior parameters"));
    }
    let b = arch.bottleneck_size();
    let acts = cache.acts[3].iter().map(|v| v.as_f64() as f32).collect();
    let last_conv_activations = Grid::from_vec(arch.conv_channels[3], b, b, acts)?;
    Ok(EncodeOutput {
        posterior,
        last_conv_activations,
    })
}

/// Reconstruction `2 × s × s` from a latent vector.
pub fn decode<T: Real>(weights: &Vae<T>, z: &[f64]) -> Result<Grid> {
    let arch = weights.arch();
    if z.len() != arch.latent_dim {
        return Err(Error::shape(format!(
            "latent has {} dims, decoder expects {}",
            z.len(),
            arch.latent_dim
        )));
    }
    let zt: Vec<T> = z.iter().map(|&v| T::of_f64(v)).collect();
    let cache = weights.forward_decoder(&zt);
    let s = arch.input_size;
    let out = cache.output().iter().map(|v| v.as_f64() as f32).collect();
    Grid::from_vec(INPUT_CHANNELS, s, s, out)
}

/// `z = μ + exp(log σ² / 2)·noise`.
pub fn reparameterize(posterior: &LatentPosterior, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != posterior.dim() {
        return Err(Error::shape(format!(
            "noise has {} dims, posterior has {}",
            noise.len(),
            posterior.dim()
        )));
    }
    Ok(posterior
        .mu
        .iter()
        .zip(&posterior.logvar)
        .zip(noise)
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// Nonconformity score: summed per-dimension KL divergence of the posterior
/// from the standard-normal prior,
/// `α = Σ ½(μᵢ² + exp(log σᵢ²) − log σᵢ² − 1)`.
pub fn kl_score(posterior: &LatentPosterior) -> f64 {
    posterior
        .mu
        .iter()
        .zip(&posterior.logvar)
        .map(|(&m, &lv)| kl_term(m, lv))
        .sum()
}

#[inline]
pub(crate) fn kl_term(mu: f64, logvar: f64) -> f64 {
    // exp_m1 keeps small-logvar terms accurate; the sum is ≥ 0 analytically.
    (0.5 * (mu * mu + logvar.exp_m1() - logvar)).max(0.0)
}

/// Resize to the network input, clamp to `±max_flow` and scale to `[-1, 1]`.
pub fn preprocess(flow: &Grid, arch: &VaeArchitecture, max_flow: f32) -> Result<Grid> {
    if !(max_flow > 0.0 && max_flow.is_finite()) {
        return Err(Error::validation(format!("max_flow must be positive, got {max_flow}")));
    }
    if flow.channels() != INPUT_CHANNELS {
        return Err(Error::shape(format!(
            "flow must have {INPUT_CHANNELS} channels, got {}",
            flow.channels()
        )));
    }
    flow.ensure_finite("flow")?;
    let mut g = resize_bilinear(flow, arch.input_size, arch.input_size);
    for v in g.data_mut() {
        *v = v.clamp(-max_flow, max_flow) / max_flow;
    }
    Ok(g)
}

#[cfg(test)]
mod tests;
