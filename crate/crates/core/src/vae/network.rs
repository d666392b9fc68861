//! Parameter layout, initialisation and cached forward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, ConvGeom};
use super::{VaeArchitecture, KERNEL, PADDING, STRIDE};
use crate::linalg::Real;

/// Role of one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    EncoderConv(usize),
    MuHead,
    LogvarHead,
    DecoderDense,
    DecoderDeconv(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub kind: TensorKind,
    pub is_bias: bool,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Number of inputs feeding one output unit, for initialisation.
    pub fan_in: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn name(&self) -> String {
        let base = match self.kind {
            TensorKind::EncoderConv(l) => format!("enc{l}"),
            TensorKind::MuHead => "mu".into(),
            TensorKind::LogvarHead => "logvar".into(),
            TensorKind::DecoderDense => "dec_dense".into(),
            TensorKind::DecoderDeconv(l) => format!("dec{l}"),
        };
        format!("{base}.{}", if self.is_bias { "b" } else { "w" })
    }
}

/// Tensors in file order: encoder convs, μ head, log σ² head, decoder dense,
/// decoder transposed convs; each as weight then bias.
pub fn param_layout(arch: &VaeArchitecture) -> Vec<TensorSpec> {
    let mut specs = Vec::new();
    let mut offset = 0;
    let mut push = |kind, is_bias, shape: Vec<usize>, fan_in| {
        let spec = TensorSpec {
            kind,
            is_bias,
            shape,
            offset,
            fan_in,
        };
        offset += spec.len();
        specs.push(spec);
    };
    let chans = arch.encoder_channels();
    let kk = KERNEL * KERNEL;
    for l in 0..4 {
        let (i, o) = (chans[l], chans[l + 1]);
        push(TensorKind::EncoderConv(l), false, vec![o, i, KERNEL, KERNEL], i * kk);
        push(TensorKind::EncoderConv(l), true, vec![o], i * kk);
    }
    let f = arch.flat_features();
    let m = arch.latent_dim;
    for kind in [TensorKind::MuHead, TensorKind::LogvarHead] {
        push(kind, false, vec![m, f], f);
        push(kind, true, vec![m], f);
    }
    push(TensorKind::DecoderDense, false, vec![f, m], m);
    push(TensorKind::DecoderDense, true, vec![f], m);
    // Each output pixel of a stride-2, k=4 transposed conv sees 2x2 taps per input channel.
    let taps = (KERNEL / STRIDE) * (KERNEL / STRIDE);
    for l in 0..4 {
        let (i, o) = (chans[4 - l], chans[3 - l]);
        push(TensorKind::DecoderDeconv(l), false, vec![i, o, KERNEL, KERNEL], i * taps);
        push(TensorKind::DecoderDeconv(l), true, vec![o], i * taps);
    }
    specs
}

/// Encoder layer `l` geometry (`l` in 0..4). Decoder layer `l` uses
/// `enc_geom(3 - l)` run in adjoint.
pub fn enc_geom(arch: &VaeArchitecture, l: usize) -> ConvGeom {
    let chans = arch.encoder_channels();
    let size = arch.input_size >> l;
    ConvGeom {
        in_c: chans[l],
        in_h: size,
        in_w: size,
        out_c: chans[l + 1],
        k: KERNEL,
        stride: STRIDE,
        pad: PADDING,
    }
}

/// Architecture plus one flat parameter vector laid out per [`param_layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct Vae<T> {
    arch: VaeArchitecture,
    layout: Vec<TensorSpec>,
    params: Vec<T>,
}

/// Index of the weight tensor for `kind` in the layout; the bias follows it.
fn tensor_index(kind: TensorKind) -> usize {
    match kind {
        TensorKind::EncoderConv(l) => 2 * l,
        TensorKind::MuHead => 8,
        TensorKind::LogvarHead => 10,
        TensorKind::DecoderDense => 12,
        TensorKind::DecoderDeconv(l) => 14 + 2 * l,
    }
}

impl<T: Real> Vae<T> {
    pub fn zeros(arch: VaeArchitecture) -> Self {
        let layout = param_layout(&arch);
        let n = layout.last().map_or(0, |s| s.offset + s.len());
        Vae {
            arch,
            layout,
            params: vec![T::zero(); n],
        }
    }

    /// Fan-in-scaled uniform weights (bound `√(6/fan_in)`), zero biases.
    pub fn init(arch: VaeArchitecture, seed: u64) -> Self {
        let mut vae = Self::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for spec in vae.layout.clone() {
            if spec.is_bias {
                continue;
            }
            let bound = (6.0 / spec.fan_in as f64).sqrt();
            for p in &mut vae.params[spec.range()] {
                *p = T::of_f64(rng.random_range(-bound..bound));
            }
        }
        vae
    }

    pub fn from_params(arch: VaeArchitecture, params: Vec<T>) -> Option<Self> {
        let mut vae = Self::zeros(arch);
        if params.len() != vae.params.len() {
            return None;
        }
        vae.params = params;
        Some(vae)
    }

    pub fn arch(&self) -> &VaeArchitecture {
        &self.arch
    }

    pub fn layout(&self) -> &[TensorSpec] {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn weight(&self, kind: TensorKind) -> &[T] {
        &self.params[self.layout[tensor_index(kind)].range()]
    }

    pub fn bias(&self, kind: TensorKind) -> &[T] {
        &self.params[self.layout[tensor_index(kind) + 1].range()]
    }

    pub fn weight_mut(&mut self, kind: TensorKind) -> &mut [T] {
        let r = self.layout[tensor_index(kind)].range();
        &mut self.params[r]
    }

    pub fn bias_mut(&mut self, kind: TensorKind) -> &mut [T] {
        let r = self.layout[tensor_index(kind) + 1].range();
        &mut self.params[r]
    }

    /// Same parameters in another precision.
    pub fn cast<U: Real>(&self) -> Vae<U> {
        Vae {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| U::of_f64(p.as_f64())).collect(),
        }
    }

    /// Encoder pass; `x` is `2 × s × s`.
    pub fn forward_encoder(&self, x: &[T]) -> EncoderCache<T> {
        let mut acts = Vec::with_capacity(4);
        let mut cols = Vec::with_capacity(4);
        let mut input = x.to_vec();
        for l in 0..4 {
            let g = enc_geom(&self.arch, l);
            let kind = TensorKind::EncoderConv(l);
            let mut c = Vec::new();
            let mut y = vec![T::zero(); g.out_len()];
            layers::conv_forward(self.weight(kind), self.bias(kind), &input, &g, &mut c, &mut y);
            relu(&mut y);
            cols.push(c);
            acts.push(y.clone());
            input = y;
        }
        let m = self.arch.latent_dim;
        let flat = &acts[3];
        let mut mu = vec![T::zero(); m];
        let mut lv_raw = vec![T::zero(); m];
        layers::dense_forward(self.weight(TensorKind::MuHead), self.bias(TensorKind::MuHead), flat, &mut mu);
        layers::dense_forward(
            self.weight(TensorKind::LogvarHead),
            self.bias(TensorKind::LogvarHead),
            flat,
            &mut lv_raw,
        );
        let lo = T::of_f64(-super::LOGVAR_CLAMP);
        let hi = T::of_f64(super::LOGVAR_CLAMP);
        let logvar = lv_raw.iter().map(|&v| v.max(lo).min(hi)).collect();
        EncoderCache {
            cols,
            acts,
            mu,
            logvar_raw: lv_raw,
            logvar,
        }
    }

    /// Decoder pass from a latent vector.
    pub fn forward_decoder(&self, z: &[T]) -> DecoderCache<T> {
        let f = self.arch.flat_features();
        let mut h0 = vec![T::zero(); f];
        layers::dense_forward(
            self.weight(TensorKind::DecoderDense),
            self.bias(TensorKind::DecoderDense),
            z,
            &mut h0,
        );
        relu(&mut h0);
        let mut acts = vec![h0];
        for l in 0..4 {
            let g = enc_geom(&self.arch, 3 - l);
            let kind = TensorKind::DecoderDeconv(l);
            let mut y = vec![T::zero(); g.in_len()];
            layers::tconv_forward(self.weight(kind), self.bias(kind), &acts[l], &g, &mut y);
            if l < 3 {
                relu(&mut y);
            }
            acts.push(y);
        }
        DecoderCache { acts }
    }
}

fn relu<T: Real>(v: &mut [T]) {
    for x in v {
        if *x <= T::zero() {
            *x = T::zero();
        }
    }
}

/// Intermediates of one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    /// im2col matrices per conv layer.
    pub cols: Vec<Vec<T>>,
    /// Post-ReLU activations per conv layer; `acts[3]` is the last conv volume.
    pub acts: Vec<Vec<T>>,
    pub mu: Vec<T>,
    pub logvar_raw: Vec<T>,
    pub logvar: Vec<T>,
}

/// Intermediates of one decoder pass: `acts[0]` is the post-ReLU dense
/// output, `acts[1..=4]` the transposed-conv outputs (`acts[4]` linear).
#[derive(Debug, Clone)]
pub struct DecoderCache<T> {
    pub acts: Vec<Vec<T>>,
}

impl<T: Copy> DecoderCache<T> {
    pub fn output(&self) -> &[T] {
        &self.acts[4]
    }
}
