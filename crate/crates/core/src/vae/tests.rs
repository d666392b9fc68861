use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn small_arch() -> VaeArchitecture {
    VaeArchitecture {
        input_size: 32,
        conv_channels: [4, 6, 8, 10],
        latent_dim: 5,
        max_flow: 8.0,
    }
}

fn fixture_input(arch: &VaeArchitecture, seed: u64) -> Grid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = arch.input_size;
    Grid::from_fn(2, s, s, |_, _, _| rng.random_range(-1.0f32..1.0))
}

/// Straightforward 64-bit forward pass with direct convolution loops.
mod reference {
    use super::*;

    pub fn conv(w: &[f64], b: &[f64], x: &[f64], ic: usize, oc: usize, n: usize) -> Vec<f64> {
        let on = n / 2;
        let mut y = vec![0.0; oc * on * on];
        for o in 0..oc {
            for oy in 0..on {
                for ox in 0..on {
                    let mut acc = b[o];
                    for c in 0..ic {
                        for ky in 0..4 {
                            for kx in 0..4 {
                                let iy = (2 * oy + ky) as isize - 1;
                                let ix = (2 * ox + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= n as isize || ix >= n as isize {
                                    continue;
                                }
                                acc += w[((o * ic + c) * 4 + ky) * 4 + kx]
                                    * x[(c * n + iy as usize) * n + ix as usize];
                            }
                        }
                    }
                    y[(o * on + oy) * on + ox] = acc;
                }
            }
        }
        y
    }

    pub fn tconv(w: &[f64], b: &[f64], x: &[f64], ic: usize, oc: usize, n: usize) -> Vec<f64> {
        let on = n * 2;
        let mut y = vec![0.0; oc * on * on];
        for o in 0..oc {
            for v in &mut y[o * on * on..(o + 1) * on * on] {
                *v = b[o];
            }
        }
        for i in 0..ic {
            for iy in 0..n {
                for ix in 0..n {
                    let xv = x[(i * n + iy) * n + ix];
                    for o in 0..oc {
                        for ky in 0..4 {
                            for kx in 0..4 {
                                let oy = (2 * iy + ky) as isize - 1;
                                let ox = (2 * ix + kx) as isize - 1;
                                if oy < 0 || ox < 0 || oy >= on as isize || ox >= on as isize {
                                    continue;
                                }
                                y[(o * on + oy as usize) * on + ox as usize] +=
                                    w[((i * oc + o) * 4 + ky) * 4 + kx] * xv;
                            }
                        }
                    }
                }
            }
        }
        y
    }

    pub fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
        b.iter()
            .enumerate()
            .map(|(o, &bo)| bo + x.iter().enumerate().map(|(i, &xi)| w[o * x.len() + i] * xi).sum::<f64>())
            .collect()
    }

    fn relu(v: Vec<f64>) -> Vec<f64> {
        v.into_iter().map(|x| x.max(0.0)).collect()
    }

    pub fn encode(net: &Vae<f64>, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ch = net.arch().encoder_channels();
        let mut a = x.to_vec();
        let mut n = net.arch().input_size;
        for l in 0..4 {
            let k = TensorKind::EncoderConv(l);
            a = relu(conv(net.weight(k), net.bias(k), &a, ch[l], ch[l + 1], n));
            n /= 2;
        }
        let mu = dense(net.weight(TensorKind::MuHead), net.bias(TensorKind::MuHead), &a);
        let lv = dense(net.weight(TensorKind::LogvarHead), net.bias(TensorKind::LogvarHead), &a)
            .into_iter()
            .map(|v| v.clamp(-10.0, 10.0))
            .collect();
        (mu, lv)
    }

    pub fn decode(net: &Vae<f64>, z: &[f64]) -> Vec<f64> {
        let ch = net.arch().encoder_channels();
        let mut a = relu(dense(
            net.weight(TensorKind::DecoderDense),
            net.bias(TensorKind::DecoderDense),
            z,
        ));
        let mut n = net.arch().bottleneck_size();
        for l in 0..4 {
            let k = TensorKind::DecoderDeconv(l);
            a = tconv(net.weight(k), net.bias(k), &a, ch[4 - l], ch[3 - l], n);
            if l < 3 {
                a = relu(a);
            }
            n *= 2;
        }
        a
    }
}

fn assert_rel_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for (g, w) in got.iter().zip(want) {
        assert!(
            (g - w).abs() <= tol * w.abs().max(scale),
            "{g} vs {w} (scale {scale})"
        );
    }
}

#[test]
fn downsampling_chain() {
    let arch = VaeArchitecture::default();
    let sizes: Vec<_> = (0..4).map(|l| (enc_geom(&arch, l).out_c, enc_geom(&arch, l).out_h())).collect();
    assert_eq!(sizes, vec![(32, 32), (64, 16), (128, 8), (256, 4)]);
    assert_eq!(arch.flat_features(), 256 * 16);
    let w = VaeWeights::init(arch.clone(), 1);
    let out = encode(&w, &Grid::zeros(2, 64, 64)).unwrap();
    assert_eq!(out.last_conv_activations.shape(), (256, 4, 4));
    assert_eq!(out.posterior.dim(), 24);
}

#[test]
fn zero_weights_pass_only_biases() {
    let arch = small_arch();
    let mut w = VaeWeights::zeros(arch.clone());
    for (i, b) in w.bias_mut(TensorKind::MuHead).iter_mut().enumerate() {
        *b = i as f32 * 0.5;
    }
    for (i, b) in w.bias_mut(TensorKind::LogvarHead).iter_mut().enumerate() {
        *b = -(i as f32);
    }
    let out = encode(&w, &fixture_input(&arch, 3)).unwrap();
    assert_eq!(out.posterior.mu, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    assert_eq!(out.posterior.logvar, vec![0.0, -1.0, -2.0, -3.0, -4.0]);

    let zero = VaeWeights::zeros(arch);
    let recon = decode(&zero, &[1.0, -2.0, 3.0, 0.5, 0.1]).unwrap();
    assert!(recon.data().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_passes_are_deterministic() {
    let arch = small_arch();
    let w = VaeWeights::init(arch.clone(), 11);
    let x = Grid::zeros(2, 32, 32);
    assert_eq!(encode(&w, &x).unwrap(), encode(&w, &x).unwrap());
    let z = [0.3, -0.1, 0.0, 1.0, 2.0];
    assert_eq!(decode(&w, &z).unwrap(), decode(&w, &z).unwrap());
}

#[test]
fn encode_matches_reference_forward() {
    for arch in [small_arch(), VaeArchitecture::default()] {
        let w = VaeWeights::init(arch.clone(), 7);
        // Non-zero biases so the reference exercises them.
        let mut w = w;
        let n = w.param_count();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for spec in w.layout().to_vec() {
            if spec.is_bias {
                for p in &mut w.params_mut()[spec.range()] {
                    *p = rng.random_range(-0.05..0.05);
                }
            }
        }
        assert_eq!(w.param_count(), n);
        let x = fixture_input(&arch, 42);
        let out = encode(&w, &x).unwrap();
        let xr: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
        let (mu, lv) = reference::encode(&w.cast::<f64>(), &xr);
        assert_rel_close(&out.posterior.mu, &mu, 1e-4);
        assert_rel_close(&out.posterior.logvar, &lv, 1e-4);

        let z: Vec<f64> = (0..arch.latent_dim).map(|i| (i as f64 * 0.7).sin()).collect();
        let recon = decode(&w, &z).unwrap();
        let want = reference::decode(&w.cast::<f64>(), &z);
        let got: Vec<f64> = recon.data().iter().map(|&v| v as f64).collect();
        assert_rel_close(&got, &want, 1e-4);
    }
}

#[test]
fn encode_rejects_wrong_shape() {
    let w = VaeWeights::init(small_arch(), 1);
    assert!(matches!(encode(&w, &Grid::zeros(2, 64, 64)), Err(Error::Shape(_))));
    assert!(matches!(encode(&w, &Grid::zeros(1, 32, 32)), Err(Error::Shape(_))));
    assert!(matches!(decode(&w, &[0.0; 3]), Err(Error::Shape(_))));
}

#[test]
fn reparameterize_examples() {
    let p = LatentPosterior {
        mu: vec![0.5, -1.0, 2.0],
        logvar: vec![0.0, 0.0, 0.0],
    };
    assert_eq!(reparameterize(&p, &[0.0; 3]).unwrap(), p.mu);
    assert_eq!(reparameterize(&p, &[1.0; 3]).unwrap(), vec![1.5, 0.0, 3.0]);
    let q = LatentPosterior {
        mu: vec![0.0, 0.0],
        logvar: vec![2.0 * std::f64::consts::LN_2; 2],
    };
    let z = reparameterize(&q, &[1.0, 0.0]).unwrap();
    assert!((z[0] - 2.0).abs() < 1e-12);
    assert_eq!(z[1], 0.0);
    assert!(reparameterize(&q, &[1.0]).is_err());
}

#[test]
fn kl_closed_forms() {
    assert_eq!(kl_score(&LatentPosterior::standard(24)), 0.0);
    let one = |mu: f64, lv: f64| LatentPosterior {
        mu: vec![mu],
        logvar: vec![lv],
    };
    assert!((kl_score(&one(1.0, 0.0)) - 0.5).abs() < 1e-15);
    let e = std::f64::consts::E;
    assert!((kl_score(&one(0.0, 1.0)) - 0.5 * (e - 2.0)).abs() < 1e-14);
    assert!((kl_score(&one(0.0, 1.0)) - 0.35914).abs() < 1e-5);
}

/// Monte-Carlo KL(q‖p) = E_q[log q(z) − log p(z)], independent of the closed form.
pub(crate) fn monte_carlo_kl(p: &LatentPosterior, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..samples {
        let mut acc = 0.0;
        for (&m, &lv) in p.mu.iter().zip(&p.logvar) {
            let sd = (0.5 * lv).exp();
            let e: f64 = rng.sample(StandardNormal);
            let z = m + sd * e;
            // log q − log p; the 2π terms cancel
            acc += -0.5 * lv - 0.5 * e * e + 0.5 * z * z;
        }
        total += acc;
    }
    total / samples as f64
}

#[test]
fn kl_matches_monte_carlo() {
    let p = LatentPosterior {
        mu: vec![1.0, -0.5, 2.0, 0.3],
        logvar: vec![0.5, -1.0, 0.2, 1.0],
    };
    let mc = monte_carlo_kl(&p, 1_000_000, 5);
    let exact = kl_score(&p);
    assert!((mc - exact).abs() / exact < 0.01, "mc {mc} exact {exact}");
}

#[test]
fn kl_structure() {
    let p = LatentPosterior {
        mu: vec![0.3, -1.2, 2.0],
        logvar: vec![-0.5, 0.7, 0.0],
    };
    let perm = LatentPosterior {
        mu: vec![2.0, 0.3, -1.2],
        logvar: vec![0.0, -0.5, 0.7],
    };
    assert!((kl_score(&p) - kl_score(&perm)).abs() < 1e-12);
    let parts: f64 = (0..3)
        .map(|i| {
            kl_score(&LatentPosterior {
                mu: vec![p.mu[i]],
                logvar: vec![p.logvar[i]],
            })
        })
        .sum();
    assert!((kl_score(&p) - parts).abs() < 1e-12);
    // strict midpoint convexity in mu at fixed logvar
    let at = |m: f64| {
        kl_score(&LatentPosterior {
            mu: vec![m],
            logvar: vec![0.4],
        })
    };
    for (a, b) in [(-1.0, 2.0), (0.0, 0.5), (-3.0, -2.9)] {
        assert!(at(0.5 * (a + b)) < 0.5 * (at(a) + at(b)));
    }
    assert!(kl_score(&p) > 0.0);
}

#[test]
fn preprocess_examples() {
    let arch = VaeArchitecture::default();
    let z = preprocess(&Grid::zeros(2, 64, 64), &arch, 8.0).unwrap();
    assert!(z.data().iter().all(|&v| v == 0.0));

    let mut c = Grid::zeros(2, 64, 64);
    c.channel_mut(0).iter_mut().for_each(|v| *v = 8.0);
    let p = preprocess(&c, &arch, 8.0).unwrap();
    assert!(p.channel(0).iter().all(|&v| v == 1.0));
    assert!(p.channel(1).iter().all(|&v| v == 0.0));

    let mut big = Grid::zeros(2, 64, 64);
    big.channel_mut(1).iter_mut().for_each(|v| *v = -100.0);
    let p = preprocess(&big, &arch, 8.0).unwrap();
    assert!(p.channel(1).iter().all(|&v| v == -1.0));

    // constant-gradient field at 128×128 → 2×2 block means at 64×64
    let ramp = Grid::from_fn(2, 128, 128, |c, y, x| {
        let s = if c == 0 { 0.03 } else { -0.02 };
        s * x as f32 + 0.01 * y as f32 - 1.0
    });
    let p = preprocess(&ramp, &arch, 8.0).unwrap();
    assert_eq!(p.shape(), (2, 64, 64));
    for c in 0..2 {
        for y in 0..64 {
            for x in 0..64 {
                let block = (ramp.get(c, 2 * y, 2 * x)
                    + ramp.get(c, 2 * y + 1, 2 * x)
                    + ramp.get(c, 2 * y, 2 * x + 1)
                    + ramp.get(c, 2 * y + 1, 2 * x + 1))
                    / 4.0;
                assert!((p.get(c, y, x) - block / 8.0).abs() < 1e-5);
            }
        }
    }
    assert!(matches!(preprocess(&ramp, &arch, 0.0), Err(Error::Validation(_))));
}

#[test]
fn weights_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let arch = small_arch();
    let w = VaeWeights::init(arch.clone(), 9);
    let p = dir.path().join("w.vaew");
    save_weights(&p, &w).unwrap();
    let back = load_weights(&p).unwrap();
    assert_eq!(back.arch(), w.arch());
    assert!(back.params().iter().zip(w.params()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let mut other = arch.clone();
    other.latent_dim = 16;
    assert!(matches!(load_weights_expecting(&p, &other), Err(Error::Shape(_))));
    assert!(load_weights_expecting(&p, &arch).is_ok());

    let bytes = std::fs::read(&p).unwrap();
    let t = dir.path().join("t.vaew");
    std::fs::write(&t, &bytes[..bytes.len() - 10]).unwrap();
    assert!(matches!(load_weights(&t), Err(Error::Io { .. })));
    std::fs::write(&t, &bytes[..10]).unwrap();
    assert!(matches!(load_weights(&t), Err(Error::Io { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'Q';
    std::fs::write(&t, &bad).unwrap();
    assert!(matches!(load_weights(&t), Err(Error::Format(_))));
}

#[test]
fn default_m24_file_rejected_for_m16() {
    let dir = tempfile::tempdir().unwrap();
    let w = VaeWeights::init(VaeArchitecture::default(), 1);
    let p = dir.path().join("w.vaew");
    save_weights(&p, &w).unwrap();
    let expect = VaeArchitecture {
        latent_dim: 16,
        ..Default::default()
    };
    let err = load_weights_expecting(&p, &expect).unwrap_err();
    assert!(err.to_string().contains("latent 24"));
}
