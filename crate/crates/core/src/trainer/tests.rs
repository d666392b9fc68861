use super::*;
use crate::vae::{Vae, VaeArchitecture};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) fn tiny_arch() -> VaeArchitecture {
    VaeArchitecture {
        input_size: 16,
        conv_channels: [4, 6, 8, 10],
        latent_dim: 4,
        max_flow: 8.0,
    }
}

fn tiny_sample(arch: &VaeArchitecture, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..arch.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn smooth_flows(n: usize, size: usize, seed: u64) -> Vec<Grid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (a, b, p): (f32, f32, f32) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(0.0..6.0));
            Grid::from_fn(2, size, size, |c, y, x| {
                let t = (x as f32 * 0.3 + y as f32 * 0.2 + p).sin();
                if c == 0 { a + 0.2 * t } else { b - 0.1 * t }
            })
        })
        .collect()
}

#[test]
fn elbo_examples() {
    let post = LatentPosterior::standard(3);
    let t = Grid::from_fn(2, 4, 4, |c, y, x| (c + y + x) as f32 * 0.1);
    let l = elbo_loss(&t, &t, &post, 1.0).unwrap();
    assert_eq!(l.total, 0.0);
    let mut r = t.clone();
    let v = r.get(1, 2, 3);
    r.set(1, 2, 3, v + 0.1);
    let l = elbo_loss(&r, &t, &post, 1.0).unwrap();
    assert!((l.total - 0.01).abs() < 1e-8);
    let off = LatentPosterior {
        mu: vec![1.0, 0.0, 0.0],
        logvar: vec![0.0; 3],
    };
    let l = elbo_loss(&r, &t, &off, 0.0).unwrap();
    assert_eq!(l.total, l.recon);
    assert_eq!(l.kl, 0.5);
    assert!(elbo_loss(&Grid::zeros(2, 4, 4), &Grid::zeros(2, 4, 5), &post, 1.0).is_err());
}

#[test]
fn tiny_net_gradients_match_finite_differences() {
    let arch = tiny_arch();
    let net = Vae::<f32>::init(arch.clone(), 3).cast::<f64>();
    let x = tiny_sample(&arch, 4);
    let idx = random_param_indices(&net, 120, 5);
    assert!(idx.len() >= 100);
    let zero = vec![0.0; arch.latent_dim];
    let r = gradient_check(&net, &x, &zero, 1.0, &idx);
    assert!(r.max_rel_error < 1e-3, "{r:?}");
    let r = gradient_check(&net, &x, &zero, 0.0, &idx);
    assert!(r.max_rel_error < 1e-3, "{r:?}");
    let noise = [0.5, -1.0, 0.3, 2.0];
    let r = gradient_check(&net, &x, &noise, 1.0, &idx);
    assert!(r.max_rel_error < 1e-3, "{r:?}");
}

#[test]
fn dense_layer_gradients_are_exact() {
    assert!(dense_gradient_check(7, 5, 1) < 1e-6);
}

#[test]
fn zero_epochs_returns_initial_weights() {
    let arch = tiny_arch();
    let cfg = TrainConfig {
        arch: arch.clone(),
        epochs: 0,
        seed: 4,
        ..Default::default()
    };
    let (w, log) = train(&smooth_flows(3, 16, 1), &cfg).unwrap();
    assert_eq!(w, VaeWeights::init(arch, 4));
    assert!(log.epochs.is_empty());
}

#[test]
fn training_is_bit_reproducible_across_exec_modes() {
    let cfg = TrainConfig {
        arch: tiny_arch(),
        epochs: 3,
        batch_size: 7,
        seed: 9,
        ..Default::default()
    };
    let data = smooth_flows(20, 16, 2);
    let (w1, l1) = train_with(&data, &cfg, Exec::Parallel).unwrap();
    let (w2, l2) = train_with(&data, &cfg, Exec::Sequential).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(w1, w2);
    assert_eq!(l1.to_csv().lines().count(), 4);
    assert!(l1.to_csv().starts_with("epoch,mean_total,mean_recon,mean_kl\n1,"));
}

#[test]
fn recon_loss_decreases_without_kl() {
    // full-width channels at 16x16: enough capacity to pass the input through
    let arch = VaeArchitecture {
        input_size: 16,
        ..Default::default()
    };
    let data = smooth_flows(10, 16, 3);
    for seed in 0..4 {
        let cfg = TrainConfig {
            arch: arch.clone(),
            epochs: 5,
            batch_size: 5,
            beta_kl: 0.0,
            seed,
            ..Default::default()
        };
        let (_, log) = train(&data, &cfg).unwrap();
        for pair in log.epochs.windows(2) {
            assert!(pair[1].mean_recon < pair[0].mean_recon, "seed {seed}: {:?}", log.epochs);
        }
    }
}

#[test]
fn train_rejects_bad_input() {
    let cfg = TrainConfig {
        arch: tiny_arch(),
        ..Default::default()
    };
    assert!(matches!(train(&[], &cfg), Err(Error::Validation(_))));
    assert!(matches!(train(&[Grid::zeros(2, 32, 32)], &cfg), Err(Error::Shape(_))));
    let bad = TrainConfig {
        batch_size: 0,
        ..cfg
    };
    assert!(train(&smooth_flows(2, 16, 0), &bad).is_err());
}

#[test]
fn split_examples() {
    let items: Vec<usize> = (0..100).collect();
    let (tr, cal) = split_calibration(&items, 0.2, 7).unwrap();
    assert_eq!((tr.len(), cal.len()), (80, 20));
    let mut all: Vec<usize> = tr.iter().chain(&cal).copied().collect();
    all.sort();
    assert_eq!(all, items);
    assert_eq!(split_calibration(&items, 0.2, 7).unwrap(), (tr, cal));
    assert!(split_calibration(&items[..2], 0.1, 0).is_err());
    assert!(split_calibration(&items, 1.0, 0).is_err());
}

#[test]
fn split_permutations_differ_across_seeds() {
    let items: Vec<usize> = (0..50).collect();
    let splits: Vec<_> = (0..20).map(|s| split_calibration(&items, 0.3, s).unwrap()).collect();
    let mut distinct = 0;
    for i in 0..splits.len() {
        for j in i + 1..splits.len() {
            if splits[i] != splits[j] {
                distinct += 1;
            }
        }
    }
    assert_eq!(distinct, 20 * 19 / 2);
}

#[test]
fn calibration_examples() {
    let arch = tiny_arch();
    let w = VaeWeights::init(arch, 2);
    let flows = smooth_flows(5, 16, 9);
    let one = build_calibration(&w, &flows[..1]).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one.scores()[0], score(&w, &flows[0]).unwrap());
    let dup = build_calibration(&w, &[flows[1].clone(), flows[1].clone()]).unwrap();
    assert_eq!(dup.scores()[0], dup.scores()[1]);
    let a = build_calibration(&w, &flows).unwrap();
    let mut rev = flows.clone();
    rev.reverse();
    assert_eq!(a, build_calibration(&w, &rev).unwrap());
    assert!(a.scores().windows(2).all(|p| p[0] <= p[1]));
    assert!(build_calibration(&w, &[]).is_err());
}
