//! VAE training on the ELBO, gradient checking, and calibration sets.
//!
//! The per-sample objective is `SSE(x̂, x) + β·KL(q(z|x) ‖ N(0, I))` with
//! one reparameterisation draw per sample per step. Batches are split into
//! fixed-size groups whose gradients are summed in index order, so the result
//! does not depend on how many threads run the groups.

mod adam;
mod backprop;
mod gradcheck;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use adam::Adam;
pub use backprop::{accumulate_gradient, sample_loss, LossTerms};
pub use gradcheck::{dense_gradient_check, gradient_check, random_param_indices, GradCheckReport};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gridio::Grid;
use crate::vae::{self, LatentPosterior, VaeArchitecture, VaeWeights};

/// Samples per gradient group; fixed so summation order is thread-count independent.
const GROUP: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: VaeArchitecture,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub beta_kl: f64,
    pub seed: u64,
    pub calibration_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: VaeArchitecture::default(),
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            beta_kl: 1.0,
            seed: 0,
            calibration_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be >= 1"));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return Err(Error::validation("calibration_fraction must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if !(self.beta_kl >= 0.0 && self.beta_kl.is_finite()) {
            return Err(Error::validation("beta_kl must be >= 0"));
        }
        Ok(())
    }
}

/// Per-epoch mean loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_total: f64,
    pub mean_recon: f64,
    pub mean_kl: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLoss>,
}

impl TrainingLog {
    /// CSV with header `epoch,mean_total,mean_recon,mean_kl`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_total,mean_recon,mean_kl\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.mean_total, e.mean_recon, e.mean_kl
            ));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(self.to_csv().as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// ELBO terms for a given reconstruction and posterior:
/// `recon = Σ (x̂ − x)²`, `kl = kl_score(posterior)`, `total = recon + β·kl`.
pub fn elbo_loss(
    recon: &Grid,
    target: &Grid,
    posterior: &LatentPosterior,
    beta_kl: f64,
) -> Result<LossTerms> {
    if !recon.same_shape(target) {
        return Err(Error::shape(format!(
            "reconstruction {:?} vs target {:?}",
            recon.shape(),
            target.shape()
        )));
    }
    let recon_term: f64 = recon
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    let kl = vae::kl_score(posterior);
    Ok(LossTerms {
        total: recon_term + beta_kl * kl,
        recon: recon_term,
        kl,
    })
}

/// Trains from seeded initial weights with Adam for `config.epochs` epochs.
pub fn train(dataset: &[Grid], config: &TrainConfig) -> Result<(VaeWeights, TrainingLog)> {
    train_with(dataset, config, Exec::default())
}

pub fn train_with(
    dataset: &[Grid],
    config: &TrainConfig,
    exec: Exec,
) -> Result<(VaeWeights, TrainingLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::validation("training dataset is empty"));
    }
    let arch = &config.arch;
    let s = arch.input_size;
    if let Some(i) = dataset.iter().position(|g| g.shape() != (vae::INPUT_CHANNELS, s, s)) {
        return Err(Error::shape(format!(
            "training sample {i} has shape {:?}, expected (2, {s}, {s})",
            dataset[i].shape()
        )));
    }
    let mut net = VaeWeights::init(arch.clone(), config.seed);
    let mut log = TrainingLog::default();
    if config.epochs == 0 {
        return Ok((net, log));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_7a1e);
    let mut opt = Adam::new(
        net.param_count(),
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
    );
    let m = arch.latent_dim;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossTerms::default();
        for batch in order.chunks(config.batch_size) {
            let noise: Vec<Vec<f32>> = batch
                .iter()
                .map(|_| (0..m).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let scale = 1.0 / batch.len() as f64;
            let groups: Vec<(usize, usize)> = (0..batch.len())
                .step_by(GROUP)
                .map(|a| (a, (a + GROUP).min(batch.len())))
                .collect();
            let results = exec.map(&groups, |&(a, b)| {
                let mut grad = vec![0.0f32; net.param_count()];
                let mut loss = LossTerms::default();
                for j in a..b {
                    let x = dataset[batch[j]].data();
                    loss += accumulate_gradient(&net, x, &noise[j], config.beta_kl, scale, &mut grad);
                }
                (grad, loss)
            });
            let mut iter = results.into_iter();
            let (mut grad, mut loss) = iter.next().expect("batch is non-empty");
            for (g, l) in iter {
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                loss += l;
            }
            if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite loss or gradient in epoch {epoch} (total={}, recon={}, kl={})",
                    loss.total, loss.recon, loss.kl
                )));
            }
            sum += loss;
            opt.step(net.params_mut(), &grad);
        }
        let n = dataset.len() as f64;
        let e = EpochLoss {
            epoch,
            mean_total: sum.total / n,
            mean_recon: sum.recon / n,
            mean_kl: sum.kl / n,
        };
        log::info!(
            "epoch {epoch}: total {:.4} recon {:.4} kl {:.4}",
            e.mean_total,
            e.mean_recon,
            e.mean_kl
        );
        log.epochs.push(e);
    }
    Ok((net, log))
}

/// Seeded shuffle then split; `fraction` of the items (rounded) go to the
/// calibration part.
pub fn split_calibration<T: Clone>(dataset: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::validation("calibration fraction must lie in (0, 1)"));
    }
    let n_cal = (dataset.len() as f64 * fraction).round() as usize;
    if n_cal == 0 || n_cal >= dataset.len() {
        return Err(Error::validation(format!(
            "splitting {} items at fraction {fraction} leaves an empty part",
            dataset.len()
        )));
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cal = idx[..n_cal].iter().map(|&i| dataset[i].clone()).collect();
    let train = idx[n_cal..].iter().map(|&i| dataset[i].clone()).collect();
    Ok((train, cal))
}

/// Held-out nonconformity scores, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    scores: Vec<f64>,
}

impl CalibrationSet {
    pub fn new(mut scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::validation("calibration set is empty"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::numeric("calibration scores must be finite"));
        }
        scores.sort_by(f64::total_cmp);
        Ok(CalibrationSet { scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Nonconformity score of one preprocessed flow field.
pub fn score(weights: &VaeWeights, flow: &Grid) -> Result<f64> {
    Ok(vae::kl_score(&vae::encode(weights, flow)?.posterior))
}

pub fn build_calibration(weights: &VaeWeights, cal_flows: &[Grid]) -> Result<CalibrationSet> {
    if cal_flows.is_empty() {
        return Err(Error::validation("no calibration flows"));
    }
    let scores = Exec::default()
        .map(cal_flows, |f| score(weights, f))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    CalibrationSet::new(scores)
}

#[cfg(test)]
mod tests;
