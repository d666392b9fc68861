use std::path::Path;

use log::{debug, warn};

use super::CalibrationFile;
use crate::conformal::load_frames;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gridio::{read_manifest, EpisodeManifest, Grid};
use crate::localization::activation_stats_with;
use crate::opticflow::{lucas_kanade, FlowParams};
use crate::synthdata::CorpusIndex;
use crate::trainer::{split_calibration, CalibrationSet};
use crate::vae::{self, VaeArchitecture, VaeWeights};

/// Manifests of a corpus directory: those listed in `index.json` if present,
/// otherwise every `<dir>/*/manifest.json` in name order.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<EpisodeManifest>> {
    let dir = dir.as_ref();
    if dir.join("index.json").is_file() {
        let index = CorpusIndex::read(dir)?;
        return index
            .episodes
            .iter()
            .map(|e| read_manifest(index.manifest_path(dir, e)))
            .collect();
    }
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path().join("manifest.json");
        if p.is_file() {
            paths.push(p);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::validation(format!("no episodes found under {}", dir.display())));
    }
    paths.iter().map(read_manifest).collect()
}

/// How ID episodes are divided between training and calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    /// Evenly spaced frame pairs taken from each training episode.
    pub pairs_per_episode: usize,
    /// Share of ID episodes held out for calibration.
    pub cal_fraction: f64,
    pub split_seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            pairs_per_episode: 12,
            cal_fraction: 0.2,
            split_seed: 0,
        }
    }
}

/// Network inputs for training and calibration, split by whole episodes so
/// calibration scores come from motion the network never saw.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<Grid>,
    pub cal: Vec<Grid>,
    pub train_episodes: Vec<String>,
    pub cal_episodes: Vec<String>,
}

fn pair_indices(n_frames: usize, k: usize) -> Vec<usize> {
    let n_pairs = n_frames - 1;
    if k >= n_pairs {
        return (0..n_pairs).collect();
    }
    (0..k).map(|i| i * n_pairs / k).collect()
}

fn episode_inputs(
    m: &EpisodeManifest,
    pairs: Option<usize>,
    arch: &VaeArchitecture,
    flow: &FlowParams,
) -> Result<Vec<Grid>> {
    let frames = load_frames(m)?;
    let idx = match pairs {
        Some(k) => pair_indices(frames.len(), k),
        None => (0..frames.len() - 1).collect(),
    };
    idx.into_iter()
        .map(|k| {
            let f = lucas_kanade(&frames[k], &frames[k + 1], flow)?;
            vae::preprocess(&f, arch, arch.max_flow)
        })
        .collect()
}

/// Builds the training and calibration inputs from the corpus' ID episodes.
/// OOD episodes are ignored. Set `need_train = false` to skip the training
/// part (calibration only).
pub fn prepare_data(
    manifests: &[EpisodeManifest],
    arch: &VaeArchitecture,
    flow: &FlowParams,
    split: &SplitConfig,
    need_train: bool,
    exec: Exec,
) -> Result<PreparedData> {
    if split.pairs_per_episode == 0 {
        return Err(Error::validation("pairs_per_episode must be >= 1"));
    }
    let id_eps: Vec<&EpisodeManifest> = manifests.iter().filter(|m| !m.is_ood()).collect();
    let skipped = manifests.len() - id_eps.len();
    if skipped > 0 {
        debug!("ignoring {skipped} OOD episodes for training/calibration");
    }
    if id_eps.len() < 2 {
        return Err(Error::validation(format!(
            "need at least 2 ID episodes to split training and calibration, found {}",
            id_eps.len()
        )));
    }
    let (train_eps, cal_eps) = split_calibration(&id_eps, split.cal_fraction, split.split_seed)?;
    let collect = |eps: &[&EpisodeManifest], pairs: Option<usize>| -> Result<Vec<Grid>> {
        let per = exec.map(eps, |m| episode_inputs(m, pairs, arch, flow));
        let mut out = Vec::new();
        for (m, r) in eps.iter().zip(per) {
            match r {
                Ok(v) => out.extend(v),
                Err(e) => {
                    warn!("episode {}: {e}", m.id);
                    return Err(e);
                }
            }
        }
        Ok(out)
    };
    let train = if need_train {
        collect(&train_eps, Some(split.pairs_per_episode))?
    } else {
        Vec::new()
    };
    let cal = collect(&cal_eps, None)?;
    Ok(PreparedData {
        train,
        cal,
        train_episodes: train_eps.iter().map(|m| m.id.clone()).collect(),
        cal_episodes: cal_eps.iter().map(|m| m.id.clone()).collect(),
    })
}

/// Calibration scores and activation statistics over preprocessed inputs.
pub fn calibrate_inputs(weights: &VaeWeights, cal_inputs: &[Grid], exec: Exec) -> Result<CalibrationFile> {
    if cal_inputs.len() < 2 {
        return Err(Error::validation(format!(
            "calibration needs at least 2 samples, got {}",
            cal_inputs.len()
        )));
    }
    let scores = exec
        .map(cal_inputs, |x| crate::trainer::score(weights, x))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let cal = CalibrationSet::new(scores)?;
    let stats = activation_stats_with(weights, cal_inputs, exec)?;
    Ok(CalibrationFile::new(&cal, Some(&stats)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_are_evenly_spaced() {
        assert_eq!(pair_indices(60, 4), vec![0, 14, 29, 44]);
        assert_eq!(pair_indices(5, 10), vec![0, 1, 2, 3]);
        assert_eq!(pair_indices(60, 1), vec![0]);
    }
}
