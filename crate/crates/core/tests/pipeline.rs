//! Library-level train → calibrate → evaluate on a small corpus.

use std::path::Path;

use flowood::conformal::DetectorConfig;
use flowood::exec::Exec;
use flowood::gridio::Label;
use flowood::harness::{
    calibrate_inputs, evaluate_curves, CalibrationFile, grid_search, load_corpus, prepare_data, Metrics, SplitConfig,
};
use flowood::opticflow::FlowParams;
use flowood::synthdata::{gen_benchmark, SceneConfig};
use flowood::trainer::{train_with, TrainConfig};
use flowood::vae::{VaeArchitecture, VaeWeights};

fn small_arch() -> VaeArchitecture {
    VaeArchitecture {
        input_size: 32,
        conv_channels: [4, 8, 8, 16],
        latent_dim: 4,
        max_flow: 8.0,
    }
}

fn scene() -> SceneConfig {
    SceneConfig {
        episode_length: 48,
        ..SceneConfig::default()
    }
}

fn fit(root: &Path, exec: Exec) -> (VaeWeights, CalibrationFile) {
    gen_benchmark(root, &scene(), 8, 2, 11).unwrap();
    let manifests = load_corpus(root).unwrap();
    let split = SplitConfig {
        pairs_per_episode: 4,
        cal_fraction: 0.25,
        split_seed: 0,
    };
    let data = prepare_data(&manifests, &small_arch(), &FlowParams::default(), &split, true, exec).unwrap();
    assert_eq!(data.train_episodes.len(), 6);
    assert_eq!(data.cal_episodes.len(), 2);
    assert_eq!(data.train.len(), 24);
    assert_eq!(data.cal.len(), 2 * 47);
    let cfg = TrainConfig {
        arch: small_arch(),
        epochs: 2,
        batch_size: 8,
        seed: 3,
        ..TrainConfig::default()
    };
    let (w, log) = train_with(&data.train, &cfg, exec).unwrap();
    assert_eq!(log.epochs.len(), 2);
    let cal = calibrate_inputs(&w, &data.cal, exec).unwrap();
    (w, cal)
}

#[test]
fn grid_search_scores_each_episode_once_and_recounts() {
    let dir = tempfile::tempdir().unwrap();
    let (w, calfile) = fit(dir.path(), Exec::default());
    let cal = calfile.calibration_set().unwrap();
    let manifests = load_corpus(dir.path()).unwrap();
    let grid: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
    let cfg = DetectorConfig::default();
    let (best, rows, cache) =
        grid_search(&manifests, &w, &cal, &grid, &cfg, &FlowParams::default(), Exec::default()).unwrap();
    assert_eq!(cache.scoring_calls, manifests.len());
    assert_eq!(cache.curves.len(), 10);
    assert!(cache.curves.iter().all(|c| c.curve.len() == 47));
    assert_eq!(rows.len(), 12);
    assert!(grid.contains(&best));
    let top = rows.iter().map(|r| r.metrics.f1).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(rows.iter().find(|r| r.threshold == best).unwrap().metrics.f1, top);

    for row in &rows {
        let r = evaluate_curves(&cache, row.threshold, cfg.consecutive, None).unwrap();
        assert_eq!(r.metrics, row.metrics);
        let outcomes: Vec<(bool, bool)> = r
            .records
            .iter()
            .map(|e| (e.label == Label::Ood, e.detected))
            .collect();
        assert_eq!(Metrics::from_outcomes(outcomes), r.metrics);
        assert_eq!(r.metrics.total(), 10);
        for e in &r.records {
            assert_eq!(e.detected, !e.events.is_empty());
        }
    }
    // raising the threshold can only remove detections
    for pair in rows.windows(2) {
        assert!(pair[1].metrics.tp + pair[1].metrics.fp <= pair[0].metrics.tp + pair[0].metrics.fp);
    }
}

#[test]
fn sequential_and_parallel_runs_agree_bitwise() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (wa, ca) = fit(a.path(), Exec::Parallel);
    let (wb, cb) = fit(b.path(), Exec::Sequential);
    assert_eq!(wa.params(), wb.params());
    assert_eq!(
        serde_json::to_string(&ca).unwrap(),
        serde_json::to_string(&cb).unwrap()
    );
}
