//! `flowood` command-line tool: synthesize corpora, train, calibrate, detect,
//! localize, evaluate and benchmark.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use flowood::conformal::{detect_episode, load_frames, DetectorConfig};
use flowood::exec::Exec;
use flowood::gridio::{read_manifest, write_fgrid, write_ppm};
use flowood::harness::{
    calibrate_inputs, evaluate_curves, grid_search_curves, compute_curves, load_corpus, measure_latency,
    prepare_data, read_calibration, write_calibration, MetricsFile, SplitConfig,
};
use flowood::localization::{localize_pair, render};
use flowood::opticflow::FlowParams;
use flowood::synthdata::{gen_benchmark, SceneConfig};
use flowood::trainer::{train_with, TrainConfig};
use flowood::vae::{load_weights, save_weights, VaeArchitecture};
use flowood::{Error, Result};

#[derive(Parser)]
#[command(name = "flowood", version, about = "Streaming OOD motion detection")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ID/OOD benchmark corpus.
    Synth(SynthArgs),
    /// Train the VAE on the ID episodes of a corpus.
    Train(TrainArgs),
    /// Score held-out ID episodes into a calibration file.
    Calibrate(CalibrateArgs),
    /// Run the streaming detector over one episode.
    Detect(DetectArgs),
    /// Write the localization overlay for one frame.
    Localize(LocalizeArgs),
    /// Episode-level metrics over a corpus, optionally with a threshold grid.
    Eval(EvalArgs),
    /// Per-decision latency on one episode.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_id: usize,
    #[arg(long)]
    n_ood: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 60)]
    length: usize,
}

#[derive(Args, Clone)]
struct SplitArgs {
    /// Share of ID episodes held out for calibration.
    #[arg(long, default_value_t = 0.2)]
    cal_fraction: f64,
    /// Seed of the train/calibration episode split; must match between train and calibrate.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Evenly spaced frame pairs per training episode.
    #[arg(long, default_value_t = 12)]
    pairs_per_episode: usize,
}

impl SplitArgs {
    fn config(&self) -> SplitConfig {
        SplitConfig {
            pairs_per_episode: self.pairs_per_episode,
            cal_fraction: self.cal_fraction,
            split_seed: self.split_seed,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 24)]
    latent: usize,
    #[arg(long, default_value_t = 64)]
    input_size: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Per-epoch loss CSV.
    #[arg(long)]
    log_csv: Option<PathBuf>,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Args)]
struct DetectorArgs {
    /// Natural-log martingale threshold τ.
    #[arg(long, default_value_t = 3.0)]
    threshold: f64,
    #[arg(long, default_value_t = 10)]
    window: usize,
    #[arg(long, default_value_t = 10)]
    consecutive: usize,
}

impl DetectorArgs {
    fn config(&self) -> DetectorConfig {
        DetectorConfig {
            window: self.window,
            log_threshold: self.threshold,
            consecutive: self.consecutive,
            ..DetectorConfig::default()
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    episode: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    cal: PathBuf,
    #[command(flatten)]
    detector: DetectorArgs,
    #[arg(long)]
    out_curve: PathBuf,
    #[arg(long)]
    out_events: PathBuf,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    episode: PathBuf,
    /// Frame to localize; uses the flow from frame K−1 to K.
    #[arg(long)]
    frame: usize,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    cal: PathBuf,
    #[arg(long)]
    out_overlay: PathBuf,
    #[arg(long)]
    out_composite: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    overlay_threshold: f32,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    cal: PathBuf,
    /// Comma-separated thresholds to search; the best by F1 is reported.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[command(flatten)]
    detector: DetectorArgs,
    /// Directory for per-episode curve CSVs.
    #[arg(long)]
    curves: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    episode: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    cal: PathBuf,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[command(flatten)]
    detector: DetectorArgs,
    #[arg(long)]
    out: PathBuf,
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(e.to_string()))? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SceneConfig {
        size: a.size,
        episode_length: a.length,
        seed: a.seed,
        ..SceneConfig::default()
    };
    let ms = gen_benchmark(&a.out, &cfg, a.n_id, a.n_ood, a.seed)?;
    info!("wrote {} episodes to {}", ms.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs, exec: Exec) -> Result<()> {
    let arch = VaeArchitecture {
        input_size: a.input_size,
        latent_dim: a.latent,
        ..VaeArchitecture::default()
    };
    arch.validate()?;
    let manifests = load_corpus(&a.corpus)?;
    let data = prepare_data(&manifests, &arch, &FlowParams::default(), &a.split.config(), true, exec)?;
    info!(
        "training on {} flows from {} episodes ({} held out)",
        data.train.len(),
        data.train_episodes.len(),
        data.cal_episodes.len()
    );
    let cfg = TrainConfig {
        arch,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let (weights, log) = train_with(&data.train, &cfg, exec)?;
    save_weights(&a.out, &weights)?;
    if let Some(p) = a.log_csv {
        log.write_csv(p)?;
    }
    Ok(())
}

fn calibrate(a: CalibrateArgs, exec: Exec) -> Result<()> {
    let weights = load_weights(&a.weights)?;
    let manifests = load_corpus(&a.corpus)?;
    let data = prepare_data(&manifests, weights.arch(), &FlowParams::default(), &a.split.config(), false, exec)?;
    info!(
        "calibrating on {} flows from {} episodes",
        data.cal.len(),
        data.cal_episodes.len()
    );
    write_calibration(&a.out, &calibrate_inputs(&weights, &data.cal, exec)?)
}

fn detect(a: DetectArgs) -> Result<()> {
    let manifest = read_manifest(&a.episode)?;
    let weights = load_weights(&a.weights)?;
    let cal = read_calibration(&a.cal)?.calibration_set()?;
    let frames = load_frames(&manifest)?;
    let det = detect_episode(
        &manifest.id,
        &frames,
        &weights,
        &cal,
        &a.detector.config(),
        &FlowParams::default(),
    )?;
    det.write_curve(&a.out_curve)?;
    det.write_events(&a.out_events)?;
    info!(
        "{}: {} event(s), peak log M {:.3}",
        manifest.id,
        det.events.len(),
        det.peak_log_m()
    );
    Ok(())
}

fn localize(a: LocalizeArgs) -> Result<()> {
    let manifest = read_manifest(&a.episode)?;
    if a.frame == 0 || a.frame >= manifest.frames.len() {
        return Err(Error::validation(format!(
            "frame must lie in 1..{}, got {}",
            manifest.frames.len(),
            a.frame
        )));
    }
    let weights = load_weights(&a.weights)?;
    let stats = read_calibration(&a.cal)?.activation_stats()?;
    let prev = flowood::gridio::read_pgm(&manifest.frames[a.frame - 1])?;
    let cur = flowood::gridio::read_pgm(&manifest.frames[a.frame])?;
    let map = localize_pair(&weights, &stats, &prev, &cur, &FlowParams::default())?;
    write_fgrid(&a.out_overlay, &map)?;
    write_ppm(&a.out_composite, &render(&cur, &map, a.overlay_threshold)?)
}

fn eval(a: EvalArgs, exec: Exec) -> Result<()> {
    let manifests = load_corpus(&a.corpus)?;
    let weights = load_weights(&a.weights)?;
    let cal = read_calibration(&a.cal)?.calibration_set()?;
    let cfg = a.detector.config();
    let cache = compute_curves(&manifests, &weights, &cal, &cfg, &FlowParams::default(), exec)?;
    let (threshold, grid) = match &a.grid {
        Some(ts) => grid_search_curves(&cache, ts, cfg.consecutive)?,
        None => (cfg.log_threshold, Vec::new()),
    };
    let report = evaluate_curves(&cache, threshold, cfg.consecutive, a.curves.as_deref())?;
    let m = &report.metrics;
    info!(
        "tau {threshold}: tp {} fp {} tn {} fn {} | f1 {:.3} tpr {:.3} fpr {:.3} acc {:.3}",
        m.tp, m.fp, m.tn, m.fn_, m.f1, m.tpr, m.fpr, m.accuracy
    );
    let file = MetricsFile {
        threshold,
        metrics: report.metrics,
        grid,
        skipped: report.skipped,
        episodes: report.records,
    };
    write_json(&a.out, &file)
}

fn bench(a: BenchArgs) -> Result<()> {
    let manifest = read_manifest(&a.episode)?;
    let weights = load_weights(&a.weights)?;
    let cal = read_calibration(&a.cal)?.calibration_set()?;
    let frames = load_frames(&manifest)?;
    let r = measure_latency(
        &frames,
        &weights,
        &cal,
        &a.detector.config(),
        &FlowParams::default(),
        a.warmup,
        a.reps,
    )?;
    info!(
        "mean {:.2} ms, p95 {:.2} ms (flow {:.2}, encode {:.2}, conformal {:.3})",
        r.mean_ms, r.p95_ms, r.flow_ms, r.encode_ms, r.conformal_ms
    );
    write_json(&a.out, &r)
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match cli.cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a, exec),
        Command::Calibrate(a) => calibrate(a, exec),
        Command::Detect(a) => detect(a),
        Command::Localize(a) => localize(a),
        Command::Eval(a) => eval(a, exec),
        Command::Bench(a) => bench(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
