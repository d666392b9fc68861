//! Seeded generator of desk-scale motion episodes.
//!
//! A smooth periodic texture is advected across the frame with toroidal wrap
//! at a jittered base velocity; that is in-distribution motion. OOD episodes
//! share the ID prefix and switch at `onset` to one of three motion anomalies:
//! a textured intruder cutting across one quadrant against the flow, a global
//! velocity reversal, or a global speed spike.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gridio::{write_manifest, write_pgm, EpisodeManifest, Grid, Label};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub size: usize,
    pub episode_length: usize,
    pub texture_waves: usize,
    /// (x, y) in px/frame.
    pub base_velocity: (f32, f32),
    pub velocity_jitter: f32,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            size: 64,
            episode_length: 60,
            texture_waves: 12,
            base_velocity: (1.0, 0.0),
            velocity_jitter: 0.05,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::validation("scene size must be >= 16"));
        }
        if self.episode_length < 2 {
            return Err(Error::validation("episode_length must be >= 2"));
        }
        if !(self.velocity_jitter >= 0.0 && self.velocity_jitter.is_finite()) {
            return Err(Error::validation("velocity_jitter must be >= 0"));
        }
        if !(self.base_velocity.0.is_finite() && self.base_velocity.1.is_finite()) {
            return Err(Error::validation("base_velocity must be finite"));
        }
        Ok(())
    }

    fn with_seed(&self, seed: u64) -> Self {
        SceneConfig {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    IntruderCut,
    VelocityReversal,
    SpeedSpike,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 3] = [
        AnomalyKind::IntruderCut,
        AnomalyKind::VelocityReversal,
        AnomalyKind::SpeedSpike,
    ];

    /// Magnitude used by [`gen_benchmark`].
    pub fn default_magnitude(self) -> f32 {
        match self {
            AnomalyKind::IntruderCut => 3.0,
            AnomalyKind::VelocityReversal => 1.0,
            AnomalyKind::SpeedSpike => 1.0,
        }
    }
}

/// Image quadrant; north is the top row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrant {
    Ne,
    Nw,
    Se,
    Sw,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::Ne, Quadrant::Nw, Quadrant::Se, Quadrant::Sw];

    /// `(x0, y0)` of the quadrant's top-left pixel in a `size × size` frame.
    pub fn origin(self, size: usize) -> (usize, usize) {
        let h = size / 2;
        match self {
            Quadrant::Nw => (0, 0),
            Quadrant::Ne => (h, 0),
            Quadrant::Sw => (0, h),
            Quadrant::Se => (h, h),
        }
    }

    pub fn contains(self, size: usize, x: usize, y: usize) -> bool {
        let (x0, y0) = self.origin(size);
        let h = size / 2;
        (x0..x0 + h).contains(&x) && (y0..y0 + h).contains(&y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub onset: usize,
    pub magnitude: f32,
    /// Only used by the intruder.
    pub region: Quadrant,
}

impl AnomalySpec {
    pub fn validate(&self, cfg: &SceneConfig) -> Result<()> {
        if self.onset == 0 || self.onset + 5 >= cfg.episode_length {
            return Err(Error::validation(format!(
                "onset {} must lie in (0, {})",
                self.onset,
                cfg.episode_length.saturating_sub(5)
            )));
        }
        if !(self.magnitude > 0.0 && self.magnitude.is_finite()) {
            return Err(Error::validation("anomaly magnitude must be positive"));
        }
        Ok(())
    }
}

/// A generated frame sequence with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub frames: Vec<Grid>,
    pub label: Label,
    pub onset_frame: Option<usize>,
    pub anomaly: Option<AnomalySpec>,
}

/// SplitMix64 step, used to derive independent sub-seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sum of random plane waves with integer wave numbers (so the texture tiles
/// the torus seamlessly), rescaled to [0, 1].
fn periodic_texture(size: usize, waves: usize, seed: u64) -> Grid {
    if waves == 0 {
        return Grid::filled(1, size, size, 0.5);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let two_pi = std::f32::consts::TAU;
    let params: Vec<(f32, f32, f32, f32)> = (0..waves)
        .map(|_| {
            // 5..=8 cycles per image. Gradients this strong keep the flow
            // regularizer's shrinkage small and nearly texture-independent.
            let (kx, ky) = loop {
                let kx: i32 = rng.random_range(-6..=6);
                let ky: i32 = rng.random_range(-6..=6);
                let k2 = kx * kx + ky * ky;
                if (25..=64).contains(&k2) {
                    break (kx, ky);
                }
            };
            let phase = rng.random_range(0.0..two_pi);
            let amp = rng.random_range(0.5f32..1.0);
            (kx as f32, ky as f32, phase, amp)
        })
        .collect();
    let n = size as f32;
    let raw = Grid::from_fn(1, size, size, |_, y, x| {
        params
            .iter()
            .map(|&(kx, ky, ph, a)| a * (two_pi * (kx * x as f32 + ky * y as f32) / n + ph).sin())
            .sum()
    });
    let (lo, hi) = raw
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = (hi - lo).max(1e-6);
    let data = raw.data().iter().map(|v| (v - lo) / span).collect();
    Grid::from_vec(1, size, size, data).expect("finite texture")
}

pub fn gen_texture(cfg: &SceneConfig) -> Grid {
    periodic_texture(cfg.size, cfg.texture_waves, derive_seed(cfg.seed, 1))
}

/// Bilinear sample of a single-channel grid at `(x, y)` with toroidal wrap.
fn sample_wrap(g: &Grid, x: f32, y: f32) -> f32 {
    let (w, h) = (g.width() as f32, g.height() as f32);
    let x = x.rem_euclid(w);
    let y = y.rem_euclid(h);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let xi = x0 as usize % g.width();
    let yi = y0 as usize % g.height();
    let xj = (xi + 1) % g.width();
    let yj = (yi + 1) % g.height();
    let top = g.get(0, yi, xi) * (1.0 - fx) + g.get(0, yi, xj) * fx;
    let bot = g.get(0, yj, xi) * (1.0 - fx) + g.get(0, yj, xj) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Texture shifted by `(dx, dy)`: `frame(x, y) = texture(x − dx, y − dy)`.
fn shifted(texture: &Grid, dx: f32, dy: f32) -> Grid {
    Grid::from_fn(1, texture.height(), texture.width(), |_, y, x| {
        sample_wrap(texture, x as f32 - dx, y as f32 - dy)
    })
}

/// Per-step background velocities `v_0..v_{T−2}`; step `s` moves frame `s` to `s+1`.
fn id_velocities(cfg: &SceneConfig) -> Vec<(f32, f32)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let noise = Normal::new(0.0f32, cfg.velocity_jitter.max(0.0)).expect("valid jitter");
    let (bx, by) = cfg.base_velocity;
    (0..cfg.episode_length.saturating_sub(1))
        .map(|_| {
            let jx = if cfg.velocity_jitter > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let jy = if cfg.velocity_jitter > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (bx + jx, by + jy)
        })
        .collect()
}

fn positions(velocities: &[(f32, f32)]) -> Vec<(f32, f32)> {
    let mut p = vec![(0.0f32, 0.0f32)];
    for &(vx, vy) in velocities {
        let &(x, y) = p.last().unwrap();
        p.push((x + vx, y + vy));
    }
    p
}

pub fn gen_id_episode(cfg: &SceneConfig) -> Result<Episode> {
    cfg.validate()?;
    let texture = gen_texture(cfg);
    let frames = positions(&id_velocities(cfg))
        .into_iter()
        .map(|(dx, dy)| shifted(&texture, dx, dy))
        .collect();
    Ok(Episode {
        frames,
        label: Label::Id,
        onset_frame: None,
        anomaly: None,
    })
}

/// Side of the intruder square.
pub fn intruder_size(size: usize) -> usize {
    size / 4
}

pub fn gen_ood_episode(cfg: &SceneConfig, spec: &AnomalySpec) -> Result<Episode> {
    cfg.validate()?;
    spec.validate(cfg)?;
    let texture = gen_texture(cfg);
    let mut vel = id_velocities(cfg);
    // Step onset-1 is the first transition into frame `onset`.
    for v in vel.iter_mut().skip(spec.onset - 1) {
        match spec.kind {
            AnomalyKind::VelocityReversal => *v = (-spec.magnitude * v.0, -spec.magnitude * v.1),
            AnomalyKind::SpeedSpike => {
                let f = 1.0 + spec.magnitude;
                *v = (f * v.0, f * v.1)
            }
            AnomalyKind::IntruderCut => {}
        }
    }
    let mut frames: Vec<Grid> = positions(&vel)
        .into_iter()
        .map(|(dx, dy)| shifted(&texture, dx, dy))
        .collect();
    if spec.kind == AnomalyKind::IntruderCut {
        draw_intruder(cfg, spec, &mut frames);
    }
    Ok(Episode {
        frames,
        label: Label::Ood,
        onset_frame: Some(spec.onset),
        anomaly: Some(*spec),
    })
}

/// Textured square moving against the background flow at `magnitude × |v|`,
/// confined to its quadrant (it wraps around inside the quadrant's box).
fn draw_intruder(cfg: &SceneConfig, spec: &AnomalySpec, frames: &mut [Grid]) {
    let size = cfg.size;
    let box_side = size / 2;
    let side = intruder_size(size);
    let patch = periodic_texture(side, cfg.texture_waves.max(4), derive_seed(cfg.seed, 3));
    let (bx, by) = cfg.base_velocity;
    let (vx, vy) = (-spec.magnitude * bx, -spec.magnitude * by);
    let (qx, qy) = spec.region.origin(size);
    // Enters from the quadrant edge it moves away from, centred on the other axis.
    let start_x = if vx < 0.0 { (box_side - side) as f32 } else { 0.0 };
    let start_y = if vy.abs() > 0.0 && vy < 0.0 {
        (box_side - side) as f32
    } else if vy.abs() > 0.0 {
        0.0
    } else {
        ((box_side - side) / 2) as f32
    };
    let b = box_side as f32;
    for (t, frame) in frames.iter_mut().enumerate().skip(spec.onset) {
        let steps = (t - spec.onset) as f32;
        let (ox, oy) = (start_x + vx * steps, start_y + vy * steps);
        for ly in 0..box_side {
            for lx in 0..box_side {
                let u = (lx as f32 - ox).rem_euclid(b);
                let v = (ly as f32 - oy).rem_euclid(b);
                if u < side as f32 && v < side as f32 {
                    let val = sample_wrap(&patch, u, v);
                    frame.set(0, qy + ly, qx + lx, val);
                }
            }
        }
    }
}

/// Ground truth of one generated episode, as listed in `index.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub manifest: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset_frame: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly: Option<AnomalySpec>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub seed: u64,
    pub size: usize,
    pub episode_length: usize,
    pub episodes: Vec<IndexEntry>,
}

impl CorpusIndex {
    pub fn read(root: impl AsRef<Path>) -> Result<Self> {
        let path = root.as_ref().join("index.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::validation(format!("index.json: {e}")))
    }

    pub fn manifest_path(&self, root: impl AsRef<Path>, entry: &IndexEntry) -> PathBuf {
        root.as_ref().join(&entry.manifest)
    }
}

/// Onset frame range used by the benchmark generator.
pub const BENCH_ONSET_RANGE: std::ops::RangeInclusive<usize> = 15..=40;

/// Plans a benchmark without touching the disk: `(id, scene, anomaly)` per
/// episode, ID episodes first. Anomaly kinds cycle, onsets are uniform on
/// [`BENCH_ONSET_RANGE`], quadrants are uniform.
pub fn plan_benchmark(
    cfg: &SceneConfig,
    n_id: usize,
    n_ood: usize,
    seed: u64,
) -> Result<Vec<(String, SceneConfig, Option<AnomalySpec>)>> {
    if n_id == 0 || n_ood == 0 {
        return Err(Error::validation("n_id and n_ood must both be >= 1"));
    }
    cfg.validate()?;
    if cfg.episode_length <= BENCH_ONSET_RANGE.end() + 5 {
        return Err(Error::validation(format!(
            "episode_length must exceed {} for benchmark onsets",
            BENCH_ONSET_RANGE.end() + 5
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xbe9c));
    let mut plan = Vec::with_capacity(n_id + n_ood);
    for i in 0..n_id {
        plan.push((format!("id_{i:04}"), cfg.with_seed(derive_seed(seed, 2 * i as u64)), None));
    }
    for i in 0..n_ood {
        let kind = AnomalyKind::ALL[i % AnomalyKind::ALL.len()];
        let onset = rng.random_range(BENCH_ONSET_RANGE);
        let region = Quadrant::ALL[rng.random_range(0..Quadrant::ALL.len())];
        let spec = AnomalySpec {
            kind,
            onset,
            magnitude: kind.default_magnitude(),
            region,
        };
        plan.push((
            format!("ood_{i:04}"),
            cfg.with_seed(derive_seed(seed, 2 * i as u64 + 1)),
            Some(spec),
        ));
    }
    Ok(plan)
}

/// Writes `<root>/<id>/frame_%04d.pgm`, `<root>/<id>/manifest.json` and
/// `<root>/index.json`.
pub fn gen_benchmark(
    root: impl AsRef<Path>,
    cfg: &SceneConfig,
    n_id: usize,
    n_ood: usize,
    seed: u64,
) -> Result<Vec<EpisodeManifest>> {
    let root = root.as_ref();
    let plan = plan_benchmark(cfg, n_id, n_ood, seed)?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let written = Exec::default().map(&plan, |(id, scene, spec)| -> Result<(EpisodeManifest, IndexEntry)> {
        let ep = match spec {
            None => gen_id_episode(scene)?,
            Some(s) => gen_ood_episode(scene, s)?,
        };
        let dir = root.join(id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut frames = Vec::with_capacity(ep.frames.len());
        for (t, f) in ep.frames.iter().enumerate() {
            let p = dir.join(format!("frame_{t:04}.pgm"));
            write_pgm(&p, f)?;
            frames.push(p);
        }
        let manifest = EpisodeManifest {
            id: id.clone(),
            frames,
            label: ep.label,
            onset_frame: ep.onset_frame,
            fps: None,
        };
        write_manifest(dir.join("manifest.json"), &manifest)?;
        let entry = IndexEntry {
            id: id.clone(),
            manifest: format!("{id}/manifest.json"),
            label: ep.label,
            onset_frame: ep.onset_frame,
            anomaly: ep.anomaly,
            seed: scene.seed,
        };
        Ok((manifest, entry))
    });
    let mut manifests = Vec::with_capacity(written.len());
    let mut entries = Vec::with_capacity(written.len());
    for r in written {
        let (m, e) = r?;
        manifests.push(m);
        entries.push(e);
    }
    let index = CorpusIndex {
        seed,
        size: cfg.size,
        episode_length: cfg.episode_length,
        episodes: entries,
    };
    let path = root.join("index.json");
    let text = serde_json::to_string_pretty(&index).expect("index serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifests)
}
