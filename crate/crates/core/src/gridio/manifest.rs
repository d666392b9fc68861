use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Id,
    Ood,
}

/// One labelled frame sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeManifest {
    pub id: String,
    pub frames: Vec<PathBuf>,
    pub label: Label,
    pub onset_frame: Option<usize>,
    pub fps: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    id: String,
    frames: Vec<String>,
    label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    onset_frame: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fps: Option<f64>,
}

impl EpisodeManifest {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::validation("manifest id is empty"));
        }
        if self.frames.len() < 2 {
            return Err(Error::validation(format!(
                "episode {} has {} frames, need at least 2",
                self.id,
                self.frames.len()
            )));
        }
        match (self.label, self.onset_frame) {
            (Label::Id, Some(_)) => Err(Error::validation(format!(
                "episode {} is labelled id but has an onset_frame",
                self.id
            ))),
            (Label::Ood, None) => Err(Error::validation(format!(
                "episode {} is labelled ood but has no onset_frame",
                self.id
            ))),
            (Label::Ood, Some(k)) if k >= self.frames.len() => Err(Error::validation(format!(
                "episode {} onset_frame {k} out of range for {} frames",
                self.id,
                self.frames.len()
            ))),
            _ => Ok(()),
        }?;
        if let Some(fps) = self.fps {
            if !(fps.is_finite() && fps > 0.0) {
                return Err(Error::validation(format!("episode {} has invalid fps", self.id)));
            }
        }
        Ok(())
    }

    pub fn is_ood(&self) -> bool {
        self.label == Label::Ood
    }
}

/// Parses and validates a manifest document; relative frame paths are
/// resolved against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<EpisodeManifest> {
    let raw: ManifestFile = serde_json::from_str(text)
        .map_err(|e| Error::validation(format!("manifest: {e}")))?;
    let onset_frame = match raw.onset_frame {
        None => None,
        Some(k) if k < 0 => {
            return Err(Error::validation(format!("negative onset_frame {k}")));
        }
        Some(k) => Some(k as usize),
    };
    let frames = raw
        .frames
        .iter()
        .map(|f| {
            let p = PathBuf::from(f);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        })
        .collect();
    let m = EpisodeManifest {
        id: raw.id,
        frames,
        label: raw.label,
        onset_frame,
        fps: raw.fps,
    };
    m.validate()?;
    Ok(m)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<EpisodeManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base)
}

/// Writes `manifest` as JSON. Frame paths under the manifest's directory are
/// stored relative to it.
pub fn write_manifest(path: impl AsRef<Path>, manifest: &EpisodeManifest) -> Result<()> {
    manifest.validate()?;
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let raw = ManifestFile {
        id: manifest.id.clone(),
        frames: manifest
            .frames
            .iter()
            .map(|p| {
                p.strip_prefix(base)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .into_owned()
            })
            .collect(),
        label: manifest.label,
        onset_frame: manifest.onset_frame.map(|k| k as i64),
        fps: manifest.fps,
    };
    let text = serde_json::to_string_pretty(&raw).expect("manifest serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
