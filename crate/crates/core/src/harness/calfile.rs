use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridio::Grid;
use crate::localization::ActivationStats;
use crate::trainer::CalibrationSet;

const CAL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ActivationBlock {
    channels: usize,
    height: usize,
    width: usize,
    count: usize,
    mean: Vec<f32>,
    std: Vec<f32>,
}

/// On-disk calibration: sorted scores plus the activation statistics used
/// for localization. Stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    version: u32,
    scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<ActivationBlock>,
}

impl CalibrationFile {
    pub fn new(cal: &CalibrationSet, stats: Option<&ActivationStats>) -> Self {
        let activation = stats.map(|s| {
            let (channels, height, width) = s.mean().shape();
            ActivationBlock {
                channels,
                height,
                width,
                count: s.count(),
                mean: s.mean().data().to_vec(),
                std: s.std().data().to_vec(),
            }
        });
        CalibrationFile {
            version: CAL_VERSION,
            scores: cal.scores().to_vec(),
            activation,
        }
    }

    pub fn calibration_set(&self) -> Result<CalibrationSet> {
        CalibrationSet::new(self.scores.clone())
    }

    pub fn activation_stats(&self) -> Result<ActivationStats> {
        let a = self
            .activation
            .as_ref()
            .ok_or_else(|| Error::validation("calibration file has no activation statistics"))?;
        let mean = Grid::from_vec(a.channels, a.height, a.width, a.mean.clone())?;
        let std = Grid::from_vec(a.channels, a.height, a.width, a.std.clone())?;
        ActivationStats::from_parts(mean, std, a.count)
    }
}

pub fn write_calibration(path: impl AsRef<Path>, file: &CalibrationFile) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(file).map_err(|e| Error::format(format!("calibration: {e}")))? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_calibration(path: impl AsRef<Path>) -> Result<CalibrationFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CalibrationFile = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    if file.version != CAL_VERSION {
        return Err(Error::format(format!(
            "{}: unsupported calibration version {}",
            path.display(),
            file.version
        )));
    }
    file.calibration_set()?;
    if file.activation.is_some() {
        file.activation_stats()?;
    }
    Ok(file)
}
