use serde::{Deserialize, Serialize};

/// Episode-level confusion counts and derived rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tpr: f64,
    pub fpr: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Set when tp+fp+fn = 0, where F1 is undefined and reported as 0.
    pub degenerate_f1: bool,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        Metrics {
            tp,
            fp,
            tn,
            fn_,
            tpr: ratio(tp, tp + fn_),
            fpr: ratio(fp, fp + tn),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            degenerate_f1: tp + fp + fn_ == 0,
        }
    }

    /// Counts from `(is_ood, detected)` pairs.
    pub fn from_outcomes(outcomes: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (ood, det) in outcomes {
            match (ood, det) {
                (true, true) => tp += 1,
                (true, false) => fn_ += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
            }
        }
        Metrics::from_counts(tp, fp, tn, fn_)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Sums counts and recomputes rates.
    pub fn merge(&self, other: &Metrics) -> Metrics {
        Metrics::from_counts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.tn + other.tn,
            self.fn_ + other.fn_,
        )
    }
}

/// `metrics.json`: the chosen threshold's metrics flattened at top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub threshold: f64,
    #[serde(flatten)]
    pub metrics: Metrics,
    #[serde(default)]
    pub grid: Vec<super::GridRow>,
    #[serde(default)]
    pub skipped: Vec<super::SkippedEpisode>,
    #[serde(default)]
    pub episodes: Vec<super::EpisodeRecord>,
}
