//! Turning BP marginals into training targets.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, LlpError, Result};
use crate::metrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Targets are `1[p > tau]`.
    #[default]
    Hard,
    /// Targets are the marginals themselves.
    Soft,
    /// Hard targets, each weighted by `|p - tau|`.
    SoftWeighted,
}

impl std::str::FromStr for ThresholdMode {
    type Err = LlpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Self::Hard),
            "soft" => Ok(Self::Soft),
            "soft_weighted" => Ok(Self::SoftWeighted),
            other => Err(invalid(format!("unknown threshold mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub hard: Vec<u8>,
    pub soft: Vec<f64>,
    pub weights: Option<Vec<f64>>,
    pub tau: f64,
    pub mode: ThresholdMode,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.hard.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard.is_empty()
    }

    /// Regression target for instance `i` under this set's mode.
    pub fn target(&self, i: usize) -> f64 {
        match self.mode {
            ThresholdMode::Soft => self.soft[i],
            ThresholdMode::Hard | ThresholdMode::SoftWeighted => f64::from(self.hard[i]),
        }
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    /// `instance_index,hard,soft,weight`
    pub fn write_csv(&self, ids: Option<&[usize]>, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w =
            csv::Writer::from_writer(File::create(path).map_err(|e| LlpError::io(path, e))?);
        w.write_record(["instance_index", "hard", "soft", "weight"])?;
        for i in 0..self.len() {
            let id = ids.map_or(i, |ids| ids[i]);
            w.write_record([
                id.to_string(),
                self.hard[i].to_string(),
                self.soft[i].to_string(),
                self.weight(i).to_string(),
            ])?;
        }
        w.flush().map_err(|e| LlpError::io(path, e))?;
        Ok(())
    }
}

/// `hard[i] = 1` iff `marginals[i] > tau` (strict).
pub fn threshold(marginals: &[f64], tau: f64, mode: ThresholdMode) -> Result<PseudoLabelSet> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(invalid(format!("tau must be in (0, 1), got {tau}")));
    }
    let hard = marginals.iter().map(|&p| u8::from(p > tau)).collect();
    let weights = (mode == ThresholdMode::SoftWeighted)
        .then(|| marginals.iter().map(|&p| (p - tau).abs()).collect());
    Ok(PseudoLabelSet {
        hard,
        soft: marginals.to_vec(),
        weights,
        tau,
        mode,
    })
}

/// Ranking quality of the marginals against held-back true labels.
pub fn pseudo_label_auroc(marginals: &[f64], true_labels: &[u8]) -> Result<f64> {
    metrics::auroc(marginals, true_labels)
}
