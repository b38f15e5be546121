//! Percentage of correct keypoints relative to the hand box side.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{HandBox, Pose};

pub const DEFAULT_THRESHOLDS: [f64; 6] = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckConfig {
    thresholds: Vec<f64>,
}

impl PckConfig {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::param("need at least one threshold"));
        }
        if thresholds.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(Error::param("thresholds must be positive"));
        }
        if thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("thresholds must be strictly increasing"));
        }
        Ok(PckConfig { thresholds })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }
}

impl Default for PckConfig {
    fn default() -> Self {
        PckConfig {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckReport {
    pub thresholds: Vec<f64>,
    /// Fraction of correct keypoints per threshold.
    pub pck: Vec<f64>,
    pub mpck: f64,
    /// `[keypoint][threshold]` fractions.
    pub per_keypoint: Vec<Vec<f64>>,
    pub samples: usize,
}

impl PckReport {
    /// Aligned text table with one row per threshold, values in percent.
    pub fn table(&self, label: &str) -> String {
        let mut out = format!("{:>8}  {:>10}\n", "sigma", label);
        for (t, p) in self.thresholds.iter().zip(&self.pck) {
            out.push_str(&format!("{t:>8.2}  {:>10.2}\n", 100.0 * p));
        }
        out.push_str(&format!("{:>8}  {:>10.2}\n", "mPCK", 100.0 * self.mpck));
        out
    }
}

/// Scores predictions against truths; a keypoint counts when its distance is at most `sigma * side`.
pub fn pck(predictions: &[Pose], truths: &[Pose], boxes: &[HandBox], cfg: &PckConfig) -> Result<PckReport> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch { what: "truths", expected: predictions.len(), got: truths.len() });
    }
    if boxes.len() != truths.len() {
        return Err(Error::LengthMismatch { what: "boxes", expected: truths.len(), got: boxes.len() });
    }
    if predictions.is_empty() {
        return Err(Error::param("nothing to score"));
    }
    let k = truths[0].len();
    let t = cfg.thresholds.len();
    let mut hits = vec![vec![0usize; t]; k];
    for ((p, g), b) in predictions.iter().zip(truths).zip(boxes) {
        if p.len() != k || g.len() != k {
            return Err(Error::LengthMismatch { what: "keypoints", expected: k, got: p.len().min(g.len()) });
        }
        if !(b.side > 0.0) {
            return Err(Error::param("box side must be positive"));
        }
        for i in 0..k {
            let d = p[i].dist(g[i]);
            for (j, &s) in cfg.thresholds.iter().enumerate() {
                if d <= s * b.side {
                    hits[i][j] += 1;
                }
            }
        }
    }
    let n = predictions.len() as f64;
    let per_keypoint: Vec<Vec<f64>> = hits.iter().map(|h| h.iter().map(|&c| c as f64 / n).collect()).collect();
    let pck: Vec<f64> = (0..t)
        .map(|j| hits.iter().map(|h| h[j]).sum::<usize>() as f64 / (n * k as f64))
        .collect();
    let mpck = pck.iter().sum::<f64>() / t as f64;
    Ok(PckReport {
        thresholds: cfg.thresholds.clone(),
        pck,
        mpck,
        per_keypoint,
        samples: predictions.len(),
    })
}
