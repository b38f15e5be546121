//! In-memory samples and their on-disk annotation records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{HandBox, Point2, Pose};
use crate::grid::{render_gaussian, ConfidenceStack, Frame};

/// One hand: ground truth in pixels, its crop box and original-frame unaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub pose: Pose,
    pub hand_box: HandBox,
    pub unaries: ConfidenceStack,
    pub prototype: Option<usize>,
    pub cluster: Option<usize>,
}

impl Sample {
    pub fn dims(&self) -> (usize, usize) {
        self.unaries.dims()
    }

    /// Ground truth in continuous grid coordinates.
    pub fn grid_pose(&self) -> Pose {
        let (h, w) = self.dims();
        self.hand_box.pose_to_grid(&self.pose, h, w)
    }

    /// Normalized Gaussians of width `sigma` (cells) at the ground-truth locations.
    pub fn targets(&self, sigma: f64) -> Result<ConfidenceStack> {
        let (h, w) = self.dims();
        let layers = self
            .grid_pose()
            .points()
            .iter()
            .map(|&p| render_gaussian(h, w, p, sigma, true))
            .collect::<Result<Vec<_>>>()?;
        ConfidenceStack::new(layers, Frame::Original)
    }

    pub fn annotation(&self) -> Annotation {
        Annotation {
            sample_id: self.id.clone(),
            hand_box: self.hand_box,
            keypoints: self.pose.points().iter().map(|p| [p.x, p.y]).collect(),
            cluster_id: self.cluster,
            prototype_id: self.prototype,
        }
    }

    pub fn from_parts(annotation: Annotation, unaries: ConfidenceStack) -> Result<Self> {
        if annotation.keypoints.len() != unaries.len() {
            return Err(Error::LengthMismatch {
                what: "heatmap layers",
                expected: annotation.keypoints.len(),
                got: unaries.len(),
            });
        }
        Ok(Sample {
            pose: annotation.pose(),
            id: annotation.sample_id,
            hand_box: annotation.hand_box,
            unaries,
            prototype: annotation.prototype_id,
            cluster: annotation.cluster_id,
        })
    }
}

/// One line of an annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub sample_id: String,
    #[serde(rename = "box")]
    pub hand_box: HandBox,
    pub keypoints: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prototype_id: Option<usize>,
}

impl Annotation {
    pub fn pose(&self) -> Pose {
        Pose::new(self.keypoints.iter().map(|&[x, y]| Point2::new(x, y)).collect())
    }
}

/// One line of a predictions file. Keypoints are in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub keypoints: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl PredictionRecord {
    pub fn pose(&self) -> Pose {
        Pose::new(self.keypoints.iter().map(|&[x, y]| Point2::new(x, y)).collect())
    }
}
