//! Glue between samples and the predictor: where angles, unaries and
//! mixture weights come from, and batch inference over a dataset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clustering::{pose_feature, soft_assign, ClusterModel, PoseFeature};
use crate::dataset::{PredictionRecord, Sample};
use crate::error::Result;
use crate::geometry::{rotate_points, Point2, Pose, RotationAngle};
use crate::grid::ConfidenceStack;
use crate::inference::{predict, unary_argmax, Prediction};
use crate::pool::{MixtureWeights, ModelPool};
use crate::skeleton::SkeletonTree;
use crate::synth::oracle_angle;

/// Source of the canonicalizing rotation for each sample.
pub trait AngleProvider: Sync {
    fn angle(&self, index: usize, sample: &Sample) -> Result<RotationAngle>;
}

/// Annotation-derived angles with optional Gaussian noise. Noise for sample
/// `i` comes from its own random stream, so results do not depend on order.
#[derive(Debug, Clone, Copy)]
pub struct OracleAngles {
    pub sigma_deg: f64,
    pub seed: u64,
}

impl AngleProvider for OracleAngles {
    fn angle(&self, index: usize, sample: &Sample) -> Result<RotationAngle> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        oracle_angle(sample, self.sigma_deg, &mut rng)
    }
}

/// The same angle for every sample; zero disables canonicalization.
#[derive(Debug, Clone, Copy)]
pub struct FixedAngle(pub RotationAngle);

impl AngleProvider for FixedAngle {
    fn angle(&self, _: usize, _: &Sample) -> Result<RotationAngle> {
        Ok(self.0)
    }
}

pub trait UnaryProvider: Sync {
    fn unaries(&self, index: usize, sample: &Sample) -> Result<ConfidenceStack>;
}

/// The heatmaps stored with each sample.
#[derive(Debug, Clone, Copy)]
pub struct StoredUnaries;

impl UnaryProvider for StoredUnaries {
    fn unaries(&self, _: usize, sample: &Sample) -> Result<ConfidenceStack> {
        Ok(sample.unaries.clone())
    }
}

/// How mixture weights are chosen for a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightSource {
    Uniform,
    /// Soft assignment of the ground-truth shape.
    GroundTruth,
    /// Soft assignment of the raw unary argmax.
    UnaryArgmax,
    /// Soft assignment of the pose decoded with uniform weights.
    #[default]
    Refined,
}

/// Grid-space pose rotated into the canonical frame about the grid center.
pub fn canonical_pose(grid_pose: &Pose, angle: RotationAngle, dims: (usize, usize)) -> Pose {
    let c = Point2::new((dims.1 as f64 - 1.0) / 2.0, (dims.0 as f64 - 1.0) / 2.0);
    rotate_points(grid_pose, angle, c)
}

pub fn canonical_feature(
    grid_pose: &Pose,
    angle: RotationAngle,
    dims: (usize, usize),
    tree: &SkeletonTree,
) -> Result<PoseFeature> {
    pose_feature(&canonical_pose(grid_pose, angle, dims), tree)
}

#[allow(clippy::too_many_arguments)]
pub fn mixture_weights(
    source: WeightSource,
    clusters: &ClusterModel,
    pool: &ModelPool,
    sample: &Sample,
    unaries: &ConfidenceStack,
    angle: RotationAngle,
    tree: &SkeletonTree,
) -> Result<MixtureWeights> {
    let dims = unaries.dims();
    let from = |pose: &Pose| soft_assign(clusters, &canonical_feature(pose, angle, dims, tree)?);
    match source {
        WeightSource::Uniform => MixtureWeights::uniform(pool.len()),
        WeightSource::GroundTruth => from(&sample.grid_pose()),
        WeightSource::UnaryArgmax => from(&unary_argmax(unaries)),
        WeightSource::Refined => {
            let first = predict(unaries, angle, pool, &MixtureWeights::uniform(pool.len())?, tree)?;
            from(&first.pose)
        }
    }
}

/// Settings shared by every sample of an inference run.
pub struct InferenceSetup<'a> {
    pub pool: &'a ModelPool,
    pub clusters: &'a ClusterModel,
    pub angles: &'a dyn AngleProvider,
    pub unaries: &'a dyn UnaryProvider,
    pub weights: WeightSource,
    pub tree: &'a SkeletonTree,
}

#[derive(Debug, Clone)]
pub struct Inferred {
    pub prediction: Prediction,
    pub angle: RotationAngle,
    pub weights: MixtureWeights,
    /// Decoded pose in pixels.
    pub pose: Pose,
}

impl Inferred {
    pub fn record(&self, sample: &Sample) -> PredictionRecord {
        PredictionRecord {
            sample_id: sample.id.clone(),
            keypoints: self.pose.points().iter().map(|p| [p.x, p.y]).collect(),
            angle_deg: Some(self.angle.degrees()),
            weights: Some(self.weights.as_slice().to_vec()),
        }
    }
}

pub fn infer_sample(setup: &InferenceSetup, index: usize, sample: &Sample) -> Result<Inferred> {
    let unaries = setup.unaries.unaries(index, sample)?;
    let angle = setup.angles.angle(index, sample)?;
    let weights = if setup.pool.len() == 1 {
        MixtureWeights::one_hot(1, 0)?
    } else {
        mixture_weights(setup.weights, setup.clusters, setup.pool, sample, &unaries, angle, setup.tree)?
    };
    let prediction = predict(&unaries, angle, setup.pool, &weights, setup.tree)?;
    let (h, w) = unaries.dims();
    let pose = sample.hand_box.pose_from_grid(&prediction.pose, h, w);
    Ok(Inferred { prediction, angle, weights, pose })
}

/// Runs [`infer_sample`] over every sample; results keep the input order.
pub fn infer_all(setup: &InferenceSetup, samples: &[Sample], parallel: bool) -> Result<Vec<Inferred>> {
    let one = |(i, s): (usize, &Sample)| infer_sample(setup, i, s);
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return samples.par_iter().enumerate().map(one).collect();
    }
    let _ = parallel;
    samples.iter().enumerate().map(one).collect()
}

/// Pixel-space unary argmax for every sample.
pub fn unary_baseline(samples: &[Sample], unaries: &dyn UnaryProvider) -> Result<Vec<Pose>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let u = unaries.unaries(i, s)?;
            let (h, w) = u.dims();
            Ok(s.hand_box.pose_from_grid(&unary_argmax(&u), h, w))
        })
        .collect()
}
