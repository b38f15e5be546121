//! Shape clusters over canonical poses and soft membership weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::pool::MixtureWeights;
use crate::skeleton::SkeletonTree;

/// Concatenated `child - parent` offsets over the tree edges in downward schedule order.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFeature(pub Vec<f64>);

impl PoseFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn pose_feature(pose: &Pose, tree: &SkeletonTree) -> Result<PoseFeature> {
    if pose.len() != tree.len() {
        return Err(Error::LengthMismatch {
            what: "pose keypoints",
            expected: tree.len(),
            got: pose.len(),
        });
    }
    let mut f = Vec::with_capacity(2 * tree.edges().len());
    for &(parent, child) in tree.schedule().downward() {
        let d = pose[child].sub(pose[parent]);
        f.push(d.x);
        f.push(d.y);
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("pose has non-finite coordinates"));
    }
    Ok(PoseFeature(f))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Centroids plus the softmax temperature used by [`soft_assign`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    centroids: Vec<Vec<f64>>,
    tau: f64,
}

impl ClusterModel {
    pub fn new(centroids: Vec<Vec<f64>>, tau: f64) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::param("cluster model needs at least one centroid"));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::param(format!("temperature must be positive, got {tau}")));
        }
        let dim = centroids[0].len();
        for (i, c) in centroids.iter().enumerate() {
            if c.len() != dim {
                return Err(Error::LengthMismatch { what: "centroid", expected: dim, got: c.len() });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::param("centroid has non-finite entries"));
            }
            if centroids[..i].iter().any(|o| o == c) {
                return Err(Error::param(format!("centroid {i} duplicates an earlier one")));
            }
        }
        Ok(ClusterModel { centroids, tau })
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn sq_distances(&self, f: &PoseFeature) -> Result<Vec<f64>> {
        if f.len() != self.dim() {
            return Err(Error::LengthMismatch { what: "pose feature", expected: self.dim(), got: f.len() });
        }
        Ok(self.centroids.iter().map(|c| sq_dist(c, &f.0)).collect())
    }

    /// Nearest centroid; ties go to the lower index.
    pub fn assign(&self, f: &PoseFeature) -> Result<usize> {
        Ok(nearest(&self.sq_distances(f)?))
    }
}

fn nearest(d: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in d.iter().enumerate() {
        if v < d[best] {
            best = i;
        }
    }
    best
}

/// `softmax(-d² / tau)` with the model's temperature.
pub fn soft_assign(model: &ClusterModel, f: &PoseFeature) -> Result<MixtureWeights> {
    soft_assign_with(model, f, model.tau)
}

pub fn soft_assign_with(model: &ClusterModel, f: &PoseFeature, tau: f64) -> Result<MixtureWeights> {
    if !(tau > 0.0) {
        return Err(Error::param(format!("temperature must be positive, got {tau}")));
    }
    let d = model.sq_distances(f)?;
    let best = nearest(&d);
    let e: Vec<f64> = d.iter().map(|&v| (-(v - d[best]) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    MixtureWeights::new(e.into_iter().map(|v| v / z).collect())
}

/// Lloyd iterations from farthest-point seeds.
#[derive(Debug, Clone)]
pub struct KMeansRun {
    pub model: ClusterModel,
    pub assignments: Vec<usize>,
    /// Mean squared distance to the assigned centroid after each iteration.
    pub distortion: Vec<f64>,
    pub converged: bool,
}

pub const DEFAULT_MAX_ITERS: usize = 100;

pub fn kmeans_fit(features: &[PoseFeature], clusters: usize, seed: u64, max_iters: usize) -> Result<ClusterModel> {
    Ok(kmeans_run(features, clusters, seed, max_iters)?.model)
}

pub fn kmeans_run(features: &[PoseFeature], clusters: usize, seed: u64, max_iters: usize) -> Result<KMeansRun> {
    if clusters == 0 {
        return Err(Error::param("need at least one cluster"));
    }
    let dim = features.first().map_or(0, |f| f.len());
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::LengthMismatch { what: "pose feature", expected: dim, got: f.len() });
    }
    let mut distinct: Vec<&[f64]> = Vec::new();
    for f in features {
        if distinct.len() >= clusters {
            break;
        }
        if !distinct.contains(&f.as_slice()) {
            distinct.push(f.as_slice());
        }
    }
    if distinct.len() < clusters {
        return Err(Error::TooFewDistinct { needed: clusters, found: distinct.len() });
    }

    let x: Vec<&[f64]> = features.iter().map(|f| f.as_slice()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = vec![x[rng.random_range(0..x.len())].to_vec()];
    let mut min_d: Vec<f64> = x.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < clusters {
        let far = nearest(&min_d.iter().map(|v| -v).collect::<Vec<_>>());
        centroids.push(x[far].to_vec());
        for (m, p) in min_d.iter_mut().zip(&x) {
            *m = m.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }

    let assign = |centroids: &[Vec<f64>]| -> (Vec<usize>, Vec<f64>) {
        x.iter()
            .map(|p| {
                let d: Vec<f64> = centroids.iter().map(|c| sq_dist(p, c)).collect();
                let i = nearest(&d);
                (i, d[i])
            })
            .unzip()
    };

    let (mut labels, mut dist) = assign(&centroids);
    let mut distortion = Vec::new();
    let mut converged = false;
    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; dim]; clusters];
        let mut counts = vec![0usize; clusters];
        for (p, &l) in x.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(*p) {
                *s += v;
            }
        }
        for l in 0..clusters {
            if counts[l] > 0 {
                centroids[l] = sums[l].iter().map(|s| s / counts[l] as f64).collect();
            }
        }
        for l in 0..clusters {
            if counts[l] == 0 {
                // reseed from the point worst served by the current centroids
                let (far, _) = x
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, centroids.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min)))
                    .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
                centroids[l] = x[far].to_vec();
            }
        }
        let (next, next_dist) = assign(&centroids);
        dist = next_dist;
        distortion.push(dist.iter().sum::<f64>() / x.len() as f64);
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
    }
    let mean = dist.iter().sum::<f64>() / x.len() as f64;
    // all points sit on centroids; any positive scale works, pick unit variance
    let tau = if mean > 0.0 { mean } else { 1.0 };
    Ok(KMeansRun {
        model: ClusterModel::new(centroids, tau)?,
        assignments: labels,
        distortion,
        converged,
    })
}

/// Fraction of points whose cluster's majority label matches their own.
pub fn purity(assignments: &[usize], labels: &[usize]) -> f64 {
    use std::collections::BTreeMap;
    let mut table: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&a, &l) in assignments.iter().zip(labels) {
        *table.entry(a).or_default().entry(l).or_default() += 1;
    }
    let hits: usize = table.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    hits as f64 / assignments.len().max(1) as f64
}
