//! Pairwise displacement kernels, graphical models, the model pool and mixture weights.

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::skeleton::SkeletonTree;

/// Lower bound on every kernel entry.
pub const KERNEL_FLOOR: f64 = 1e-8;

/// Displacement kernel `Γ[r + Δm, r + Δn] = γ(Δ)` with `Δ = x_sender - x_receiver`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseKernel {
    radius: usize,
    values: Vec<f64>,
}

impl PairwiseKernel {
    pub fn new(radius: usize, values: Vec<f64>) -> Result<Self> {
        let side = 2 * radius + 1;
        if radius == 0 {
            return Err(Error::param("kernel radius must be at least 1"));
        }
        if values.len() != side * side {
            return Err(Error::LengthMismatch {
                what: "kernel values",
                expected: side * side,
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < KERNEL_FLOOR) {
            return Err(Error::param(format!(
                "kernel entry {v} violates the positivity floor {KERNEL_FLOOR}"
            )));
        }
        Ok(PairwiseKernel { radius, values })
    }

    /// Constant kernel summing to one.
    pub fn uniform(radius: usize) -> Self {
        let side = 2 * radius + 1;
        PairwiseKernel {
            radius,
            values: vec![1.0 / (side * side) as f64; side * side],
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `γ(Δ)` for a row/column displacement within the radius.
    #[inline]
    pub fn at(&self, dm: isize, dn: isize) -> f64 {
        let r = self.radius as isize;
        self.values[((r + dm) * (2 * r + 1) + r + dn) as usize]
    }

    /// Displacement with the largest weight, as `(Δrow, Δcol)`.
    pub fn mode(&self) -> (isize, isize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        let side = self.side() as isize;
        let r = self.radius as isize;
        (best as isize / side - r, best as isize % side - r)
    }

    /// Point reflection `Δ -> -Δ`.
    pub fn reversed(&self) -> PairwiseKernel {
        let mut values = self.values.clone();
        values.reverse();
        PairwiseKernel { radius: self.radius, values }
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Clamps every entry up to `floor`.
    pub fn project(&mut self, floor: f64) {
        for v in &mut self.values {
            if !(*v >= floor) {
                *v = floor;
            }
        }
    }
}

/// One kernel per directed edge, indexed by schedule position.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphicalModel {
    kernels: Vec<PairwiseKernel>,
}

impl GraphicalModel {
    pub fn new(tree: &SkeletonTree, kernels: Vec<PairwiseKernel>) -> Result<Self> {
        if kernels.len() != tree.schedule().len() {
            return Err(Error::LengthMismatch {
                what: "directed edge kernels",
                expected: tree.schedule().len(),
                got: kernels.len(),
            });
        }
        if let Some(k) = kernels.iter().find(|k| k.radius != kernels[0].radius) {
            return Err(Error::param(format!(
                "mixed kernel radii {} and {}",
                kernels[0].radius, k.radius
            )));
        }
        Ok(GraphicalModel { kernels })
    }

    pub fn uniform(tree: &SkeletonTree, radius: usize) -> Self {
        GraphicalModel {
            kernels: vec![PairwiseKernel::uniform(radius); tree.schedule().len()],
        }
    }

    /// Kernel radius, or 0 for a single-node tree with no kernels.
    pub fn radius(&self) -> usize {
        self.kernels.first().map_or(0, |k| k.radius)
    }

    pub fn kernels(&self) -> &[PairwiseKernel] {
        &self.kernels
    }

    pub(crate) fn kernels_mut(&mut self) -> &mut [PairwiseKernel] {
        &mut self.kernels
    }

    /// Kernel for the directed edge `sender -> receiver`.
    pub fn kernel(&self, tree: &SkeletonTree, sender: usize, receiver: usize) -> Option<&PairwiseKernel> {
        tree.slot(sender, receiver).map(|s| &self.kernels[s])
    }

    /// Forces `Γ^{j,i}(Δ) = Γ^{i,j}(-Δ)` by averaging each pair of directions.
    pub fn tie_directions(&mut self, tree: &SkeletonTree) {
        for &(p, c) in tree.edges() {
            let (a, b) = (tree.slot(p, c).unwrap(), tree.slot(c, p).unwrap());
            let rb = self.kernels[b].reversed();
            let avg: Vec<f64> = self.kernels[a]
                .values
                .iter()
                .zip(&rb.values)
                .map(|(x, y)| 0.5 * (x + y))
                .collect();
            self.kernels[a].values = avg;
            self.kernels[b] = self.kernels[a].reversed();
        }
    }
}

/// `L` independent graphical models over the same tree.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPool {
    models: Vec<GraphicalModel>,
}

impl ModelPool {
    pub fn new(models: Vec<GraphicalModel>) -> Result<Self> {
        let first = models.first().ok_or(Error::param("model pool must not be empty"))?;
        let (n, r) = (first.kernels.len(), first.radius());
        for m in &models {
            if m.kernels.len() != n || m.radius() != r {
                return Err(Error::param("pool models disagree on edge count or radius"));
            }
        }
        Ok(ModelPool { models })
    }

    pub fn models(&self) -> &[GraphicalModel] {
        &self.models
    }

    pub(crate) fn models_mut(&mut self) -> &mut [GraphicalModel] {
        &mut self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn radius(&self) -> usize {
        self.models[0].radius()
    }

    pub fn edge_count(&self) -> usize {
        self.models[0].kernels.len()
    }

    /// Projects every kernel entry to at least `floor`.
    pub fn project(&mut self, floor: f64) {
        for m in &mut self.models {
            for k in &mut m.kernels {
                k.project(floor);
            }
        }
    }

    pub fn min_entry(&self) -> f64 {
        self.models
            .iter()
            .flat_map(|m| m.kernels.iter().flat_map(|k| k.values.iter().copied()))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Pool of `num_models` copies of the uninformative kernel `1 / (2r+1)^2`.
pub fn init_uniform_pool(tree: &SkeletonTree, num_models: usize, radius: usize) -> Result<ModelPool> {
    if radius == 0 || num_models == 0 {
        return Err(Error::param("pool needs at least one model and radius >= 1"));
    }
    ModelPool::new(vec![GraphicalModel::uniform(tree, radius); num_models])
}

/// Kernels from Gaussian-smoothed displacement histograms of each cluster's poses.
///
/// Poses must already be canonicalized and in grid units. A cluster with no
/// poses keeps uniform kernels.
pub fn init_empirical_pool(
    tree: &SkeletonTree,
    poses: &[(Pose, usize)],
    num_models: usize,
    radius: usize,
) -> Result<ModelPool> {
    let mut pool = init_uniform_pool(tree, num_models, radius)?;
    let side = 2 * radius + 1;
    let r = radius as isize;
    for (pose, l) in poses {
        if *l >= num_models {
            return Err(Error::IndexOutOfRange { index: *l, len: num_models });
        }
        if pose.len() != tree.len() {
            return Err(Error::LengthMismatch {
                what: "pose keypoints",
                expected: tree.len(),
                got: pose.len(),
            });
        }
    }
    for (l, model) in pool.models.iter_mut().enumerate() {
        let members: Vec<&Pose> = poses.iter().filter(|(_, c)| *c == l).map(|(p, _)| p).collect();
        if members.is_empty() {
            log::warn!("cluster {l} has no poses; its kernels stay uniform");
            continue;
        }
        for (slot, &(i, j)) in tree.schedule().sends().iter().enumerate() {
            let mut hist = vec![0.0; side * side];
            let mut hits = 0usize;
            for p in &members {
                let d = p[i].sub(p[j]);
                let (dm, dn) = (d.y.round() as isize, d.x.round() as isize);
                if dm.abs() <= r && dn.abs() <= r {
                    hist[((dm + r) * (2 * r + 1) + dn + r) as usize] += 1.0;
                    hits += 1;
                }
            }
            if hits == 0 {
                log::warn!("cluster {l}: all displacements for edge {i}->{j} exceed radius {radius}");
                continue;
            }
            let smooth = gaussian_smooth(&hist, side, 1.0);
            let total: f64 = smooth.iter().sum();
            let mut values: Vec<f64> = smooth.iter().map(|v| (v / total).max(KERNEL_FLOOR)).collect();
            let total: f64 = values.iter().sum();
            for v in &mut values {
                *v = (*v / total).max(KERNEL_FLOOR);
            }
            model.kernels[slot] = PairwiseKernel { radius, values };
        }
    }
    Ok(pool)
}

// separable smoothing on a square patch, zero outside, truncated at 3 sigma
fn gaussian_smooth(v: &[f64], side: usize, sigma: f64) -> Vec<f64> {
    let reach = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-reach..=reach)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; src.len()];
        for a in 0..side {
            for b in 0..side {
                let mut acc = 0.0;
                for (t, w) in (-reach..=reach).zip(&taps) {
                    let c = b as isize + t;
                    if c < 0 || c >= side as isize {
                        continue;
                    }
                    let idx = if horizontal { a * side + c as usize } else { c as usize * side + a };
                    acc += w * src[idx];
                }
                let idx = if horizontal { a * side + b } else { b * side + a };
                out[idx] = acc;
            }
        }
        out
    };
    pass(&pass(v, true), false)
}

/// Nonnegative weights over the pool summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights(Vec<f64>);

impl MixtureWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::param("mixture weights must not be empty"));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::param("mixture weights must be finite and nonnegative"));
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("mixture weights sum to {s}, not 1")));
        }
        Ok(MixtureWeights(w))
    }

    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::param("mixture weights must not be empty"));
        }
        Ok(MixtureWeights(vec![1.0 / len as f64; len]))
    }

    pub fn one_hot(len: usize, index: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::IndexOutOfRange { index, len });
        }
        let mut w = vec![0.0; len];
        w[index] = 1.0;
        Ok(MixtureWeights(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

pub fn uniform_weights(len: usize) -> Result<MixtureWeights> {
    MixtureWeights::uniform(len)
}

pub fn one_hot_weights(len: usize, index: usize) -> Result<MixtureWeights> {
    MixtureWeights::one_hot(len, index)
}
