//! Training the pool's pairwise kernels against normalized Gaussian targets.
//!
//! The objective is `Σ_k ||S_k - T_k||_F^2` where `S_k` is the final
//! original-frame map of keypoint `k`. Gradients are propagated by hand
//! through the renormalization, the inverse rotation, the fixed mixture
//! weights, the per-model marginal normalization, every per-message
//! normalization and the convolutions of both sweeps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clustering::{soft_assign, ClusterModel};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::geometry::{GridRotation, RotationAngle};
use crate::grid::{ConfidenceStack, Frame};
use crate::inference::{conv_backward, floored_values, propagate, Propagation};
use crate::pool::{MixtureWeights, ModelPool, KERNEL_FLOOR};
use crate::pipeline::{canonical_feature, AngleProvider, UnaryProvider};
use crate::skeleton::SkeletonTree;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub kernel_floor: f64,
    /// Width of the target Gaussians, grid cells.
    pub target_sigma: f64,
    /// Keep `Γ^{j,i}(Δ) = Γ^{i,j}(-Δ)` throughout training.
    pub tied: bool,
    /// Evaluate per-sample gradients of a batch on the rayon pool. The
    /// reduction order is fixed either way.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 40,
            seed: 0,
            kernel_floor: KERNEL_FLOOR,
            target_sigma: 1.0,
            tied: false,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::param("moment coefficients must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) || !(self.kernel_floor > 0.0) || !(self.target_sigma > 0.0) {
            return Err(Error::param("epsilon, kernel floor and target width must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmLossReport {
    pub loss: f64,
    pub per_keypoint: Vec<f64>,
}

/// Sum over keypoints of the squared Frobenius distance between stacks.
pub fn gm_loss(predicted: &ConfidenceStack, targets: &ConfidenceStack) -> Result<GmLossReport> {
    if predicted.len() != targets.len() {
        return Err(Error::LengthMismatch {
            what: "target layers",
            expected: predicted.len(),
            got: targets.len(),
        });
    }
    let mut per_keypoint = Vec::with_capacity(predicted.len());
    for (p, t) in predicted.layers().iter().zip(targets.layers()) {
        p.check_same_dims(t)?;
        per_keypoint.push(p.values().iter().zip(t.values()).map(|(a, b)| (a - b) * (a - b)).sum());
    }
    Ok(GmLossReport {
        loss: per_keypoint.iter().sum(),
        per_keypoint,
    })
}

/// Gradient arrays shaped like the pool: `[model][schedule slot][kernel entry]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolGradient {
    pub models: Vec<Vec<Vec<f64>>>,
}

impl PoolGradient {
    pub fn zeros_like(pool: &ModelPool) -> Self {
        PoolGradient {
            models: pool
                .models()
                .iter()
                .map(|m| m.kernels().iter().map(|k| vec![0.0; k.values().len()]).collect())
                .collect(),
        }
    }

    fn add_scaled(&mut self, other: &PoolGradient, s: f64) {
        for (a, b) in self.models.iter_mut().zip(&other.models) {
            for (ka, kb) in a.iter_mut().zip(b) {
                for (x, y) in ka.iter_mut().zip(kb) {
                    *x += s * y;
                }
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.models
            .iter()
            .flatten()
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Sums mirrored entries of the two directions of every edge.
    fn tie(&mut self, tree: &SkeletonTree) {
        for model in &mut self.models {
            for &(p, c) in tree.edges() {
                let (a, b) = (tree.slot(p, c).unwrap(), tree.slot(c, p).unwrap());
                let n = model[a].len();
                let merged: Vec<f64> = (0..n).map(|i| model[a][i] + model[b][n - 1 - i]).collect();
                model[b] = merged.iter().rev().copied().collect();
                model[a] = merged;
            }
        }
    }
}

/// One supervised instance for kernel training.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub id: String,
    /// Original-frame unaries.
    pub unaries: ConfidenceStack,
    pub angle: RotationAngle,
    pub weights: MixtureWeights,
    /// Normalized original-frame targets.
    pub targets: ConfidenceStack,
}

struct Forward {
    back: GridRotation,
    props: Vec<Option<Propagation>>,
    // back-rotated mixture per keypoint before renormalization
    unnormalized: Vec<Vec<f64>>,
    totals: Vec<f64>,
    maps: Vec<Vec<f64>>,
    phi: Vec<Vec<f64>>,
}

fn forward(
    pool: &ModelPool,
    weights: &MixtureWeights,
    unaries: &ConfidenceStack,
    angle: RotationAngle,
    tree: &SkeletonTree,
) -> Result<Forward> {
    if pool.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "mixture weights",
            expected: pool.len(),
            got: weights.len(),
        });
    }
    if unaries.len() != tree.len() {
        return Err(Error::LengthMismatch {
            what: "unary layers",
            expected: tree.len(),
            got: unaries.len(),
        });
    }
    let (h, w) = unaries.dims();
    let rot = GridRotation::new(h, w, angle);
    let back = GridRotation::new(h, w, angle.neg());
    let rotated = rot.apply_stack(unaries, Frame::Rotated);
    let phi = floored_values(&rotated);

    let mut props = Vec::with_capacity(pool.len());
    for (model, &wl) in pool.models().iter().zip(weights.as_slice()) {
        props.push(if wl == 0.0 {
            None
        } else {
            Some(propagate(model, &phi, tree, h, w, true)?)
        });
    }

    let mut unnormalized = Vec::with_capacity(tree.len());
    let mut totals = Vec::with_capacity(tree.len());
    let mut maps = Vec::with_capacity(tree.len());
    for k in 0..tree.len() {
        let mut mix = vec![0.0; h * w];
        for (p, &wl) in props.iter().zip(weights.as_slice()) {
            if let Some(p) = p {
                for (o, v) in mix.iter_mut().zip(&p.marginals[k]) {
                    *o += wl * v;
                }
            }
        }
        let u = back.apply_raw(&mix);
        let total: f64 = u.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Degenerate("rotated-back map has no mass"));
        }
        maps.push(u.iter().map(|v| v / total).collect());
        unnormalized.push(u);
        totals.push(total);
    }
    Ok(Forward {
        back,
        props,
        unnormalized,
        totals,
        maps,
        phi,
    })
}

fn loss_of(f: &Forward, targets: &ConfidenceStack) -> Result<GmLossReport> {
    if targets.len() != f.maps.len() {
        return Err(Error::LengthMismatch {
            what: "target layers",
            expected: f.maps.len(),
            got: targets.len(),
        });
    }
    let mut per_keypoint = Vec::with_capacity(f.maps.len());
    for (s, t) in f.maps.iter().zip(targets.layers()) {
        if t.len() != s.len() {
            return Err(Error::param("target dimensions differ from unaries"));
        }
        per_keypoint.push(s.iter().zip(t.values()).map(|(a, b)| (a - b) * (a - b)).sum());
    }
    Ok(GmLossReport {
        loss: per_keypoint.iter().sum(),
        per_keypoint,
    })
}

/// Loss of the full predictor at the current pool.
pub fn gm_objective(
    pool: &ModelPool,
    weights: &MixtureWeights,
    unaries: &ConfidenceStack,
    angle: RotationAngle,
    targets: &ConfidenceStack,
    tree: &SkeletonTree,
) -> Result<GmLossReport> {
    loss_of(&forward(pool, weights, unaries, angle, tree)?, targets)
}

// (g - <g, x>) / total: adjoint of x = y / Σy for normalized x
fn normalize_adjoint(g: &[f64], x: &[f64], total: f64) -> Vec<f64> {
    let dot: f64 = g.iter().zip(x).map(|(a, b)| a * b).sum();
    g.iter().map(|v| (v - dot) / total).collect()
}

fn model_backward(
    p: &Propagation,
    model: &crate::pool::GraphicalModel,
    phi: &[Vec<f64>],
    grad_marginals: &[Vec<f64>],
    tree: &SkeletonTree,
    height: usize,
    width: usize,
) -> Vec<Vec<f64>> {
    let cells = height * width;
    let slots = tree.schedule().len();
    let mut g_msg = vec![vec![0.0; cells]; slots];

    // product of phi and every incoming message except those from `skip`
    let partial = |node: usize, skip: &[usize]| {
        let mut out = phi[node].clone();
        for &k in tree.neighbors(node) {
            if !skip.contains(&k) {
                let s = tree.slot(k, node).unwrap();
                for (o, v) in out.iter_mut().zip(&p.msgs[s]) {
                    *o *= v;
                }
            }
        }
        out
    };

    for node in 0..tree.len() {
        let g_b = normalize_adjoint(&grad_marginals[node], &p.marginals[node], p.belief_sum[node]);
        for &j in tree.neighbors(node) {
            let others = partial(node, &[j]);
            let s = tree.slot(j, node).unwrap();
            for ((o, a), b) in g_msg[s].iter_mut().zip(&g_b).zip(&others) {
                *o += a * b;
            }
        }
    }

    let mut g_kernel: Vec<Vec<f64>> = model.kernels().iter().map(|k| vec![0.0; k.values().len()]).collect();
    for (s, &(i, j)) in tree.schedule().sends().iter().enumerate().rev() {
        let g_c = normalize_adjoint(&g_msg[s], &p.msgs[s], p.conv_sum[s]);
        let mut g_h = vec![0.0; cells];
        conv_backward(&p.h[s], &g_c, height, width, &model.kernels()[s], &mut g_h, &mut g_kernel[s]);
        for &k in tree.neighbors(i) {
            if k == j {
                continue;
            }
            let others = partial(i, &[j, k]);
            let sk = tree.slot(k, i).unwrap();
            for ((o, a), b) in g_msg[sk].iter_mut().zip(&g_h).zip(&others) {
                *o += a * b;
            }
        }
    }
    g_kernel
}

/// Loss and its exact gradient with respect to every kernel entry of the pool.
pub fn gm_grad(
    pool: &ModelPool,
    weights: &MixtureWeights,
    unaries: &ConfidenceStack,
    angle: RotationAngle,
    targets: &ConfidenceStack,
    tree: &SkeletonTree,
) -> Result<(GmLossReport, PoolGradient)> {
    let f = forward(pool, weights, unaries, angle, tree)?;
    let report = loss_of(&f, targets)?;
    let (h, w) = unaries.dims();

    // back through renormalization and the inverse rotation
    let mut g_mix = Vec::with_capacity(tree.len());
    for k in 0..tree.len() {
        let g_s: Vec<f64> = f.maps[k]
            .iter()
            .zip(targets.layer(k).values())
            .map(|(s, t)| 2.0 * (s - t))
            .collect();
        let g_u = normalize_adjoint(&g_s, &f.maps[k], f.totals[k]);
        g_mix.push(f.back.apply_adjoint(&g_u, &f.unnormalized[k]));
    }

    let mut grad = PoolGradient::zeros_like(pool);
    for (l, (p, &wl)) in f.props.iter().zip(weights.as_slice()).enumerate() {
        let Some(p) = p else { continue };
        let g_marg: Vec<Vec<f64>> = g_mix.iter().map(|g| g.iter().map(|v| wl * v).collect()).collect();
        grad.models[l] = model_backward(p, &pool.models()[l], &f.phi, &g_marg, tree, h, w);
    }
    Ok((report, grad))
}

struct Adam {
    m: PoolGradient,
    v: PoolGradient,
    t: i32,
}

impl Adam {
    fn new(pool: &ModelPool) -> Self {
        Adam {
            m: PoolGradient::zeros_like(pool),
            v: PoolGradient::zeros_like(pool),
            t: 0,
        }
    }

    fn step(&mut self, pool: &mut ModelPool, g: &PoolGradient, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (l, model) in pool.models_mut().iter_mut().enumerate() {
            for (s, kernel) in model.kernels_mut().iter_mut().enumerate() {
                let (gm, mm, vm) = (&g.models[l][s], &mut self.m.models[l][s], &mut self.v.models[l][s]);
                for (e, theta) in kernel.values_mut().iter_mut().enumerate() {
                    mm[e] = cfg.beta1 * mm[e] + (1.0 - cfg.beta1) * gm[e];
                    vm[e] = cfg.beta2 * vm[e] + (1.0 - cfg.beta2) * gm[e] * gm[e];
                    let mhat = mm[e] / c1;
                    let vhat = vm[e] / c2;
                    *theta -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
                }
                kernel.project(cfg.kernel_floor);
            }
        }
    }
}

/// Outcome of [`train_pool`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub pool: ModelPool,
    /// Mean per-sample loss seen during each epoch, before each batch's update.
    pub history: Vec<f64>,
    pub steps: usize,
}

/// Mini-batch adaptive-moment descent on the mean loss over `examples`.
pub fn train_pool(
    pool: &ModelPool,
    examples: &[TrainingExample],
    tree: &SkeletonTree,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    let mut pool = pool.clone();
    let mut adam = Adam::new(&pool);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = batch_gradients(&pool, examples, batch, tree, cfg.parallel);
            let mut total = PoolGradient::zeros_like(&pool);
            let scale = 1.0 / batch.len() as f64;
            for (&idx, r) in batch.iter().zip(results) {
                let (report, g) = r?;
                if !report.loss.is_finite() || !g.norm().is_finite() {
                    return Err(Error::NonFiniteLoss {
                        sample: examples[idx].id.clone(),
                    });
                }
                epoch_loss += report.loss;
                total.add_scaled(&g, scale);
            }
            if cfg.tied {
                total.tie(tree);
            }
            adam.step(&mut pool, &total, cfg);
            steps += 1;
        }
        let mean = epoch_loss / examples.len() as f64;
        log::info!("epoch {epoch}: mean loss {mean:.6e}");
        history.push(mean);
    }
    Ok(TrainOutcome { pool, history, steps })
}

/// Supervision for every sample: original-frame targets at the ground truth and
/// fixed weights from the ground-truth shape (one-hot for a single model).
pub fn training_examples(
    samples: &[Sample],
    clusters: &ClusterModel,
    num_models: usize,
    angles: &dyn AngleProvider,
    unaries: &dyn UnaryProvider,
    tree: &SkeletonTree,
    target_sigma: f64,
) -> Result<Vec<TrainingExample>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let u = unaries.unaries(i, s)?;
            let angle = angles.angle(i, s)?;
            let weights = if num_models == 1 {
                MixtureWeights::one_hot(1, 0)?
            } else {
                let f = canonical_feature(&s.grid_pose(), angle, u.dims(), tree)?;
                let w = soft_assign(clusters, &f)?;
                if w.len() != num_models {
                    return Err(Error::LengthMismatch { what: "cluster count", expected: num_models, got: w.len() });
                }
                w
            };
            Ok(TrainingExample {
                id: s.id.clone(),
                targets: s.targets(target_sigma)?,
                unaries: u,
                angle,
                weights,
            })
        })
        .collect()
}

/// Trains the pool's kernels on a dataset with all other inputs held fixed.
pub fn train_gm(
    pool: &ModelPool,
    clusters: &ClusterModel,
    samples: &[Sample],
    angles: &dyn AngleProvider,
    unaries: &dyn UnaryProvider,
    tree: &SkeletonTree,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let examples = training_examples(samples, clusters, pool.len(), angles, unaries, tree, cfg.target_sigma)?;
    train_pool(pool, &examples, tree, cfg)
}

fn batch_gradients(
    pool: &ModelPool,
    examples: &[TrainingExample],
    batch: &[usize],
    tree: &SkeletonTree,
    parallel: bool,
) -> Vec<Result<(GmLossReport, PoolGradient)>> {
    let one = |&i: &usize| {
        let e = &examples[i];
        gm_grad(pool, &e.weights, &e.unaries, e.angle, &e.targets, tree)
    };
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return batch.par_iter().map(one).collect();
    }
    let _ = parallel;
    batch.iter().map(one).collect()
}

/// Mean objective over a set of examples.
pub fn mean_loss(pool: &ModelPool, examples: &[TrainingExample], tree: &SkeletonTree) -> Result<f64> {
    let mut total = 0.0;
    for e in examples {
        total += gm_objective(pool, &e.weights, &e.unaries, e.angle, &e.targets, tree)?.loss;
    }
    Ok(total / examples.len().max(1) as f64)
}
