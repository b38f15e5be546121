//! Random tiny instances and a central-difference gradient oracle.

use handgm::geometry::RotationAngle;
use handgm::grid::{ConfidenceStack, Frame, Grid2D};
use handgm::learning::{gm_grad, gm_objective};
use handgm::pool::{GraphicalModel, MixtureWeights, ModelPool, PairwiseKernel};
use handgm::skeleton::SkeletonTree;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub tree: SkeletonTree,
    pub pool: ModelPool,
    pub weights: MixtureWeights,
    pub unaries: ConfidenceStack,
    pub targets: ConfidenceStack,
    pub angle: RotationAngle,
}

pub fn random_instance(seed: u64, nodes: usize, side: usize, radius: usize, angle: f64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = SkeletonTree::chain(nodes).unwrap();
    let k = (2 * radius + 1) * (2 * radius + 1);
    let models = (0..2)
        .map(|_| {
            let ks = (0..tree.schedule().len())
                .map(|_| PairwiseKernel::new(radius, (0..k).map(|_| rng.random_range(0.5..1.5)).collect()).unwrap())
                .collect();
            GraphicalModel::new(&tree, ks).unwrap()
        })
        .collect();
    let a: f64 = rng.random_range(0.2..0.8);
    let mut layer = |normalize: bool| {
        let g = Grid2D::new(side, side, (0..side * side).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap();
        if normalize { g.normalize().unwrap() } else { g }
    };
    let unaries = ConfidenceStack::new((0..nodes).map(|_| layer(false)).collect(), Frame::Original).unwrap();
    let targets = ConfidenceStack::new((0..nodes).map(|_| layer(true)).collect(), Frame::Original).unwrap();
    Instance {
        tree,
        pool: ModelPool::new(models).unwrap(),
        weights: MixtureWeights::new(vec![a, 1.0 - a]).unwrap(),
        unaries,
        targets,
        angle: RotationAngle::from_degrees(angle),
    }
}

fn perturbed(tree: &SkeletonTree, pool: &ModelPool, l: usize, s: usize, e: usize, d: f64) -> ModelPool {
    let mut models = pool.models().to_vec();
    let kernels: Vec<PairwiseKernel> = models[l]
        .kernels()
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let mut v = k.values().to_vec();
            if i == s {
                v[e] += d;
            }
            PairwiseKernel::new(k.radius(), v).unwrap()
        })
        .collect();
    models[l] = GraphicalModel::new(tree, kernels).unwrap();
    ModelPool::new(models).unwrap()
}

/// Largest relative deviation between the analytic gradient and central differences.
pub fn max_relative_error(inst: &Instance, step: f64) -> f64 {
    let loss = |p: &ModelPool| {
        gm_objective(p, &inst.weights, &inst.unaries, inst.angle, &inst.targets, &inst.tree)
            .unwrap()
            .loss
    };
    let (_, g) = gm_grad(&inst.pool, &inst.weights, &inst.unaries, inst.angle, &inst.targets, &inst.tree).unwrap();
    let mut worst: f64 = 0.0;
    for (l, model) in g.models.iter().enumerate() {
        for (s, kernel) in model.iter().enumerate() {
            for (e, &analytic) in kernel.iter().enumerate() {
                let up = loss(&perturbed(&inst.tree, &inst.pool, l, s, e, step));
                let down = loss(&perturbed(&inst.tree, &inst.pool, l, s, e, -step));
                let numeric = (up - down) / (2.0 * step);
                let scale = analytic.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max((analytic - numeric).abs() / scale);
            }
        }
    }
    worst
}
