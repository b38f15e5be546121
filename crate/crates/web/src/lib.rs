//! Browser demo: corrupt a synthetic hand, look at unaries next to mixture
//! marginals, and perturb the rotation fed to inference.

use handgm::clustering::{kmeans_run, ClusterModel};
use handgm::dataset::Sample;
use handgm::geometry::{rotate_grid, Pose, RotationAngle};
use handgm::grid::Grid2D;
use handgm::inference::unary_argmax;
use handgm::pipeline::{
    canonical_feature, canonical_pose, infer_sample, AngleProvider, FixedAngle, InferenceSetup, Inferred,
    OracleAngles, StoredUnaries, WeightSource,
};
use handgm::pool::{init_empirical_pool, ModelPool};
use handgm::skeleton::SkeletonTree;
use handgm::synth::{generate_dataset, generate_sample, SynthConfig};
use wasm_bindgen::prelude::*;

const GRID: usize = 32;
const RADIUS: usize = 9;
const MODELS: usize = 4;
const FIT_SAMPLES: usize = 300;

/// What a heatmap shows.
#[wasm_bindgen]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Unary = 0,
    Marginal = 1,
    /// Unaries turned into the frame the kernels were fitted in.
    Canonical = 2,
}

/// Everything the page needs, independent of wasm so it can be tested natively.
pub struct Session {
    tree: SkeletonTree,
    pool: ModelPool,
    clusters: ClusterModel,
    cfg: SynthConfig,
    index: usize,
    angle_offset_deg: f64,
    sample: Sample,
    true_angle: RotationAngle,
    inferred: Inferred,
}

impl Session {
    /// Fits clusters and displacement kernels on a small clean-ish synthetic set.
    pub fn new(seed: u64) -> handgm::Result<Session> {
        let tree = SkeletonTree::hand();
        let fit_cfg = SynthConfig { num_samples: FIT_SAMPLES, grid_size: GRID, seed, ..Default::default() };
        let fit = generate_dataset(&fit_cfg)?;
        let oracle = OracleAngles { sigma_deg: 0.0, seed: 0 };
        let mut canon = Vec::with_capacity(fit.len());
        let mut features = Vec::with_capacity(fit.len());
        for (i, s) in fit.iter().enumerate() {
            let a = oracle.angle(i, s)?;
            canon.push(canonical_pose(&s.grid_pose(), a, s.dims()));
            features.push(canonical_feature(&s.grid_pose(), a, s.dims(), &tree)?);
        }
        let run = kmeans_run(&features, MODELS, seed, 100)?;
        let labelled: Vec<(Pose, usize)> = canon.into_iter().zip(run.assignments).collect();
        let pool = init_empirical_pool(&tree, &labelled, MODELS, RADIUS)?;

        let cfg = SynthConfig { num_samples: 1, grid_size: GRID, seed: seed.wrapping_add(1), ..Default::default() };
        let sample = generate_sample(&cfg, 0)?;
        let true_angle = oracle.angle(0, &sample)?;
        let inferred = infer(&pool, &run.model, &tree, &sample, 0, true_angle)?;
        Ok(Session { tree, pool, clusters: run.model, cfg, index: 0, angle_offset_deg: 0.0, sample, true_angle, inferred })
    }

    /// Draws sample `index` with the given corruption rates.
    pub fn resample(&mut self, index: usize, p_drop: f64, p_distract: f64) -> handgm::Result<()> {
        let cfg = SynthConfig { p_drop, p_distract, ..self.cfg.clone() };
        cfg.validate()?;
        self.sample = generate_sample(&cfg, index)?;
        self.true_angle = OracleAngles { sigma_deg: 0.0, seed: 0 }.angle(index, &self.sample)?;
        self.cfg = cfg;
        self.index = index;
        self.rerun()
    }

    /// Feeds inference a rotation that is off by `deg` from the true one.
    pub fn set_angle_offset(&mut self, deg: f64) -> handgm::Result<()> {
        self.angle_offset_deg = deg;
        self.rerun()
    }

    fn used_angle(&self) -> RotationAngle {
        RotationAngle::from_degrees(self.true_angle.degrees() + self.angle_offset_deg)
    }

    fn rerun(&mut self) -> handgm::Result<()> {
        self.inferred = infer(&self.pool, &self.clusters, &self.tree, &self.sample, self.index, self.used_angle())?;
        Ok(())
    }

    /// One keypoint's map, or the cellwise maximum over all of them.
    pub fn map(&self, view: View, keypoint: Option<usize>) -> Grid2D {
        let stack = match view {
            View::Unary | View::Canonical => &self.sample.unaries,
            View::Marginal => &self.inferred.prediction.maps,
        };
        let pick = |g: &Grid2D| match view {
            View::Canonical => rotate_grid(g, self.used_angle()),
            _ => g.clone(),
        };
        match keypoint {
            Some(k) => pick(stack.layer(k)),
            None => {
                let layers: Vec<Grid2D> = stack.layers().iter().map(pick).collect();
                let (h, w) = layers[0].dims();
                let vals = (0..h * w)
                    .map(|c| layers.iter().map(|g| g.values()[c] / g.max().max(f64::MIN_POSITIVE)).fold(0.0, f64::max))
                    .collect();
                Grid2D::new(h, w, vals).expect("same dims")
            }
        }
    }

    pub fn truth(&self) -> Pose {
        self.sample.grid_pose()
    }

    pub fn prediction(&self) -> &Pose {
        &self.inferred.prediction.pose
    }

    pub fn baseline(&self) -> Pose {
        unary_argmax(&self.sample.unaries)
    }

    pub fn weights(&self) -> &[f64] {
        self.inferred.weights.as_slice()
    }

    pub fn true_angle_deg(&self) -> f64 {
        self.true_angle.degrees()
    }

    pub fn grid_size(&self) -> usize {
        GRID
    }

    pub fn tree(&self) -> &SkeletonTree {
        &self.tree
    }
}

fn infer(
    pool: &ModelPool,
    clusters: &ClusterModel,
    tree: &SkeletonTree,
    sample: &Sample,
    index: usize,
    angle: RotationAngle,
) -> handgm::Result<Inferred> {
    let angles = FixedAngle(angle);
    let setup = InferenceSetup {
        pool,
        clusters,
        angles: &angles,
        unaries: &StoredUnaries,
        weights: WeightSource::Refined,
        tree,
    };
    infer_sample(&setup, index, sample)
}

/// Mean distance to the truth in grid cells.
pub fn mean_error(pred: &Pose, truth: &Pose) -> f64 {
    let d: f64 = pred.points().iter().zip(truth.points()).map(|(a, b)| a.dist(*b)).sum();
    d / truth.len() as f64
}

/// RGBA bytes, black through red and yellow to white, scaled to the map's maximum.
pub fn colorize(g: &Grid2D) -> Vec<u8> {
    let top = g.max().max(f64::MIN_POSITIVE);
    let mut out = Vec::with_capacity(4 * g.len());
    for v in g.values() {
        let t = (v / top).clamp(0.0, 1.0).sqrt();
        let r = (3.0 * t).min(1.0);
        let gr = (3.0 * t - 1.0).clamp(0.0, 1.0);
        let b = (3.0 * t - 2.0).clamp(0.0, 1.0);
        out.extend([(255.0 * r) as u8, (255.0 * gr) as u8, (255.0 * b) as u8, 255]);
    }
    out
}

fn flat(p: &Pose) -> Vec<f64> {
    p.points().iter().flat_map(|q| [q.x, q.y]).collect()
}

fn js(e: handgm::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Demo, JsError> {
        Session::new(seed.into()).map(Demo).map_err(js)
    }

    pub fn resample(&mut self, index: u32, p_drop: f64, p_distract: f64) -> Result<(), JsError> {
        self.0.resample(index as usize, p_drop, p_distract).map_err(js)
    }

    #[wasm_bindgen(js_name = setAngleOffset)]
    pub fn set_angle_offset(&mut self, deg: f64) -> Result<(), JsError> {
        self.0.set_angle_offset(deg).map_err(js)
    }

    /// RGBA pixels for `view`; a negative keypoint overlays all of them.
    pub fn heatmap(&self, view: View, keypoint: i32) -> Vec<u8> {
        let k = usize::try_from(keypoint).ok().filter(|&k| k < self.0.tree.len());
        colorize(&self.0.map(view, k))
    }

    #[wasm_bindgen(js_name = gridSize)]
    pub fn grid_size(&self) -> u32 {
        self.0.grid_size() as u32
    }

    /// Interleaved x, y in grid cells.
    pub fn truth(&self) -> Vec<f64> {
        flat(&self.0.truth())
    }

    pub fn prediction(&self) -> Vec<f64> {
        flat(self.0.prediction())
    }

    pub fn baseline(&self) -> Vec<f64> {
        flat(&self.0.baseline())
    }

    #[wasm_bindgen(js_name = predictionError)]
    pub fn prediction_error(&self) -> f64 {
        mean_error(self.0.prediction(), &self.0.truth())
    }

    #[wasm_bindgen(js_name = baselineError)]
    pub fn baseline_error(&self) -> f64 {
        mean_error(&self.0.baseline(), &self.0.truth())
    }

    pub fn weights(&self) -> Vec<f64> {
        self.0.weights().to_vec()
    }

    #[wasm_bindgen(js_name = trueAngle)]
    pub fn true_angle(&self) -> f64 {
        self.0.true_angle_deg()
    }

    /// Parent, child pairs.
    pub fn edges(&self) -> Vec<u32> {
        self.0.tree().edges().iter().flat_map(|&(a, b)| [a as u32, b as u32]).collect()
    }
}
