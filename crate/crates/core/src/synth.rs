//! Procedural hands and corrupted unary heatmaps.
//!
//! Poses are built from a small set of finger configurations in hand units
//! (wrist at the origin, middle-finger base one unit straight up), perturbed,
//! rotated and placed in a pixel canvas. Unaries are Gaussians at the true
//! grid locations, then corrupted in two structured ways: a dropped layer is
//! replaced by low noise plus a peak at a random cell, and a confused layer
//! gains a second peak at the same joint of a neighboring finger.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::geometry::{canonical_angle, rotate_points, HandBox, Point2, Pose, RotationAngle};
use crate::grid::{ConfidenceStack, Frame, Grid2D};
use crate::skeleton::{JOINTS_PER_FINGER, NUM_KEYPOINTS, WRIST};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_samples: usize,
    /// How many of the built-in shapes to draw from, 1 to 4.
    pub num_prototypes: usize,
    /// Joint noise, grid cells.
    pub sigma_pose: f64,
    /// Global rotation drawn uniformly from `[-range, range]` degrees.
    pub rotation_range_deg: f64,
    pub p_drop: f64,
    pub p_distract: f64,
    /// Peak displacement noise, grid cells.
    pub sigma_jit: f64,
    /// Unary peak width, grid cells.
    pub sigma_g: f64,
    pub grid_size: usize,
    /// Wrist to middle-finger base, pixels.
    pub hand_scale_px: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_samples: 100,
            num_prototypes: 4,
            sigma_pose: 0.5,
            rotation_range_deg: 180.0,
            p_drop: 0.3,
            p_distract: 0.3,
            sigma_jit: 0.5,
            sigma_g: 1.0,
            grid_size: 32,
            hand_scale_px: 60.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64, name: &str| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must lie in [0, 1], got {p}")))
            }
        };
        prob(self.p_drop, "p_drop")?;
        prob(self.p_distract, "p_distract")?;
        if !(1..=PROTOTYPES.len()).contains(&self.num_prototypes) {
            return Err(Error::param(format!(
                "num_prototypes must be between 1 and {}, got {}",
                PROTOTYPES.len(),
                self.num_prototypes
            )));
        }
        if !(self.sigma_g > 0.0) || !(self.hand_scale_px > 0.0) {
            return Err(Error::param("sigma_g and hand_scale_px must be positive"));
        }
        if !(self.sigma_pose >= 0.0) || !(self.sigma_jit >= 0.0) || !(self.rotation_range_deg >= 0.0) {
            return Err(Error::param("noise levels and rotation range must be nonnegative"));
        }
        if self.grid_size < 4 {
            return Err(Error::param("grid_size must be at least 4"));
        }
        Ok(())
    }
}

struct Finger {
    base: (f64, f64),
    lengths: [f64; 3],
    // open direction, degrees clockwise from up
    direction: f64,
}

const FINGERS: [Finger; 5] = [
    Finger { base: (-0.38, -0.32), lengths: [0.38, 0.3, 0.25], direction: -50.0 },
    Finger { base: (-0.33, -0.95), lengths: [0.45, 0.27, 0.2], direction: -8.0 },
    Finger { base: (0.0, -1.0), lengths: [0.5, 0.3, 0.22], direction: 0.0 },
    Finger { base: (0.3, -0.95), lengths: [0.47, 0.28, 0.2], direction: 8.0 },
    Finger { base: (0.55, -0.84), lengths: [0.37, 0.22, 0.18], direction: 16.0 },
];

/// Per finger: flexion per joint (out of the image plane) and in-plane bend per joint, degrees.
struct Shape {
    flex: [[f64; 3]; 5],
    bend: [[f64; 3]; 5],
}

const OPEN: [f64; 3] = [0.0, 0.0, 0.0];
const CURLED: [f64; 3] = [80.0, 95.0, 60.0];

/// Open palm, two-finger sign, pointing index, thumb-index pinch. All keep
/// at least one finger extended so their boxes have similar scale.
const PROTOTYPES: [Shape; 4] = [
    Shape { flex: [OPEN; 5], bend: [OPEN; 5] },
    Shape {
        flex: [[20.0, 20.0, 20.0], OPEN, OPEN, CURLED, CURLED],
        bend: [[45.0, 40.0, 30.0], [-12.0, 0.0, 0.0], [10.0, 0.0, 0.0], OPEN, OPEN],
    },
    Shape {
        flex: [[20.0, 20.0, 20.0], OPEN, CURLED, CURLED, CURLED],
        bend: [[45.0, 40.0, 30.0], OPEN, OPEN, OPEN, OPEN],
    },
    Shape {
        flex: [OPEN, [45.0, 50.0, 30.0], OPEN, OPEN, OPEN],
        bend: [[25.0, 25.0, 15.0], [-10.0, -15.0, -20.0], OPEN, OPEN, OPEN],
    },
];

pub fn num_builtin_prototypes() -> usize {
    PROTOTYPES.len()
}

/// Noise-free upright pose of a built-in shape in hand units.
pub fn prototype_pose(prototype: usize) -> Result<Pose> {
    let shape = PROTOTYPES
        .get(prototype)
        .ok_or(Error::IndexOutOfRange { index: prototype, len: PROTOTYPES.len() })?;
    let mut pts = vec![Point2::new(0.0, 0.0); NUM_KEYPOINTS];
    for (f, finger) in FINGERS.iter().enumerate() {
        let first = JOINTS_PER_FINGER * f + 1;
        let mut p = Point2::new(finger.base.0, finger.base.1);
        pts[first] = p;
        let (mut flex, mut dir) = (0.0, finger.direction);
        for j in 0..3 {
            flex += shape.flex[f][j];
            dir += shape.bend[f][j];
            let len = finger.lengths[j] * flex.to_radians().cos();
            let d = dir.to_radians();
            p = p.add(Point2::new(d.sin(), -d.cos()).scale(len));
            pts[first + j + 1] = p;
        }
    }
    Ok(Pose::new(pts))
}

/// Same joint on a neighboring finger; `None` for the wrist.
pub fn mirror_keypoint(k: usize, pick_lower: bool) -> Option<usize> {
    if k == WRIST {
        return None;
    }
    let f = (k - 1) / JOINTS_PER_FINGER;
    let nf = match f {
        0 => 1,
        4 => 3,
        _ if pick_lower => f - 1,
        _ => f + 1,
    };
    Some(k + JOINTS_PER_FINGER * nf - JOINTS_PER_FINGER * f)
}

fn gaussian_into(values: &mut [f64], width: usize, c: Point2, sigma: f64, amplitude: f64) {
    let s2 = 2.0 * sigma * sigma;
    for (i, v) in values.iter_mut().enumerate() {
        let (m, n) = ((i / width) as f64, (i % width) as f64);
        let d = (n - c.x).powi(2) + (m - c.y).powi(2);
        *v += amplitude * (-d / s2).exp();
    }
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Generates the `index`-th sample of the dataset defined by `cfg`.
pub fn generate_sample(cfg: &SynthConfig, index: usize) -> Result<Sample> {
    cfg.validate()?;
    let mut rng = sample_rng(cfg.seed, index);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let size = cfg.grid_size;

    let prototype = rng.random_range(0..cfg.num_prototypes);
    let scale = cfg.hand_scale_px * rng.random_range(0.85..1.15);
    let angle = RotationAngle::from_degrees(if cfg.rotation_range_deg > 0.0 {
        rng.random_range(-cfg.rotation_range_deg..=cfg.rotation_range_deg)
    } else {
        0.0
    });
    let origin = Point2::new(rng.random_range(200.0..440.0), rng.random_range(150.0..330.0));

    let upright = prototype_pose(prototype)?.map(|p| p.scale(scale));
    let placed = rotate_points(&upright, angle, Point2::new(0.0, 0.0)).map(|p| p.add(origin));
    let px_per_cell = HandBox::around(&placed).side / size as f64;
    let noise = cfg.sigma_pose * px_per_cell;
    let pose = Pose::new(
        placed
            .points()
            .iter()
            .map(|p| p.add(Point2::new(noise * std.sample(&mut rng), noise * std.sample(&mut rng))))
            .collect(),
    );
    let hand_box = HandBox::around(&pose);
    let grid = hand_box.pose_to_grid(&pose, size, size);

    let mut layers = Vec::with_capacity(NUM_KEYPOINTS);
    for k in 0..NUM_KEYPOINTS {
        let mut values: Vec<f64> = (0..size * size).map(|_| rng.random_range(0.0..0.01)).collect();
        let jitter = |rng: &mut ChaCha8Rng| {
            Point2::new(cfg.sigma_jit * std.sample(rng), cfg.sigma_jit * std.sample(rng))
        };
        if rng.random_bool(cfg.p_drop) {
            for v in &mut values {
                *v += rng.random_range(0.0..0.1);
            }
            let c = Point2::new(rng.random_range(0..size) as f64, rng.random_range(0..size) as f64);
            gaussian_into(&mut values, size, c, cfg.sigma_g, 1.0);
        } else {
            let j = jitter(&mut rng);
            gaussian_into(&mut values, size, grid[k].add(j), cfg.sigma_g, 1.0);
            if rng.random_bool(cfg.p_distract) {
                let lower = rng.random_bool(0.5);
                let amplitude = rng.random_range(0.8..1.2);
                if let Some(mk) = mirror_keypoint(k, lower) {
                    let j = jitter(&mut rng);
                    gaussian_into(&mut values, size, grid[mk].add(j), cfg.sigma_g, amplitude);
                }
            }
        }
        // stored heatmaps are single precision; keep memory and disk identical
        let values = values.into_iter().map(|v| v as f32 as f64).collect();
        layers.push(Grid2D::new(size, size, values)?);
    }

    Ok(Sample {
        id: format!("s{index:05}"),
        pose,
        hand_box,
        unaries: ConfidenceStack::new(layers, Frame::Original)?,
        prototype: Some(prototype),
        cluster: None,
    })
}

/// Samples `0..num_samples`; each uses its own random stream, so any
/// sub-range can be produced independently.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..cfg.num_samples).into_par_iter().map(|i| generate_sample(cfg, i)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    (0..cfg.num_samples).map(|i| generate_sample(cfg, i)).collect()
}

/// Canonical angle of the ground truth plus Gaussian noise of `sigma_deg`.
pub fn oracle_angle(sample: &Sample, sigma_deg: f64, rng: &mut impl Rng) -> Result<RotationAngle> {
    if !(sigma_deg >= 0.0) {
        return Err(Error::param(format!("angle noise must be nonnegative, got {sigma_deg}")));
    }
    let a = canonical_angle(&sample.grid_pose())?;
    if sigma_deg == 0.0 {
        return Ok(a);
    }
    let n = Normal::new(0.0, sigma_deg).map_err(|e| Error::param(e.to_string()))?;
    Ok(RotationAngle::from_degrees(a.degrees() + n.sample(rng)))
}
