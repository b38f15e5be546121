//! Points, poses, rotation canonicalization and bilinear grid rotation.
//!
//! Image coordinates are `(x, y)` with `y` pointing down. A positive angle
//! rotates counterclockwise as displayed: `rotate_points` maps `(1, 0)` to
//! `(0, -1)` at 90 degrees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ConfidenceStack, Frame, Grid2D};
use crate::skeleton::{MIDDLE_BASE, WRIST};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point2) -> f64 {
        self.sub(o).norm()
    }

    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    /// Continuous point of grid cell `(row, col)`.
    pub fn from_cell((m, n): (usize, usize)) -> Self {
        Point2::new(n as f64, m as f64)
    }
}

/// Ordered keypoint locations, one per tree node.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    points: Vec<Point2>,
    visible: Option<Vec<bool>>,
}

impl Pose {
    pub fn new(points: Vec<Point2>) -> Self {
        Pose { points, visible: None }
    }

    pub fn with_visibility(points: Vec<Point2>, visible: Vec<bool>) -> Result<Self> {
        if visible.len() != points.len() {
            return Err(Error::LengthMismatch {
                what: "visibility flags",
                expected: points.len(),
                got: visible.len(),
            });
        }
        Ok(Pose { points, visible: Some(visible) })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn visibility(&self) -> Option<&[bool]> {
        self.visible.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point2 {
        let n = self.points.len().max(1) as f64;
        let s = self.points.iter().fold(Point2::default(), |a, &p| a.add(p));
        s.scale(1.0 / n)
    }

    pub fn map(&self, f: impl Fn(Point2) -> Point2) -> Pose {
        Pose {
            points: self.points.iter().map(|&p| f(p)).collect(),
            visible: self.visible.clone(),
        }
    }

    /// Center of the axis-aligned extent and its larger side length.
    pub fn extent(&self) -> (Point2, f64) {
        let (mut lo, mut hi) = (Point2::new(f64::MAX, f64::MAX), Point2::new(f64::MIN, f64::MIN));
        for p in &self.points {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let center = lo.add(hi).scale(0.5);
        (center, (hi.x - lo.x).max(hi.y - lo.y))
    }
}

impl std::ops::Index<usize> for Pose {
    type Output = Point2;

    fn index(&self, i: usize) -> &Point2 {
        &self.points[i]
    }
}

/// Angle in degrees, kept in `(-180, 180]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct RotationAngle(f64);

impl RotationAngle {
    pub fn from_degrees(deg: f64) -> Self {
        RotationAngle(wrap_degrees(deg))
    }

    pub fn degrees(self) -> f64 {
        self.0
    }

    pub fn radians(self) -> f64 {
        self.0.to_radians()
    }

    pub fn neg(self) -> Self {
        RotationAngle::from_degrees(-self.0)
    }
}

/// Wraps an angle into `(-180, 180]`.
pub fn wrap_degrees(deg: f64) -> f64 {
    let a = deg.rem_euclid(360.0);
    if a > 180.0 {
        a - 360.0
    } else {
        a
    }
}

/// Square crop around a hand, in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandBox {
    pub cx: f64,
    pub cy: f64,
    pub side: f64,
}

/// Box side as a multiple of the hand's largest extent.
pub const BOX_SCALE: f64 = 2.2;

impl HandBox {
    /// Box centered on the pose extent with side `BOX_SCALE` times its larger dimension.
    pub fn around(pose: &Pose) -> Self {
        let (c, extent) = pose.extent();
        HandBox { cx: c.x, cy: c.y, side: BOX_SCALE * extent }
    }

    pub fn contains(&self, p: Point2) -> bool {
        let h = self.side / 2.0;
        (p.x - self.cx).abs() <= h && (p.y - self.cy).abs() <= h
    }

    /// Pixel point to continuous grid coordinates. Cell `n` covers `[n - 0.5, n + 0.5]`.
    pub fn to_grid(&self, p: Point2, height: usize, width: usize) -> Point2 {
        let x0 = self.cx - self.side / 2.0;
        let y0 = self.cy - self.side / 2.0;
        Point2::new(
            (p.x - x0) * width as f64 / self.side - 0.5,
            (p.y - y0) * height as f64 / self.side - 0.5,
        )
    }

    pub fn from_grid(&self, g: Point2, height: usize, width: usize) -> Point2 {
        let x0 = self.cx - self.side / 2.0;
        let y0 = self.cy - self.side / 2.0;
        Point2::new(
            x0 + (g.x + 0.5) * self.side / width as f64,
            y0 + (g.y + 0.5) * self.side / height as f64,
        )
    }

    pub fn pose_to_grid(&self, pose: &Pose, height: usize, width: usize) -> Pose {
        pose.map(|p| self.to_grid(p, height, width))
    }

    pub fn pose_from_grid(&self, pose: &Pose, height: usize, width: usize) -> Pose {
        pose.map(|p| self.from_grid(p, height, width))
    }
}

/// Angle that turns the wrist-to-middle-base vector to point straight up.
pub fn canonical_angle(pose: &Pose) -> Result<RotationAngle> {
    if pose.len() <= MIDDLE_BASE {
        return Err(Error::LengthMismatch {
            what: "pose keypoints",
            expected: crate::skeleton::NUM_KEYPOINTS,
            got: pose.len(),
        });
    }
    let v = pose[MIDDLE_BASE].sub(pose[WRIST]);
    if v.x == 0.0 && v.y == 0.0 {
        return Err(Error::UndefinedDirection(WRIST, MIDDLE_BASE));
    }
    Ok(RotationAngle::from_degrees(v.x.atan2(-v.y).to_degrees()))
}

/// Rotates a single point about `center`.
pub fn rotate_point(p: Point2, angle: RotationAngle, center: Point2) -> Point2 {
    let (s, c) = angle.radians().sin_cos();
    let d = p.sub(center);
    Point2::new(c * d.x + s * d.y + center.x, -s * d.x + c * d.y + center.y)
}

pub fn rotate_points(pose: &Pose, angle: RotationAngle, center: Point2) -> Pose {
    pose.map(|p| rotate_point(p, angle, center))
}

/// Rotates a pose about its centroid so that it is upright; returns the angle used.
pub fn align_pose(pose: &Pose) -> Result<(Pose, RotationAngle)> {
    let a = canonical_angle(pose)?;
    Ok((rotate_points(pose, a, pose.centroid()), a))
}

/// Resampling scheme used by [`GridRotation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    /// Two-by-two tent weights. Never produces negative values.
    Bilinear,
    /// Four-by-four Keys cubic convolution (`a = -1/2`), negative lobes clamped to zero.
    #[default]
    Cubic,
}

/// Rotation about the grid center as a sparse linear map (plus a clamp at
/// zero for the cubic scheme), reusable across layers and transposable for
/// backpropagation. Samples falling outside the grid read zero.
#[derive(Debug, Clone)]
pub struct GridRotation {
    height: usize,
    width: usize,
    interpolation: Interpolation,
    // taps of output cell q live in taps[starts[q]..starts[q + 1]]
    starts: Vec<u32>,
    taps: Vec<(u32, f64)>,
    identity: bool,
}

impl GridRotation {
    pub fn new(height: usize, width: usize, angle: RotationAngle) -> Self {
        GridRotation::with_interpolation(height, width, angle, Interpolation::default())
    }

    pub fn with_interpolation(
        height: usize,
        width: usize,
        angle: RotationAngle,
        interpolation: Interpolation,
    ) -> Self {
        let identity = angle.degrees() == 0.0;
        let mut starts = vec![0u32];
        let mut taps = Vec::new();
        if !identity {
            let c = Point2::new((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
            let back = angle.neg();
            for m in 0..height {
                for n in 0..width {
                    let p = rotate_point(Point2::new(n as f64, m as f64), back, c);
                    push_taps(&mut taps, p, height, width, interpolation);
                    starts.push(taps.len() as u32);
                }
            }
        }
        GridRotation {
            height,
            width,
            interpolation,
            starts,
            taps,
            identity,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn apply(&self, g: &Grid2D) -> Grid2D {
        assert_eq!(g.dims(), self.dims(), "rotation built for other dimensions");
        if self.identity {
            return g.clone();
        }
        Grid2D::from_raw(self.height, self.width, self.apply_raw(g.values()))
    }

    pub(crate) fn apply_raw(&self, v: &[f64]) -> Vec<f64> {
        if self.identity {
            return v.to_vec();
        }
        self.starts
            .windows(2)
            .map(|w| {
                let z: f64 = self.taps[w[0] as usize..w[1] as usize]
                    .iter()
                    .map(|&(i, wt)| wt * v[i as usize])
                    .sum();
                z.max(0.0)
            })
            .collect()
    }

    /// Vector-Jacobian product at the point whose image is `output`.
    pub fn apply_adjoint(&self, grad: &[f64], output: &[f64]) -> Vec<f64> {
        if self.identity {
            return grad.to_vec();
        }
        let clamps = self.interpolation == Interpolation::Cubic;
        let mut out = vec![0.0; grad.len()];
        for (q, w) in self.starts.windows(2).enumerate() {
            if clamps && output[q] <= 0.0 {
                continue;
            }
            for &(i, wt) in &self.taps[w[0] as usize..w[1] as usize] {
                out[i as usize] += wt * grad[q];
            }
        }
        out
    }

    pub fn apply_stack(&self, s: &ConfidenceStack, frame: Frame) -> ConfidenceStack {
        let layers = s.layers().iter().map(|g| self.apply(g)).collect();
        ConfidenceStack::new(layers, frame).expect("rotation preserves dimensions")
    }
}

fn keys_cubic(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

fn push_taps(taps: &mut Vec<(u32, f64)>, p: Point2, height: usize, width: usize, interp: Interpolation) {
    let (x0, y0) = (p.x.floor(), p.y.floor());
    let (fx, fy) = (p.x - x0, p.y - y0);
    let (wx, wy, lo): ([f64; 4], [f64; 4], f64) = match interp {
        Interpolation::Bilinear => ([1.0 - fx, fx, 0.0, 0.0], [1.0 - fy, fy, 0.0, 0.0], 0.0),
        Interpolation::Cubic => (
            [keys_cubic(fx + 1.0), keys_cubic(fx), keys_cubic(1.0 - fx), keys_cubic(2.0 - fx)],
            [keys_cubic(fy + 1.0), keys_cubic(fy), keys_cubic(1.0 - fy), keys_cubic(2.0 - fy)],
            -1.0,
        ),
    };
    for (a, &wa) in wy.iter().enumerate() {
        let y = y0 + lo + a as f64;
        if wa == 0.0 || y < 0.0 || y >= height as f64 {
            continue;
        }
        for (b, &wb) in wx.iter().enumerate() {
            let x = x0 + lo + b as f64;
            if wb == 0.0 || x < 0.0 || x >= width as f64 {
                continue;
            }
            taps.push(((y as usize * width + x as usize) as u32, wa * wb));
        }
    }
}

/// Output cell `q` samples the input at the inverse-rotated location; zero outside.
pub fn rotate_grid(g: &Grid2D, angle: RotationAngle) -> Grid2D {
    GridRotation::new(g.height(), g.width(), angle).apply(g)
}
