//! Dense 2D scalar fields: confidence maps, unaries, messages and marginals.

use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Row-major `height x width` field of finite, nonnegative values.
///
/// Cell `(m, n)` is row `m`, column `n`; as a continuous point it sits at
/// `(x, y) = (n, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Grid2D {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::param(format!("grid dimensions must be positive, got {height}x{width}")));
        }
        if values.len() != height * width {
            return Err(Error::LengthMismatch {
                what: "grid values",
                expected: height * width,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::param(format!(
                "grid entry {i} is {} (must be finite and nonnegative)",
                values[i]
            )));
        }
        Ok(Grid2D { height, width, values })
    }

    pub(crate) fn from_raw(height: usize, width: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), height * width);
        Grid2D { height, width, values }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Grid2D::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Grid2D::from_raw(height, width, vec![value; height * width])
    }

    /// Normalized constant field.
    pub fn uniform(height: usize, width: usize) -> Self {
        Grid2D::filled(height, width, 1.0 / (height * width) as f64)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != w) {
            return Err(Error::param("ragged rows"));
        }
        Grid2D::new(h, w, rows.concat())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.values[m * self.width + n]
    }

    /// Sets one cell. Panics on negative or non-finite values.
    pub fn set(&mut self, m: usize, n: usize, v: f64) {
        assert!(v.is_finite() && v >= 0.0, "grid values must be finite and nonnegative");
        self.values[m * self.width + n] = v;
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Geometric center of the cell lattice, `((W-1)/2, (H-1)/2)`.
    pub fn center(&self) -> Point2 {
        Point2::new((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    pub fn check_same_dims(&self, other: &Grid2D) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                got: other.dims(),
            });
        }
        Ok(())
    }

    /// Scales the field to sum to one.
    pub fn normalize(&self) -> Result<Grid2D> {
        let s = self.sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Degenerate("cannot normalize a field with zero total mass"));
        }
        Ok(Grid2D::from_raw(
            self.height,
            self.width,
            self.values.iter().map(|v| v / s).collect(),
        ))
    }

    pub fn is_normalized(&self) -> bool {
        (self.sum() - 1.0).abs() <= 1e-9
    }

    /// Raises every entry to at least `floor`.
    pub fn floored(&self, floor: f64) -> Grid2D {
        Grid2D::from_raw(
            self.height,
            self.width,
            self.values.iter().map(|&v| v.max(floor)).collect(),
        )
    }

    /// Location of the largest entry as `(row, col)`. Ties go to the smallest row-major index.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Mirror image across the vertical axis.
    pub fn flip_horizontal(&self) -> Grid2D {
        let mut out = Vec::with_capacity(self.len());
        for m in 0..self.height {
            out.extend(self.values[m * self.width..(m + 1) * self.width].iter().rev());
        }
        Grid2D::from_raw(self.height, self.width, out)
    }

    pub fn max_abs_diff(&self, other: &Grid2D) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Unit-peak Gaussian centered at a continuous point, optionally normalized.
pub fn render_gaussian(
    height: usize,
    width: usize,
    center: Point2,
    sigma: f64,
    normalized: bool,
) -> Result<Grid2D> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("gaussian width must be positive, got {sigma}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::param("grid dimensions must be positive"));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut values = Vec::with_capacity(height * width);
    for m in 0..height {
        let dy = m as f64 - center.y;
        for n in 0..width {
            let dx = n as f64 - center.x;
            values.push((-(dy * dy + dx * dx) * inv).exp());
        }
    }
    let g = Grid2D::from_raw(height, width, values);
    if normalized {
        g.normalize()
    } else {
        Ok(g)
    }
}

/// Pointwise `sum_l weights[l] * grids[l]`.
pub fn weighted_sum(grids: &[Grid2D], weights: &[f64]) -> Result<Grid2D> {
    if grids.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "weighted sum weights",
            expected: grids.len(),
            got: weights.len(),
        });
    }
    let first = grids.first().ok_or(Error::param("weighted sum of no grids"))?;
    let mut out = vec![0.0; first.len()];
    for (g, &w) in grids.iter().zip(weights) {
        first.check_same_dims(g)?;
        if !w.is_finite() {
            return Err(Error::param(format!("non-finite weight {w}")));
        }
        for (o, v) in out.iter_mut().zip(&g.values) {
            *o += w * v;
        }
    }
    if out.iter().any(|v| *v < 0.0) {
        return Err(Error::param("weighted sum produced negative entries"));
    }
    Ok(Grid2D::from_raw(first.height, first.width, out))
}

/// Which coordinate frame a stack of maps lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Original,
    Rotated,
}

/// One confidence map per keypoint, all the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceStack {
    layers: Vec<Grid2D>,
    frame: Frame,
}

impl ConfidenceStack {
    pub fn new(layers: Vec<Grid2D>, frame: Frame) -> Result<Self> {
        let first = layers.first().ok_or(Error::param("confidence stack needs at least one layer"))?;
        for l in &layers {
            first.check_same_dims(l)?;
        }
        Ok(ConfidenceStack { layers, frame })
    }

    pub fn layers(&self) -> &[Grid2D] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Grid2D> {
        self.layers
    }

    pub fn layer(&self, k: usize) -> &Grid2D {
        &self.layers[k]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn dims(&self) -> (usize, usize) {
        self.layers[0].dims()
    }

    pub fn with_frame(self, frame: Frame) -> Self {
        ConfidenceStack { frame, ..self }
    }

    pub fn argmax_cells(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(Grid2D::argmax).collect()
    }

    pub fn max_abs_diff(&self, other: &ConfidenceStack) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}
